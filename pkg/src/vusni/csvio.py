"""CSV ingestion of study data and atomic report writing.

Input files need a header row.  The verification flag is 0 or 1 and the
disease class is 1, 2 or 3, left empty for unverified subjects.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile

import numpy as np

from .data import Dataset
from .errors import DataError


def _parse_float(value, column, line):
    try:
        x = float(value)
    except ValueError:
        raise DataError(f"line {line}: column {column!r} is not a number: {value!r}") from None
    if not math.isfinite(x):
        raise DataError(f"line {line}: column {column!r} is not finite")
    return x


def read_dataset(path, test="t", covariates=(), verified="v", disease="d", a1=None,
                 negate_test=False) -> Dataset:
    """Read a study CSV into a :class:`Dataset`.

    Parameters
    ----------
    covariates : sequence of str
        Covariate columns, all used by the disease model.
    a1 : sequence of str, optional
        Covariates entering the verification model (default: none, so every
        covariate is an instrument).
    negate_test : bool
        Use minus the test column, for tests where lower values indicate a
        higher class.

    Raises
    ------
    DataError
        Missing columns, unparsable values, bad flags or class labels, or a
        verified row without a disease class.
    """
    covariates = list(covariates)
    if test in covariates:
        raise DataError("the test column cannot also be a covariate")
    a1 = [] if a1 is None else list(a1)
    unknown = [c for c in a1 if c not in covariates]
    if unknown:
        raise DataError(f"verification covariates {unknown} are not among the covariates")
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in [test, verified, disease, *covariates] if c not in header]
        if missing:
            raise DataError(f"missing column(s) {missing} in {path}")
        t, a, v, d, mask = [], [], [], [], []
        for line, row in enumerate(reader, start=2):
            t.append(_parse_float(row[test], test, line))
            a.append([_parse_float(row[c], c, line) for c in covariates])
            flag = (row[verified] or "").strip()
            if flag not in ("0", "1"):
                raise DataError(f"line {line}: verification flag must be 0 or 1, got {flag!r}")
            v.append(int(flag))
            label = (row[disease] or "").strip()
            if label == "":
                if flag == "1":
                    raise DataError(f"line {line}: verified subject without a disease class")
                d.append(0)
                mask.append(True)
            else:
                if label not in ("1", "2", "3"):
                    raise DataError(f"line {line}: disease class must be 1, 2 or 3, got {label!r}")
                d.append(int(label))
                # a class recorded for an unverified subject is ignored
                mask.append(flag == "0")
    if not t:
        raise DataError(f"{path} has no data rows")
    t = np.array(t)
    if negate_test:
        t = -t
    a = np.array(a, dtype=float).reshape(len(t), len(covariates))
    v = np.array(v, dtype=np.int64)
    d = np.ma.masked_array(np.array(d, dtype=np.int64), mask=np.array(mask))
    return Dataset(
        t=t, a=a, v=v, d=d, covariate_names=tuple(covariates),
        a1_idx=tuple(covariates.index(c) for c in a1),
    )


def check_class_counts(data: Dataset, minimum: int = 3):
    counts = data.observed_onehot[data.v == 1].sum(axis=0)
    if np.any(counts < minimum):
        raise DataError(f"need at least {minimum} verified subjects per class, got {counts.astype(int).tolist()}")


def dataset_to_csv(data: Dataset, test="t", verified="v", disease="d") -> str:
    """Serialise a dataset in the input schema (values written exactly)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([test, *data.covariate_names, verified, disease])
    d = data.d
    for i in range(data.n):
        label = "" if np.ma.is_masked(d[i]) else str(int(d[i]))
        w.writerow([repr(float(data.t[i])), *(repr(float(x)) for x in data.a[i]), str(int(data.v[i])), label])
    return buf.getvalue()


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def write_atomic(path, text: str):
    """Write ``text`` to ``path`` via a temporary file and a rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_all(files: dict):
    """Write several reports; nothing is written unless every one is ready."""
    for path, text in files.items():
        write_atomic(path, text)
