"""Subjects, datasets and the three-class concordance statistic.

The volume under the ROC surface is estimated by a weighted three-sample
U-statistic.  Each subject carries one weight per disease class (a hard 0/1
indicator for verified subjects, a pseudo-indicator otherwise) and the
statistic is the weighted mean of the tie-aware ordering kernel over all
ordered triples of distinct subjects.

Two evaluators are provided: :func:`vus_naive` enumerates triples and is the
reference used throughout the test suite, :func:`vus_fast` sorts once and
works on tie groups in ``O(n log n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError, ZeroDenominator

# kernel value indexed by (cmp(t_i, t_l), cmp(t_l, t_r)); missing keys are 0
_KERNEL_TABLE = {
    (-1, -1): 1.0,
    (-1, 0): 0.5,
    (0, -1): 0.5,
    (0, 0): 1.0 / 6.0,
}


def _cmp(x, y):
    return (x > y) - (x < y)


def kernel_i(t_i: float, t_l: float, t_r: float) -> float:
    """Ordering kernel for a (class 1, class 2, class 3) triple of test values."""
    return _KERNEL_TABLE.get((_cmp(t_i, t_l), _cmp(t_l, t_r)), 0.0)


@dataclass(frozen=True)
class Subject:
    t: float
    a: tuple = ()
    v: int = 1
    d: int | None = None

    def __post_init__(self):
        if self.v not in (0, 1):
            raise DataError(f"verification flag must be 0 or 1, got {self.v!r}")
        if self.d is not None and self.d not in (1, 2, 3):
            raise DataError(f"disease class must be 1, 2 or 3, got {self.d!r}")
        if self.v == 1 and self.d is None:
            raise DataError("verified subject without a disease class")

    @property
    def indicators(self):
        """(D1, D2, D3) one-hot triple, or None when d is absent."""
        if self.d is None:
            return None
        return tuple(int(self.d == k) for k in (1, 2, 3))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented sample of subjects.

    Parameters
    ----------
    t : (n,) array
        Test results.
    a : (n, p) array
        Covariates.
    v : (n,) int array
        Verification flags.
    d : (n,) masked int array
        Disease class in {1, 2, 3}; masked where not observed.
    covariate_names : tuple of str
    a1_idx : tuple of int
        Columns of ``a`` entering the verification model.  The remaining
        columns are the instrumental variables.
    disease_a : (n, q) array, optional
        Covariates for the conditional disease model when they differ from
        ``a`` (basis expansions are built by the caller).
    d_true : (n,) int array, optional
        Complete disease classes, available only for simulated data.
    """

    t: np.ndarray
    a: np.ndarray
    v: np.ndarray
    d: np.ma.MaskedArray
    covariate_names: tuple = ()
    a1_idx: tuple = ()
    disease_a: np.ndarray | None = None
    disease_names: tuple | None = None
    d_true: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        n = t.shape[0]
        a = np.asarray(self.a, dtype=float)
        if a.size == 0:
            a = np.zeros((n, 0))
        a = a.reshape(n, -1)
        v = np.asarray(self.v).astype(np.int64).reshape(-1)
        d = self.d
        if not isinstance(d, np.ma.MaskedArray):
            raise DataError("d must be a masked array (masked where unobserved)")
        d = np.ma.masked_array(np.asarray(d.filled(0), dtype=np.int64), mask=np.ma.getmaskarray(d))
        if v.shape[0] != n or d.shape[0] != n:
            raise DataError("t, v and d must have equal length")
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(a)):
            raise DataError("test values and covariates must be finite")
        if not np.isin(v, (0, 1)).all():
            raise DataError("verification flag must be 0 or 1")
        observed = ~np.ma.getmaskarray(d)
        if np.any(observed & ~np.isin(d.filled(0), (1, 2, 3))):
            raise DataError("disease class must be 1, 2 or 3")
        if np.any((v == 1) & ~observed):
            raise DataError("verified subject without a disease class")
        # unverified rows never expose a class, even if one was supplied
        d = np.ma.masked_array(d.filled(0), mask=(v == 0))
        names = tuple(self.covariate_names) or tuple(f"A{j + 1}" for j in range(a.shape[1]))
        if len(names) != a.shape[1]:
            raise DataError("covariate_names does not match the number of covariates")
        a1_idx = tuple(int(j) for j in self.a1_idx)
        if len(set(a1_idx)) != len(a1_idx) or any(j < 0 or j >= a.shape[1] for j in a1_idx):
            raise DataError(f"invalid verification covariate indices {a1_idx}")
        disease_a = self.disease_a
        disease_names = self.disease_names
        if disease_a is not None:
            disease_a = np.asarray(disease_a, dtype=float).reshape(n, -1)
            if disease_names is None:
                disease_names = tuple(f"B{j + 1}" for j in range(disease_a.shape[1]))
            disease_names = tuple(disease_names)
            if len(disease_names) != disease_a.shape[1]:
                raise DataError("disease_names does not match disease_a")
        d_true = self.d_true
        if d_true is not None:
            d_true = np.asarray(d_true, dtype=np.int64).reshape(-1)
            if d_true.shape[0] != n or not np.isin(d_true, (1, 2, 3)).all():
                raise DataError("d_true must hold one class in {1, 2, 3} per subject")
        for name, value in [
            ("t", t), ("a", a), ("v", v), ("d", d), ("covariate_names", names),
            ("a1_idx", a1_idx), ("disease_a", disease_a),
            ("disease_names", disease_names), ("d_true", d_true),
        ]:
            object.__setattr__(self, name, value)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_subjects(cls, subjects: Sequence[Subject], covariate_names=(), a1_idx=()):
        subjects = list(subjects)
        p = len(subjects[0].a) if subjects else 0
        a = np.array([list(s.a) for s in subjects], dtype=float).reshape(len(subjects), p)
        d = np.ma.masked_array(
            [s.d if s.d is not None else 0 for s in subjects],
            mask=[s.d is None for s in subjects],
        )
        return cls(
            t=[s.t for s in subjects], a=a, v=[s.v for s in subjects], d=d,
            covariate_names=covariate_names, a1_idx=a1_idx,
        )

    @classmethod
    def complete(cls, t, d, a=None, **kwargs):
        """All-verified dataset from test values and classes."""
        t = np.asarray(t, dtype=float)
        n = t.shape[0]
        a = np.zeros((n, 0)) if a is None else a
        d = np.ma.masked_array(np.asarray(d, dtype=np.int64), mask=np.zeros(n, bool))
        return cls(t=t, a=a, v=np.ones(n, dtype=np.int64), d=d, **kwargs)

    # -- views ------------------------------------------------------------

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @property
    def subjects(self) -> list:
        d = self.d.filled(0)
        return [
            Subject(float(self.t[i]), tuple(self.a[i]), int(self.v[i]), int(d[i]) if self.v[i] else None)
            for i in range(self.n)
        ]

    @property
    def iv_split(self):
        """(A1 indices, A2 indices): verification covariates and instruments."""
        a2 = tuple(j for j in range(self.a.shape[1]) if j not in self.a1_idx)
        return self.a1_idx, a2

    @property
    def a1(self) -> np.ndarray:
        return self.a[:, list(self.a1_idx)]

    @property
    def a1_names(self) -> tuple:
        return tuple(self.covariate_names[j] for j in self.a1_idx)

    @property
    def disease_covariates(self) -> np.ndarray:
        return self.a if self.disease_a is None else self.disease_a

    @property
    def disease_covariate_names(self) -> tuple:
        return self.covariate_names if self.disease_a is None else self.disease_names

    @property
    def observed_onehot(self) -> np.ndarray:
        """(n, 3) matrix of V_i * D_ki."""
        d = self.d.filled(0)
        return (d[:, None] == np.arange(1, 4)[None, :]).astype(float)

    @property
    def true_onehot(self) -> np.ndarray:
        if self.d_true is None:
            raise DataError("complete disease status is not available for this dataset")
        return (self.d_true[:, None] == np.arange(1, 4)[None, :]).astype(float)

    def take(self, idx) -> "Dataset":
        """Row subset (with repetition allowed, as in a bootstrap resample)."""
        idx = np.asarray(idx)
        return Dataset(
            t=self.t[idx], a=self.a[idx], v=self.v[idx], d=self.d[idx],
            covariate_names=self.covariate_names, a1_idx=self.a1_idx,
            disease_a=None if self.disease_a is None else self.disease_a[idx],
            disease_names=self.disease_names,
            d_true=None if self.d_true is None else self.d_true[idx],
        )

    def with_a1(self, a1_idx) -> "Dataset":
        return Dataset(
            t=self.t, a=self.a, v=self.v, d=self.d, covariate_names=self.covariate_names,
            a1_idx=tuple(a1_idx), disease_a=self.disease_a, disease_names=self.disease_names,
            d_true=self.d_true,
        )

    def with_disease_covariates(self, columns) -> "Dataset":
        """Dataset whose disease model uses only the listed columns of ``a``."""
        columns = list(columns)
        return Dataset(
            t=self.t, a=self.a, v=self.v, d=self.d, covariate_names=self.covariate_names,
            a1_idx=self.a1_idx, disease_a=self.a[:, columns],
            disease_names=tuple(self.covariate_names[j] for j in columns), d_true=self.d_true,
        )


# -- evaluators -------------------------------------------------------------


def _as_weights(weights, n=None) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[1] != 3:
        raise ValueError("weights must have shape (n, 3)")
    if n is not None and w.shape[0] != n:
        raise ValueError("weights and test values differ in length")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    return w


def vus_naive(weights, t) -> float:
    """Weighted VUS by explicit enumeration of all ordered distinct triples.

    ``O(n^3)`` time and ``O(b n^2)`` memory; the first index is processed in
    blocks of ``b`` rows.
    """
    t = np.asarray(t, dtype=float)
    w = _as_weights(weights, t.shape[0])
    n = t.shape[0]
    if n < 3:
        raise ValueError("at least three subjects are required")
    table = np.zeros(9)
    for (a, b), val in _KERNEL_TABLE.items():
        table[3 * (a + 1) + (b + 1)] = val
    c_lr = np.sign(t[:, None] - t[None, :]).astype(np.int64) + 1
    pair = np.outer(w[:, 1], w[:, 2])
    idx = np.arange(n)
    pair[idx, idx] = 0.0  # l == r
    block = max(1, 2_000_000 // (n * n))
    num, den = [], []
    for start in range(0, n, block):
        rows = idx[start:start + block]
        c_il = np.sign(t[rows, None] - t[None, :]).astype(np.int64) + 1
        k = table[3 * c_il[:, :, None] + c_lr[None, :, :]]
        wp = w[rows, 0, None, None] * pair[None, :, :]
        wp[np.arange(rows.size), rows, :] = 0.0  # l == i
        wp[np.arange(rows.size), :, rows] = 0.0  # r == i
        num.extend((wp * k).sum(axis=(1, 2)))
        den.extend(wp.sum(axis=(1, 2)))
    den = math.fsum(den)
    if den == 0.0:
        raise ZeroDenominator("weighted number of class-1/2/3 triples is zero")
    return math.fsum(num) / den


class PositionSums(NamedTuple):
    """Per-subject sums over the other two triple members.

    ``num[:, k]`` is, for subject i placed in class position k+1, the sum of
    the other two positions' weights times the kernel over all pairs of
    distinct indices different from i; ``den[:, k]`` is the same without the
    kernel.
    """

    num: np.ndarray
    den: np.ndarray


def position_sums(weights, t) -> PositionSums:
    t = np.asarray(t, dtype=float)
    w = _as_weights(weights, t.shape[0])
    w1, w2, w3 = w[:, 0], w[:, 1], w[:, 2]
    _, g = np.unique(t, return_inverse=True)
    g = g.reshape(-1)
    ng = int(g.max()) + 1 if g.size else 0

    def gsum(x):
        return np.bincount(g, weights=x, minlength=ng)

    W1, W2, W3 = gsum(w1), gsum(w2), gsum(w3)
    W12, W13, W23 = gsum(w1 * w2), gsum(w1 * w3), gsum(w2 * w3)

    def below(x):  # sum over strictly smaller groups
        return np.cumsum(x) - x

    def above(x):  # sum over strictly larger groups
        return x.sum() - np.cumsum(x)

    L1, R3 = below(W1), above(W3)
    L12, R23 = below(W12), above(W23)
    A1 = L1 + 0.5 * W1  # weight of class-1 values below, half credit for ties
    B3 = R3 + 0.5 * W3
    M = W2 * B3
    N = W2 * A1

    # full sums without the distinct-index restriction, per tie group
    F1 = above(M) + 0.5 * M - W2 * W3 / 12.0
    F2 = A1 * B3 - W1 * W3 / 12.0
    F3 = below(N) + 0.5 * N - W1 * W2 / 12.0

    sixth = 1.0 / 6.0
    num1 = (F1[g] - w2 * (0.5 * R3[g] + W3[g] * sixth) - w3 * W2[g] * sixth
            - (0.5 * R23[g] + W23[g] * sixth) + 2.0 * sixth * w2 * w3)
    num2 = (F2[g] - w1 * (0.5 * R3[g] + W3[g] * sixth) - w3 * (0.5 * L1[g] + W1[g] * sixth)
            - W13[g] * sixth + 2.0 * sixth * w1 * w3)
    num3 = (F3[g] - w1 * W2[g] * sixth - w2 * (0.5 * L1[g] + W1[g] * sixth)
            - (0.5 * L12[g] + W12[g] * sixth) + 2.0 * sixth * w1 * w2)

    S1, S2, S3 = w1.sum(), w2.sum(), w3.sum()
    S12, S13, S23 = (w1 * w2).sum(), (w1 * w3).sum(), (w2 * w3).sum()
    den1 = S2 * S3 - w2 * S3 - w3 * S2 - S23 + 2.0 * w2 * w3
    den2 = S1 * S3 - w1 * S3 - w3 * S1 - S13 + 2.0 * w1 * w3
    den3 = S1 * S2 - w1 * S2 - w2 * S1 - S12 + 2.0 * w1 * w2
    return PositionSums(np.column_stack([num1, num2, num3]), np.column_stack([den1, den2, den3]))


def vus_fast(weights, t) -> float:
    """Weighted VUS in ``O(n log n)``; agrees with :func:`vus_naive`."""
    t = np.asarray(t, dtype=float)
    w = _as_weights(weights, t.shape[0])
    if t.shape[0] < 3:
        raise ValueError("at least three subjects are required")
    ps = position_sums(w, t)
    num = math.fsum(w[:, 0] * ps.num[:, 0])
    den = math.fsum(w[:, 0] * ps.den[:, 0])
    if den == 0.0:
        raise ZeroDenominator("weighted number of class-1/2/3 triples is zero")
    return num / den


def onehot(d) -> np.ndarray:
    d = np.asarray(d)
    return (d[:, None] == np.arange(1, 4)[None, :]).astype(float)
