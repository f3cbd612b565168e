import csv
import io

import numpy as np
import pytest

from vusni import Dataset, generate, scenario
from vusni import cli
from vusni.csvio import dataset_to_csv, read_dataset
from vusni.errors import DataError, NonConvergence


@pytest.fixture
def study_csv(tmp_path):
    data = generate(scenario("III", n=300), seed=[2, 0])
    path = tmp_path / "study.csv"
    path.write_text(dataset_to_csv(data))
    return path, data


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_csv_round_trip(study_csv):
    path, data = study_csv
    back = read_dataset(path, covariates=["A1", "A2"], a1=["A1"])
    np.testing.assert_array_equal(back.t, data.t)
    np.testing.assert_array_equal(back.a, data.a)
    np.testing.assert_array_equal(back.v, data.v)
    np.testing.assert_array_equal(back.d.filled(0), data.d.filled(0))
    assert back.a1_names == ("A1",)
    neg = read_dataset(path, covariates=["A1"], negate_test=True)
    np.testing.assert_array_equal(neg.t, -data.t)


@pytest.mark.parametrize("text", [
    "t,v\n1.0,1\n",                 # missing disease column
    "t,v,d\n1.0,2,1\n",             # bad flag
    "t,v,d\n1.0,1,\n",              # verified without class
    "t,v,d\n1.0,1,4\n",             # bad class
    "t,v,d\nabc,1,1\n",             # not a number
    "t,v,d\ninf,1,1\n",             # not finite
    "t,v,d\n",                      # no rows
])
def test_csv_errors(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(DataError):
        read_dataset(path)


def test_unverified_class_is_ignored(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("t,v,d\n1.0,1,2\n2.0,0,3\n")
    data = read_dataset(path)
    assert np.ma.is_masked(data.d[1])


def test_estimate_writes_reports_deterministically(study_csv, tmp_path):
    path, _ = study_csv
    outs = []
    for k in range(2):
        prefix = tmp_path / f"run{k}"
        code = cli.main(["estimate", str(path), "--covariates", "A1,A2", "--iv", "A2", "--link", "probit",
                         "--bootstrap", "6", "--seed", "9", "--out", str(prefix)])
        assert code == 0
        outs.append((prefix.with_suffix(".csv").read_bytes(), prefix.with_suffix(".txt").read_bytes()))
    assert outs[0] == outs[1]
    rows = _rows(tmp_path / "run0.csv")
    names = {(r["section"], r["name"]) for r in rows}
    for m in ("FI", "MSI", "IPW", "PDR", "NAIVE"):
        assert ("vus", m) in names
    ver = [r["name"] for r in rows if r["section"] == "verification"]
    assert ver == ["Intercept", "T", "A1", "D1", "D2"]


def test_all_verified_study(tmp_path):
    rng = np.random.default_rng(0)
    d = rng.integers(1, 4, 60)
    t = rng.normal(d, 1.0)
    data = Dataset.complete(t, d, rng.normal(size=(60, 1)), covariate_names=("A",))
    path = tmp_path / "all.csv"
    path.write_text(dataset_to_csv(data))
    prefix = tmp_path / "out"
    assert cli.main(["estimate", str(path), "--covariates", "A", "--out", str(prefix)]) == 0
    vus = {r["name"]: r["estimate"] for r in _rows(prefix.with_suffix(".csv")) if r["section"] == "vus"}
    assert vus["MSI"] == vus["IPW"] == vus["PDR"] == vus["NAIVE"]


def test_exit_codes(tmp_path, study_csv, monkeypatch, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,v,d\n1.0,7,1\n")
    assert cli.main(["estimate", str(bad)]) == cli.EXIT_DATA
    assert cli.main(["estimate", str(tmp_path / "missing.csv")]) == cli.EXIT_DATA
    few = tmp_path / "few.csv"
    few.write_text("t,v,d\n1,1,1\n2,1,2\n3,1,3\n4,0,\n")
    assert cli.main(["estimate", str(few)]) == cli.EXIT_DATA
    for argv in (["bogus"], ["simulate", "--scenario", "IX"], ["simulate", "--scenario", "I", "--bootstrap", "1"],
                 ["simulate", "--scenario", "II", "--high-rate"]):
        with pytest.raises(SystemExit) as exc:
            cli.main(argv)
        assert exc.value.code == cli.EXIT_USAGE

    def boom(*args, **kwargs):
        raise NonConvergence("no root")

    monkeypatch.setattr(cli, "fit_models", boom)
    path, _ = study_csv
    assert cli.main(["estimate", str(path), "--covariates", "A1,A2"]) == cli.EXIT_NUMERIC
    assert "numerical failure" in capsys.readouterr().err


def test_failed_run_writes_nothing(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,v,d\n1.0,7,1\n")
    prefix = tmp_path / "out"
    cli.main(["estimate", str(bad), "--out", str(prefix)])
    assert list(tmp_path.iterdir()) == [bad]


def test_iv_select_finds_instrument(study_csv, tmp_path):
    path, _ = study_csv
    prefix = tmp_path / "iv"
    assert cli.main(["iv-select", str(path), "--covariates", "A1,A2", "--link", "probit",
                     "--out", str(prefix)]) == 0
    part = {r["name"]: r["note"] for r in _rows(prefix.with_suffix(".csv")) if r["step"] == "partition"}
    assert part.get("A2") == "instrument"


def test_simulate_files_are_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        prefix = tmp_path / f"sim{k}"
        assert cli.main(["simulate", "--scenario", "II", "--n", "100", "--reps", "2", "--seed", "4",
                         "--out", str(prefix)]) == 0
        outs.append([(tmp_path / f"sim{k}{suffix}").read_bytes() for suffix in (".csv", "_coef.csv", ".txt")])
    assert outs[0] == outs[1]
    text = io.StringIO((tmp_path / "sim0.csv").read_text())
    assert next(csv.reader(text))[0] == "method"
