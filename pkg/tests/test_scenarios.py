import numpy as np
import pytest

from vusni import generate, run_mc, scenario, true_vus
from vusni.estimators import Method
from vusni.scenarios import SCENARIOS, TRUE_GAMMA


def test_working_models():
    assert scenario("II").verification_terms == ()
    assert scenario("III").link == "probit"
    assert scenario("III").verification_terms == ("A1",)
    # IV: generating verification model depends on A, working model omits it
    assert scenario("IV").verification_terms == ()
    # V: generating model is logit with A1 and A2; working model is probit with A1
    assert scenario("V").link == "probit" and scenario("V").verification_terms == ("A1",)
    # VI: working disease model uses A1^2 and A2 without the interaction
    assert scenario("VI").disease_terms == ("A1^2", "A2")


def test_working_terms_are_built_from_covariates():
    data = generate(scenario("VI", n=50), seed=1)
    np.testing.assert_allclose(data.disease_covariates[:, 0], data.a[:, 0] ** 2)
    np.testing.assert_allclose(data.disease_covariates[:, 1], data.a[:, 1])
    assert data.a1_names == ("A1",)


@pytest.mark.parametrize("sid", SCENARIOS)
def test_generate_structure_and_determinism(sid):
    spec = scenario(sid, n=200)
    a, b = generate(spec, seed=[3, 1]), generate(spec, seed=[3, 1])
    np.testing.assert_array_equal(a.t, b.t)
    np.testing.assert_array_equal(a.v, b.v)
    assert np.all(np.ma.getmaskarray(a.d) == (a.v == 0))
    np.testing.assert_array_equal(a.d.compressed(), a.d_true[a.v == 1])
    assert len(spec.true_gamma) == len(TRUE_GAMMA[sid])


def test_invalid_scenarios():
    with pytest.raises(ValueError):
        scenario("VII")
    with pytest.raises(ValueError):
        scenario("II", high_rate=True)
    with pytest.raises(ValueError):
        true_vus(scenario("I"), n_big=1000)


def test_high_rate_variant_rate():
    data = generate(scenario("III", n=100_000, high_rate=True), seed=0)
    assert data.v.mean() == pytest.approx(0.72, abs=0.02)


def test_mc_report_is_reproducible_and_well_formed():
    spec = scenario("II", n=150)
    a = run_mc(spec, reps=3, seed=5, n_jobs=1)
    b = run_mc(spec, reps=3, seed=5, n_jobs=2)
    assert a.to_csv() == b.to_csv()
    assert a.to_text() == b.to_text()
    assert a.coefficients_csv() == b.coefficients_csv()
    rows = a.to_csv().splitlines()
    assert rows[0].startswith("method,mean,bias_pct,mcsd")
    assert [r.split(",")[0] for r in rows[1:]] == ["FI", "MSI", "IPW", "PDR", "NAIVE", "FULL"]
    assert a.n_ok + a.n_failed == 3
    s = a.summary(Method.FULL)
    assert s.rel_bias == pytest.approx(100 * (s.mean - spec.true_vus) / spec.true_vus)


def test_mc_bootstrap_columns():
    spec = scenario("II", n=120)
    rep = run_mc(spec, reps=2, bootstrap_B=6, seed=1, n_jobs=1)
    s = rep.summary(Method.PDR)
    assert s.n_bsd == 2 and np.isfinite(s.bsd)
    # parameter-free methods are not bootstrapped
    assert rep.summary(Method.NAIVE).n_bsd == 0
