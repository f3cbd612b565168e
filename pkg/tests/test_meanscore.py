import numpy as np
import pytest

import reference as ref
from conftest import reference_problem
from vusni import Dataset, MeanScoreProblem, fit_disease, generate, scenario, solve_gamma
from vusni.meanscore import NORM_TOL, default_starts, fit_binary


def _random_theta(problem, rng):
    return rng.normal(scale=0.5, size=problem.q2), rng.normal(scale=0.7, size=problem.p)


@pytest.mark.parametrize("sid", ["I", "III", "VI"])
def test_scores_and_jacobians_match_reference(sid):
    spec = scenario(sid, n=60)
    data = generate(spec, seed=[5, 0])
    rng = np.random.default_rng(2)
    for _ in range(5):
        eta, gamma = _random_theta(MeanScoreProblem(data, np.zeros(2 * (2 + data.disease_covariates.shape[1])), spec.link), rng)
        prob = MeanScoreProblem(data, eta, spec.link)
        rp = reference_problem(data, spec.link)
        theta = np.concatenate([eta, gamma])
        psi = rp.psi(theta)
        np.testing.assert_allclose(prob.s_terms(gamma), psi[:, rp.q2:], rtol=1e-10, atol=1e-12)
        s, jg, je = prob.evaluate(gamma)
        np.testing.assert_allclose(s, psi[:, rp.q2:].sum(0), rtol=1e-10, atol=1e-10)
        full = ref.cs_jacobian(lambda th: rp.psi(th)[:, rp.q2:].sum(0), theta)
        np.testing.assert_allclose(jg, full[:, rp.q2:], rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(je, full[:, :rp.q2], rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("link", ["logit", "probit"])
def test_complete_data_score_gives_bernoulli_ml(link):
    sm = pytest.importorskip("statsmodels.api")
    spec = scenario("I", n=600)
    data = generate(spec, seed=[1, 0])
    prob = MeanScoreProblem(data, fit_disease(data), link, use_truth=True)
    rep = solve_gamma(prob)
    assert rep.converged and rep.norm_at_solution <= NORM_TOL
    z = np.column_stack([np.ones(data.n), data.t, data.a1, data.true_onehot[:, :2]])
    ml = fit_binary(data.v, z, link)
    np.testing.assert_allclose(rep.gamma_hat, ml, atol=1e-6)
    family = sm.families.Binomial(sm.families.links.Logit() if link == "logit" else sm.families.links.Probit())
    glm = sm.GLM(data.v.astype(float), z, family=family).fit(tol=1e-12)
    np.testing.assert_allclose(rep.gamma_hat, glm.params, atol=1e-6)


def test_solver_recovers_truth_at_large_n():
    spec = scenario("II", n=40_000)
    data = generate(spec, seed=[9, 0])
    rep = solve_gamma(MeanScoreProblem(data, fit_disease(data), spec.link))
    assert rep.converged
    assert np.max(np.abs(rep.gamma_hat - np.array(spec.true_gamma))) < 0.15


def test_solution_is_invariant_to_row_order():
    spec = scenario("I", n=300)
    data = generate(spec, seed=[2, 0])
    rep = solve_gamma(MeanScoreProblem(data, fit_disease(data), spec.link))
    perm = np.random.default_rng(0).permutation(data.n)
    shuffled = data.take(perm)
    rep2 = solve_gamma(MeanScoreProblem(shuffled, fit_disease(shuffled), spec.link))
    np.testing.assert_allclose(rep.gamma_hat, rep2.gamma_hat, atol=1e-7)


def test_converged_reports_satisfy_tolerance_and_are_deterministic():
    spec = scenario("VI", n=200)
    for seed in range(5):
        data = generate(spec, seed=[seed, 0])
        prob = MeanScoreProblem(data, fit_disease(data), spec.link)
        a, b = solve_gamma(prob), solve_gamma(prob)
        np.testing.assert_array_equal(a.gamma_hat, b.gamma_hat)
        if a.converged:
            assert a.norm_at_solution <= NORM_TOL
            s = prob.sbar(a.gamma_hat) / data.n
            assert float(s @ s) == pytest.approx(a.norm_at_solution)
        assert len(a.starts_tried) == 3
        assert len(default_starts(prob)) == 3


def test_all_verified_reports_unidentified_gamma():
    t = np.array([0.0, 1.0, 2.0, 0.5, 1.5, 2.5])
    d = np.ma.masked_array([1, 2, 3, 1, 2, 3], mask=np.zeros(6, bool))
    data = Dataset(t=t, a=np.zeros((6, 0)), v=np.ones(6, int), d=d)
    rep = solve_gamma(MeanScoreProblem(data, np.zeros(4), "logit"))
    assert rep.all_verified and rep.converged
    assert np.all(np.isnan(rep.gamma_hat))
