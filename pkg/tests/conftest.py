import numpy as np
import pytest

import reference as ref

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


def reference_problem(data, link):
    """Reference problem built from a dataset's raw columns."""
    return ref.Problem(data.t, data.disease_covariates, data.a1, data.v, data.d.filled(0), link)


def theta_of(fit):
    return np.concatenate([fit.disease_fit.eta_hat, fit.report.gamma_hat])


def random_instance(rng, n_max=30):
    """Random small study with overlapping classes and one covariate in each model.

    Returns ``(data, link)``.
    """
    from vusni import Dataset

    n = int(rng.integers(20, n_max + 1))
    link = str(rng.choice(["logit", "probit"]))
    d = rng.integers(1, 4, n)
    t = rng.normal(0.6 * d, 1.0)
    a = rng.normal(0.3 * d[:, None], 1.0, size=(n, 2))
    lam = rng.uniform(-1.5, 0.5, 2)
    lin = 1.0 + 0.5 * t - 0.5 * a[:, 0] + lam[0] * (d == 1) + lam[1] * (d == 2)
    v = (rng.random(n) < 1.0 / (1.0 + np.exp(-lin))).astype(int)
    v[:6] = 1
    d[:6] = [1, 1, 2, 2, 3, 3]
    data = Dataset(t=t, a=a, v=v, d=np.ma.masked_array(d, mask=v == 0), a1_idx=(0,))
    return data, link


def well_posed_instances(count, seed=0, n_max=30):
    """Fitted random instances with converged, non-separated, well-conditioned fits."""
    from vusni import fit_models
    from vusni.errors import VusError
    from vusni.inference import _stacked_scores

    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        data, link = random_instance(rng, n_max)
        try:
            fit = fit_models(data, link)
        except VusError:
            continue
        if fit.report.all_verified or not fit.converged or np.max(np.abs(fit.disease_fit.eta_hat)) > 30:
            continue
        if np.linalg.cond(_stacked_scores(fit, True)[1]) > 1e12:
            continue
        out.append((data, fit, link))
    return out


@pytest.fixture(scope="session")
def fitted_small():
    """A few small fitted instances: (data, fit, link)."""
    return well_posed_instances(4, seed=1)
