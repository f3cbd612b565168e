"""Pseudo-disease weights and bias-corrected VUS estimates.

Each method replaces the class indicators of every subject by a weight
triple and plugs the triples into the weighted VUS:

* ``FI``: disease-model probabilities among verified subjects for verified
  rows, Bayes-rule probabilities among unverified subjects otherwise.
* ``MSI``: observed indicators for verified rows, unverified-subject
  probabilities otherwise.
* ``IPW``: observed indicators divided by the fitted verification
  probability; zero for unverified rows.
* ``PDR``: ``V D / pi - rho0 (V - pi) / pi``.
* ``NAIVE``: complete-case indicators (unverified rows get zero weight).
* ``FULL``: true indicators, available for simulated data only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import Dataset, vus_fast
from .disease import DiseaseFit, fit_disease, rho_derivative
from .errors import DataError, NonConvergence, NonPositivePi
from .meanscore import MeanScoreProblem, SolverReport, solve_gamma

LARGE_WEIGHT = 50.0


class Method(str, Enum):
    FI = "FI"
    MSI = "MSI"
    IPW = "IPW"
    PDR = "PDR"
    NAIVE = "NAIVE"
    FULL = "FULL"

    def __str__(self):
        return self.value


BIAS_CORRECTED = (Method.FI, Method.MSI, Method.IPW, Method.PDR)


def as_method(method) -> Method:
    try:
        return Method(str(method).upper())
    except ValueError:
        raise ValueError(f"unknown method {method!r}; expected one of {[m.value for m in Method]}") from None


@dataclass
class PseudoWeights:
    method: Method
    weights: np.ndarray
    min_pi_verified: float = float("nan")
    n_large: int = 0
    diagnostics: dict = field(default_factory=dict)


@dataclass
class ModelFit:
    """Disease and verification fits on one dataset."""

    data: Dataset
    disease_fit: DiseaseFit
    report: SolverReport
    problem: MeanScoreProblem

    @property
    def link(self):
        return self.problem.link

    @property
    def converged(self) -> bool:
        return bool(self.disease_fit.converged and self.report.converged)


def fit_models(data: Dataset, link="logit", starts=None, stop_early=False) -> ModelFit:
    """Fit the disease model, then solve the mean-score equation."""
    disease_fit = fit_disease(data)
    problem = MeanScoreProblem(data, disease_fit, link)
    report = solve_gamma(problem, starts=starts, stop_early=stop_early)
    return ModelFit(data, disease_fit, report, problem)


def _verified_pi(problem: MeanScoreProblem, gamma, report_all_verified):
    """Fitted verification probability at the observed pattern and g1 there."""
    n = problem.n
    if report_all_verified:
        return np.ones(n), np.zeros(n)
    gamma = np.asarray(gamma, dtype=float)
    x = problem.zb @ gamma[:-2] + problem.dobs @ gamma[-2:]
    return problem.link.cdf(x), problem.link.g1(x)


def weights_and_derivatives(method, problem: MeanScoreProblem, gamma=None, eta=None,
                            all_verified=False, derivatives=True):
    """Weight triples and their derivatives in ``theta = (eta, gamma)``.

    Returns
    -------
    w : (n, 3) array
    dw : (n, 3, q2 + p) array or None
        Derivatives are None when not requested; NAIVE and FULL weights do
        not depend on the fitted parameters and get zeros.
    pi_v : (n,) array
        Fitted verification probabilities at the observed pattern (verified
        rows are the meaningful ones).
    """
    method = as_method(method)
    data = problem.data
    n, p, q2 = problem.n, problem.p, problem.q2
    eta = problem.eta_hat if eta is None else np.asarray(eta, dtype=float)
    v = problem.v
    vf = v.astype(float)[:, None]
    dw = np.zeros((n, 3, q2 + p)) if derivatives else None
    pi_v = np.ones(n)

    if method is Method.FULL:
        return data.true_onehot, dw, pi_v
    obs = data.observed_onehot
    if method is Method.NAIVE:
        return obs, dw, pi_v
    if method is Method.IPW or method is Method.PDR:
        pi_v, g1 = _verified_pi(problem, gamma, all_verified)
    if method is Method.IPW:
        inv = np.where(v, 1.0 / np.where(v, pi_v, 1.0), 0.0)
        w = obs * inv[:, None]
        if derivatives and not all_verified:
            # d(1/pi)/dgamma = -(g1 / pi) Z
            dinv = -(inv * g1)[:, None] * problem.z_obs
            dw[:, :, q2:] = obs[:, :, None] * dinv[:, None, :]
        return w, dw, pi_v

    if method is Method.FI:
        rho1 = problem.rho1(eta)
        if all_verified:
            w = rho1
            if derivatives:
                dw[:, :, :q2] = rho_derivative(rho1, problem.x_dis)
            return w, dw, pi_v
        rho0 = problem.rho0(gamma, eta)
        w = vf * rho1 + (1.0 - vf) * rho0
        if derivatives:
            d1 = rho_derivative(rho1, problem.x_dis)
            dg, de = problem.drho0(gamma, rho0)
            vv = vf[:, :, None]
            dw[:, :, :q2] = vv * d1 + (1.0 - vv) * de
            dw[:, :, q2:] = (1.0 - vv) * dg
        return w, dw, pi_v

    if all_verified:
        # no unverified rows: MSI and PDR reduce to the observed indicators
        return obs, dw, pi_v
    rho0 = problem.rho0(gamma, eta)
    if derivatives:
        dg, de = problem.drho0(gamma, rho0)
        drho = np.concatenate([de, dg], axis=2)
    if method is Method.MSI:
        w = vf * obs + (1.0 - vf) * rho0
        if derivatives:
            dw = (1.0 - vf)[:, :, None] * drho
        return w, dw, pi_v

    # PDR: verified rows (D - rho0) / pi + rho0, unverified rows rho0
    inv = np.where(v, 1.0 / np.where(v, pi_v, 1.0), 0.0)
    resid = obs - rho0
    w = rho0 + vf * resid * inv[:, None]
    if derivatives:
        scale = 1.0 - vf[:, :, None] * inv[:, None, None]
        dw = drho * scale
        dinv = -(inv * g1)[:, None] * problem.z_obs
        dw[:, :, q2:] += (vf * resid)[:, :, None] * dinv[:, None, :]
    return w, dw, pi_v


def pseudo_weights(method, data: Dataset, disease_fit: DiseaseFit, solver_report: SolverReport,
                   link="logit", force=False) -> PseudoWeights:
    """Per-subject weight triples for ``method``.

    Raises
    ------
    NonConvergence
        A fit did not converge and ``force`` is not set.
    NonPositivePi
        A verified subject has a fitted verification probability <= 0.
    """
    method = as_method(method)
    diagnostics = {}
    if method in BIAS_CORRECTED:
        ok = disease_fit.converged and solver_report.converged
        if not ok:
            if not force:
                raise NonConvergence("model fits did not converge", {"method": method.value})
            diagnostics["forced"] = True
    if method is Method.FULL and data.d_true is None:
        raise DataError("the FULL method needs the complete disease status")
    problem = MeanScoreProblem(data, disease_fit, link)
    w, _, pi_v = weights_and_derivatives(
        method, problem, solver_report.gamma_hat, all_verified=solver_report.all_verified,
        derivatives=False,
    )
    v = data.v == 1
    min_pi = float(pi_v[v].min()) if v.any() else float("nan")
    if method in (Method.IPW, Method.PDR) and not min_pi > 0.0:
        raise NonPositivePi(f"minimum fitted verification probability is {min_pi!r}")
    n_large = int(np.sum(np.abs(w) > LARGE_WEIGHT))
    return PseudoWeights(method, w, min_pi, n_large, diagnostics)


def estimate_vus(method, data: Dataset, disease_fit: DiseaseFit, solver_report: SolverReport,
                 link="logit", force=False) -> float:
    """Plug-in VUS for ``method``; IPW and PDR values are returned unclipped."""
    pw = pseudo_weights(method, data, disease_fit, solver_report, link, force=force)
    return vus_fast(pw.weights, data.t)


def clip_unit(value: float) -> float:
    return float(min(1.0, max(0.0, value)))
