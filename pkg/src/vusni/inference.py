"""Asymptotic and bootstrap inference for the VUS estimators.

The estimator's influence decomposes into a U-statistic projection term
``Lambda_i`` (subject i placed in each of the three class positions) and a
correction ``Q_i`` for the estimation of the disease and verification model
parameters ``theta = (eta, gamma)``.  With ``c_ki = num_ki - mu den_ki`` the
per-position centred sums,

    Lambda_i = sum_k w_ki c_ki / ((n-1)(n-2))
    Q_i      = -psi_i . J^{-T} g / ((n-1)(n-2))

where ``psi_i`` stacks the disease score (verified rows) and the mean-score
term, ``J`` is the summed Jacobian of ``psi`` and ``g = sum_ik c_ki dw_ki/dtheta``.
The variance estimate is the sample variance of ``Lambda_i + Q_i`` divided by
the squared product of the estimated class prevalences.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .data import Dataset, PositionSums, position_sums, vus_fast
from .disease import score_jacobian, scores, verified_design
from .errors import (
    SingularInformation,
    TooFewSuccessfulResamples,
    VusError,
    ZeroClassPrevalence,
    ZeroDenominator,
)
from .estimators import (
    BIAS_CORRECTED,
    Method,
    ModelFit,
    as_method,
    clip_unit,
    fit_models,
    weights_and_derivatives,
)
from .meanscore import default_starts

COND_LIMIT = 1e12
Z95 = stats.norm.ppf(0.975)


@dataclass
class InferenceContext:
    """Everything the variance formulas need for one method on one fit."""

    fit: ModelFit
    method: Method
    weights: np.ndarray
    dweights: np.ndarray
    sums: PositionSums
    mu: float

    @property
    def n(self) -> int:
        return self.fit.data.n

    @property
    def centred(self) -> np.ndarray:
        """(n, 3) per-position sums of ``w w (K - mu)`` over the other two subjects."""
        return self.sums.num - self.mu * self.sums.den


def build_context(method, fit: ModelFit) -> InferenceContext:
    method = as_method(method)
    w, dw, _ = weights_and_derivatives(
        method, fit.problem, fit.report.gamma_hat, all_verified=fit.report.all_verified,
    )
    t = fit.data.t
    ps = position_sums(w, t)
    num = math.fsum(w[:, 0] * ps.num[:, 0])
    den = math.fsum(w[:, 0] * ps.den[:, 0])
    if den == 0.0:
        raise ZeroDenominator("weighted number of class-1/2/3 triples is zero")
    return InferenceContext(fit, method, w, dw, ps, num / den)


# -- projection term -------------------------------------------------------------


def lambda_hat(context: InferenceContext) -> np.ndarray:
    """All ``Lambda_i`` from the prefix-sum position sums."""
    n = context.n
    return (context.weights * context.centred).sum(axis=1) / ((n - 1) * (n - 2))


def _phi(x, y):
    return np.where(x < y, 1.0, np.where(x == y, 0.5, 0.0))


def kernel_array(ti, tl, tr):
    """Vectorised ordering kernel with tie credits 1/2 and 1/6."""
    ti, tl, tr = np.broadcast_arrays(ti, tl, tr)
    return _phi(ti, tl) * _phi(tl, tr) - ((ti == tl) & (tl == tr)) / 12.0


def lambda_hat_i(i: int, context: InferenceContext) -> float:
    """``Lambda_i`` by the direct double sum over ordered pairs (l, r)."""
    t, w, mu = context.fit.data.t, context.weights, context.mu
    n = t.shape[0]
    others = np.delete(np.arange(n), i)
    tl, tr = t[others][:, None], t[others][None, :]
    keep = ~np.eye(n - 1, dtype=bool)
    w1, w2, w3 = (w[others, k] for k in range(3))
    # subject i in the class-1, class-2 and class-3 positions
    g1 = w[i, 0] * w2[:, None] * w3[None, :] * (kernel_array(t[i], tl, tr) - mu)
    g2 = w1[:, None] * w[i, 1] * w3[None, :] * (kernel_array(tl, t[i], tr) - mu)
    g3 = w1[None, :] * w2[:, None] * w[i, 2] * (kernel_array(tr, tl, t[i]) - mu)
    total = math.fsum((g1 + g2 + g3)[keep])
    return total / ((n - 1) * (n - 2))


def lambda_hat_naive(context: InferenceContext) -> np.ndarray:
    return np.array([lambda_hat_i(i, context) for i in range(context.n)])


# -- parameter-estimation correction -----------------------------------------------


def _stacked_scores(fit: ModelFit, with_gamma: bool):
    """Per-subject estimating functions psi_i and their summed Jacobian J."""
    problem = fit.problem
    eta = problem.eta_hat
    n, q2 = problem.n, problem.q2
    x, y = verified_design(fit.data)
    ver = fit.data.v == 1
    u = np.zeros((n, q2))
    u[ver] = scores(eta, x, y)
    h = score_jacobian(eta, x)
    if not with_gamma:
        return u, h
    gamma = fit.report.gamma_hat
    s = problem.s_terms(gamma)
    _, jg, je = problem.evaluate(gamma)
    p = problem.p
    jac = np.zeros((q2 + p, q2 + p))
    jac[:q2, :q2] = h
    jac[q2:, :q2] = je
    jac[q2:, q2:] = jg
    return np.hstack([u, s]), jac


def _check_condition(mat, what):
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularInformation(f"{what} is numerically singular (condition number {cond:.3g})")


def parameter_gradient(context: InferenceContext) -> np.ndarray:
    """``sum_i sum_k c_ki d w_ki / d theta``; zero for parameter-free weights."""
    return np.einsum("nk,nkj->j", context.centred, context.dweights)


def q_hat(context: InferenceContext) -> np.ndarray:
    """All ``Q_i``; zero when the weights do not depend on the fitted parameters."""
    n = context.n
    if context.method in (Method.NAIVE, Method.FULL):
        return np.zeros(n)
    fit = context.fit
    with_gamma = not fit.report.all_verified
    g = parameter_gradient(context)
    if not with_gamma:
        g = g[: fit.problem.q2]
    if not np.any(g):
        return np.zeros(n)
    psi, jac = _stacked_scores(fit, with_gamma)
    _check_condition(jac, "estimating-equation Jacobian")
    x = np.linalg.solve(jac.T, g)
    return -(psi @ x) / ((n - 1) * (n - 2))


def q_hat_i(i: int, context: InferenceContext) -> float:
    return float(q_hat(context)[i])


def class_prevalences(weights) -> np.ndarray:
    return np.asarray(weights, dtype=float).mean(axis=0)


def asymptotic_variance(context: InferenceContext) -> float:
    """Estimated variance of ``sqrt(n) (mu_hat - mu)``.

    Raises
    ------
    ZeroClassPrevalence
        Some estimated class prevalence is zero.
    SingularInformation
        The estimating-equation Jacobian is numerically singular.
    """
    prev = class_prevalences(context.weights)
    if np.any(prev == 0.0):
        raise ZeroClassPrevalence(f"estimated class prevalences {prev.tolist()}")
    h = lambda_hat(context) + q_hat(context)
    n = context.n
    dev = h - h.mean()
    var = math.fsum(dev * dev) / (n - 1)
    return var / float(np.prod(prev)) ** 2


def asymptotic_se(context: InferenceContext) -> float:
    return math.sqrt(max(asymptotic_variance(context), 0.0) / context.n)


# -- sandwich covariances and Wald tests -----------------------------------------------


def sandwich_covariances(fit: ModelFit):
    """Sandwich covariances of ``sqrt(n) (eta_hat - eta)`` and ``sqrt(n) (gamma_hat - gamma)``.

    The verification-model meat uses ``f_i = s_i - S_eta H^{-1} V_i u_i`` to
    account for the estimated disease model.  ``Sigma_gamma`` is None when
    every subject is verified.
    """
    n = fit.data.n
    sigma_eta = fit.disease_fit.sigma_eta_hat
    if fit.report.all_verified:
        return sigma_eta, None
    psi, jac = _stacked_scores(fit, True)
    q2 = fit.problem.q2
    u, s = psi[:, :q2], psi[:, q2:]
    h, je, jg = jac[:q2, :q2], jac[q2:, :q2], jac[q2:, q2:]
    _check_condition(h, "disease-model information")
    _check_condition(jg, "mean-score Jacobian")
    # f_i = s_i - je H^{-1} u_i
    f = s - u @ np.linalg.solve(h, je.T)
    # Gram form of jg^{-1} f^T f jg^{-T}: positive semidefinite by construction and
    # free of the cancellation that forming the meat first causes for ill-conditioned jg
    b = np.linalg.solve(jg, f.T)
    sigma_gamma = n * (b @ b.T)
    return sigma_eta, sigma_gamma


@dataclass(frozen=True)
class WaldTest:
    name: str
    estimate: float
    se: float
    z: float
    p_value: float


def wald_tests(estimates, sigma, n, names) -> list:
    """Two-sided Wald tests of each coefficient against zero."""
    se = np.sqrt(np.clip(np.diag(sigma), 0.0, None) / n)
    out = []
    for name, est, s in zip(names, estimates, se):
        z = est / s if s > 0 else math.copysign(math.inf, est) if est else 0.0
        p = float(2.0 * stats.norm.sf(abs(z)))
        out.append(WaldTest(name, float(est), float(s), float(z), min(1.0, max(0.0, p))))
    return out


def joint_wald_p(estimates, sigma, n, index) -> float:
    """p-value of the joint Wald test that the coefficients at ``index`` are zero."""
    idx = np.asarray(index)
    b = np.asarray(estimates, dtype=float)[idx]
    cov = np.asarray(sigma, dtype=float)[np.ix_(idx, idx)] / n
    stat = float(b @ np.linalg.lstsq(cov, b, rcond=None)[0])
    return float(stats.chi2.sf(stat, df=idx.size))


# -- results -----------------------------------------------------------------------------


@dataclass
class VusResult:
    method: Method
    estimate: float
    asd: float
    bsd: float | None = None
    ci95: tuple = (float("nan"), float("nan"))
    diagnostics: dict = field(default_factory=dict)

    @property
    def clipped(self) -> float:
        return clip_unit(self.estimate)

    @property
    def in_range(self) -> bool:
        return 0.0 <= self.estimate <= 1.0


def normal_ci(estimate, se):
    return (estimate - Z95 * se, estimate + Z95 * se)


def vus_result(method, fit: ModelFit, bsd=None) -> VusResult:
    """Point estimate, asymptotic SE and a 95% normal interval.

    The interval uses the bootstrap SE when one is supplied.  A numerically
    singular variance computation leaves ``asd`` as NaN and is noted in the
    diagnostics.
    """
    ctx = build_context(method, fit)
    diagnostics = {}
    try:
        asd = asymptotic_se(ctx)
    except (SingularInformation, ZeroClassPrevalence) as exc:
        asd = float("nan")
        diagnostics["asd_error"] = f"{type(exc).__name__}: {exc}"
    se = asd if bsd is None else bsd
    diagnostics["se_source"] = "asymptotic" if bsd is None else "bootstrap"
    if ctx.method in (Method.IPW, Method.PDR):
        diagnostics["out_of_range"] = not 0.0 <= ctx.mu <= 1.0
    return VusResult(ctx.method, ctx.mu, asd, bsd, normal_ci(ctx.mu, se), diagnostics)


# -- bootstrap -------------------------------------------------------------------------


@dataclass
class BootstrapResult:
    se: dict
    values: dict
    n_failed: dict
    B: int


def _resample_estimates(data, link, methods, idx, start):
    out = {}
    try:
        boot = data.take(idx)
        starts = None
        if start is not None:
            fit0 = fit_models(boot, link, starts=[start], stop_early=True)
            if not fit0.report.converged and not fit0.report.all_verified:
                starts = default_starts(fit0.problem)
                fit0 = fit_models(boot, link, starts=starts, stop_early=True)
            fit = fit0
        else:
            fit = fit_models(boot, link, stop_early=True)
    except (VusError, np.linalg.LinAlgError, ValueError):
        return {m: None for m in methods}
    for m in methods:
        if m in BIAS_CORRECTED and not fit.converged:
            out[m] = None
            continue
        try:
            w, _, _ = weights_and_derivatives(
                m, fit.problem, fit.report.gamma_hat, all_verified=fit.report.all_verified,
                derivatives=False,
            )
            out[m] = vus_fast(w, boot.t)
        except (VusError, ValueError):
            out[m] = None
    return out


def bootstrap(data: Dataset, link="logit", B: int = 250, seed: int = 0, methods=BIAS_CORRECTED,
              start=None, resamples=None, n_jobs: int = 1) -> BootstrapResult:
    """Nonparametric bootstrap of subjects with both models refitted per resample.

    Resample ``b`` draws its row indices from a generator seeded by
    ``(seed, b)``.  ``start`` (typically the full-sample gamma estimate) is
    tried first when solving each resample; the default starts are used if
    it does not reach a root.  Failed resamples are dropped and counted.

    Raises
    ------
    TooFewSuccessfulResamples
        Fewer than ``B / 2`` resamples succeeded for some method.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    methods = tuple(as_method(m) for m in methods)
    n = data.n
    if resamples is None:
        resamples = [np.random.default_rng([seed, b]).integers(0, n, n) for b in range(B)]
    else:
        resamples = [np.asarray(r, dtype=np.int64) for r in resamples]
        if len(resamples) != B:
            raise ValueError("number of supplied resamples differs from B")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if n_jobs == 1:
            results = [_resample_estimates(data, link, methods, idx, start) for idx in resamples]
        else:
            results = Parallel(n_jobs=n_jobs)(
                delayed(_resample_estimates)(data, link, methods, idx, start) for idx in resamples
            )
    se, values, failed = {}, {}, {}
    for m in methods:
        vals = np.array([r[m] for r in results if r[m] is not None], dtype=float)
        n_fail = B - vals.size
        values[m], failed[m] = vals, n_fail
        if vals.size < B / 2:
            raise TooFewSuccessfulResamples(
                f"{vals.size} of {B} bootstrap resamples succeeded for {m.value}", vals.size, n_fail,
            )
        se[m] = float(np.std(vals, ddof=1))
    return BootstrapResult(se, values, failed, B)


def bootstrap_se(method, data: Dataset, B: int, seed: int, link="logit", start=None) -> float:
    """Bootstrap SE of one method's estimate."""
    m = as_method(method)
    return bootstrap(data, link, B, seed, methods=(m,), start=start).se[m]

