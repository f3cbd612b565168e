"""Empirical mean score for the verification model and its solver.

For a verified subject the score contribution is the ordinary Bernoulli score
``Z_i g_1(x_i)``.  An unverified subject contributes the expectation of
``Z g_0(x)`` over the three disease patterns, weighted by the Bayes-rule class
probabilities among unverified subjects.  Those probabilities depend on the
disease-model parameters (held at their estimate) and on gamma through the
verification odds ratios.

The estimating equation is solved by minimising ``||S(gamma)/n||^2`` under
box bounds: a bounded Gauss-Newton (trust-region) pass first, falling back to
L-BFGS-B on the squared norm when that pass does not reach a root.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .data import Dataset
from .disease import DiseaseFit, design, linear_predictors, rho_derivative, softmax3
from .errors import NonConvergence
from .verification import PATTERNS, Link, gamma_names, get_link, log_odds_ratios

log = logging.getLogger(__name__)

BOUND = 30.0
NORM_TOL = 1e-10
GRAD_TOL = 1e-8


@dataclass
class SolverReport:
    gamma_hat: np.ndarray
    norm_at_solution: float
    iterations: int
    converged: bool
    multistart_index: int
    names: tuple = ()
    link: str = "logit"
    all_verified: bool = False
    starts_tried: list = field(default_factory=list)

    @property
    def lambdas(self):
        return self.gamma_hat[-2], self.gamma_hat[-1]


class MeanScoreProblem:
    """Mean score S(gamma; eta) of the verification model on a dataset.

    Parameters
    ----------
    data : Dataset
    disease_fit : DiseaseFit or array
        Disease-model fit (or a raw eta vector) supplying eta-hat.
    link : str or Link
    use_truth : bool
        Score unverified rows at their true disease pattern instead of the
        conditional expectation.  Requires simulated data; this gives the
        complete-data score and is used for checks.
    """

    def __init__(self, data: Dataset, disease_fit, link="logit", use_truth=False):
        self.data = data
        self.link: Link = get_link(link)
        if isinstance(disease_fit, DiseaseFit):
            self.disease_fit = disease_fit
            self.eta_hat = np.asarray(disease_fit.eta_hat, dtype=float)
        else:
            self.disease_fit = None
            self.eta_hat = np.asarray(disease_fit, dtype=float)
        self.n = data.n
        self.v = data.v.astype(bool)
        self.x_dis = design(data.t, data.disease_covariates)
        self.zb = np.column_stack([np.ones(self.n), data.t, data.a1])
        onehot = data.true_onehot if use_truth else data.observed_onehot
        self.use_truth = use_truth
        self.dobs = onehot[:, :2]
        self.p = self.zb.shape[1] + 2
        self.q2 = self.eta_hat.shape[0]
        self.z_layout = gamma_names(data.a1_names)
        # Z for the verified (observed) pattern and for the three patterns
        self.z_obs = np.column_stack([self.zb, self.dobs])
        self.z_pat = np.stack(
            [np.column_stack([self.zb, np.full(self.n, d1, float), np.full(self.n, d2, float)])
             for d1, d2 in PATTERNS],
            axis=1,
        )  # (n, 3, p)
        self.observed_rows = self.v | use_truth

    # -- building blocks ----------------------------------------------------

    def rho0(self, gamma, eta=None):
        """(n, 3) class probabilities among unverified subjects, every row."""
        eta = self.eta_hat if eta is None else eta
        gamma = np.asarray(gamma, dtype=float)
        base = self.zb @ gamma[:-2]
        xi = linear_predictors(eta, self.x_dis)
        lor = log_odds_ratios(gamma, self.link, base)
        return softmax3(xi - lor)

    def rho1(self, eta=None):
        eta = self.eta_hat if eta is None else eta
        return softmax3(linear_predictors(eta, self.x_dis))

    def _pattern_predictors(self, gamma):
        base = self.zb @ gamma[:-2]
        lam = gamma[-2:]
        xk = np.column_stack([base + lam[0], base + lam[1], base])
        return base, xk

    def drho0(self, gamma, rho0, rows=None, with_eta=True):
        """d rho0 / d gamma and d rho0 / d eta, shapes (m, 3, p) and (m, 3, q2).

        ``rho0`` holds the rows selected by the boolean mask ``rows``
        (all rows by default).
        """
        rows = slice(None) if rows is None else rows
        _, xk = self._pattern_predictors(gamma)
        xk = xk[rows]
        zp = self.z_pat[rows]
        wk = self.link.dlogodds(xk)  # (m, 3)
        # d log R_j / d gamma
        dlr1 = wk[:, 0:1] * zp[:, 0] - wk[:, 2:3] * zp[:, 2]
        dlr2 = wk[:, 1:2] * zp[:, 1] - wk[:, 2:3] * zp[:, 2]
        dzeta = -np.stack([dlr1, dlr2], axis=1)  # (m, 2, p)
        jac = rho0[:, :, None] * (np.eye(3)[None, :, :2] - rho0[:, None, :2])  # (m, 3, 2)
        dg = np.matmul(jac, dzeta)
        de = rho_derivative(rho0, self.x_dis[rows]) if with_eta else None
        return dg, de

    # -- score and Jacobians -------------------------------------------------

    def s_terms(self, gamma, eta=None) -> np.ndarray:
        """(n, p) per-subject mean-score contributions."""
        gamma = np.asarray(gamma, dtype=float)
        base, xk = self._pattern_predictors(gamma)
        lam = gamma[-2:]
        s = np.empty((self.n, self.p))
        obs = self.observed_rows
        x_obs = base + self.dobs @ lam
        # verified rows (and, with use_truth, unverified rows at the truth)
        gv = np.where(self.v, self.link.g1(x_obs), self.link.g0(x_obs))
        s[obs] = self.z_obs[obs] * gv[obs, None]
        mis = ~obs
        if mis.any():
            r0 = self.rho0(gamma, eta)[mis]
            g0 = self.link.g0(xk[mis])
            s[mis] = ((r0 * g0)[:, :, None] * self.z_pat[mis]).sum(axis=1)
        return s

    def sbar(self, gamma, eta=None) -> np.ndarray:
        return self.s_terms(gamma, eta).sum(axis=0)

    def evaluate(self, gamma, eta=None, with_eta=True):
        """Score sum and Jacobian sums in one pass.

        Returns ``(S, dS/dgamma^T, dS/deta^T)``; the last is None unless
        ``with_eta``.
        """
        gamma = np.asarray(gamma, dtype=float)
        eta = self.eta_hat if eta is None else eta
        link = self.link
        base, xk = self._pattern_predictors(gamma)
        lam = gamma[-2:]
        obs = self.observed_rows
        x_obs = (base + self.dobs @ lam)[obs]
        ver = self.v[obs]
        gv = np.where(ver, link.g1(x_obs), link.g0(x_obs))
        dgv = np.where(ver, link.dg1(x_obs), link.dg0(x_obs))
        zo = self.z_obs[obs]
        s = zo.T @ gv
        jg = (zo * dgv[:, None]).T @ zo
        je = np.zeros((self.p, self.q2)) if with_eta else None
        mis = ~obs
        if mis.any():
            r0 = self.rho0(gamma, eta)[mis]
            dg, de = self.drho0(gamma, r0, rows=mis, with_eta=with_eta)
            zp = self.z_pat[mis].reshape(-1, self.p)
            xm = xk[mis]
            g0 = link.g0(xm).reshape(-1)
            c = (r0 * link.dg0(xm)).reshape(-1)
            s = s + zp.T @ (r0.reshape(-1) * g0)
            jg = jg + (zp * c[:, None]).T @ zp + (zp * g0[:, None]).T @ dg.reshape(-1, self.p)
            if with_eta:
                je = (zp * g0[:, None]).T @ de.reshape(-1, self.q2)
        return s, jg, je

    def jacobians(self, gamma, eta=None):
        """Sums over subjects of d s_i / d gamma^T (p, p) and d s_i / d eta^T (p, q2)."""
        _, jg, je = self.evaluate(gamma, eta)
        return jg, je

    def objective(self, gamma):
        s, jg, _ = self.evaluate(gamma, with_eta=False)
        s = s / self.n
        return float(s @ s), 2.0 * (jg / self.n).T @ s


def jacobian_s(gamma, problem: MeanScoreProblem):
    """(dS/dgamma^T, dS/deta^T) at gamma and the problem's eta-hat."""
    return problem.jacobians(gamma)


def s_term(gamma, problem: MeanScoreProblem, i: int) -> np.ndarray:
    return problem.s_terms(gamma)[i]


# -- starting values -----------------------------------------------------------


def fit_binary(y, z, link, weights=None, max_iter=100, tol=1e-10):
    """Weighted Bernoulli maximum likelihood by Newton's method."""
    link = get_link(link)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    beta = np.zeros(z.shape[1])
    for _ in range(max_iter):
        x = z @ beta
        g = np.where(y == 1, link.g1(x), link.g0(x))
        dg = np.where(y == 1, link.dg1(x), link.dg0(x))
        score = z.T @ (w * g)
        if np.max(np.abs(score)) <= tol:
            break
        hess = (z * (w * dg)[:, None]).T @ z
        try:
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, score, rcond=None)[0]
        beta = np.clip(beta - step, -BOUND, BOUND)
    return beta


def default_starts(problem: MeanScoreProblem) -> list:
    """Imputation fit, MAR fit with zero lambdas, and the origin."""
    v = problem.v.astype(float)
    obs = problem.observed_rows
    rho1 = problem.rho1()
    # verified rows at their pattern, unverified rows split across patterns by rho(1)
    z_rows = [problem.z_obs[obs]]
    y_rows = [v[obs]]
    w_rows = [np.ones(int(obs.sum()))]
    mis = ~obs
    for k in range(3):
        z_rows.append(problem.z_pat[mis, k])
        y_rows.append(np.zeros(int(mis.sum())))
        w_rows.append(rho1[mis, k])
    start_a = fit_binary(np.concatenate(y_rows), np.vstack(z_rows), problem.link, np.concatenate(w_rows))
    mar = fit_binary(v, problem.zb, problem.link)
    start_b = np.concatenate([mar, [0.0, 0.0]])
    return [start_a, start_b, np.zeros(problem.p)]


# -- solver --------------------------------------------------------------------


def _residual_norm(problem, gamma):
    s = problem.sbar(gamma) / problem.n
    return float(s @ s)


def _gauss_newton(problem: MeanScoreProblem, x0, max_nfev=200):
    last = {}

    def both(g):
        key = g.tobytes()
        if key not in last:
            last.clear()
            last[key] = problem.evaluate(g, with_eta=False)
        return last[key]

    def resid(g):
        return both(g)[0] / problem.n

    def jac(g):
        return both(g)[1] / problem.n

    ls = optimize.least_squares(
        resid, x0, jac=jac, bounds=(-BOUND, BOUND), method="trf",
        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev,
    )
    return ls.x, int(ls.nfev)


def _minimise(problem: MeanScoreProblem, start):
    """Bounded Gauss-Newton on S/n; L-BFGS-B on ||S/n||^2 if that stalls."""
    x0 = np.clip(np.asarray(start, dtype=float), -BOUND + 1e-9, BOUND - 1e-9)
    gamma, iters = _gauss_newton(problem, x0)
    norm = _residual_norm(problem, gamma)
    if norm <= NORM_TOL:
        return gamma, norm, iters
    res = optimize.minimize(
        problem.objective, x0, jac=True, method="L-BFGS-B", bounds=[(-BOUND, BOUND)] * problem.p,
        options={"maxiter": 2000, "ftol": 1e-20, "gtol": 1e-12},
    )
    iters += int(res.nit)
    cand, more = _gauss_newton(problem, np.clip(res.x, -BOUND + 1e-9, BOUND - 1e-9))
    iters += more
    for g in (res.x, cand):
        nm = _residual_norm(problem, g)
        if nm < norm:
            gamma, norm = g, nm
    return gamma, norm, iters


def solve_gamma(problem: MeanScoreProblem, starts=None, stop_early=False) -> SolverReport:
    """Minimise the squared mean-score norm from each start; keep the best.

    ``converged`` requires ``||S/n||^2 <= 1e-10`` at the returned point, so a
    local minimum that is not a root is never reported as converged.  With
    ``stop_early`` the remaining starts are skipped once one converges.
    """
    names = problem.z_layout
    if problem.v.all():
        # gamma is not identified; the fitted verification probabilities are 1
        return SolverReport(
            gamma_hat=np.full(problem.p, np.nan), norm_at_solution=0.0, iterations=0,
            converged=True, multistart_index=-1, names=names, link=problem.link.name,
            all_verified=True,
        )
    starts = default_starts(problem) if starts is None else [np.asarray(s, float) for s in starts]
    if not starts:
        raise ValueError("at least one start is required")
    best = None
    tried = []
    for k, start in enumerate(starts):
        with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
            try:
                gamma, norm, iters = _minimise(problem, start)
            except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
                log.debug("start %d failed: %s", k, exc)
                tried.append(np.inf)
                continue
        if not np.isfinite(norm):
            tried.append(np.inf)
            continue
        tried.append(norm)
        if best is None or norm < best[1]:
            best = (gamma, norm, iters, k)
        if stop_early and norm <= NORM_TOL:
            break
    if best is None:
        raise NonConvergence("mean-score minimisation failed from every start", {"norms": tried})
    gamma, norm, iters, k = best
    return SolverReport(
        gamma_hat=gamma, norm_at_solution=norm, iterations=iters, converged=norm <= NORM_TOL,
        multistart_index=k, names=names, link=problem.link.name, starts_tried=tried,
    )
