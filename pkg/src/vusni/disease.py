"""Multinomial logistic model for the disease class among verified subjects.

Classes 1 and 2 are contrasted against the reference class 3.  The linear
predictor for class k is ``eta_k . (1, t, a)``; parameters are stored as a
flat vector ``(eta_1, eta_2)`` of length ``2 * (2 + dim a)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Subject
from .errors import (
    MissingClassAmongVerified,
    NonConvergence,
    RankDeficientDesign,
    UnverifiedSubject,
)

log = logging.getLogger(__name__)

SEPARATION_BOUND = 30.0


@dataclass(frozen=True)
class Eta:
    eta1: np.ndarray
    eta2: np.ndarray

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        q = x.shape[0] // 2
        return cls(x[:q].copy(), x[q:].copy())

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.eta1, self.eta2])


@dataclass
class DiseaseFit:
    eta_hat: np.ndarray
    sigma_eta_hat: np.ndarray
    converged: bool
    n_verified: int
    loglik: float
    n_total: int
    iterations: int = 0
    names: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def eta(self) -> Eta:
        return Eta.from_vector(self.eta_hat)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.sigma_eta_hat), 0.0, None) / self.n_total)


def design(t, a) -> np.ndarray:
    t = np.asarray(t, dtype=float).reshape(-1)
    a = np.asarray(a, dtype=float).reshape(t.shape[0], -1)
    return np.column_stack([np.ones_like(t), t, a])


def linear_predictors(eta_vec, x) -> np.ndarray:
    """(n, 2) class-1 and class-2 logits against class 3."""
    q = x.shape[1]
    return np.column_stack([x @ eta_vec[:q], x @ eta_vec[q:]])


def softmax3(xi) -> np.ndarray:
    """(rho1, rho2, rho3) from the two logits, with rho3 the complement."""
    xi = np.asarray(xi, dtype=float)
    m = np.maximum(0.0, xi.max(axis=-1))
    e = np.exp(xi - m[..., None])
    e3 = np.exp(-m)
    tot = e.sum(axis=-1) + e3
    r12 = e / tot[..., None]
    return np.concatenate([r12, (1.0 - r12.sum(axis=-1))[..., None]], axis=-1)


def rho_v1(eta, t, a) -> tuple:
    """Class probabilities for a verified subject with test value t, covariates a."""
    eta_vec = eta.vector if isinstance(eta, Eta) else np.asarray(eta, dtype=float)
    x = design([t], np.asarray(a, dtype=float).reshape(1, -1))
    return tuple(float(p) for p in softmax3(linear_predictors(eta_vec, x))[0])


def score_u(eta, subject: Subject, a=None) -> np.ndarray:
    """Per-subject score of the disease model.

    ``a`` overrides ``subject.a`` when the disease model uses transformed
    covariates.
    """
    if subject.v != 1 or subject.d is None:
        raise UnverifiedSubject("the disease score is defined for verified subjects only")
    eta_vec = eta.vector if isinstance(eta, Eta) else np.asarray(eta, dtype=float)
    a = subject.a if a is None else a
    x = design([subject.t], np.asarray(a, dtype=float).reshape(1, -1))
    rho = softmax3(linear_predictors(eta_vec, x))[0]
    dk = np.array([subject.d == 1, subject.d == 2], dtype=float)
    return np.concatenate([(dk[0] - rho[0]) * x[0], (dk[1] - rho[1]) * x[0]])


def scores(eta_vec, x, y) -> np.ndarray:
    """(m, 2q) per-row scores; ``y`` is the (m, 3) one-hot class matrix."""
    rho = softmax3(linear_predictors(eta_vec, x))
    r = y[:, :2] - rho[:, :2]
    return np.concatenate([r[:, :1] * x, r[:, 1:2] * x], axis=1)


def score_jacobian(eta_vec, x) -> np.ndarray:
    """Sum over rows of d u_i / d eta^T (negative observed information)."""
    rho = softmax3(linear_predictors(eta_vec, x))
    q = x.shape[1]
    h = np.empty((2 * q, 2 * q))
    for j in range(2):
        for k in range(2):
            c = rho[:, j] * ((j == k) - rho[:, k])
            h[j * q:(j + 1) * q, k * q:(k + 1) * q] = -(x * c[:, None]).T @ x
    return h


def loglik(eta_vec, x, y) -> float:
    xi = linear_predictors(eta_vec, x)
    full = np.column_stack([xi, np.zeros(x.shape[0])])
    m = full.max(axis=1)
    lse = m + np.log(np.exp(full - m[:, None]).sum(axis=1))
    return float(np.sum((full * y).sum(axis=1) - lse))


def rho_derivative(rho, x) -> np.ndarray:
    """d rho_k / d eta for each row: shape (m, 3, 2q), for the softmax form."""
    m, q = x.shape
    out = np.zeros((m, 3, 2 * q))
    for k in range(3):
        for j in range(2):
            c = rho[:, k] * ((k == j) - rho[:, j])
            out[:, k, j * q:(j + 1) * q] = c[:, None] * x
    return out


def verified_design(data: Dataset):
    ver = data.v == 1
    x = design(data.t[ver], data.disease_covariates[ver])
    y = data.observed_onehot[ver]
    return x, y


def fit_disease(data: Dataset, tol: float = 1e-8, max_iter: int = 100, start=None) -> DiseaseFit:
    """Newton fit of the conditional disease model on the verified rows.

    Raises
    ------
    MissingClassAmongVerified
        Some class has no verified subject.
    RankDeficientDesign
        The verified design ``(1, t, a)`` is not of full column rank.
    """
    x, y = verified_design(data)
    counts = y.sum(axis=0)
    if np.any(counts == 0):
        missing = [k + 1 for k in range(3) if counts[k] == 0]
        raise MissingClassAmongVerified(f"no verified subject in class(es) {missing}")
    q = x.shape[1]
    if x.shape[0] < q or np.linalg.matrix_rank(x) < q:
        raise RankDeficientDesign("verified disease-model design is rank deficient")

    beta = np.zeros(2 * q) if start is None else np.array(start, dtype=float)
    if start is None:
        # intercepts at the observed log class ratios
        beta[0] = np.log(counts[0] / counts[2])
        beta[q] = np.log(counts[1] / counts[2])
    ll = loglik(beta, x, y)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = scores(beta, x, y).sum(axis=0)
        if np.max(np.abs(g)) <= tol:
            converged = True
            break
        h = score_jacobian(beta, x)
        try:
            step = np.linalg.solve(-h, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-h, g, rcond=None)[0]
        lam = 1.0
        while True:
            cand = beta + lam * step
            ll_new = loglik(cand, x, y)
            if ll_new >= ll - 1e-12 * abs(ll) or lam < 1e-10:
                break
            lam *= 0.5
        rel = np.max(np.abs(lam * step)) / max(1.0, np.max(np.abs(beta)))
        beta, ll = cand, ll_new
        if rel < 1e-10:
            g = scores(beta, x, y).sum(axis=0)
            converged = True
            break

    h = score_jacobian(beta, x)
    u = scores(beta, x, y)
    try:
        # sandwich H^{-1} u^T u H^{-T} in Gram form
        b = np.linalg.solve(h, u.T)
    except np.linalg.LinAlgError as exc:
        raise NonConvergence("singular disease-model information", {"iterations": it}) from exc
    sigma = data.n * (b @ b.T)

    diagnostics = {"max_abs_score": float(np.max(np.abs(scores(beta, x, y).sum(axis=0))))}
    if np.any(np.abs(beta) > SEPARATION_BOUND):
        diagnostics["quasi_separation"] = True
        log.warning("disease model coefficients exceed %.0f: possible separation", SEPARATION_BOUND)

    names = ("Intercept", "T") + tuple(data.disease_covariate_names)
    return DiseaseFit(
        eta_hat=beta, sigma_eta_hat=sigma, converged=converged, n_verified=int(x.shape[0]),
        loglik=ll, n_total=data.n, iterations=it, names=names, diagnostics=diagnostics,
    )
