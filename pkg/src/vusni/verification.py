"""Verification propensity model and disease probabilities for unverified subjects.

The propensity is ``F(beta0 + beta1 t + beta21 . a1 + lambda1 d1 + lambda2 d2)``
for a link cdf ``F``.  Given the class probabilities among verified subjects,
the class probabilities among unverified subjects follow from Bayes' rule
through two verification odds ratios, which reduce to ``exp(lambda_k)`` under
the logit link.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DegenerateDenominator, InvalidDiseaseIndicators

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

# (d1, d2) for the three disease patterns, in class order 1, 2, 3
PATTERNS = ((1, 0), (0, 1), (0, 0))


class Link:
    """Binary-response link.

    Besides the cdf, a link supplies the two score weights
    ``g1 = F'/F`` and ``g0 = -F'/(1-F)`` so that the per-subject score of
    the Bernoulli likelihood is ``Z * g_V(x)``, their derivatives, and
    ``dlogodds = F'/(F(1-F))``.  All are evaluated in log space.
    """

    name = "link"

    def cdf(self, x):
        raise NotImplementedError

    def log_odds(self, x):
        raise NotImplementedError

    def g1(self, x):
        raise NotImplementedError

    def g0(self, x):
        raise NotImplementedError

    def dg1(self, x):
        raise NotImplementedError

    def dg0(self, x):
        raise NotImplementedError

    def dlogodds(self, x):
        return self.g1(x) - self.g0(x)

    def log_odds_ratio(self, base, shift):
        """log Odd(base + shift) - log Odd(base)."""
        return self.log_odds(base + shift) - self.log_odds(base)

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other)

    def __hash__(self):
        return hash(self.name)


class Logit(Link):
    name = "logit"

    def cdf(self, x):
        return special.expit(x)

    def log_odds(self, x):
        return np.asarray(x, dtype=float)

    def log_odds_ratio(self, base, shift):
        # exact: the odds ratio does not depend on the base predictor
        return np.broadcast_to(np.asarray(shift, dtype=float), np.shape(base)).copy()

    def g1(self, x):
        return special.expit(-np.asarray(x, dtype=float))

    def g0(self, x):
        return -special.expit(x)

    def dg1(self, x):
        p = special.expit(x)
        return -p * (1.0 - p)

    dg0 = dg1

    def dlogodds(self, x):
        return np.ones_like(np.asarray(x, dtype=float))


class Probit(Link):
    name = "probit"

    def cdf(self, x):
        return special.ndtr(x)

    def log_odds(self, x):
        x = np.asarray(x, dtype=float)
        return special.log_ndtr(x) - special.log_ndtr(-x)

    def _logpdf(self, x):
        return -0.5 * np.square(x) - _LOG_SQRT_2PI

    def g1(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(self._logpdf(x) - special.log_ndtr(x))

    def g0(self, x):
        x = np.asarray(x, dtype=float)
        return -np.exp(self._logpdf(x) - special.log_ndtr(-x))

    def dg1(self, x):
        x = np.asarray(x, dtype=float)
        m = self.g1(x)
        return -m * (x + m)

    def dg0(self, x):
        x = np.asarray(x, dtype=float)
        m = -self.g0(x)
        return -m * (m - x)


LINKS = {"logit": Logit(), "probit": Probit()}


def get_link(link) -> Link:
    if isinstance(link, Link):
        return link
    try:
        return LINKS[str(link).lower()]
    except KeyError:
        raise ValueError(f"unknown link {link!r}; expected one of {sorted(LINKS)}") from None


@dataclass(frozen=True)
class Gamma:
    beta0: float
    beta1: float
    beta21: tuple
    lambda1: float
    lambda2: float

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1]), tuple(float(v) for v in x[2:-2]), float(x[-2]), float(x[-1]))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.beta0, self.beta1, *self.beta21, self.lambda1, self.lambda2], dtype=float)


def gamma_names(a1_names) -> tuple:
    return ("Intercept", "T", *a1_names, "D1", "D2")


def _vec(gamma) -> np.ndarray:
    return gamma.vector if isinstance(gamma, Gamma) else np.asarray(gamma, dtype=float)


def base_predictor(gamma_vec, t, a1) -> np.ndarray:
    """beta0 + beta1 t + beta21 . a1 for each row."""
    t = np.asarray(t, dtype=float)
    a1 = np.asarray(a1, dtype=float).reshape(t.shape[0], -1)
    return gamma_vec[0] + gamma_vec[1] * t + a1 @ gamma_vec[2:-2]


def pi(gamma, link, t, a1, d1, d2) -> float:
    """Verification probability for one subject and disease pattern."""
    if (d1, d2) not in PATTERNS:
        raise InvalidDiseaseIndicators(f"(d1, d2) = ({d1}, {d2}) is not a disease pattern")
    g = _vec(gamma)
    a1 = np.asarray(a1, dtype=float).reshape(-1)
    x = g[0] + g[1] * t + float(a1 @ g[2:-2]) + g[-2] * d1 + g[-1] * d2
    return float(get_link(link).cdf(x))


def log_odds_ratios(gamma_vec, link, base) -> np.ndarray:
    """(n, 2) log odds ratios (log R1, log R2) at base predictors ``base``."""
    link = get_link(link)
    return np.column_stack([
        link.log_odds_ratio(base, gamma_vec[-2]),
        link.log_odds_ratio(base, gamma_vec[-1]),
    ])


def odds_ratio_pair(gamma, link, t, a1) -> tuple:
    """Verification odds ratios of classes 1 and 2 against class 3."""
    g = _vec(gamma)
    base = base_predictor(g, [t], np.asarray(a1, dtype=float).reshape(1, -1))
    lr = log_odds_ratios(g, link, base)[0]
    return float(np.exp(lr[0])), float(np.exp(lr[1]))


def rho_v0(rho1, gamma, link, t, a1) -> tuple:
    """Class probabilities among unverified subjects by Bayes' rule.

    Parameters
    ----------
    rho1 : sequence of 3 floats
        Class probabilities among verified subjects at (t, a).
    """
    r1, r2, r3 = (float(v) for v in rho1)
    R1, R2 = odds_ratio_pair(gamma, link, t, a1)
    den = r1 * R2 + r2 * R1 + r3 * R1 * R2
    if not den > 0.0 or not np.isfinite(den):
        raise DegenerateDenominator(f"Bayes-rule denominator is {den!r}")
    p1 = r1 * R2 / den
    p2 = r2 * R1 / den
    return p1, p2, 1.0 - p1 - p2
