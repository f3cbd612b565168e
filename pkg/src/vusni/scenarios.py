"""Generative scenarios I-VI and their working models.

Each scenario couples a data-generating process with the working disease and
verification models used when estimating on the generated data.  Scenarios
IV-VI deliberately misspecify one of the working models.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .data import Dataset, vus_fast, onehot

SCENARIOS = ("I", "II", "III", "IV", "V", "VI")

TRUE_VUS = {"I": 0.791, "II": 0.843, "III": 0.457, "IV": 0.843, "V": 0.74, "VI": 0.728}
VERIFICATION_RATE = {"I": 0.57, "II": 0.44, "III": 0.47, "IV": 0.42, "V": 0.56, "VI": 0.46}

# true verification coefficients (beta0, beta1, beta2..., lambda1, lambda2)
TRUE_GAMMA = {
    "I": (2.0, 0.5, -1.2, -2.0, -1.0),
    "II": (1.0, 1.0, -2.0, -1.0),
    "III": (1.5, 1.0, -0.5, -2.0, -1.0),
    "IV": (1.0, 1.0, -0.5, -2.0, -1.0),
    "V": (1.0, 1.5, -1.0, 2.0, -1.5, -2.0),
    "VI": (1.0, 2.0, -1.5, -1.0, -2.0),
}


@dataclass(frozen=True)
class ScenarioSpec:
    """Scenario configuration.

    ``disease_terms`` and ``verification_terms`` list the covariate terms of
    the working models (``T`` and the intercept are always included).
    """

    id: str
    n: int = 500
    disease_terms: tuple = ()
    verification_terms: tuple = ()
    link: str = "logit"
    true_gamma: tuple = ()
    true_vus: float = float("nan")
    high_rate: bool = False
    seed: int = 0
    extra: dict = field(default_factory=dict, compare=False)


_WORKING = {
    # id: (covariate names, disease terms, verification terms, working link)
    "I": (("A",), ("A",), ("A",), "logit"),
    "II": (("A",), ("A",), (), "logit"),
    "III": (("A1", "A2"), ("A1", "A2"), ("A1",), "probit"),
    "IV": (("A",), ("A",), (), "logit"),
    "V": (("A1", "A2"), ("A1", "A2"), ("A1",), "probit"),
    "VI": (("A1", "A2"), ("A1^2", "A2"), ("A1",), "logit"),
}


def scenario(id: str, n: int = 500, seed: int = 0, high_rate: bool = False) -> ScenarioSpec:
    id = str(id).upper()
    if id not in SCENARIOS:
        raise ValueError(f"unknown scenario {id!r}; expected one of {SCENARIOS}")
    if high_rate and id != "III":
        raise ValueError("the high verification-rate variant exists for scenario III only")
    _, dis, ver, link = _WORKING[id]
    gamma = TRUE_GAMMA[id]
    if high_rate:
        gamma = (2.5, 1.0, -1.2, -2.0, -1.0)
    return ScenarioSpec(
        id=id, n=n, disease_terms=dis, verification_terms=ver, link=link, true_gamma=gamma,
        true_vus=TRUE_VUS[id], high_rate=high_rate, seed=seed,
    )


def _draw_class(rng, probs):
    u = rng.random(probs.shape[0])
    c = np.cumsum(probs, axis=1)
    return 1 + (u[:, None] >= c[:, :2]).sum(axis=1)


def _mlogit_probs(l1, l2):
    m = np.maximum(0.0, np.maximum(l1, l2))
    e1, e2, e3 = np.exp(l1 - m), np.exp(l2 - m), np.exp(-m)
    tot = e1 + e2 + e3
    return np.column_stack([e1 / tot, e2 / tot, e3 / tot])


def _mixture_classes(rng, n):
    return _draw_class(rng, np.tile([0.7, 0.2, 0.1], (n, 1)))


def simulate_truth(id: str, n: int, rng, high_rate: bool = False):
    """Draw (t, covariates, d, v) from a scenario's generating process."""
    if id == "I":
        cov = np.array([[3.71, 1.36], [1.36, 3.13]])
        ta = rng.multivariate_normal([3.7, 1.85], cov, size=n, method="cholesky")
        t, a = ta[:, 0], ta[:, 1]
        d = _draw_class(rng, _mlogit_probs(15 - 3.3 * t - 0.7 * a, 9.5 - 1.7 * t - 0.3 * a))
        d1, d2 = (d == 1), (d == 2)
        lin = 2 + 0.5 * t - 1.2 * a - 2 * d1 - d2
        v = rng.random(n) < special.expit(lin)
        return t, a[:, None], d, v
    if id in ("II", "IV"):
        d = _mixture_classes(rng, n)
        t = rng.normal(d - 1.0, 0.5)
        a = rng.normal(0.5 * (d - 1.0), 0.5)
        d1, d2 = (d == 1), (d == 2)
        if id == "II":
            lin = 1 + t - 2 * d1 - d2
        else:
            lin = 1 + t - 0.5 * a - 2 * d1 - d2
        v = rng.random(n) < special.expit(lin)
        return t, a[:, None], d, v
    if id == "III":
        d = _mixture_classes(rng, n)
        t = rng.normal(0.4 * (d - 1.0), 0.5)
        a1 = rng.normal(0.5 * (d - 1.0), 0.5)
        lo = np.array([-2.0, -1.0, 1.0])[d - 1]
        hi = np.array([-1.0, 1.0, 2.0])[d - 1]
        a2 = rng.uniform(lo, hi)
        d1, d2 = (d == 1), (d == 2)
        if high_rate:
            lin = 2.5 + t - 1.2 * a1 - 2 * d1 - d2
        else:
            lin = 1.5 + t - 0.5 * a1 - 2 * d1 - d2
        v = rng.random(n) < special.ndtr(lin)
        return t, np.column_stack([a1, a2]), d, v
    if id in ("V", "VI"):
        t = rng.uniform(-3.0, 3.0, n)
        a1 = rng.normal(0.0, 1.0, n)
        a2 = (rng.random(n) < 0.6).astype(float)
        if id == "V":
            l1 = 5 - 6 * t + 2 * a1 + a2
            l2 = 4 - 3 * t + 4 * a1 + 2 * a2
        else:
            l1 = 5 - 6 * t + 2 * a1 + a2 + a1 * a2
            l2 = 4 - 3 * t + 4 * a1 + 2 * a2 + 0.5 * a1 * a2
        d = _draw_class(rng, _mlogit_probs(l1, l2))
        d1, d2 = (d == 1), (d == 2)
        if id == "V":
            lin = 1 + 1.5 * t - a1 + 2 * a2 - 1.5 * d1 - 2 * d2
        else:
            lin = 1 + 2 * t - 1.5 * a1 - d1 - 2 * d2
        v = rng.random(n) < special.expit(lin)
        return t, np.column_stack([a1, a2]), d, v
    raise ValueError(f"unknown scenario {id!r}")


def _term_column(name, a, names):
    if name.endswith("^2"):
        return a[:, names.index(name[:-2])] ** 2
    return a[:, names.index(name)]


def generate(spec: ScenarioSpec, seed=None) -> Dataset:
    """Draw a dataset for ``spec`` with the complete disease status retained."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    t, a, d, v = simulate_truth(spec.id, spec.n, rng, spec.high_rate)
    names = _WORKING[spec.id][0]
    dis = np.column_stack([_term_column(term, a, names) for term in spec.disease_terms])
    a1_idx = tuple(names.index(term) for term in spec.verification_terms)
    v = v.astype(np.int64)
    return Dataset(
        t=t, a=a, v=v, d=np.ma.masked_array(d, mask=(v == 0)), covariate_names=names,
        a1_idx=a1_idx, disease_a=dis, disease_names=spec.disease_terms, d_true=d,
    )


def true_vus(spec: ScenarioSpec, n_big: int = 200_000, seed: int = 0) -> float:
    """Full-data VUS on one large sample (Monte Carlo approximation)."""
    if n_big < 100_000:
        raise ValueError("n_big must be at least 1e5")
    data = generate(replace(spec, n=n_big), seed=seed)
    return vus_fast(onehot(data.d_true), data.t)
