"""Data-driven choice of instrumental variables.

Three steps:

1. backward stepwise selection on the conditional disease model, dropping the
   covariate with the largest joint Wald p-value while it exceeds a level;
2. for each retained covariate, solve the mean-score equation with ``T`` plus
   that covariate in the verification model and record its Wald p-value;
3. covariates significant at step 2 enter the verification model, the others
   serve as instruments.  The final fit uses ``T`` and the significant ones.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .disease import fit_disease
from .errors import AllCovariatesDropped, VusError
from .estimators import ModelFit, fit_models
from .inference import joint_wald_p, sandwich_covariances, wald_tests


@dataclass
class IvSelectionReport:
    step1_retained: list
    step1_dropped: list
    step2: dict
    a1: tuple
    a2: tuple
    final_fit: ModelFit | None = None
    final_tests: list = field(default_factory=list)
    notes: list = field(default_factory=list)


def disease_wald_p(data: Dataset) -> dict:
    """Joint 2-df Wald p-value for each disease-model covariate (both logits)."""
    fit = fit_disease(data)
    q = fit.eta_hat.shape[0] // 2
    out = {}
    for j, name in enumerate(data.disease_covariate_names):
        idx = [2 + j, q + 2 + j]
        out[name] = joint_wald_p(fit.eta_hat, fit.sigma_eta_hat, fit.n_total, idx)
    return out


def backward_disease(data: Dataset, alpha: float = 0.05):
    """Backward elimination on the disease model.

    Returns the retained ``[(name, p)]`` and the dropped ``[(name, p at drop)]``.
    """
    names = list(data.covariate_names)
    current = list(range(len(names)))
    dropped = []
    while current:
        pvals = disease_wald_p(data.with_disease_covariates(current))
        worst = max(current, key=lambda j: (pvals[names[j]], -j))
        if pvals[names[worst]] <= alpha:
            return [(names[j], pvals[names[j]]) for j in current], dropped
        dropped.append((names[worst], pvals[names[worst]]))
        current.remove(worst)
    return [], dropped


def select_iv(data: Dataset, link="logit", alpha_disease: float = 0.05,
              alpha_verification: float = 0.05) -> IvSelectionReport:
    """Run the three-step instrument selection on ``data``.

    Raises
    ------
    ValueError
        Fewer than two candidate covariates.
    """
    names = list(data.covariate_names)
    if len(names) < 2:
        raise ValueError("instrument selection needs at least two candidate covariates")
    retained, dropped = backward_disease(data, alpha_disease)
    notes = []
    if not retained:
        warnings.warn(
            "every covariate was dropped from the disease model; using intercept and T only",
            AllCovariatesDropped, stacklevel=2,
        )
        notes.append("all covariates dropped from the disease model")
    kept = [names.index(nm) for nm, _ in retained]
    base = data.with_disease_covariates(kept)

    step2 = {}
    for j in kept:
        try:
            fit = fit_models(base.with_a1([j]), link)
            _, sigma_g = sandwich_covariances(fit)
            test = wald_tests(fit.report.gamma_hat, sigma_g, data.n, fit.report.names)[2]
            step2[names[j]] = test.p_value if fit.report.converged else float("nan")
            if not fit.report.converged:
                notes.append(f"mean score with {names[j]} did not reach a root")
        except VusError as exc:
            step2[names[j]] = float("nan")
            notes.append(f"step 2 fit with {names[j]} failed: {exc}")

    a1 = tuple(j for j in kept if np.isfinite(step2[names[j]]) and step2[names[j]] <= alpha_verification)
    a2 = tuple(j for j in kept if j not in a1)
    final = fit_models(base.with_a1(a1), link)
    _, sigma_g = sandwich_covariances(final)
    tests = wald_tests(final.report.gamma_hat, sigma_g, data.n, final.report.names) if sigma_g is not None else []
    return IvSelectionReport(
        step1_retained=retained, step1_dropped=dropped, step2=step2,
        a1=tuple(names[j] for j in a1), a2=tuple(names[j] for j in a2),
        final_fit=final, final_tests=tests, notes=notes,
    )
