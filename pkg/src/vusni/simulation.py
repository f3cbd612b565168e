"""Monte Carlo experiments over the generative scenarios.

Replicate ``r`` of a run with seed ``s`` draws its data from a generator
seeded by ``(s, r)``, so results do not depend on the order or the process in
which replicates are evaluated.
"""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .errors import TooFewSuccessfulResamples, VusError
from .estimators import BIAS_CORRECTED, Method, fit_models
from .inference import Z95, bootstrap, vus_result
from .scenarios import ScenarioSpec, generate
from .verification import gamma_names

THREADS_ENV = "VUSNI_THREADS"
FAILURE_THRESHOLD = 0.05
MC_METHODS = BIAS_CORRECTED + (Method.NAIVE, Method.FULL)


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class ReplicateResult:
    index: int
    failure: str | None = None
    gamma: np.ndarray | None = None
    estimate: dict = field(default_factory=dict)
    asd: dict = field(default_factory=dict)
    bsd: dict = field(default_factory=dict)
    boot_failed: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.failure is None


def _bootstrap_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index, 1]).generate_state(1)[0])


def run_replicate(spec: ScenarioSpec, index: int, seed: int, bootstrap_B=None,
                  methods=MC_METHODS) -> ReplicateResult:
    rec = ReplicateResult(index)
    data = generate(spec, seed=[seed, index])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            fit = fit_models(data, spec.link)
        except (VusError, np.linalg.LinAlgError, ValueError) as exc:
            rec.failure = type(exc).__name__
            return rec
        if not fit.converged:
            rec.failure = "NonConvergence"
            return rec
        rec.gamma = np.asarray(fit.report.gamma_hat, dtype=float)
        boot = None
        if bootstrap_B:
            try:
                boot = bootstrap(
                    data, spec.link, bootstrap_B, _bootstrap_seed(seed, index),
                    methods=[m for m in methods if m in BIAS_CORRECTED], start=fit.report.gamma_hat,
                )
            except TooFewSuccessfulResamples:
                boot = None
        for m in methods:
            try:
                r = vus_result(m, fit)
            except (VusError, ValueError) as exc:
                rec.failure = f"{m.value}:{type(exc).__name__}"
                return rec
            rec.estimate[m] = r.estimate
            rec.asd[m] = r.asd
            if boot is not None and m in boot.se:
                rec.bsd[m] = boot.se[m]
                rec.boot_failed[m] = boot.n_failed[m]
    return rec


@dataclass
class MethodSummary:
    method: Method
    mean: float
    rel_bias: float
    mcsd: float
    asd: float
    bsd: float
    cp_asy: float
    cp_bst: float
    n_asd: int
    n_bsd: int


@dataclass
class McReport:
    scenario: str
    n: int
    reps: int
    seed: int
    bootstrap_B: int
    true_vus: float
    methods: list
    gamma_names: tuple
    gamma_true: tuple
    gamma_mean: np.ndarray
    n_failed: int
    failure_reasons: dict
    replicates: list = field(default_factory=list, repr=False)

    @property
    def n_ok(self) -> int:
        return self.reps - self.n_failed

    @property
    def unreliable(self) -> bool:
        return self.n_failed > FAILURE_THRESHOLD * self.reps

    def summary(self, method) -> MethodSummary:
        for s in self.methods:
            if s.method == method:
                return s
        raise KeyError(method)

    # -- output ---------------------------------------------------------------------

    def method_rows(self) -> list:
        header = ["method", "mean", "bias_pct", "mcsd", "asd", "bsd", "cp_asy", "cp_bst", "n_asd", "n_bsd"]
        rows = [header]
        for s in self.methods:
            rows.append([s.method.value, repr(s.mean), repr(s.rel_bias), repr(s.mcsd), repr(s.asd),
                         repr(s.bsd), repr(s.cp_asy), repr(s.cp_bst), str(s.n_asd), str(s.n_bsd)])
        return rows

    def coefficient_rows(self) -> list:
        rows = [["coefficient", "true", "mc_mean"]]
        for name, true, mean in zip(self.gamma_names, self.gamma_true, self.gamma_mean):
            rows.append([name, repr(float(true)), repr(float(mean))])
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.method_rows())
        return buf.getvalue()

    def coefficients_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.coefficient_rows())
        return buf.getvalue()

    def to_text(self) -> str:
        def fmt(x, nd=3):
            return "--" if x is None or not np.isfinite(x) else f"{x:.{nd}f}"

        lines = [
            f"Scenario {self.scenario}: n = {self.n}, replicates = {self.reps}, seed = {self.seed}, "
            f"bootstrap B = {self.bootstrap_B or 0}",
            f"True VUS = {self.true_vus:.3f}; failed replicates = {self.n_failed}"
            + (" (UNRELIABLE: more than 5% failed)" if self.unreliable else ""),
            "",
            f"{'':6}{'Bias(%)':>9}{'Mean':>8}{'MCSD':>8}{'ASD':>8}{'BSD':>8}{'CP.Asy':>8}{'CP.Bst':>8}",
        ]
        for s in self.methods:
            lines.append(
                f"{s.method.value:6}{fmt(s.rel_bias, 1):>9}{fmt(s.mean):>8}{fmt(s.mcsd):>8}"
                f"{fmt(s.asd):>8}{fmt(s.bsd):>8}{fmt(s.cp_asy, 1):>8}{fmt(s.cp_bst, 1):>8}"
            )
        lines += ["", f"{'':12}{'True':>8}{'Mean':>8}"]
        for name, true, mean in zip(self.gamma_names, self.gamma_true, self.gamma_mean):
            lines.append(f"{name:12}{fmt(true):>8}{fmt(mean):>8}")
        if self.failure_reasons:
            lines += ["", "Failures: " + ", ".join(f"{k} x{v}" for k, v in sorted(self.failure_reasons.items()))]
        return "\n".join(lines) + "\n"


def _mean(x):
    return math.fsum(x) / len(x) if len(x) else float("nan")


def _sd(x):
    if len(x) < 2:
        return float("nan")
    m = _mean(x)
    return math.sqrt(math.fsum((v - m) ** 2 for v in x) / (len(x) - 1))


def summarise(spec: ScenarioSpec, reps: int, seed: int, bootstrap_B, results, gamma_names) -> McReport:
    ok = [r for r in results if r.ok]
    reasons = {}
    for r in results:
        if not r.ok:
            reasons[r.failure] = reasons.get(r.failure, 0) + 1
    truth = spec.true_vus
    methods = []
    for m in MC_METHODS:
        est = [r.estimate[m] for r in ok if m in r.estimate]
        if not est:
            continue
        asd_pairs = [(r.estimate[m], r.asd[m]) for r in ok if np.isfinite(r.asd.get(m, np.nan))]
        bsd_pairs = [(r.estimate[m], r.bsd[m]) for r in ok if np.isfinite(r.bsd.get(m, np.nan))]

        def coverage(pairs):
            if not pairs:
                return float("nan")
            return 100.0 * sum(abs(e - truth) <= Z95 * s for e, s in pairs) / len(pairs)

        mean = _mean(est)
        methods.append(MethodSummary(
            method=m, mean=mean, rel_bias=100.0 * (mean - truth) / truth, mcsd=_sd(est),
            asd=_mean([s for _, s in asd_pairs]), bsd=_mean([s for _, s in bsd_pairs]),
            cp_asy=coverage(asd_pairs), cp_bst=coverage(bsd_pairs),
            n_asd=len(asd_pairs), n_bsd=len(bsd_pairs),
        ))
    gammas = [r.gamma for r in ok]
    p = len(gamma_names)
    gamma_mean = np.array([_mean([g[j] for g in gammas]) for j in range(p)])
    return McReport(
        scenario=spec.id, n=spec.n, reps=reps, seed=seed, bootstrap_B=bootstrap_B or 0,
        true_vus=truth, methods=methods, gamma_names=gamma_names, gamma_true=tuple(spec.true_gamma),
        gamma_mean=gamma_mean, n_failed=len(results) - len(ok), failure_reasons=reasons,
        replicates=list(results),
    )


def run_mc(spec: ScenarioSpec, reps: int, bootstrap_B=None, seed: int = 0, n_jobs=None) -> McReport:
    """Run ``reps`` replicates of a scenario and aggregate them.

    Per replicate: generate, fit the working disease model, solve the mean
    score, estimate with every method, compute the asymptotic SE and
    optionally a bootstrap SE.  Replicates whose fits fail are excluded and
    counted.  Coverage is scored against the scenario's stated true VUS.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    n_jobs = default_jobs() if n_jobs is None else n_jobs
    if n_jobs == 1:
        results = [run_replicate(spec, r, seed, bootstrap_B) for r in range(reps)]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(run_replicate)(spec, r, seed, bootstrap_B) for r in range(reps)
        )
    names = gamma_names(spec.verification_terms)
    return summarise(spec, reps, seed, bootstrap_B, results, names)
