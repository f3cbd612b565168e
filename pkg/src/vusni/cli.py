"""Command-line interface: ``estimate``, ``simulate`` and ``iv-select``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Reports are assembled completely before any file is written.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from dataclasses import dataclass, field

from .csvio import check_class_counts, read_dataset, rows_to_csv, write_all
from .errors import DataError, NumericalError, VusError
from .estimators import BIAS_CORRECTED, Method, fit_models, pseudo_weights
from .inference import bootstrap, sandwich_covariances, vus_result, wald_tests
from .ivselect import select_iv
from .scenarios import SCENARIOS, scenario
from .simulation import default_jobs, run_mc
from .verification import LINKS

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

REPORT_HEADER = ["section", "name", "estimate", "se", "se_boot", "z", "p_value", "ci_low", "ci_high", "note"]

log = logging.getLogger("vusni")


@dataclass
class EstimateConfig:
    input: str
    test: str = "t"
    covariates: tuple = ()
    verified: str = "v"
    disease: str = "d"
    iv: str = "all"
    link: str = "logit"
    bootstrap: int = 0
    seed: int = 0
    out: str | None = None
    negate_test: bool = False
    force: bool = False
    alpha_disease: float = 0.05
    alpha_verification: float = 0.05
    notes: list = field(default_factory=list)


def _num(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else repr(x))


def _fmt(x, nd=3) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "--"
    return f"{x:.{nd}f}"


def _split(s):
    return tuple(c.strip() for c in s.split(",") if c.strip()) if s else ()


# -- estimate -----------------------------------------------------------------------


def _verification_covariates(cfg: EstimateConfig, data):
    """Resolve the ``--iv`` option to the covariates entering the verification model."""
    names = list(data.covariate_names)
    if cfg.iv == "all":
        return ()
    if cfg.iv == "auto":
        report = select_iv(data, cfg.link, cfg.alpha_disease, cfg.alpha_verification)
        cfg.notes.append(f"instrument selection: A1 = {list(report.a1)}, instruments = {list(report.a2)}")
        return report.a1
    ivs = _split(cfg.iv)
    unknown = [c for c in ivs if c not in names]
    if unknown:
        raise DataError(f"instrumental variables {unknown} are not among the covariates")
    return tuple(c for c in names if c not in ivs)


def build_estimate_report(cfg: EstimateConfig):
    """Fit everything and return ``(csv_rows, text)``.

    Raises
    ------
    DataError, NumericalError
    """
    data = read_dataset(cfg.input, cfg.test, cfg.covariates, cfg.verified, cfg.disease,
                        negate_test=cfg.negate_test)
    check_class_counts(data)
    a1 = _verification_covariates(cfg, data)
    data = data.with_a1([data.covariate_names.index(c) for c in a1])
    fit = fit_models(data, cfg.link)
    if not fit.converged and not cfg.force:
        raise NumericalError(
            f"model fits did not converge (disease: {fit.disease_fit.converged}, "
            f"mean-score norm {fit.report.norm_at_solution:.3g})"
        )
    n = data.n
    sigma_eta, sigma_gamma = sandwich_covariances(fit)
    df = fit.disease_fit
    dis_names = [f"{k}:{nm}" for k in ("D1", "D2") for nm in df.names]
    dis_tests = wald_tests(df.eta_hat, sigma_eta, n, dis_names)
    ver_tests = [] if sigma_gamma is None else wald_tests(fit.report.gamma_hat, sigma_gamma, n, fit.report.names)

    methods = BIAS_CORRECTED + (Method.NAIVE,)
    boot = None
    if cfg.bootstrap:
        start = None if fit.report.all_verified else fit.report.gamma_hat
        boot = bootstrap(data, cfg.link, cfg.bootstrap, cfg.seed, methods=methods, start=start,
                         n_jobs=default_jobs())
    results = [vus_result(m, fit, None if boot is None else boot.se[m]) for m in methods]

    rows = [REPORT_HEADER]
    for tst in dis_tests:
        rows.append(["disease", tst.name, _num(tst.estimate), _num(tst.se), "", _num(tst.z), _num(tst.p_value), "", "", ""])
    for tst in ver_tests:
        rows.append(["verification", tst.name, _num(tst.estimate), _num(tst.se), "", _num(tst.z), _num(tst.p_value), "", "", ""])
    for r in results:
        note = []
        if r.diagnostics.get("out_of_range"):
            note.append("outside [0, 1]")
        if "asd_error" in r.diagnostics:
            note.append(r.diagnostics["asd_error"])
        rows.append(["vus", r.method.value, _num(r.estimate), _num(r.asd), _num(r.bsd), "", "",
                     _num(r.ci95[0]), _num(r.ci95[1]), "; ".join(note)])
    ipw = pseudo_weights(Method.IPW, data, df, fit.report, cfg.link, force=cfg.force)
    large = {m.value: pseudo_weights(m, data, df, fit.report, cfg.link, force=cfg.force).n_large
             for m in (Method.IPW, Method.PDR)}
    diag = [
        ("n", n), ("n_verified", int(data.v.sum())), ("link", fit.link.name),
        ("verification_covariates", " ".join(a1) or "(none)"),
        ("disease_converged", df.converged), ("disease_iterations", df.iterations),
        ("mean_score_converged", fit.report.converged),
        ("mean_score_norm", _num(fit.report.norm_at_solution)),
        ("mean_score_start", fit.report.multistart_index),
        ("min_pi_verified", _num(ipw.min_pi_verified)),
        ("n_weights_above_50_ipw", large["IPW"]), ("n_weights_above_50_pdr", large["PDR"]),
    ]
    if boot is not None:
        diag.append(("bootstrap_B", boot.B))
        diag += [(f"bootstrap_failed_{m.value}", boot.n_failed[m]) for m in methods]
    diag += [(f"note_{i + 1}", s) for i, s in enumerate(cfg.notes)]
    for name, value in diag:
        rows.append(["diagnostic", name, "", "", "", "", "", "", "", str(value)])

    # text version
    lines = [f"Disease model (multinomial logit, reference class 3), n = {n}, verified = {int(data.v.sum())}",
             f"{'':22}{'Est.':>9}{'SE':>9}{'p':>9}"]
    for tst in dis_tests:
        lines.append(f"{tst.name:22}{_fmt(tst.estimate):>9}{_fmt(tst.se):>9}{_fmt(tst.p_value):>9}")
    lines += ["", f"Verification model ({fit.link.name} link)"]
    if ver_tests:
        lines.append(f"{'':22}{'Est.':>9}{'SE':>9}{'p':>9}")
        for tst in ver_tests:
            lines.append(f"{tst.name:22}{_fmt(tst.estimate):>9}{_fmt(tst.se):>9}{_fmt(tst.p_value):>9}")
    else:
        lines.append("all subjects verified; verification model not estimated")
    lines += ["", f"{'VUS':22}{'Est.':>9}{'ASD':>9}{'BSD':>9}{'95% CI':>20}"]
    for r in results:
        ci = f"({_fmt(r.ci95[0])}, {_fmt(r.ci95[1])})"
        flag = "  outside [0, 1]" if r.diagnostics.get("out_of_range") else ""
        lines.append(f"{r.method.value:22}{_fmt(r.estimate):>9}{_fmt(r.asd):>9}{_fmt(r.bsd):>9}{ci:>20}{flag}")
    lines += ["", "Diagnostics"] + [f"  {name}: {value}" for name, value in diag]
    return rows, "\n".join(lines) + "\n"


def cmd_estimate(args) -> int:
    cfg = EstimateConfig(
        input=args.input, test=args.test, covariates=_split(args.covariates), verified=args.verified,
        disease=args.disease, iv=args.iv, link=args.link, bootstrap=args.bootstrap, seed=args.seed,
        out=args.out, negate_test=args.negate_test, force=args.force,
    )
    rows, text = build_estimate_report(cfg)
    _emit(args.out, rows_to_csv(rows), text)
    return EXIT_OK


# -- simulate ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec = scenario(args.scenario, n=args.n, seed=args.seed, high_rate=args.high_rate)
    report = run_mc(spec, args.reps, bootstrap_B=args.bootstrap or None, seed=args.seed)
    files = {}
    if args.out:
        files = {f"{args.out}.csv": report.to_csv(), f"{args.out}_coef.csv": report.coefficients_csv(),
                 f"{args.out}.txt": report.to_text()}
        write_all(files)
    else:
        sys.stdout.write(report.to_text())
    return EXIT_OK


# -- iv-select -----------------------------------------------------------------------------


def cmd_iv_select(args) -> int:
    data = read_dataset(args.input, args.test, _split(args.covariates), args.verified, args.disease,
                        negate_test=args.negate_test)
    check_class_counts(data)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = select_iv(data, args.link, args.alpha_disease, args.alpha_verification)
    rows = [["step", "name", "estimate", "se", "p_value", "note"]]
    for name, p in rep.step1_retained:
        rows.append(["disease_retained", name, "", "", _num(p), ""])
    for name, p in rep.step1_dropped:
        rows.append(["disease_dropped", name, "", "", _num(p), ""])
    for name, p in rep.step2.items():
        rows.append(["verification_single", name, "", "", _num(p), ""])
    for name in rep.a1:
        rows.append(["partition", name, "", "", "", "A1"])
    for name in rep.a2:
        rows.append(["partition", name, "", "", "", "instrument"])
    for tst in rep.final_tests:
        rows.append(["final", tst.name, _num(tst.estimate), _num(tst.se), _num(tst.p_value), ""])
    for w in caught:
        rep.notes.append(str(w.message))
    for i, note in enumerate(rep.notes):
        rows.append(["note", str(i + 1), "", "", "", note])

    lines = ["Step 1: backward selection on the disease model (joint Wald p)"]
    lines += [f"  kept    {nm:16}{_fmt(p):>8}" for nm, p in rep.step1_retained]
    lines += [f"  dropped {nm:16}{_fmt(p):>8}" for nm, p in rep.step1_dropped]
    lines.append("Step 2: mean-score Wald p with T plus one covariate")
    lines += [f"  {nm:24}{_fmt(p):>8}" for nm, p in rep.step2.items()]
    lines.append(f"Step 3: A1 = {list(rep.a1)}; instruments = {list(rep.a2)}")
    if rep.final_tests:
        lines.append(f"Final verification model ({args.link})")
        lines += [f"  {t.name:16}{_fmt(t.estimate):>9}{_fmt(t.se):>9}{_fmt(t.p_value):>9}" for t in rep.final_tests]
    lines += [f"Note: {n}" for n in rep.notes]
    _emit(args.out, rows_to_csv(rows), "\n".join(lines) + "\n")
    return EXIT_OK


# -- plumbing ----------------------------------------------------------------------------


def _emit(out, csv_text, text):
    if out:
        write_all({f"{out}.csv": csv_text, f"{out}.txt": text})
    else:
        sys.stdout.write(text)


def _add_input_args(p):
    p.add_argument("input", help="CSV file with a header row")
    p.add_argument("--test", default="t", help="test-result column (default: t)")
    p.add_argument("--covariates", default="", help="comma-separated covariate columns")
    p.add_argument("--verified", default="v", help="verification flag column, 0/1 (default: v)")
    p.add_argument("--disease", default="d", help="disease class column, 1/2/3 or empty (default: d)")
    p.add_argument("--link", choices=sorted(LINKS), default="logit", help="verification-model link")
    p.add_argument("--negate-test", action="store_true", help="use minus the test values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output prefix; writes PREFIX.csv and PREFIX.txt (default: text to stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vusni", description="VUS estimation under nonignorable verification bias.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="bias-corrected VUS estimates for a study CSV")
    _add_input_args(p)
    p.add_argument("--iv", default="all",
                   help="instruments: 'all' (verification model uses T only), 'auto', or a comma list")
    p.add_argument("--bootstrap", type=int, default=0, metavar="B", help="bootstrap resamples (0: none)")
    p.add_argument("--force", action="store_true", help="report even if a fit did not converge")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="Monte Carlo study of one scenario")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--bootstrap", type=int, default=0, metavar="B")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--high-rate", action="store_true", help="high verification-rate variant (scenario III)")
    p.add_argument("--out", help="output prefix; writes PREFIX.csv, PREFIX_coef.csv and PREFIX.txt")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("iv-select", help="choose instrumental variables")
    _add_input_args(p)
    p.add_argument("--alpha-disease", type=float, default=0.05)
    p.add_argument("--alpha-verification", type=float, default=0.05)
    p.set_defaults(func=cmd_iv_select)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s: %(message)s")
    if getattr(args, "reps", 1) < 1 or getattr(args, "n", 3) < 3:
        parser.error("--reps must be positive and --n at least 3")
    boot = getattr(args, "bootstrap", 0)
    if boot < 0 or boot == 1:
        parser.error("--bootstrap must be 0 or at least 2")
    if args.command == "simulate" and args.high_rate and args.scenario != "III":
        parser.error("--high-rate applies to scenario III only")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except VusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
