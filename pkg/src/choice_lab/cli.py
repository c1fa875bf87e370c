"""Command-line front door: ``choice-lab {verify,simulate,estimate,report}``.

Every run is driven by a JSON experiment file (see ``schema/``).  Outputs are
written to ``--out`` (or the config's ``output_dir``, or the working
directory) with names derived from the experiment name, and contain no
timestamps, so identical (config, seed) pairs give identical bytes.

Exit codes: 0 when every selected check passes, 1 when any check fails,
2 on a configuration error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

import numpy as np

from . import controlfn, estimate, identities, panel
from .config import CHECKS, ExperimentConfig
from .distributions import LogisticDiff, MultivariateNormal, eta_from_dict, noise_to_dict
from .errors import (
    ChoiceLabError,
    ConfigurationError,
    IdentificationError,
    PreconditionError,
    UnsupportedError,
    WrongFamilyError,
)
from .report import (
    STATUS_PRECONDITION,
    DerivativeReport,
    combined_se,
    format_table,
    reports_to_csv,
    reports_to_json,
)

THREADS_ENV = "CHOICE_LAB_THREADS"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def worker_count(default: int | None = None) -> int:
    """Worker pool size: ``CHOICE_LAB_THREADS`` caps the CPU count."""
    cap = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return max(1, min(cap, default or cap))
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return min(value, cap)


def _points(raw, fallback: Callable[[], list]) -> list[np.ndarray]:
    if raw is None:
        return fallback()
    return [np.asarray(p, float) for p in raw]


def _x_grid(cfg: ExperimentConfig, check: str, model) -> list[np.ndarray]:
    def fallback():
        if model.is_multinomial:
            return [np.zeros(model.x_shape)]
        return identities.default_grid(model.x_shape)

    return _points(cfg.grid("x", check), fallback)


def _tol(cfg: ExperimentConfig, check: str, default: float | None = None) -> float:
    return float(cfg.options(check).get("tol_rel", default if default is not None else cfg.tol_rel))


def _draws_label(integ) -> str:
    return str(integ.n_draws) if integ.is_mc else f"{integ.method}:{integ.nodes_per_dim}"


def _run_one(cfg: ExperimentConfig, check: str) -> list[DerivativeReport]:
    """Reports for one check under the (possibly overridden) config."""
    opt = cfg.options(check)
    integ = cfg.integration(check)
    rhs_integ = cfg.integration(check, rhs=True)
    tol = _tol(cfg, check)

    if check in ("thm1", "thm2", "cor3", "hessian", "index", "wavg", "thm4", "berry"):
        model = cfg.model(check)
        dists = cfg.dists(check)
        if check == "thm1":
            return identities.verify_thm1(model, dists, _x_grid(cfg, check, model), integ, rhs_integ, tol,
                                          path=opt.get("path", "analytic"), bandwidth=opt.get("bandwidth"))
        if check == "thm2":
            return identities.verify_thm2(model, dists, _x_grid(cfg, check, model), integ, rhs_integ, tol)
        if check == "cor3":
            return identities.cor3_check(model, dists, integ, tol_rel=tol)
        if check == "hessian":
            tol = _tol(cfg, check, 0.02)
            if "xi_values" not in opt:
                return [identities.hessian_check(model, dists, integ, tol)]
            if not isinstance(dists.noise, LogisticDiff):
                raise ConfigurationError("check_options.hessian.xi_values needs LogisticDiff noise")
            out = []
            for xi in opt["xi_values"]:
                rep = identities.hessian_check(model, type(dists)(dists.eta, LogisticDiff(float(xi))), integ, tol)
                rep.label = f"hessian[xi={float(xi)!r}]"
                out.append(rep.with_metadata(noise=noise_to_dict(LogisticDiff(float(xi)))))
            return out
        if check == "index":
            return identities.index_check(model, dists, _x_grid(cfg, check, model), integ, tol,
                                          max_angle=float(opt.get("max_angle", 1e-3)))
        if check == "wavg":
            d = int(np.prod(model.x_shape))
            x_law = eta_from_dict(opt["x_law"]) if "x_law" in opt else MultivariateNormal(np.zeros(d), np.eye(d))
            scale = float(opt.get("weight_scale", 1.0))
            weight = lambda xs: np.exp(-0.5 * np.sum(xs * xs, axis=1) / scale**2)  # noqa: E731
            return [identities.weighted_avg_derivative(model, dists, weight, x_law, integ,
                                                       n_x=int(opt.get("n_x", 2000)), tol_rel=tol)]
        grid = _x_grid(cfg, check, model)
        if check == "thm4":
            return [identities.thm4_check(model, dists, x, integ, rhs_integ, tol) for x in grid]
        return [r for x in grid for r in identities.berry_deriv_check(model, dists, x, integ, rhs_integ, tol)]

    if check in ("thm5", "cor6", "lar"):
        model = cfg.model(check)
        dgp = controlfn.dgp_from_dict(cfg.section("control", check))
        xs = _points(cfg.grid("x", check), lambda: [np.zeros(model.x_shape)])
        if check == "thm5":
            ws = _points(cfg.grid("w", check), lambda: [np.zeros(dgp.w_law.dim)])
            return controlfn.verify_thm5(dgp, model, xs, ws, integ, rhs_integ, tol)
        if check == "cor6":
            return [r for x in xs for r in controlfn.avg_over_w(dgp, model, x, integ, rhs_integ,
                                                                n_w=int(opt.get("n_w", 2000)),
                                                                tol_rel=tol, k_gap=cfg.k_gap)]
        out = []
        for x in xs:
            lar, lar_se = controlfn.local_average_response(dgp, model, x, integ)
            oracle, oracle_se = controlfn.joint_lar_oracle(dgp, model, x, integ)
            out.append(DerivativeReport("lar", np.ravel(x), lar, oracle, combined_se(lar_se, oracle_se),
                                        tol_rel=tol))
        return out

    # panel checks
    model = cfg.model(check)
    dgp = panel.dgp_from_dict(cfg.section("panel", check))
    if check in ("thm7", "thm8", "thm9"):
        diag = _points(cfg.grid("diag", check), lambda: [np.zeros(model.x_shape)])
        if check == "thm7":
            return panel.verify_thm7(dgp, model, diag, integ, rhs_integ, tol, k_bias=cfg.k_gap)
        if check == "thm8":
            return panel.thm8_check(dgp, model, diag, integ, rhs_integ, tol, k_bias=cfg.k_gap)
        try:
            _, rep = panel.thm9_recover_beta(dgp, model, diag, integ, max_angle=opt.get("max_angle"))
        except IdentificationError as exc:
            rep = DerivativeReport("thm9_angle", np.zeros(1), [np.nan], [0.0], status=STATUS_PRECONDITION,
                                   note=str(exc))
        return [rep]
    raw_pairs = cfg.grid("pairs", check)
    pairs = panel.default_pairs() if raw_pairs is None else [tuple(p) for p in raw_pairs]
    n_equiv = int(opt.get("n_x", 100_000))
    if check == "thm10":
        return [panel.equivalence_report(dgp, model, n_equiv, cfg.seed),
                *panel.thm10_gap(dgp, model, pairs, integ, k_gap=cfg.k_gap)]
    if check == "thm11":
        return [panel.equivalence_report(dgp, model, n_equiv, cfg.seed, binary=True),
                *panel.thm11_gap(dgp, model, pairs, integ, bandwidth=opt.get("bandwidth"), k_gap=cfg.k_gap)]
    raise ConfigurationError(f"unknown check {check!r}")


def _variants(cfg: ExperimentConfig, check: str) -> list[tuple[str, ExperimentConfig]]:
    """The main run plus one run per entry of ``check_options.<check>.controls``."""
    opt = cfg.options(check)
    base = {k: v for k, v in opt.items() if k != "controls"}
    out = [("", cfg if "controls" not in opt else _with_option(cfg, check, base))]
    for i, ctl in enumerate(opt.get("controls", [])):
        merged = {**base, **ctl}
        merged.pop("name", None)
        out.append((ctl.get("name", f"control{i}"), _with_option(cfg, check, merged)))
    return out


def _with_option(cfg: ExperimentConfig, check: str, opt: dict) -> ExperimentConfig:
    doc = json.loads(json.dumps(cfg.doc))
    doc.setdefault("check_options", {})[check] = opt
    return ExperimentConfig(doc)


def run_checks(cfg: ExperimentConfig, checks: list[str] | None = None, workers: int | None = None
               ) -> list[DerivativeReport]:
    """Run the selected checks on a bounded pool; results come back in config order."""
    checks = cfg.checks if checks is None else checks
    unknown = [c for c in checks if c not in CHECKS]
    if unknown:
        raise ConfigurationError(f"unknown checks: {', '.join(unknown)}")
    tasks = [(check, suffix, sub) for check in checks for suffix, sub in _variants(cfg, check)]

    def work(task):
        check, suffix, sub = task
        reps = _run_one(sub, check)
        integ = sub.integration(check)
        for r in reps:
            if suffix:
                r.label = f"{r.label}[{suffix}]"
            r.with_metadata(config_hash=cfg.hash, seed=cfg.seed, draws=_draws_label(integ), check=check)
            if cfg.k_se != 3.0 and r.mode == "equal":
                r.k_se = cfg.k_se
            if cfg.tol_abs is not None and r.mode == "equal":
                r.tol_abs = cfg.tol_abs
        return reps

    n_workers = min(worker_count(workers), max(1, len(tasks)))
    if n_workers == 1:
        results = [work(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(work, tasks))
    return [r for reps in results for r in reps]


# ------------------------------------------------------------- commands
def _out_dir(args, cfg: ExperimentConfig | None) -> Path:
    out = Path(args.out or (cfg.output_dir if cfg and cfg.output_dir else "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_reports(out: Path, stem: str, reports: list[DerivativeReport]) -> None:
    (out / f"{stem}.csv").write_text(reports_to_csv(reports))
    (out / f"{stem}.json").write_text(reports_to_json(reports))


def _exit_code(reports: list[DerivativeReport]) -> int:
    return EXIT_FAIL if any(r.counts_as_failure for r in reports) else EXIT_OK


def cmd_verify(cfg: ExperimentConfig, out: Path) -> int:
    reports = run_checks(cfg)
    _write_reports(out, f"verify_{cfg.name}", reports)
    sys.stdout.write(format_table(reports))
    return _exit_code(reports)


def _simulate_sample(cfg: ExperimentConfig):
    est = cfg.estimation()
    model = cfg.model()
    n = int(est["n"])
    if est["design"] == "cross_section":
        d = int(np.prod(model.x_shape))
        x_law = eta_from_dict(est["x_law"]) if "x_law" in est else MultivariateNormal(np.zeros(d), np.eye(d))
        return estimate.simulate_cross_section(model, cfg.dists(), x_law, n, cfg.seed, cfg.hash)
    dgp = panel.dgp_from_dict(cfg.section("panel"))
    return estimate.simulate_panel(dgp, model, n, cfg.seed, cfg.hash)


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> int:
    sample = _simulate_sample(cfg)
    path = out / f"sample_{cfg.name}.csv"
    path.write_text(sample.to_csv())
    sys.stdout.write(f"wrote {sample.n} records to {path}\n")
    return EXIT_OK


def estimation_reports(cfg: ExperimentConfig, sample=None) -> list[DerivativeReport]:
    """Estimates at the configured points against their population values."""
    est = cfg.estimation()
    model = cfg.model()
    kcfg = cfg.kernel()
    sample = sample if sample is not None else _simulate_sample(cfg)
    truth_integ = cfg.integration(rhs=True)
    meta = {"config_hash": cfg.hash, "seed": cfg.seed, "draws": str(sample.n)}
    reports = []
    if est["design"] == "cross_section":
        dists = cfg.dists()
        points = _points(est.get("points"), lambda: [np.zeros(int(np.prod(model.x_shape)))])
        for x in points:
            fit = estimate.local_linear_fit(sample, x, kcfg)
            xm = model.check_x(x)
            if model.is_binary:
                lhs, se = fit.slope[0], fit.slope_se[0]
                truth = identities.thm2_rhs(model, dists, xm, truth_integ)
            else:
                lhs, se = fit.slope, fit.slope_se
                truth = identities.multinomial_rhs(model, dists, xm, truth_integ)[0].reshape(lhs.shape)
            reports.append(DerivativeReport("estimate_deriv", x, lhs, truth, se, tol_rel=0.0, tol_abs=0.0,
                                            metadata={**meta, "bandwidth": fit.bandwidth.tolist(),
                                                      "n_local": fit.n_local, "n_effective": fit.n_effective,
                                                      "level": fit.level.tolist()}))
        if model.is_binary and int(np.prod(model.x_shape)) >= 2:
            r = estimate.estimate_mean_coeff_ratio(sample, kcfg, ref=est.get("ref"), n_boot=int(est.get("n_boot", 200)),
                                                   seed=cfg.seed)
            x0 = np.zeros(int(np.prod(model.x_shape)))
            truth = identities.thm2_rhs(model, dists, x0, truth_integ)
            true_ratio = truth[r.components] / truth[r.ref]
            rmeta = {**meta, "reference": r.ref, "ci_low": r.ci_low.tolist(), "ci_high": r.ci_high.tolist(),
                     "bandwidth": r.bandwidth.tolist(), "ref_boot_se": r.ref_boot_se}
            if r.flagged:
                reports.append(DerivativeReport("estimate_ratio", x0, true_ratio * np.nan, true_ratio,
                                                status="skipped", note="reference derivative within 3 bootstrap SE of 0",
                                                metadata=rmeta))
            else:
                covers = (r.ci_low <= true_ratio) & (true_ratio <= r.ci_high)
                # within two bootstrap standard errors, the normal-approximation analogue of the 95% interval
                reports.append(DerivativeReport("estimate_ratio", x0, r.ratios, true_ratio, r.boot_se, tol_rel=0.0,
                                                tol_abs=0.0, k_se=2.0, metadata={**rmeta, "covers": covers.tolist()}))
        return reports

    dgp = panel.dgp_from_dict(cfg.section("panel"))
    points = _points(est.get("points"), lambda: [np.zeros(dgp.p)])
    for x in points:
        fit = estimate.panel_diag_estimator(sample, x, kcfg)
        truth = panel.thm7_lhs(dgp, model, model.check_x(x), truth_integ).value
        reports.append(DerivativeReport("estimate_diag", x, fit.slope_x2, np.reshape(truth, fit.slope_x2.shape),
                                        fit.slope_x2_se, tol_rel=0.0, tol_abs=0.0,
                                        metadata={**meta, "bandwidth": fit.bandwidth.tolist(),
                                                  "n_effective": fit.n_effective,
                                                  "intercept": fit.intercept.tolist()}))
    if dgp.eta_mode == panel.FIXED:
        b, _ = estimate.estimate_direction(sample, points, kcfg, d=model.dims.d)
        angle = panel.angle_between(b, dgp.beta0)
        reports.append(DerivativeReport("estimate_direction", np.zeros(1), [angle], [0.0], tol_rel=0.0,
                                        tol_abs=float(est.get("max_angle", 0.1)),
                                        metadata={**meta, "beta_hat": b.tolist()}))
    return reports


def cmd_estimate(cfg: ExperimentConfig, out: Path) -> int:
    reports = estimation_reports(cfg)
    _write_reports(out, f"estimate_{cfg.name}", reports)
    sys.stdout.write(format_table(reports))
    return _exit_code(reports)


def cmd_report(directory: Path) -> int:
    """Consolidate every report JSON in ``directory`` into summary.json and summary.txt."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigurationError(f"not a directory: {directory}")
    runs, lines = [], []
    for path in sorted(directory.glob("*.json")):
        if path.name == "summary.json":
            continue
        doc = json.loads(path.read_text())
        if "reports" not in doc:
            continue
        runs.append({"file": path.name, "n_reports": doc["n_reports"], "n_pass": doc["n_pass"],
                     "n_fail": doc["n_fail"], "n_not_applicable": doc["n_not_applicable"],
                     "failed": [r["label"] for r in doc["reports"] if r["status"] == "ok" and not r["pass"]]})
        lines.append(f"{path.name:<40} {doc['n_reports']:>6} {doc['n_pass']:>6} {doc['n_fail']:>6} "
                     f"{doc['n_not_applicable']:>6}")
    summary = {"runs": runs, "n_fail": sum(r["n_fail"] for r in runs)}
    (directory / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    header = f"{'file':<40} {'checks':>6} {'pass':>6} {'fail':>6} {'n/a':>6}"
    text = "\n".join([header, *lines]) + "\n"
    (directory / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_FAIL if summary["n_fail"] else EXIT_OK


# ------------------------------------------------------------- entry point
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="choice-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("verify", "run derivative identity checks"),
                            ("simulate", "write a simulated sample"),
                            ("estimate", "simulate and run the kernel estimators")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment JSON (or a shipped reference name)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--draws", type=int, help="override integration.n_draws")
        p.add_argument("--out", help="output directory")
        p.add_argument("--checks", help="comma-separated subset of checks")
        p.add_argument("--tolerance", type=float, help="override the relative tolerance")
    p = sub.add_parser("report", help="summarise report files in a directory")
    p.add_argument("directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors already
        return int(exc.code or 0)
    try:
        if args.command == "report":
            return cmd_report(Path(args.directory))
        checks = [c.strip() for c in args.checks.split(",") if c.strip()] if args.checks else None
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigurationError("--seed must be an unsigned 64-bit integer")
        cfg = ExperimentConfig.from_file(args.config).with_overrides(args.seed, args.draws, checks, args.tolerance)
        worker_count()  # validate the environment before doing any work
        out = _out_dir(args, cfg)
        command = {"verify": cmd_verify, "simulate": cmd_simulate, "estimate": cmd_estimate}[args.command]
        return command(cfg, out)
    except (ConfigurationError, WrongFamilyError, UnsupportedError) as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return EXIT_CONFIG
    except (PreconditionError, ChoiceLabError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
