"""Command-line interface.

Subcommands::

    estimate          run the configured estimator(s) on a config file
    direct            force the direct (full-simulation) estimator
    verify-discrete   exact two-sided identity over the built-in grid
    verify-ct         statistical continuous-time verification suite
    bounds            sandwich table for the level-exceedance probability
    martingale-check  unit-mean check of a motion preset's tilt functional

Common flags: --config PATH, --seed N (overrides the config), --workers N,
--out DIR, --format csv|json|both, --no-figures.  Exit codes: 0 success or
all checks passed, 1 verification failure, 2 configuration error, 3 resource
cap exceeded.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .estimators import (
    estimate_direct,
    estimate_spine,
    many_to_one_closed_form,
    many_to_two_closed_form,
)
from .motion import (
    AbsorbedBrownian,
    BrownianMotion,
    ContinuousChain,
    martingale_check,
)
from .report import (
    ensure_dir,
    envelope,
    figure_bounds,
    figure_estimates,
    figure_grid_diffs,
    figure_split_times,
    save_figure,
    write_csv,
    write_json,
)
from .reports import EstimateReport
from .sim_ct import BranchingModel, EnumerationCapError, ExplosionError
from .sim_dt import DiscreteModel, OracleBudgetError, oracle_lhs, oracle_rhs
from .verify import (
    BOUNDS_CSV_FIELDS,
    GRID_CSV_FIELDS,
    IDENTITY_RTOL,
    bounds_rows,
    run_verify_ct,
    run_verify_discrete,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_CAPS = 3


def _add_common(parser: argparse.ArgumentParser, config_required: bool = False) -> None:
    parser.add_argument("--config", required=config_required, help="experiment config (YAML)")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)")
    parser.add_argument("--workers", type=int, help="worker processes for replicates")
    parser.add_argument("--out", help="output directory (else $SPINEMC_OUT, else config)")
    parser.add_argument(
        "--format", choices=("csv", "json", "both"), default="both",
        help="which summary formats to write",
    )
    parser.add_argument(
        "--no-figures", action="store_true", help="skip figure rendering"
    )


def _resolve_out(args, config: ExperimentConfig | None) -> str:
    if args.out:
        return args.out
    env = os.environ.get("SPINEMC_OUT")
    if env:
        return env
    if config is not None:
        return config.output.directory
    return "out"


def _formats(args, config: ExperimentConfig | None) -> set[str]:
    if args.format != "both":
        return {args.format}
    if config is not None:
        return set(config.output.formats)
    return {"csv", "json"}


def _figures_enabled(args, config: ExperimentConfig | None) -> bool:
    if args.no_figures:
        return False
    if config is not None:
        return config.output.figures
    return True


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    if args.seed is not None or args.workers is not None:
        raw = dict(config.raw)
        run = dict(raw.get("run", {}))
        if args.seed is not None:
            run["seed"] = args.seed
        if args.workers is not None:
            run["workers"] = args.workers
        raw["run"] = run
        from .config import config_from_dict

        config = config_from_dict(raw)
    return config


def _closed_form_reference(config: ExperimentConfig) -> float | None:
    """Reference value when the configured model has a Brownian closed form."""
    model = config.model
    if not isinstance(model, BranchingModel):
        return None
    if not isinstance(model.motion, BrownianMotion):
        return None
    if model.offspring.pmf != {2: 1.0} or not model.rate.is_constant:
        return None
    if model.rate.constant != 1.0 or model.origin != 0.0:
        return None
    stat = config.statistic
    if stat is None or stat.factors is None:
        return None
    if config.k == 1:
        return many_to_one_closed_form(stat.factors[0], config.horizon)
    if config.k == 2:
        return many_to_two_closed_form(stat.factors[0], stat.factors[1], config.horizon)
    return None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_estimate(args, force_direct: bool = False) -> int:
    config = _load(args)
    out = ensure_dir(_resolve_out(args, config))
    formats = _formats(args, config)
    run = config.run
    which = "direct" if force_direct else config.estimator

    reports: list[EstimateReport] = []
    kwargs = dict(workers=run.workers, max_population=run.max_population)
    try:
        if which in ("direct", "both"):
            reports.append(
                estimate_direct(
                    config.model, config.statistic, config.horizon, run.replicates,
                    run.seed, max_tuples=run.max_tuples, **kwargs,
                )
            )
        if which in ("spine", "both"):
            reports.append(
                estimate_spine(
                    config.model, config.statistic, config.horizon, run.replicates,
                    run.seed, **kwargs,
                )
            )
    except (ExplosionError, EnumerationCapError) as exc:
        payload = envelope(
            config.config_hash(), run.seed,
            command="direct" if force_direct else "estimate",
            partial=True, error=str(exc),
            reports=[r.to_dict() for r in reports],
        )
        if "json" in formats:
            write_json(os.path.join(out, "estimate_report.json"), payload)
        print(f"resource cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAPS

    reference = _closed_form_reference(config)
    payload = envelope(
        config.config_hash(), run.seed,
        command="direct" if force_direct else "estimate",
        horizon=config.horizon, k=config.k,
        closed_form=reference,
        reports=[r.to_dict() for r in reports],
    )
    if "json" in formats:
        write_json(os.path.join(out, "estimate_report.json"), payload)
    if "csv" in formats:
        write_csv(
            os.path.join(out, "estimate_summary.csv"),
            EstimateReport.CSV_FIELDS,
            [r.to_dict() for r in reports],
        )
    if _figures_enabled(args, config):
        save_figure(
            figure_estimates(reports, reference, title="estimator reports"),
            os.path.join(out, "estimate.png"),
        )
    for r in reports:
        ref = f" (closed form {reference:.6g})" if reference is not None else ""
        print(
            f"{r.name}: {r.estimate:.6g} +- {r.std_error:.2g} "
            f"[99% CI {r.ci99[0]:.6g}, {r.ci99[1]:.6g}] "
            f"n={r.replicates} wall={r.wall_time:.2f}s{ref}"
        )
    return EXIT_OK


def _cmd_verify_discrete(args) -> int:
    config = None
    if args.config:
        config = _load(args)
        if not isinstance(config.model, DiscreteModel):
            print("verify-discrete needs a discrete-time config", file=sys.stderr)
            return EXIT_CONFIG
    out = ensure_dir(_resolve_out(args, config))
    formats = _formats(args, config)
    seed = args.seed if args.seed is not None else (config.run.seed if config else 0)

    if config is not None:
        model = config.model
        try:
            lhs = oracle_lhs(model, config.statistic)
            rhs = oracle_rhs(model, config.statistic, per_edge_m=args.unsound_per_edge_m)
        except OracleBudgetError as exc:
            print(f"oracle budget exceeded: {exc}", file=sys.stderr)
            return EXIT_CAPS
        diff = abs(lhs - rhs)
        within = diff <= IDENTITY_RTOL * (1 + abs(lhs))
        rows = [{
            "law": "config", "chain": "config",
            "zeta": "tilted" if not config.model.chain.zeta_trivial else "plain",
            "k": config.k, "n": config.model.horizon,
            "lhs": lhs, "rhs": rhs, "abs_diff": diff,
            "within_tolerance": within, "skipped": False,
        }]
        passed, evaluated, failures = within, 1, 0 if within else 1
    else:
        result = run_verify_discrete(per_edge_m=args.unsound_per_edge_m)
        rows = [case.row() for case in result.cases]
        passed, evaluated, failures = result.passed, result.evaluated, result.failures

    if "csv" in formats:
        write_csv(os.path.join(out, "verify_discrete.csv"), GRID_CSV_FIELDS, rows)
    if "json" in formats:
        write_json(
            os.path.join(out, "verify_discrete.json"),
            envelope(
                config.config_hash() if config else "builtin-grid", seed,
                command="verify-discrete",
                per_edge_m=args.unsound_per_edge_m,
                tolerance=IDENTITY_RTOL,
                evaluated=evaluated, failures=failures, passed=passed,
            ),
        )
    if _figures_enabled(args, config):
        save_figure(
            figure_grid_diffs(rows, IDENTITY_RTOL),
            os.path.join(out, "verify_discrete.png"),
        )
    print(
        f"verify-discrete: {evaluated} cases evaluated, {failures} failures"
        f"{' (per-edge moment mutation ON)' if args.unsound_per_edge_m else ''}"
    )
    for row in rows:
        if not row["skipped"] and not row["within_tolerance"]:
            print(
                f"  FAIL {row['law']}/{row['chain']}/{row['zeta']} "
                f"k={row['k']} n={row['n']}: lhs={row['lhs']:.12g} rhs={row['rhs']:.12g}"
            )
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def _cmd_verify_ct(args) -> int:
    config = _load(args) if args.config else None
    out = ensure_dir(_resolve_out(args, config))
    formats = _formats(args, config)
    if args.seed is not None:
        seed = args.seed
    elif config is not None:
        seed = config.run.seed
    else:
        print("verify-ct needs --seed or a config with run.seed", file=sys.stderr)
        return EXIT_CONFIG
    workers = args.workers or (config.run.workers if config else 1)
    replicates = args.replicates or (config.run.replicates if config else 20_000)

    result = run_verify_ct(
        seed,
        replicates=replicates,
        unit_mean_replicates=max(2_000, replicates // 2),
        ks_samples=args.ks_samples,
        workers=workers,
        unsound_plain_rate=args.unsound_spine_rate,
    )
    if "csv" in formats:
        write_csv(
            os.path.join(out, "verify_ct_checks.csv"),
            ("name", "passed", "detail"),
            [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in result.checks],
        )
    if "json" in formats:
        write_json(
            os.path.join(out, "verify_ct.json"),
            envelope(
                config.config_hash() if config else "default-suite", seed,
                command="verify-ct",
                unsound_spine_rate=args.unsound_spine_rate,
                ks_pvalue=result.ks_pvalue,
                checks=[
                    {"name": c.name, "passed": c.passed, "detail": c.detail}
                    for c in result.checks
                ],
                reports=[r.to_dict() for r in result.reports],
                passed=result.passed,
            ),
        )
    if _figures_enabled(args, config):
        save_figure(
            figure_estimates(
                [r for r in result.reports if r.name.startswith(("mark-", "tree-"))],
                1.0, title="unit-mean weight processes",
            ),
            os.path.join(out, "verify_ct.png"),
        )
        save_figure(
            figure_split_times(result.split_samples),
            os.path.join(out, "split_times.png"),
        )
    for check in result.checks:
        print(check.line())
    print(f"verify-ct: {'PASS' if result.passed else 'FAIL'}")
    return EXIT_OK if result.passed else EXIT_CHECK_FAILED


def _parse_grid(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(part) for part in text.split(","))


def _cmd_bounds(args) -> int:
    config = _load(args) if args.config else None
    out = ensure_dir(_resolve_out(args, config))
    formats = _formats(args, config)
    if args.seed is not None:
        seed = args.seed
    elif config is not None:
        seed = config.run.seed
    else:
        print("bounds needs --seed or a config with run.seed", file=sys.stderr)
        return EXIT_CONFIG
    workers = args.workers or (config.run.workers if config else 1)
    replicates = args.replicates or (config.run.replicates if config else 20_000)

    rows = bounds_rows(_parse_grid(args.x), _parse_grid(args.t), replicates, seed, workers)
    if "csv" in formats:
        write_csv(os.path.join(out, "bounds.csv"), BOUNDS_CSV_FIELDS, rows)
    if "json" in formats:
        write_json(
            os.path.join(out, "bounds.json"),
            envelope(
                config.config_hash() if config else "bounds-grid", seed,
                command="bounds", rows=rows,
            ),
        )
    if rows and _figures_enabled(args, config):
        save_figure(figure_bounds(rows), os.path.join(out, "bounds.png"))
    for row in rows:
        print(
            f"x={row['x']:g} t={row['t']:g}: "
            f"{row['lower_bound']:.6g} <= {row['estimate']:.6g} "
            f"<= {row['upper_bound_capped']:.6g} ({'ok' if row['sandwich_ok'] else 'VIOLATED'})"
        )
    return EXIT_OK if all(r["sandwich_ok"] for r in rows) else EXIT_CHECK_FAILED


_MARTINGALE_PRESETS = ("brownian", "brownian-drift", "absorbed", "chain-ct")


def _cmd_martingale(args) -> int:
    config = _load(args) if args.config else None
    out = ensure_dir(_resolve_out(args, config))
    formats = _formats(args, config)
    if args.seed is not None:
        seed = args.seed
    elif config is not None:
        seed = config.run.seed
    else:
        print("martingale-check needs --seed or a config", file=sys.stderr)
        return EXIT_CONFIG

    if config is not None:
        if not isinstance(config.model, BranchingModel):
            print("martingale-check needs a continuous-time config", file=sys.stderr)
            return EXIT_CONFIG
        model = config.model.motion
        x0 = config.model.origin
    elif args.preset == "brownian":
        model, x0 = BrownianMotion(), 0.0
    elif args.preset == "brownian-drift":
        model, x0 = BrownianMotion(tilt_drift=args.lam), 0.0
    elif args.preset == "absorbed":
        model, x0 = AbsorbedBrownian(), args.x0
    elif args.preset == "chain-ct":
        model = ContinuousChain(((-1.0, 1.0), (0.5, -0.5)), tilt_theta=args.theta)
        x0 = 0.0
    else:
        print(f"choose a preset from {_MARTINGALE_PRESETS} or give --config", file=sys.stderr)
        return EXIT_CONFIG

    report = martingale_check(model, args.t, args.replicates, seed, x0=x0)
    passed = report.covers(1.0, 0.99)
    if "json" in formats:
        write_json(
            os.path.join(out, "martingale.json"),
            envelope(
                config.config_hash() if config else f"preset:{args.preset}", seed,
                command="martingale-check", t=args.t, passed=passed,
                report=report.to_dict(),
            ),
        )
    if "csv" in formats:
        write_csv(
            os.path.join(out, "martingale.csv"),
            EstimateReport.CSV_FIELDS, [report.to_dict()],
        )
    if _figures_enabled(args, config):
        save_figure(
            figure_estimates([report], 1.0, title="tilt functional mean"),
            os.path.join(out, "martingale.png"),
        )
    print(
        f"{report.name}: mean {report.estimate:.6f} +- {report.std_error:.6f} "
        f"-> unit mean {'PASS' if passed else 'FAIL'}"
    )
    return EXIT_OK if passed else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinemc",
        description="branching-process simulation with skeleton estimators",
    )
    parser.add_argument("--version", action="version", version=f"spinemc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="run the configured estimator(s)")
    _add_common(p, config_required=True)

    p = sub.add_parser("direct", help="run the direct estimator")
    _add_common(p, config_required=True)

    p = sub.add_parser("verify-discrete", help="exact identity over the built-in grid")
    _add_common(p)
    p.add_argument(
        "--unsound-per-edge-m", action="store_true",
        help="diagnostic mutation: apply the moment factor once per edge",
    )

    p = sub.add_parser("verify-ct", help="continuous-time verification suite")
    _add_common(p)
    p.add_argument("--replicates", type=int, help="replicates per estimator check")
    p.add_argument("--ks-samples", type=int, default=10_000, help="split-time samples")
    p.add_argument(
        "--unsound-spine-rate", action="store_true",
        help="diagnostic mutation: carriers branch at the plain rate",
    )

    p = sub.add_parser("bounds", help="sandwich table for exceedance probabilities")
    _add_common(p)
    p.add_argument("--x", default="0,1,2", help="comma-separated levels")
    p.add_argument("--t", default="0.5,1", help="comma-separated horizons")
    p.add_argument("--replicates", type=int, help="simulation replicates per horizon")

    p = sub.add_parser("martingale-check", help="unit-mean check of a tilt functional")
    _add_common(p)
    p.add_argument("--preset", choices=_MARTINGALE_PRESETS, default="brownian")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--replicates", type=int, default=20_000)
    p.add_argument("--lam", type=float, default=1.0, help="drift-tilt parameter")
    p.add_argument("--theta", type=float, default=0.5, help="chain tilt parameter")
    p.add_argument("--x0", type=float, default=1.0, help="start for the absorbed preset")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "estimate":
            return _cmd_estimate(args)
        if args.command == "direct":
            return _cmd_estimate(args, force_direct=True)
        if args.command == "verify-discrete":
            return _cmd_verify_discrete(args)
        if args.command == "verify-ct":
            return _cmd_verify_ct(args)
        if args.command == "bounds":
            return _cmd_bounds(args)
        if args.command == "martingale-check":
            return _cmd_martingale(args)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (ExplosionError, EnumerationCapError, OracleBudgetError) as exc:
        print(f"resource cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAPS


if __name__ == "__main__":
    sys.exit(main())
