"""Command-line entry points: run, baseline, sweep, report.

Exit codes: 0 success, 1 configuration problem, 2 runtime failure
(blow-up or filter divergence), 3 sweep finished with failed cells.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional

from . import reports
from .config import ConfigError, default_config, emit_config, load_config, parse_config
from .enkf import AnalysisError
from .experiment import (
    FilterDivergenceError,
    fraction_above,
    percentile,
    run_cse,
    run_uncontrolled,
)
from .lorenz96 import IntegrationError
from .sweep import default_grid, sweep

_RUNTIME_ERRORS = (IntegrationError, FilterDivergenceError, AnalysisError)


class _Parser(argparse.ArgumentParser):
    # usage problems are configuration problems: exit 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _add_common(p: argparse.ArgumentParser, workers: bool = False) -> None:
    p.add_argument("--config", metavar="PATH", help="config file (defaults used if omitted)")
    p.add_argument("--out", metavar="DIR", required=True, help="output directory")
    p.add_argument(
        "--seed",
        metavar="U64",
        type=int,
        help="master seed; re-derives all stream seeds",
    )
    p.add_argument(
        "--set",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        dest="overrides",
        help="config override, repeatable (e.g. --set control.weight_sd=1.0)",
    )
    p.add_argument(
        "--dump",
        metavar="KINDS",
        default="",
        help="comma-separated extras: percentiles,hovmoller,cycles,boxstats",
    )
    if workers:
        p.add_argument("--workers", metavar="N", type=int, default=1, help="parallel cells")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="enkc", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_run = sub.add_parser("run", help="one control experiment", parents=[], add_help=True)
    _add_common(p_run)
    p_run.add_argument(
        "--window",
        metavar="A:B",
        default="0:2000",
        help="evaluation-cycle window for the Hovmöller dump",
    )

    p_base = sub.add_parser("baseline", help="uncontrolled nature run only")
    _add_common(p_base)

    p_sweep = sub.add_parser("sweep", help="run a parameter grid into a result store")
    _add_common(p_sweep, workers=True)
    p_sweep.add_argument(
        "--axis",
        metavar="KEY=V1,V2,...",
        action="append",
        default=[],
        help="sweep this key over listed values (repeatable, replaces the standard grid)",
    )

    p_rep = sub.add_parser("report", help="aggregate a result store")
    p_rep.add_argument("--out", metavar="DIR", required=True, help="result store to aggregate")
    return parser


def _parse_dumps(raw: str) -> set[str]:
    kinds = {k.strip() for k in raw.split(",") if k.strip()}
    unknown = kinds - set(reports.DUMP_KINDS)
    if unknown:
        raise ConfigError(
            f"unknown dump kind(s) {', '.join(sorted(unknown))}; "
            f"choose from {', '.join(reports.DUMP_KINDS)}"
        )
    return kinds


def _load(args, extra_overrides=()) -> "ExperimentConfig":
    overrides = list(args.overrides) + list(extra_overrides)
    if args.config is None:
        return parse_config("", overrides, args.seed)
    return load_config(args.config, overrides, args.seed)


def _parse_window(raw: str, eval_steps: int) -> tuple[int, int]:
    try:
        a_str, b_str = raw.split(":")
        a, b = int(a_str), int(b_str)
    except ValueError:
        raise ConfigError(f"--window must be A:B with integers, got {raw!r}") from None
    return a, min(b, eval_steps)


def cmd_run(args) -> int:
    dumps = _parse_dumps(args.dump)
    extra = ["run.log_cycles=true"] if dumps & {"hovmoller", "cycles"} else []
    cfg = _load(args, extra)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "effective_config.ini"), "w", encoding="utf-8") as fh:
        fh.write(emit_config(cfg))
    result = run_cse(cfg)
    reports.write_cell_csv(result, os.path.join(args.out, "metrics.csv"))
    if "percentiles" in dumps:
        reports.emit_percentiles(
            result.uncontrolled_values,
            result.controlled_values,
            os.path.join(args.out, "percentiles.csv"),
        )
    if "hovmoller" in dumps:
        window = _parse_window(args.window, cfg.run.eval_steps)
        reports.emit_hovmoller(result, window, args.out)
    if "cycles" in dumps:
        reports.write_cycles_csv(result.log, os.path.join(args.out, "cycles.csv"))
    if "boxstats" in dumps:
        reports.write_boxstats_csv(result.metrics, os.path.join(args.out, "boxstats.csv"))
    m = result.metrics
    print(f"P99.999 uncontrolled {m.p99999_uncontrolled:.4f} -> controlled "
          f"{m.p99999_controlled:.4f} (reduction {m.reduction:.4f})")
    print(f"interventions: {m.n_interventions} of {m.n_eval_cycles} cycles "
          f"(frequency {m.intervention_frequency:.4f}), "
          f"mean L2 {m.mean_l2_per_intervention:.4f}, "
          f"mean max entry {m.mean_max_abs_per_intervention:.4f}")
    print(f"wrote {args.out} ({result.runtime_seconds:.1f} s)")
    return 0


def cmd_baseline(args) -> int:
    dumps = _parse_dumps(args.dump)
    bad = dumps - {"percentiles"}
    if bad:
        raise ConfigError(f"baseline supports only --dump percentiles, got {','.join(bad)}")
    cfg = _load(args)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "effective_config.ini"), "w", encoding="utf-8") as fh:
        fh.write(emit_config(cfg))
    values = run_uncontrolled(cfg)
    threshold = cfg.control.trigger_threshold
    frac = fraction_above(values, threshold)
    p = percentile(values, [0.0, 50.0, 99.0, 99.9, 99.999, 100.0])
    header = [
        "n_samples",
        "threshold",
        "fraction_above_threshold",
        "min",
        "median",
        "p99",
        "p99_9",
        "p99_999",
        "max",
    ]
    row = [
        str(values.size),
        reports._fmt(float(threshold)),
        reports._fmt(frac),
        reports._fmt(float(p[0])),
        reports._fmt(float(p[1])),
        reports._fmt(float(p[2])),
        reports._fmt(float(p[3])),
        reports._fmt(float(p[4])),
        reports._fmt(float(p[5])),
    ]
    reports._write_rows(os.path.join(args.out, "baseline.csv"), header, [row])
    if "percentiles" in dumps:
        reports.emit_percentiles(values, None, os.path.join(args.out, "percentiles.csv"))
    print(f"{values.size} values, fraction > {threshold:g}: {frac:.6f} "
          f"({100 * frac:.4f}%), P99.999 {p[4]:.4f}")
    print(f"wrote {args.out}")
    return 0


def cmd_sweep(args) -> int:
    _parse_dumps(args.dump)  # validated for uniformity; sweep writes no dumps
    base = _load(args)
    if args.axis:
        grids = []
        for spec_str in args.axis:
            key, sep, raw = spec_str.partition("=")
            if not sep or not raw:
                raise ConfigError(f"--axis must be KEY=V1,V2,..., got {spec_str!r}")
            grids.append((key.strip(), [v.strip() for v in raw.split(",") if v.strip()]))
        cells = []

        def expand(i, pairs):
            if i == len(grids):
                cells.append(
                    parse_config(
                        emit_config(base),
                        [f"{k}={v}" for k, v in pairs],
                        args.seed,
                    )
                )
                return
            key, vals = grids[i]
            for v in vals:
                expand(i + 1, pairs + [(key, v)])

        expand(0, [])
    else:
        cells = default_grid(base)
    print(f"sweep: {len(cells)} cells -> {args.out}")
    summary = sweep(cells, args.out, master_seed=args.seed, workers=args.workers)
    print(
        f"done: {summary.n_run} run, {summary.n_skipped} already present, "
        f"{len(summary.failures)} failed"
    )
    for f in summary.failures:
        print(f"  FAILED {f.name}: {f.error}", file=sys.stderr)
    return 3 if summary.failures else 0


def cmd_report(args) -> int:
    report_path, summary_path = reports.emit_report(args.out)
    with open(summary_path, "r", encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    print(f"wrote {report_path} and {summary_path}")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.subcommand == "run":
            return cmd_run(args)
        if args.subcommand == "baseline":
            return cmd_baseline(args)
        if args.subcommand == "sweep":
            return cmd_sweep(args)
        if args.subcommand == "report":
            return cmd_report(args)
        raise AssertionError(args.subcommand)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except _RUNTIME_ERRORS as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
