"""Delimited-text emitters: metrics tables, percentile curves, Hovmöller
grids, per-cycle logs, boxplot stats, and sweep aggregation.

Everything is comma-separated with a header row and dot decimals.  Float
values are written with 17 significant digits so re-parsing them is
bit-faithful; nothing wall-clock-dependent is ever written, which keeps
repeated runs byte-identical.
"""

from __future__ import annotations

import csv
import glob
import os
from typing import Optional

import numpy as np

from .config import _SCHEMA, _config_values, fingerprint
from .config import _fmt as _fmt_config
from .experiment import MetricSummary, RunLog, RunResult

DUMP_KINDS = ("percentiles", "hovmoller", "cycles", "boxstats")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _write_rows(path: str, header: list[str], rows) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def config_columns(cfg) -> dict[str, str]:
    """Flatten a config into ``section.key`` columns plus its fingerprint.

    Values are written exactly as the canonical config text would show
    them, so a column can be pasted back into an override.
    """
    values = _config_values(cfg)
    out = {}
    for sec, keys in _SCHEMA.items():
        for key in keys:
            if (sec, key) in values:
                v = values[(sec, key)]
                if isinstance(v, tuple):
                    v = ",".join(str(i) for i in v)
                out[f"{sec}.{key}"] = _fmt_config(v)
    out["fingerprint"] = fingerprint(cfg)
    return out


def metric_columns(m: MetricSummary) -> dict[str, str]:
    box = m.l2_box
    return {
        "p99999_uncontrolled": _fmt(m.p99999_uncontrolled),
        "p99999_controlled": _fmt(m.p99999_controlled),
        "reduction": _fmt(m.reduction),
        "mean_max_abs_per_intervention": _fmt(m.mean_max_abs_per_intervention),
        "mean_l2_per_intervention": _fmt(m.mean_l2_per_intervention),
        "mean_max_abs_per_cycle": _fmt(m.mean_max_abs_per_cycle),
        "mean_l2_per_cycle": _fmt(m.mean_l2_per_cycle),
        "mean_nonzero_per_intervention": _fmt(m.mean_nonzero_per_intervention),
        "intervention_frequency": _fmt(m.intervention_frequency),
        "n_interventions": _fmt(m.n_interventions),
        "n_eval_cycles": _fmt(m.n_eval_cycles),
        "no_interventions": _fmt(m.no_interventions),
        "l2_q1": _fmt(box.q1),
        "l2_median": _fmt(box.median),
        "l2_q3": _fmt(box.q3),
        "l2_whisker_lo": _fmt(box.whisker_lo),
        "l2_whisker_hi": _fmt(box.whisker_hi),
        "l2_n_outliers": _fmt(box.n_outliers),
    }


def write_cell_csv(result: RunResult, path: str) -> None:
    """One-row table: full config fields plus all metrics."""
    cols = config_columns(result.config)
    cols.update(metric_columns(result.metrics))
    _write_rows(path, list(cols), [list(cols.values())])


def percentile_grid() -> np.ndarray:
    """0..100 in steps of 1, then the dense tail 99.9..100 in steps of 0.001."""
    coarse = np.arange(0.0, 101.0)
    tail = np.round(np.linspace(99.9, 100.0, 101), 3)
    return np.concatenate([coarse, tail])


def emit_percentiles(
    uncontrolled: np.ndarray, controlled: Optional[np.ndarray], path: str
) -> None:
    """Percentile curves of the value distributions, on the default grid."""
    grid = percentile_grid()
    pu = np.percentile(np.ravel(uncontrolled), grid)
    header = ["p", "uncontrolled"]
    cols = [pu]
    if controlled is not None:
        header.append("controlled")
        cols.append(np.percentile(np.ravel(controlled), grid))
    rows = [[_fmt(float(g))] + [_fmt(float(c[i])) for c in cols] for i, g in enumerate(grid)]
    _write_rows(path, header, rows)


def emit_hovmoller(
    result: RunResult, window: tuple[int, int], out_dir: str, prefix: str = "hovmoller"
) -> list[str]:
    """Three (time x grid) tables: nature values, values masked to > threshold,
    applied perturbations.  Needs a run made with per-cycle logging."""
    log = result.log
    if log.delta_field is None:
        raise ValueError(
            "per-cycle logging was disabled for this run; "
            "set run.log_cycles = true to dump Hovmöller grids"
        )
    a, b = window
    if not 0 <= a < b <= log.eval_steps:
        raise ValueError(f"window {a}:{b} outside the evaluation range 0:{log.eval_steps}")
    kdim = result.controlled_values.shape[1]
    threshold = result.config.control.trigger_threshold
    header = ["cycle"] + [f"k{j + 1}" for j in range(kdim)]
    cycles = range(a, b)
    nature = result.controlled_values

    def rows(field, mask):
        for i in cycles:
            row = [str(i)]
            for j in range(kdim):
                v = field[i, j]
                row.append("" if (mask and not v > threshold) else _fmt(float(v)))
            yield row

    paths = []
    for suffix, field, mask in (
        ("nature", nature, False),
        ("masked", nature, True),
        ("delta", log.delta_field, False),
    ):
        path = os.path.join(out_dir, f"{prefix}_{suffix}.csv")
        _write_rows(path, header, rows(field, mask))
        paths.append(path)
    return paths


def write_cycles_csv(log: RunLog, path: str) -> None:
    """Per-cycle scalar log over the whole run (spin-up included)."""
    header = [
        "cycle",
        "in_eval",
        "analysis_rmse",
        "n_triggered",
        "intervention",
        "delta_max_abs",
        "delta_l2",
    ]
    total = log.spin_up_steps + log.eval_steps

    def rows():
        for i in range(total):
            yield [
                str(i),
                _fmt(i >= log.spin_up_steps),
                _fmt(float(log.analysis_rmse[i])),
                str(int(log.n_triggered[i])),
                _fmt(bool(log.intervention[i])),
                _fmt(float(log.delta_max_abs[i])),
                _fmt(float(log.delta_l2[i])),
            ]

    _write_rows(path, header, rows())


def write_boxstats_csv(m: MetricSummary, path: str) -> None:
    """Tukey box stats of per-intervention perturbation L2 norms."""
    box = m.l2_box
    header = ["n", "q1", "median", "q3", "whisker_lo", "whisker_hi", "n_outliers"]
    row = [
        str(m.n_interventions),
        _fmt(box.q1),
        _fmt(box.median),
        _fmt(box.q3),
        _fmt(box.whisker_lo),
        _fmt(box.whisker_hi),
        str(box.n_outliers),
    ]
    _write_rows(path, header, [row])


def read_cell_csv(path: str) -> dict[str, str]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if len(rows) != 1:
        raise ValueError(f"{path}: expected exactly one data row, found {len(rows)}")
    return rows[0]


def emit_report(store_dir: str, out_dir: Optional[str] = None) -> tuple[str, str]:
    """Aggregate a sweep store into report.csv plus a summary.txt.

    Failed cells appear as rows with status=failed and the error message;
    they never show up as zero metrics.  Pure: reads cell files, writes the
    two outputs, touches nothing else, and is idempotent.
    """
    out_dir = store_dir if out_dir is None else out_dir
    cell_paths = sorted(glob.glob(os.path.join(store_dir, "cell_*.csv")))
    marker_paths = sorted(glob.glob(os.path.join(store_dir, "cell_*.failed.txt")))
    if not cell_paths and not marker_paths:
        raise ValueError(f"no sweep cells found in {store_dir}")

    rows = []
    for path in cell_paths:
        row = read_cell_csv(path)
        row["cell"] = os.path.basename(path)[: -len(".csv")]
        row["status"] = "ok"
        row["error"] = ""
        rows.append(row)
    for path in marker_paths:
        name = os.path.basename(path)[: -len(".failed.txt")]
        if any(r["cell"] == name for r in rows):
            continue
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline().strip()
        rows.append({"cell": name, "status": "failed", "error": first})

    lead = ["cell", "status", "error"]
    tail = sorted({k for r in rows for k in r} - set(lead))
    header = lead + tail
    table = [[r.get(k, "") for k in header] for r in rows]
    report_path = os.path.join(out_dir, "report.csv")
    _write_rows(report_path, header, table)

    ok_rows = [r for r in rows if r["status"] == "ok"]
    lines = [
        f"cells: {len(rows)} ({len(ok_rows)} ok, {len(rows) - len(ok_rows)} failed)",
    ]
    with_reduction = [r for r in ok_rows if "reduction" in r]
    if with_reduction:
        best = max(with_reduction, key=lambda r: float(r["reduction"]))
        lines.append(
            f"best reduction: {float(best['reduction']):.4f} in {best['cell']} "
            f"({_describe(best)})"
        )
        efficient = [
            r for r in with_reduction if float(r.get("mean_l2_per_intervention", "0")) > 0
        ]
        if efficient:
            beste = max(
                efficient,
                key=lambda r: float(r["reduction"]) / float(r["mean_l2_per_intervention"]),
            )
            ratio = float(beste["reduction"]) / float(beste["mean_l2_per_intervention"])
            lines.append(
                f"best efficiency (reduction per unit mean L2): {ratio:.4f} in "
                f"{beste['cell']} ({_describe(beste)})"
            )
    for r in rows:
        if r["status"] == "failed":
            lines.append(f"FAILED {r['cell']}: {r['error']}")
    summary_path = os.path.join(out_dir, "summary.txt")
    tmp = summary_path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, summary_path)
    return report_path, summary_path


def _describe(row: dict[str, str]) -> str:
    bits = []
    for col, label in (
        ("ensemble.N", "N"),
        ("control.weight_sd", "weight_sd"),
        ("control.sparsifier", "sparsifier"),
        ("sparsifier.L_c", "L_c"),
        ("sparsifier.lambda_frac", "lambda"),
        ("sparsifier.n_L", "n_L"),
        ("control.aoei", "aoei"),
    ):
        v = row.get(col, "")
        if v != "":
            if col in ("control.weight_sd", "sparsifier.lambda_frac"):
                v = f"{float(v):g}"
            bits.append(f"{label}={v}")
    return ", ".join(bits)
