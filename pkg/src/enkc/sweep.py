"""Parameter sweeps: the standard grid, per-cell seed derivation, a result store.

A sweep cell is one ExperimentConfig; its result is one CSV file named by
the config fingerprint and master seed, so a store is resumable (existing
cells are skipped) and two sweeps with the same master seed produce
byte-identical files no matter how many workers ran them.  A failed cell
leaves a ``.failed.txt`` marker carrying the error instead of a result.
"""

from __future__ import annotations

import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .config import fingerprint, rederive_seeds
from .control import ControlLocalization, RandomSelection, Thresholding
from .experiment import ExperimentConfig, run_cse
from .reports import write_cell_csv

WEIGHT_SDS = (0.0001, 0.001, 0.01, 0.1, 1.0)
ENSEMBLE_SIZES = (40, 20, 10)
LOCALIZATION_SCALES = (1, 2, 5, 10)
LAMBDA_FRACS = (0.25, 0.5, 0.75, 1.0)
RANDOM_COUNTS = (1, 3, 9, 19)


@dataclass
class CellFailure:
    name: str
    error: str


@dataclass
class SweepSummary:
    n_cells: int
    n_run: int
    n_skipped: int
    failures: list[CellFailure]

    @property
    def ok(self) -> bool:
        return not self.failures


def default_grid(base: ExperimentConfig) -> list[ExperimentConfig]:
    """The paper-style sweep grid built on top of a base config.

    Ensemble sizes x control weights x (localization scales + thresholding
    fractions + no sparsifier) x AOEI on/off, plus the random-selection
    baseline without AOEI.  Seeds are not resolved here; the sweep driver
    re-derives them per cell.
    """
    sparsifiers_both_aoei = (
        [ControlLocalization(L_c=lc) for lc in LOCALIZATION_SCALES]
        + [Thresholding(lambda_frac=lf) for lf in LAMBDA_FRACS]
        + [None]
    )
    cells = []
    for n in ENSEMBLE_SIZES:
        for sd in WEIGHT_SDS:
            for sp in sparsifiers_both_aoei:
                for aoei in (False, True):
                    cells.append(_vary(base, n, sd, sp, aoei))
            for n_l in RANDOM_COUNTS:
                cells.append(_vary(base, n, sd, RandomSelection(n_L=n_l), aoei=False))
    return cells


def _vary(base: ExperimentConfig, n: int, weight_sd: float, sparsifier, aoei: bool):
    return replace(
        base,
        ensemble=replace(base.ensemble, N=n),
        control=replace(base.control, weight_sd=weight_sd, sparsifier=sparsifier, aoei=aoei),
    )


def cell_name(cfg: ExperimentConfig) -> str:
    return f"cell_{fingerprint(cfg)[:16]}_s{cfg.seeds.master}"


def _run_cell(cfg: ExperimentConfig, out_dir: str, name: str) -> Optional[str]:
    """Run one cell and write its result; returns an error string on failure."""
    csv_path = os.path.join(out_dir, name + ".csv")
    marker = os.path.join(out_dir, name + ".failed.txt")
    try:
        result = run_cse(cfg)
        write_cell_csv(result, csv_path)
    except Exception as exc:
        with open(marker, "w", encoding="utf-8") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n\n{traceback.format_exc()}")
        return f"{type(exc).__name__}: {exc}"
    if os.path.exists(marker):
        os.remove(marker)
    return None


def sweep(
    configs: Sequence[ExperimentConfig],
    out_dir: str,
    master_seed: Optional[int] = None,
    workers: int = 1,
) -> SweepSummary:
    """Run every cell of a grid into a result store, skipping finished ones.

    Each cell gets stream seeds re-derived from (master seed, its own
    fingerprint), so cells are independent and individually reproducible.
    Cell failures are recorded and the sweep continues.
    """
    os.makedirs(out_dir, exist_ok=True)
    cells = []
    seen = {}
    for cfg in configs:
        cell = rederive_seeds(cfg, master_seed)
        name = cell_name(cell)
        if name in seen:
            if seen[name] != cell:
                raise ValueError(f"two distinct configs collide on cell name {name}")
            continue
        seen[name] = cell
        cells.append((cell, name))

    n_skipped = 0
    todo = []
    for cell, name in cells:
        if os.path.exists(os.path.join(out_dir, name + ".csv")):
            n_skipped += 1
        else:
            todo.append((cell, name))

    failures = []
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            errs = pool.map(_run_cell, *zip(*((c, out_dir, n) for c, n in todo)), chunksize=1)
            for (cell, name), err in zip(todo, errs):
                if err is not None:
                    failures.append(CellFailure(name, err))
    else:
        for cell, name in todo:
            err = _run_cell(cell, out_dir, name)
            if err is not None:
                failures.append(CellFailure(name, err))
    return SweepSummary(
        n_cells=len(cells), n_run=len(todo), n_skipped=n_skipped, failures=failures
    )
