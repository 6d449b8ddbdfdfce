"""Sweep grid composition, resumability, worker independence."""

import os

import pytest

from conftest import short_cfg
from enkc.config import default_config, fingerprint
from enkc.control import ControlLocalization, RandomSelection, Thresholding
from enkc.reports import read_cell_csv
from enkc.sweep import (
    ENSEMBLE_SIZES,
    LAMBDA_FRACS,
    LOCALIZATION_SCALES,
    RANDOM_COUNTS,
    WEIGHT_SDS,
    cell_name,
    default_grid,
    sweep,
)


def test_default_grid_composition():
    grid = default_grid(default_config())
    # 3 sizes x 5 weights x (4 + 4 + 1 sparsifiers) x 2 aoei states,
    # plus 3 x 5 x 4 random-selection cells without aoei
    assert len(grid) == 3 * 5 * 9 * 2 + 3 * 5 * 4
    assert len(grid) == 330
    fps = {fingerprint(cfg) for cfg in grid}
    assert len(fps) == len(grid)
    sizes = {cfg.ensemble.N for cfg in grid}
    assert sizes == set(ENSEMBLE_SIZES)
    weights = {cfg.control.weight_sd for cfg in grid}
    assert weights == set(WEIGHT_SDS)
    locs = {c.control.sparsifier.L_c for c in grid
            if isinstance(c.control.sparsifier, ControlLocalization)}
    assert locs == set(LOCALIZATION_SCALES)
    lams = {c.control.sparsifier.lambda_frac for c in grid
            if isinstance(c.control.sparsifier, Thresholding)}
    assert lams == set(LAMBDA_FRACS)
    rand = [c for c in grid if isinstance(c.control.sparsifier, RandomSelection)]
    assert {c.control.sparsifier.n_L for c in rand} == set(RANDOM_COUNTS)
    assert all(not c.control.aoei for c in rand)
    assert len(rand) == 3 * 5 * 4
    bare = [c for c in grid if c.control.sparsifier is None]
    assert len(bare) == 3 * 5 * 2


def _tiny_cells(n=3):
    cells = [
        short_cfg(f"control.weight_sd={sd}", spin_up=50, eval_steps=200)
        for sd in (0.1, 0.01, 0.3, 0.05, 1.0)[:n]
    ]
    assert len({fingerprint(c) for c in cells}) == len(cells)
    return cells


def test_sweep_runs_and_resumes(tmp_path):
    cells = _tiny_cells(3)
    store = str(tmp_path / "store")
    summary = sweep(cells, store, master_seed=1)
    assert summary.ok
    assert summary.n_cells == 3 and summary.n_run == 3 and summary.n_skipped == 0
    files = sorted(os.listdir(store))
    assert len(files) == 3
    assert all(f.startswith("cell_") and f.endswith("_s1.csv") for f in files)
    # a second pass finds everything in place and runs nothing
    again = sweep(cells, store, master_seed=1)
    assert again.n_run == 0 and again.n_skipped == 3
    # dropping one file makes exactly that cell run again
    os.remove(os.path.join(store, files[0]))
    third = sweep(cells, store, master_seed=1)
    assert third.n_run == 1 and third.n_skipped == 2


def test_sweep_worker_count_invisible(tmp_path):
    cells = _tiny_cells(3)
    serial = str(tmp_path / "serial")
    parallel = str(tmp_path / "parallel")
    sweep(cells, serial, master_seed=5)
    sweep(cells, parallel, master_seed=5, workers=2)
    names = sorted(os.listdir(serial))
    assert names == sorted(os.listdir(parallel))
    for name in names:
        with open(os.path.join(serial, name), "rb") as fh:
            a = fh.read()
        with open(os.path.join(parallel, name), "rb") as fh:
            b = fh.read()
        assert a == b, name


def test_sweep_seed_lineage(tmp_path):
    # per-cell seeds derive from (master, fingerprint): the same cell under
    # two masters lands in two distinct files with different results
    cells = _tiny_cells(1)
    store = str(tmp_path / "store")
    sweep(cells, store, master_seed=1)
    sweep(cells, store, master_seed=2)
    files = sorted(os.listdir(store))
    assert len(files) == 2
    assert {f.rsplit("_", 1)[1] for f in files} == {"s1.csv", "s2.csv"}
    rows = [read_cell_csv(os.path.join(store, f)) for f in files]
    assert rows[0]["p99999_uncontrolled"] != rows[1]["p99999_uncontrolled"]
    # the fingerprint half of the name is identical
    assert files[0].rsplit("_", 1)[0] == files[1].rsplit("_", 1)[0]


def test_sweep_failure_marker(tmp_path):
    good = short_cfg(spin_up=50, eval_steps=200)
    bad = short_cfg("model.dt=0.5", spin_up=50, eval_steps=200)
    store = str(tmp_path / "store")
    summary = sweep([good, bad], store, master_seed=1)
    assert not summary.ok
    assert summary.n_run == 2
    assert len(summary.failures) == 1
    marker = os.path.join(store, summary.failures[0].name + ".failed.txt")
    assert os.path.exists(marker)
    with open(marker, encoding="utf-8") as fh:
        text = fh.read()
    assert "IntegrationError" in text
    assert "IntegrationError" in summary.failures[0].error
    # the failed cell has no csv; the good one does
    assert not os.path.exists(os.path.join(store, summary.failures[0].name + ".csv"))
    csvs = [f for f in os.listdir(store) if f.endswith(".csv")]
    assert len(csvs) == 1
    # after the failure is fixed the marker is cleared on success
    fixed = sweep([good, short_cfg(spin_up=50, eval_steps=200)], store, master_seed=1)
    assert fixed.ok


def test_duplicate_cells_collapse(tmp_path):
    cfg = short_cfg(spin_up=50, eval_steps=200)
    store = str(tmp_path / "store")
    summary = sweep([cfg, cfg], store, master_seed=1)
    assert summary.n_cells == 1 and summary.n_run == 1


def test_cell_name_shape():
    cfg = default_config()
    name = cell_name(cfg)
    assert name == f"cell_{fingerprint(cfg)[:16]}_s{cfg.seeds.master}"
    assert len(name.split("_")) == 3
