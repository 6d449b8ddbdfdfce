"""Shared helpers: config builders, realistic ensembles, acceptance reporting."""

from __future__ import annotations

import numpy as np
import pytest

from enkc.config import parse_config
from enkc.experiment import make_nature
from enkc.lorenz96 import ModelConfig, advance_ensemble

# one pass/fail line per acceptance criterion, echoed after the test summary
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: str, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    assert ok, line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def short_cfg(*overrides: str, spin_up: int = 500, eval_steps: int = 3000):
    """A quick full-pipeline config; overrides are ``key=value`` strings."""
    base = [
        f"run.spin_up_steps={spin_up}",
        f"run.eval_steps={eval_steps}",
        "run.nature_discard_steps=2000",
    ]
    return parse_config("", base + list(overrides))


@pytest.fixture(scope="session")
def attractor_pair():
    """A realistic (analysis-like, horizon) ensemble pair on the attractor.

    Members are the nature state plus small noise, advanced a few steps so
    anomalies carry genuine flow-dependent correlations; the horizon
    ensemble is the same members advanced further.
    """
    model = ModelConfig()
    x = make_nature(model, seed=11, discard_steps=3000)
    rng = np.random.default_rng(12)
    ens = x + 0.3 * rng.standard_normal((20, model.K))
    ens = advance_ensemble(ens, 10, model)
    horizon = advance_ensemble(ens, 4, model)
    return ens, horizon, model
