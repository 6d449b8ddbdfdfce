"""Twin-experiment driver: nature runs, filter cycling, control, metrics.

A run couples three trajectories that share one initial truth state: an
uncontrolled free run (the baseline), a controlled nature run, and the
ensemble tracking it.  Observations are assimilated every model step;
after spin-up, a control step runs every cycle and its perturbation is
added to both the nature state and every ensemble member.

Randomness is split into named streams with independent seeds (nature
init, observation noise, ensemble init, observation perturbations,
random-sparsifier support), so changing one ingredient never shifts the
draws of another.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import control as ctl
from .control import ControlProblem, RandomSelection, Thresholding
from .enkf import LocalizationConfig, ObservationModel, _analysis_core, make_tapers
from .lorenz96 import (
    IntegrationError,
    ModelConfig,
    _advance_kernel,
    _bad_rows,
    _record_kernel,
    _scratch,
)

RMSE_DIVERGENCE_LIMIT = 10.0
RMSE_DIVERGENCE_CYCLES = 100


class FilterDivergenceError(RuntimeError):
    """The analysis RMSE stayed above the divergence limit for too long."""

    def __init__(self, step: int, rmse: float):
        self.step = step
        self.rmse = rmse
        super().__init__(
            f"filter diverged: analysis RMSE > {RMSE_DIVERGENCE_LIMIT:g} for "
            f"{RMSE_DIVERGENCE_CYCLES} consecutive cycles, last at step {step} "
            f"(RMSE {rmse:.3f})"
        )


@dataclass(frozen=True)
class EnsembleSettings:
    """Ensemble size and initialization spread."""

    N: int = 40
    init_spread_sd: float = 1.0
    inflation: float = 1.0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"ensemble size N must be at least 2, got {self.N}")
        if not self.init_spread_sd > 0:
            raise ValueError("init_spread_sd must be positive")
        if not self.inflation >= 1.0:
            raise ValueError("inflation must be at least 1.0")


@dataclass(frozen=True)
class RunSettings:
    """Cycle counts and logging switches for one experiment."""

    spin_up_steps: int = 14600
    eval_steps: int = 146000
    nature_discard_steps: int = 10000
    log_cycles: bool = False

    def __post_init__(self):
        if self.spin_up_steps < 0:
            raise ValueError("spin_up_steps must be nonnegative")
        if self.eval_steps < 1:
            raise ValueError("eval_steps must be at least 1")
        if self.nature_discard_steps < 0:
            raise ValueError("nature_discard_steps must be nonnegative")

    @property
    def total_steps(self) -> int:
        return self.spin_up_steps + self.eval_steps


@dataclass(frozen=True)
class SeedSet:
    """One seed per named random stream, plus the master they derive from."""

    master: int
    nature_init: int
    obs_noise: int
    ensemble_init: int
    obs_perturbations: int
    random_sparsifier: int

    def __post_init__(self):
        for name in (
            "master",
            "nature_init",
            "obs_noise",
            "ensemble_init",
            "obs_perturbations",
            "random_sparsifier",
        ):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"seed {name} must be a nonnegative integer, got {v!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs; immutable and cheap to copy with replace()."""

    model: ModelConfig = field(default_factory=ModelConfig)
    obs: ObservationModel = None  # type: ignore[assignment]
    localization: LocalizationConfig = field(default_factory=LocalizationConfig)
    ensemble: EnsembleSettings = field(default_factory=EnsembleSettings)
    control: ControlProblem = field(default_factory=ControlProblem)
    run: RunSettings = field(default_factory=RunSettings)
    seeds: SeedSet = field(default_factory=lambda: SeedSet(0, 0, 0, 0, 0, 0))

    def __post_init__(self):
        if self.obs is None:
            from .enkf import even_grid_observations

            object.__setattr__(self, "obs", even_grid_observations(self.model.K))
        if self.obs.K != self.model.K:
            raise ValueError(
                f"observation network is for a ring of {self.obs.K}, model has {self.model.K}"
            )
        if isinstance(self.control.sparsifier, RandomSelection):
            if self.control.sparsifier.n_L > self.model.K:
                raise ValueError("random-selection n_L cannot exceed the grid size K")


@dataclass
class InterventionRecord:
    """One applied control perturbation."""

    step: int
    trigger_grids: tuple[int, ...]
    delta: np.ndarray
    rc_variances: tuple[float, ...]


@dataclass
class RunLog:
    """Per-cycle scalars for a whole run plus one record per intervention.

    ``delta_field`` is only filled when per-cycle logging is on; it holds
    the applied perturbation for every evaluation cycle (zeros where no
    intervention happened).
    """

    spin_up_steps: int
    eval_steps: int
    analysis_rmse: np.ndarray
    n_triggered: np.ndarray
    intervention: np.ndarray
    delta_max_abs: np.ndarray
    delta_l2: np.ndarray
    interventions: list[InterventionRecord]
    delta_field: Optional[np.ndarray] = None


@dataclass(frozen=True)
class BoxplotStats:
    """Tukey box-and-whisker summary of a sample."""

    q1: float
    median: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    n_outliers: int


@dataclass(frozen=True)
class MetricSummary:
    """Control effectiveness and cost for one run."""

    p99999_uncontrolled: float
    p99999_controlled: float
    reduction: float
    mean_max_abs_per_intervention: float
    mean_l2_per_intervention: float
    mean_max_abs_per_cycle: float
    mean_l2_per_cycle: float
    mean_nonzero_per_intervention: float
    intervention_frequency: float
    n_interventions: int
    n_eval_cycles: int
    no_interventions: bool
    l2_box: BoxplotStats


@dataclass
class RunResult:
    """Everything a finished run produced."""

    config: ExperimentConfig
    controlled_values: np.ndarray
    uncontrolled_values: np.ndarray
    log: RunLog
    metrics: MetricSummary
    runtime_seconds: float


def percentile(values, p):
    """Linear-interpolation percentile of all entries of ``values``."""
    a = np.ravel(np.asarray(values, dtype=float))
    if a.size == 0:
        raise ValueError("cannot take a percentile of an empty sample")
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p > 100):
        raise ValueError("percentile levels must lie in 0..100")
    return np.percentile(a, p)


def fraction_above(values, threshold: float) -> float:
    """Fraction of entries strictly above the threshold."""
    a = np.asarray(values)
    return float(np.mean(a > threshold))


def make_nature(model: ModelConfig, seed: int, discard_steps: int = 10000) -> np.ndarray:
    """Spin a nature state onto the attractor.

    Starts from the steady state X = F with a 0.01 * N(0, 1) kick at the
    first grid point and discards a long transient.
    """
    rng = np.random.default_rng(seed)
    x = np.full(model.K, model.F)
    x[0] += 0.01 * rng.standard_normal()
    if discard_steps:
        buf = x.reshape(1, -1)
        bad = _advance_kernel(buf, discard_steps, model.F, model.dt, *_scratch(model.K))
        if bad >= 0:
            raise IntegrationError(bad)
    return x


def _free_run_values(nature0: np.ndarray, run: RunSettings, model: ModelConfig) -> np.ndarray:
    """Record the free nature trajectory over the evaluation window."""
    x = nature0.copy()
    scratch = _scratch(model.K)
    if run.spin_up_steps:
        buf = x.reshape(1, -1)
        bad = _advance_kernel(buf, run.spin_up_steps, model.F, model.dt, *scratch)
        if bad >= 0:
            raise IntegrationError(bad)
    values = np.empty((run.eval_steps, model.K))
    bad = _record_kernel(x, values, model.F, model.dt, *scratch)
    if bad >= 0:
        raise IntegrationError(run.spin_up_steps + bad)
    return values


def run_uncontrolled(cfg: ExperimentConfig) -> np.ndarray:
    """Baseline distribution: the free nature run over the evaluation window.

    Returns an (eval_steps, K) array of states at cycle times; exactly
    eval_steps x K sample values.
    """
    nature0 = make_nature(cfg.model, cfg.seeds.nature_init, cfg.run.nature_discard_steps)
    return _free_run_values(nature0, cfg.run, cfg.model)


def _tukey(values: np.ndarray) -> BoxplotStats:
    q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    inside = values[(values >= q1 - 1.5 * iqr) & (values <= q3 + 1.5 * iqr)]
    return BoxplotStats(
        q1=float(q1),
        median=float(med),
        q3=float(q3),
        whisker_lo=float(inside.min()),
        whisker_hi=float(inside.max()),
        n_outliers=int(values.size - inside.size),
    )


def compute_metrics(
    controlled_values: np.ndarray, uncontrolled_values: np.ndarray, log: RunLog
) -> MetricSummary:
    """Summarize effectiveness (tail reduction) and cost (perturbation size)."""
    pu = float(percentile(uncontrolled_values, 99.999))
    pc = float(percentile(controlled_values, 99.999))
    ev = slice(log.spin_up_steps, log.spin_up_steps + log.eval_steps)
    mask = log.intervention[ev]
    n_int = int(mask.sum())
    max_abs = log.delta_max_abs[ev]
    l2 = log.delta_l2[ev]
    if n_int:
        mean_max_i = float(max_abs[mask].mean())
        mean_l2_i = float(l2[mask].mean())
        supports = np.array([np.count_nonzero(r.delta) for r in log.interventions])
        mean_nonzero = float(supports.mean())
        box = _tukey(l2[mask])
    else:
        mean_max_i = mean_l2_i = mean_nonzero = 0.0
        box = BoxplotStats(0.0, 0.0, 0.0, 0.0, 0.0, 0)
    return MetricSummary(
        p99999_uncontrolled=pu,
        p99999_controlled=pc,
        reduction=pu - pc,
        mean_max_abs_per_intervention=mean_max_i,
        mean_l2_per_intervention=mean_l2_i,
        mean_max_abs_per_cycle=float(max_abs.sum() / log.eval_steps),
        mean_l2_per_cycle=float(l2.sum() / log.eval_steps),
        mean_nonzero_per_intervention=mean_nonzero,
        intervention_frequency=n_int / log.eval_steps,
        n_interventions=n_int,
        n_eval_cycles=log.eval_steps,
        no_interventions=n_int == 0,
        l2_box=box,
    )


def run_cse(cfg: ExperimentConfig) -> RunResult:
    """Run one full control simulation experiment.

    Every cycle: record truth (during evaluation), observe it, update the
    ensemble with the stochastic filter, then (during evaluation) build a
    control perturbation from an extended forecast and add it to truth and
    ensemble alike; finally advance both one model step.

    Raises IntegrationError on blow-up and FilterDivergenceError when the
    analysis loses the truth for a sustained stretch.
    """
    t0 = time.perf_counter()
    model, run, obs = cfg.model, cfg.run, cfg.obs
    problem = cfg.control
    tapers = make_tapers(obs, cfg.localization)
    obs0 = obs.zero_based
    sd = obs.error_sd
    inflation = cfg.ensemble.inflation
    n = cfg.ensemble.N
    scratch = _scratch(model.K)

    rng_obs = np.random.default_rng(cfg.seeds.obs_noise)
    rng_pert = np.random.default_rng(cfg.seeds.obs_perturbations)
    rng_sparse = np.random.default_rng(cfg.seeds.random_sparsifier)

    nature0 = make_nature(model, cfg.seeds.nature_init, run.nature_discard_steps)
    uncontrolled = _free_run_values(nature0, run, model)

    nat = nature0.copy()
    nat2 = nat.reshape(1, -1)
    rng_ens = np.random.default_rng(cfg.seeds.ensemble_init)
    ens = nat + rng_ens.normal(0.0, cfg.ensemble.init_spread_sd, size=(n, model.K))

    total = run.total_steps
    controlled = np.empty((run.eval_steps, model.K))
    log = RunLog(
        spin_up_steps=run.spin_up_steps,
        eval_steps=run.eval_steps,
        analysis_rmse=np.empty(total),
        n_triggered=np.zeros(total, dtype=np.int64),
        intervention=np.zeros(total, dtype=bool),
        delta_max_abs=np.zeros(total),
        delta_l2=np.zeros(total),
        interventions=[],
        delta_field=np.zeros((run.eval_steps, model.K)) if run.log_cycles else None,
    )

    # +inf trigger threshold can never fire, so the horizon forecast is skipped
    skip_control = not np.isfinite(problem.trigger_threshold)
    random_sel = isinstance(problem.sparsifier, RandomSelection)
    thresh = problem.sparsifier if isinstance(problem.sparsifier, Thresholding) else None
    high_rmse_streak = 0

    for cycle in range(total):
        in_eval = cycle >= run.spin_up_steps
        if in_eval:
            controlled[cycle - run.spin_up_steps] = nat

        y = nat[obs0] + rng_obs.normal(0.0, sd)
        pert = rng_pert.normal(0.0, sd, size=(n, obs.m))
        ens = _analysis_core(ens, y, pert, obs, tapers, inflation)

        rmse = float(np.sqrt(np.mean((ens.mean(axis=0) - nat) ** 2)))
        log.analysis_rmse[cycle] = rmse
        if rmse > RMSE_DIVERGENCE_LIMIT:
            high_rmse_streak += 1
            if high_rmse_streak >= RMSE_DIVERGENCE_CYCLES:
                raise FilterDivergenceError(cycle, rmse)
        else:
            high_rmse_streak = 0

        if in_eval and not skip_control:
            horizon = ens.copy()
            bad = _advance_kernel(horizon, problem.horizon_steps, model.F, model.dt, *scratch)
            if bad >= 0:
                raise IntegrationError(cycle, _bad_rows(horizon))
            hmean = horizon.mean(axis=0)
            trig0 = np.flatnonzero(hmean > problem.trigger_threshold)
            log.n_triggered[cycle] = trig0.size
            if trig0.size >= problem.min_trigger_grids:
                innov = problem.reference_value - hmean[trig0]
                if problem.aoei:
                    spread = horizon[:, trig0].var(axis=0, ddof=1)
                    rc = ctl.aoei_variances(innov, spread, problem.base_variance)
                else:
                    rc = np.full(trig0.size, problem.base_variance)
                gain = ctl.control_gain(ens, horizon, trig0 + 1, rc, problem.sparsifier)
                delta = gain @ innov
                if thresh is not None:
                    delta = ctl.threshold_sparsify(delta, thresh.lambda_frac)
                elif random_sel:
                    delta = ctl.random_sparsify(delta, problem.sparsifier.n_L, rng_sparse)
                if np.any(delta != 0.0):
                    nat += delta
                    ens += delta
                    log.intervention[cycle] = True
                    log.delta_max_abs[cycle] = float(np.max(np.abs(delta)))
                    log.delta_l2[cycle] = float(np.linalg.norm(delta))
                    log.interventions.append(
                        InterventionRecord(
                            step=cycle,
                            trigger_grids=tuple(int(g) for g in trig0 + 1),
                            delta=delta.copy(),
                            rc_variances=tuple(float(v) for v in rc),
                        )
                    )
                    if log.delta_field is not None:
                        log.delta_field[cycle - run.spin_up_steps] = delta

        bad = _advance_kernel(nat2, 1, model.F, model.dt, *scratch)
        if bad >= 0:
            raise IntegrationError(cycle)
        bad = _advance_kernel(ens, 1, model.F, model.dt, *scratch)
        if bad >= 0:
            raise IntegrationError(cycle, _bad_rows(ens))

    metrics = compute_metrics(controlled, uncontrolled, log)
    return RunResult(
        config=cfg,
        controlled_values=controlled,
        uncontrolled_values=uncontrolled,
        log=log,
        metrics=metrics,
        runtime_seconds=time.perf_counter() - t0,
    )
