"""Ensemble Kalman control twin experiments on the Lorenz 96 ring.

A stochastic ensemble Kalman filter tracks a chaotic nature run from
partial noisy observations; an ensemble-smoother control step estimates
small additive perturbations that steer the system away from extreme
values, optionally sparsified (localization, thresholding, or random
support) and damped by adaptive observation error inflation.  The
experiment harness measures how much the extreme tail of the state
distribution shrinks and what the interventions cost.
"""

from .config import (
    ConfigError,
    default_config,
    derive_seeds,
    emit_config,
    fingerprint,
    load_config,
    parse_config,
    rederive_seeds,
)
from .control import (
    ControlLocalization,
    ControlOutcome,
    ControlProblem,
    RandomSelection,
    Thresholding,
    aoei_variances,
    apply_perturbation,
    compute_perturbation,
    control_gain,
    control_perturbation,
    detect_trigger,
    extended_forecast,
    random_sparsify,
    threshold_sparsify,
)
from .enkf import (
    AnalysisError,
    LocalizationConfig,
    ObservationModel,
    enkf_analysis,
    ensemble_stats,
    even_grid_observations,
    forecast,
    localization_weight,
    ring_distance,
)
from .experiment import (
    BoxplotStats,
    EnsembleSettings,
    ExperimentConfig,
    FilterDivergenceError,
    InterventionRecord,
    MetricSummary,
    RunLog,
    RunResult,
    RunSettings,
    SeedSet,
    compute_metrics,
    fraction_above,
    make_nature,
    percentile,
    run_cse,
    run_uncontrolled,
)
from .lorenz96 import (
    BLOWUP_LIMIT,
    IntegrationError,
    ModelConfig,
    ModelError,
    advance_ensemble,
    advance_state,
    integrate,
    rk4_step,
    tendency,
)
from .reports import (
    emit_hovmoller,
    read_cell_csv,
    emit_percentiles,
    emit_report,
    write_boxstats_csv,
    write_cell_csv,
    write_cycles_csv,
)
from .sweep import SweepSummary, default_grid, sweep

__version__ = "0.1.0"

__all__ = [
    "advance_ensemble",
    "advance_state",
    "AnalysisError",
    "aoei_variances",
    "apply_perturbation",
    "BLOWUP_LIMIT",
    "BoxplotStats",
    "compute_metrics",
    "compute_perturbation",
    "ConfigError",
    "control_gain",
    "control_perturbation",
    "ControlLocalization",
    "ControlOutcome",
    "ControlProblem",
    "default_config",
    "default_grid",
    "derive_seeds",
    "detect_trigger",
    "emit_config",
    "emit_hovmoller",
    "emit_percentiles",
    "emit_report",
    "enkf_analysis",
    "ensemble_stats",
    "EnsembleSettings",
    "even_grid_observations",
    "ExperimentConfig",
    "extended_forecast",
    "FilterDivergenceError",
    "fingerprint",
    "forecast",
    "fraction_above",
    "integrate",
    "IntegrationError",
    "InterventionRecord",
    "load_config",
    "localization_weight",
    "LocalizationConfig",
    "make_nature",
    "MetricSummary",
    "ModelConfig",
    "ModelError",
    "ObservationModel",
    "parse_config",
    "percentile",
    "random_sparsify",
    "RandomSelection",
    "read_cell_csv",
    "rederive_seeds",
    "ring_distance",
    "rk4_step",
    "run_cse",
    "run_uncontrolled",
    "RunLog",
    "RunResult",
    "RunSettings",
    "SeedSet",
    "sweep",
    "SweepSummary",
    "tendency",
    "threshold_sparsify",
    "Thresholding",
    "write_boxstats_csv",
    "write_cell_csv",
    "write_cycles_csv",
]
