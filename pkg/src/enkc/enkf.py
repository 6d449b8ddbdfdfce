"""Stochastic (perturbed-observation) ensemble Kalman filter.

All covariances are handled through anomaly matrices, so nothing of size
K x K is ever formed except the localization taper, which is precomputed
once per configuration.  The Kalman gain is applied via a Cholesky solve
in observation space.

Grid points carry 1-based ring labels in user-facing interfaces (an
observation at "grid 2" is column index 1 internally); everything else is
plain 0-based numpy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .lorenz96 import ModelConfig, ModelError, advance_ensemble


class AnalysisError(RuntimeError):
    """The observation-space system could not be solved.

    Carries ``condition``, a condition-number estimate of the matrix that
    failed to factor, when one could be computed.
    """

    def __init__(self, message: str, condition: float = np.nan):
        self.condition = condition
        if np.isfinite(condition):
            message += f" (condition estimate {condition:.3e})"
        super().__init__(message)


@dataclass(frozen=True)
class ObservationModel:
    """Which ring labels are observed and with what error variance.

    Parameters
    ----------
    K : int
        Size of the state ring the indices refer to.
    indices : tuple of int
        Observed grid points as 1-based ring labels, strictly increasing.
    variances : tuple of float
        Observation error variance per observed point, all positive.
    """

    K: int
    indices: tuple[int, ...]
    variances: tuple[float, ...]

    def __post_init__(self):
        if len(self.indices) == 0:
            raise ValueError("at least one observed grid point is required")
        if len(self.variances) != len(self.indices):
            raise ValueError("need one variance per observed grid point")
        if any(not 1 <= i <= self.K for i in self.indices):
            raise ValueError(f"observed grid labels must lie in 1..{self.K}")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("observed grid labels must be distinct")
        if tuple(sorted(self.indices)) != self.indices:
            raise ValueError("observed grid labels must be sorted")
        if any(not v > 0 for v in self.variances):
            raise ValueError("observation variances must be positive")

    @property
    def m(self) -> int:
        return len(self.indices)

    @property
    def zero_based(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.intp) - 1

    @property
    def error_sd(self) -> np.ndarray:
        return np.sqrt(np.asarray(self.variances))

    def project(self, states: np.ndarray) -> np.ndarray:
        """Apply the selection operator H to one state or a stack of them."""
        return np.asarray(states)[..., self.zero_based]


def even_grid_observations(K: int = 40, variance: float = 1.0) -> ObservationModel:
    """The standard network: every even ring label observed, common variance."""
    idx = tuple(range(2, K + 1, 2))
    return ObservationModel(K=K, indices=idx, variances=(float(variance),) * len(idx))


@dataclass(frozen=True)
class LocalizationConfig:
    """Exponential covariance taper exp(-d/L) on ring distance d."""

    L: float = 2.0
    enabled: bool = True

    def __post_init__(self):
        if self.enabled and not self.L > 0:
            raise ValueError(f"localization scale L must be positive, got {self.L}")


def ring_distance(i: int, j: int, K: int) -> int:
    """Shortest cyclic distance between ring labels i and j (both 1-based)."""
    if not (1 <= i <= K and 1 <= j <= K):
        raise ValueError(f"ring labels must lie in 1..{K}, got {i}, {j}")
    d = abs(i - j)
    return min(d, K - d)


def _distance_matrix(rows0: np.ndarray, cols0: np.ndarray, K: int) -> np.ndarray:
    d = np.abs(rows0[:, None] - cols0[None, :])
    return np.minimum(d, K - d)


def localization_weight(distance: float, loc: LocalizationConfig) -> float:
    """Taper weight at a given ring distance; 1 everywhere when disabled."""
    if distance < 0:
        raise ValueError("distance must be nonnegative")
    if not loc.enabled:
        return 1.0
    return float(np.exp(-distance / loc.L))


def make_tapers(obs_model: ObservationModel, loc: LocalizationConfig):
    """Precompute (state x obs, obs x obs) taper matrices, or (None, None)."""
    if not loc.enabled:
        return None, None
    grid = np.arange(obs_model.K, dtype=np.intp)
    o = obs_model.zero_based
    t_state = np.exp(-_distance_matrix(grid, o, obs_model.K) / loc.L)
    t_obs = np.exp(-_distance_matrix(o, o, obs_model.K) / loc.L)
    return t_state, t_obs


def ensemble_stats(members) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble mean and per-grid sample variance (divisor N - 1)."""
    ens = np.asarray(members, dtype=float)
    if ens.ndim != 2 or ens.shape[0] < 2:
        raise ValueError("need a (N, K) ensemble with N >= 2")
    return ens.mean(axis=0), ens.var(axis=0, ddof=1)


def forecast(members, n_steps: int, cfg: ModelConfig) -> np.ndarray:
    """Propagate every member forward; wraps the model integrator."""
    return advance_ensemble(members, n_steps, cfg)


def _analysis_core(
    forecast_members: np.ndarray,
    obs: np.ndarray,
    perturbations: np.ndarray,
    obs_model: ObservationModel,
    tapers,
    inflation: float = 1.0,
) -> np.ndarray:
    """Deterministic part of the update, given pre-drawn perturbations.

    Returns a new (N, K) analysis ensemble; member order is preserved.
    """
    Xf = forecast_members
    n = Xf.shape[0]
    if inflation != 1.0:
        mean = Xf.mean(axis=0)
        Xf = mean + inflation * (Xf - mean)
    o = obs_model.zero_based
    A = Xf - Xf.mean(axis=0)
    Ah = A[:, o]
    PbHt = (A.T @ Ah) / (n - 1)
    S = (Ah.T @ Ah) / (n - 1)
    t_state, t_obs = tapers
    if t_state is not None:
        PbHt = t_state * PbHt
        S = t_obs * S
    C = S + np.diag(np.asarray(obs_model.variances, dtype=float))
    try:
        cf = cho_factor(C, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise AnalysisError(
            "innovation covariance failed to factor", float(np.linalg.cond(C))
        ) from exc
    D = (obs[None, :] + perturbations) - Xf[:, o]
    return Xf + (PbHt @ cho_solve(cf, D.T, check_finite=False)).T


def enkf_analysis(
    forecast_members,
    obs,
    obs_model: ObservationModel,
    loc: LocalizationConfig,
    rng: np.random.Generator,
    inflation: float = 1.0,
) -> np.ndarray:
    """Perturbed-observation analysis update of a forecast ensemble.

    Each member is updated against its own independently perturbed copy of
    the observation vector, drawn from ``rng`` with the observation error
    statistics, so the analysis spread stays statistically consistent.

    Parameters
    ----------
    forecast_members : (N, K) array
        Forecast ensemble, one member per row, N >= 2.
    obs : (m,) array
        Observed values in the order of ``obs_model.indices``.
    obs_model : ObservationModel
    loc : LocalizationConfig
    rng : numpy Generator
        Consumes exactly N x m normal draws.
    inflation : float
        Multiplicative prior-spread factor; the default 1.0 leaves the
        forecast untouched and is the only value used in practice.
    """
    Xf = np.asarray(forecast_members, dtype=float)
    if Xf.ndim != 2 or Xf.shape[0] < 2:
        raise ModelError("need a (N, K) forecast ensemble with N >= 2")
    if Xf.shape[1] != obs_model.K:
        raise ModelError(
            f"ensemble width {Xf.shape[1]} does not match observation ring {obs_model.K}"
        )
    y = np.asarray(obs, dtype=float)
    if y.shape != (obs_model.m,):
        raise ValueError(f"expected {obs_model.m} observed values, got shape {y.shape}")
    pert = rng.normal(0.0, obs_model.error_sd, size=(Xf.shape[0], obs_model.m))
    return _analysis_core(Xf, y, pert, obs_model, make_tapers(obs_model, loc), inflation)
