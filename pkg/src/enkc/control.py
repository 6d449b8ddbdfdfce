"""Control perturbations from an ensemble smoother, with sparsification.

Each intervention works on the current analysis ensemble and an extended
("horizon") forecast of it.  Grid points whose horizon ensemble mean
exceeds a trigger threshold receive pseudo-observations at a reference
value; a smoother gain built from the cross covariance between analysis
anomalies now and horizon anomalies at the triggered points maps the
pseudo-innovations back to a state-space perturbation.  That perturbation
is then optionally sparsified (boxcar localization of the gain, magnitude
thresholding, or a random support of fixed size) and applied additively
to both the true state and every ensemble member.

Pseudo-observation error variance is either a fixed value or, with AOEI
enabled, inflated adaptively: variance = max(base, innovation^2 - spread),
which damps interventions the ensemble cannot justify.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .enkf import AnalysisError, _distance_matrix
from .lorenz96 import ModelConfig, advance_ensemble


@dataclass(frozen=True)
class ControlLocalization:
    """Boxcar taper on the control gain: weight 1 iff ring distance < L_c.

    By default only the state-by-observation cross term is masked; masking
    the observation-space term as well is available behind a switch but is
    not part of the standard setup.
    """

    L_c: int
    localize_innovation_term: bool = False

    def __post_init__(self):
        if self.L_c < 1:
            raise ValueError(f"L_c must be at least 1, got {self.L_c}")


@dataclass(frozen=True)
class Thresholding:
    """Zero every perturbation entry smaller than lambda_frac * max |entry|."""

    lambda_frac: float

    def __post_init__(self):
        if not 0.0 < self.lambda_frac <= 1.0:
            raise ValueError(f"lambda_frac must lie in (0, 1], got {self.lambda_frac}")


@dataclass(frozen=True)
class RandomSelection:
    """Keep the perturbation on n_L uniformly drawn grid points, zero the rest."""

    n_L: int

    def __post_init__(self):
        if self.n_L < 1:
            raise ValueError(f"n_L must be at least 1, got {self.n_L}")


Sparsifier = Optional[Union[ControlLocalization, Thresholding, RandomSelection]]


@dataclass(frozen=True)
class ControlProblem:
    """Everything the per-cycle control step needs besides the ensembles.

    Parameters
    ----------
    horizon_steps : int
        Length of the extended forecast, in model steps.
    trigger_threshold : float
        Grid points whose horizon ensemble mean exceeds this trigger.
    reference_value : float
        Pseudo-observation value assigned at triggered points.
    weight_sd : float
        Pseudo-observation error standard deviation; its square is the
        control weight (the variance floor, when AOEI is on).
    aoei : bool
        Inflate the pseudo-observation variance adaptively per trigger.
    sparsifier :
        None, ControlLocalization, Thresholding or RandomSelection.
    min_trigger_grids : int
        Intervene only when at least this many points trigger.
    """

    horizon_steps: int = 4
    trigger_threshold: float = 12.0
    reference_value: float = 12.0
    weight_sd: float = 0.1
    aoei: bool = False
    sparsifier: Sparsifier = None
    min_trigger_grids: int = 1

    def __post_init__(self):
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be at least 1")
        if not self.weight_sd > 0:
            raise ValueError("weight_sd must be positive")
        if self.min_trigger_grids < 1:
            raise ValueError("min_trigger_grids must be at least 1")

    @property
    def base_variance(self) -> float:
        return self.weight_sd * self.weight_sd


@dataclass(frozen=True)
class ControlOutcome:
    """What one control step decided: trigger set and variances actually used.

    ``trigger_grids`` holds 1-based ring labels, empty when no intervention
    took place; ``rc_variances`` aligns with it.
    """

    trigger_grids: tuple[int, ...]
    rc_variances: tuple[float, ...]

    @property
    def intervened(self) -> bool:
        return len(self.trigger_grids) > 0


def extended_forecast(analysis_members, horizon_steps: int, cfg: ModelConfig) -> np.ndarray:
    """Free-run every analysis member to the control horizon."""
    return advance_ensemble(analysis_members, horizon_steps, cfg)


def detect_trigger(horizon_mean, threshold: float) -> np.ndarray:
    """1-based labels of grid points strictly above the threshold, ascending."""
    hm = np.asarray(horizon_mean, dtype=float)
    return np.flatnonzero(hm > threshold).astype(np.intp) + 1


def aoei_variances(innovations, horizon_variances, base_variance: float) -> np.ndarray:
    """Adaptively inflated pseudo-observation variances, elementwise.

    Where the squared innovation exceeds the ensemble variance of the
    projected horizon state, the excess becomes the variance; otherwise
    the base value applies.
    """
    d = np.asarray(innovations, dtype=float)
    v = np.asarray(horizon_variances, dtype=float)
    if d.shape != v.shape:
        raise ValueError("innovations and variances must align")
    return np.maximum(base_variance, d * d - v)


def control_gain(
    analysis_members: np.ndarray,
    horizon_members: np.ndarray,
    trigger_grids: np.ndarray,
    rc_variances: np.ndarray,
    sparsifier: Sparsifier = None,
) -> np.ndarray:
    """Smoother gain mapping pseudo-innovations at the horizon to a state perturbation.

    The cross term pairs analysis anomalies at the current time with
    horizon anomalies at the triggered points; the innovation covariance
    lives entirely at the triggered points.  Returns a (K, m_c) matrix.
    """
    trig0 = np.asarray(trigger_grids, dtype=np.intp) - 1
    if trig0.size == 0:
        raise ValueError("control_gain called with an empty trigger set")
    Xa = np.asarray(analysis_members, dtype=float)
    Xh = np.asarray(horizon_members, dtype=float)
    if Xa.shape != Xh.shape:
        raise ValueError("analysis and horizon ensembles must have the same shape")
    n, kdim = Xa.shape
    A = Xa - Xa.mean(axis=0)
    Ah = (Xh - Xh.mean(axis=0))[:, trig0]
    cross = (A.T @ Ah) / (n - 1)
    S = (Ah.T @ Ah) / (n - 1)
    if isinstance(sparsifier, ControlLocalization):
        d = _distance_matrix(np.arange(kdim, dtype=np.intp), trig0, kdim)
        cross = np.where(d < sparsifier.L_c, cross, 0.0)
        if sparsifier.localize_innovation_term:
            dm = _distance_matrix(trig0, trig0, kdim)
            S = np.where(dm < sparsifier.L_c, S, 0.0)
    C = S + np.diag(np.asarray(rc_variances, dtype=float))
    try:
        cf = cho_factor(C, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise AnalysisError(
            "pseudo-observation covariance failed to factor", float(np.linalg.cond(C))
        ) from exc
    return cho_solve(cf, cross.T, check_finite=False).T


def compute_perturbation(gain: np.ndarray, horizon_mean_at_trigger, reference_value) -> np.ndarray:
    """gain @ (reference - horizon mean), the raw additive perturbation."""
    hm = np.asarray(horizon_mean_at_trigger, dtype=float)
    return gain @ (np.asarray(reference_value, dtype=float) - hm)


def threshold_sparsify(delta, lambda_frac: float) -> np.ndarray:
    """Zero entries with |delta| < lambda_frac * max |delta| (strict).

    lambda_frac = 1 keeps exactly the maximal-magnitude entries; an
    all-zero input passes through unchanged.
    """
    if not 0.0 < lambda_frac <= 1.0:
        raise ValueError(f"lambda_frac must lie in (0, 1], got {lambda_frac}")
    d = np.asarray(delta, dtype=float)
    tau = lambda_frac * np.max(np.abs(d))
    return np.where(np.abs(d) < tau, 0.0, d)


def random_sparsify(delta, n_L: int, rng: np.random.Generator) -> np.ndarray:
    """Keep delta on a uniformly chosen set of n_L grid points, zero elsewhere.

    The support is drawn fresh on every call, independent of where the
    perturbation is large.  Consumes exactly one choice of n_L points
    from ``rng``.
    """
    d = np.asarray(delta, dtype=float)
    if not 1 <= n_L <= d.size:
        raise ValueError(f"n_L must lie in 1..{d.size}, got {n_L}")
    keep = rng.choice(d.size, size=n_L, replace=False)
    out = np.zeros_like(d)
    out[keep] = d[keep]
    return out


def apply_perturbation(nature, members, delta):
    """Add the same perturbation to the true state and every member.

    Returns new arrays; ensemble anomalies are untouched because every
    member shifts by the identical vector.
    """
    d = np.asarray(delta, dtype=float)
    return np.asarray(nature, dtype=float) + d, np.asarray(members, dtype=float) + d


def control_perturbation(
    analysis_members,
    horizon_members,
    problem: ControlProblem,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, ControlOutcome]:
    """Run one full control step: trigger, gain, perturbation, sparsify.

    Returns ``(delta, outcome)`` where delta has state shape and is exactly
    zero when fewer than ``min_trigger_grids`` points trigger.  ``rng`` is
    only consulted for RandomSelection, one support draw per intervention.
    """
    Xa = np.asarray(analysis_members, dtype=float)
    Xh = np.asarray(horizon_members, dtype=float)
    hmean = Xh.mean(axis=0)
    trig = detect_trigger(hmean, problem.trigger_threshold)
    if trig.size < problem.min_trigger_grids:
        return np.zeros(Xa.shape[1]), ControlOutcome((), ())
    trig0 = trig - 1
    innov = problem.reference_value - hmean[trig0]
    if problem.aoei:
        spread = Xh[:, trig0].var(axis=0, ddof=1)
        rc = aoei_variances(innov, spread, problem.base_variance)
    else:
        rc = np.full(trig.size, problem.base_variance)
    gain = control_gain(Xa, Xh, trig, rc, problem.sparsifier)
    delta = gain @ innov
    if isinstance(problem.sparsifier, Thresholding):
        delta = threshold_sparsify(delta, problem.sparsifier.lambda_frac)
    elif isinstance(problem.sparsifier, RandomSelection):
        if rng is None:
            raise ValueError("RandomSelection needs an rng")
        delta = random_sparsify(delta, problem.sparsifier.n_L, rng)
    outcome = ControlOutcome(tuple(int(g) for g in trig), tuple(float(v) for v in rc))
    return delta, outcome
