"""Lorenz 96 dynamics on a periodic ring, integrated with fixed-step RK4.

The model is dX_k/dt = (X_{k+1} - X_{k-2}) X_{k-1} - X_k + F with cyclic
indexing.  States are 1-d float arrays of length K; ensembles are (N, K)
arrays with one member per row.  The hot loop lives in a numba kernel that
is bit-for-bit identical to the numpy formulation in :func:`tendency`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

BLOWUP_LIMIT = 1e6


class ModelError(ValueError):
    """A state handed to the model is unusable (bad shape or non-finite)."""


class IntegrationError(RuntimeError):
    """Integration produced an unbounded or non-finite state.

    Attributes
    ----------
    step : int
        Index of the step whose result first left the admissible range.
    members : tuple of int
        Rows of the ensemble that went bad (``(0,)`` for single states).
    """

    def __init__(self, step: int, members: tuple[int, ...] = (0,)):
        self.step = step
        self.members = members
        which = f" in member(s) {list(members)}" if members != (0,) else ""
        super().__init__(
            f"integration diverged at step {step}{which}: "
            f"|X| exceeded {BLOWUP_LIMIT:g} or became non-finite"
        )


@dataclass(frozen=True)
class ModelConfig:
    """Grid size, forcing and timestep.

    ``noise_sd`` is kept in the interface for symmetry with the config file
    but additive model noise is not implemented; any nonzero value is
    rejected so a perfect-model assumption cannot be broken silently.
    """

    K: int = 40
    F: float = 8.0
    dt: float = 0.05
    noise_sd: float = 0.0

    def __post_init__(self):
        if self.K < 4:
            raise ValueError(f"K must be at least 4, got {self.K}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.noise_sd != 0.0:
            raise ValueError("additive model noise is not supported, noise_sd must be 0")


def _check_state(state, cfg: ModelConfig) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    if x.shape != (cfg.K,):
        raise ModelError(f"expected state of shape ({cfg.K},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ModelError("state contains non-finite values")
    return x


def _tendency_core(x: np.ndarray, f: float) -> np.ndarray:
    return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + f


def tendency(state, cfg: ModelConfig) -> np.ndarray:
    """Instantaneous time derivative of the ring state."""
    return _tendency_core(_check_state(state, cfg), cfg.F)


def rk4_step(state, cfg: ModelConfig) -> np.ndarray:
    """Advance one classical Runge-Kutta step of length ``cfg.dt``."""
    x = _check_state(state, cfg)
    dt, f = cfg.dt, cfg.F
    k1 = _tendency_core(x, f)
    k2 = _tendency_core(x + 0.5 * dt * k1, f)
    k3 = _tendency_core(x + 0.5 * dt * k2, f)
    k4 = _tendency_core(x + dt * k3, f)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.abs(out) <= BLOWUP_LIMIT):
        raise IntegrationError(0)
    return out


@njit(cache=True)
def _advance_kernel(states, n_steps, f, dt, k1, k2, k3, k4, xs):
    """Advance every row of ``states`` in place by ``n_steps`` RK4 steps.

    Returns -1 on success, else the index of the step whose result first
    violated the bound.  The arithmetic mirrors :func:`rk4_step` exactly,
    including the order of operations, so results are bitwise identical.
    """
    n, kdim = states.shape
    half = 0.5 * dt
    sixth = dt / 6.0
    for step in range(n_steps):
        ok = True
        for i in range(n):
            x = states[i]
            for k in range(kdim):
                kp1 = k + 1 if k + 1 < kdim else k + 1 - kdim
                km1 = k - 1 if k >= 1 else k - 1 + kdim
                km2 = k - 2 if k >= 2 else k - 2 + kdim
                k1[k] = (x[kp1] - x[km2]) * x[km1] - x[k] + f
            for k in range(kdim):
                xs[k] = x[k] + half * k1[k]
            for k in range(kdim):
                kp1 = k + 1 if k + 1 < kdim else k + 1 - kdim
                km1 = k - 1 if k >= 1 else k - 1 + kdim
                km2 = k - 2 if k >= 2 else k - 2 + kdim
                k2[k] = (xs[kp1] - xs[km2]) * xs[km1] - xs[k] + f
            for k in range(kdim):
                xs[k] = x[k] + half * k2[k]
            for k in range(kdim):
                kp1 = k + 1 if k + 1 < kdim else k + 1 - kdim
                km1 = k - 1 if k >= 1 else k - 1 + kdim
                km2 = k - 2 if k >= 2 else k - 2 + kdim
                k3[k] = (xs[kp1] - xs[km2]) * xs[km1] - xs[k] + f
            for k in range(kdim):
                xs[k] = x[k] + dt * k3[k]
            for k in range(kdim):
                kp1 = k + 1 if k + 1 < kdim else k + 1 - kdim
                km1 = k - 1 if k >= 1 else k - 1 + kdim
                km2 = k - 2 if k >= 2 else k - 2 + kdim
                k4[k] = (xs[kp1] - xs[km2]) * xs[km1] - xs[k] + f
            for k in range(kdim):
                v = x[k] + sixth * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
                if not (-BLOWUP_LIMIT <= v <= BLOWUP_LIMIT):
                    ok = False
                x[k] = v
        if not ok:
            return step
    return -1


def _scratch(kdim: int):
    return tuple(np.empty(kdim) for _ in range(5))


def _bad_rows(states: np.ndarray) -> tuple[int, ...]:
    good = np.all(np.abs(states) <= BLOWUP_LIMIT, axis=1)
    return tuple(int(i) for i in np.flatnonzero(~good))


def advance_inplace(states: np.ndarray, n_steps: int, cfg: ModelConfig, step_offset: int = 0):
    """Advance a (N, K) array in place; raises on blow-up.

    ``step_offset`` is added to the failing step index in the error so
    callers running long segmented loops can report absolute positions.
    """
    bad = _advance_kernel(states, n_steps, cfg.F, cfg.dt, *_scratch(states.shape[1]))
    if bad >= 0:
        raise IntegrationError(step_offset + bad, _bad_rows(states))


def advance_state(state, n_steps: int, cfg: ModelConfig) -> np.ndarray:
    """Return the state ``n_steps`` RK4 steps downstream (input untouched)."""
    x = _check_state(state, cfg).copy()
    buf = x.reshape(1, -1)
    bad = _advance_kernel(buf, n_steps, cfg.F, cfg.dt, *_scratch(cfg.K))
    if bad >= 0:
        raise IntegrationError(bad)
    return x


def advance_ensemble(members, n_steps: int, cfg: ModelConfig) -> np.ndarray:
    """Advance every member of a (N, K) ensemble; rows stay in order."""
    ens = np.asarray(members, dtype=float)
    if ens.ndim != 2 or ens.shape[1] != cfg.K:
        raise ModelError(f"expected ensemble of shape (N, {cfg.K}), got {ens.shape}")
    if not np.all(np.isfinite(ens)):
        raise ModelError("ensemble contains non-finite values")
    out = ens.copy()
    bad = _advance_kernel(out, n_steps, cfg.F, cfg.dt, *_scratch(cfg.K))
    if bad >= 0:
        raise IntegrationError(bad, _bad_rows(out))
    return out


@njit(cache=True)
def _record_kernel(state, out, f, dt, k1, k2, k3, k4, xs):
    """Write ``state`` into ``out[i]`` then advance one step, for each row of out.

    After the call ``state`` sits len(out) steps downstream of its input
    value.  Returns -1 or the failing step index, as in _advance_kernel.
    """
    n_steps = out.shape[0]
    buf = state.reshape(1, state.shape[0])
    for step in range(n_steps):
        for k in range(state.shape[0]):
            out[step, k] = state[k]
        bad = _advance_kernel(buf, 1, f, dt, k1, k2, k3, k4, xs)
        if bad >= 0:
            return step
    return -1


def integrate(state, n_steps: int, cfg: ModelConfig) -> np.ndarray:
    """Trajectory of ``n_steps`` RK4 steps, shape (n_steps + 1, K).

    Row 0 is the initial state; row i+1 is :func:`rk4_step` applied to
    row i (the kernel reproduces that map bitwise).
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    x = _check_state(state, cfg).copy()
    out = np.empty((n_steps + 1, cfg.K))
    bad = _record_kernel(x, out[:-1], cfg.F, cfg.dt, *_scratch(cfg.K)) if n_steps else -1
    if bad >= 0:
        raise IntegrationError(bad)
    out[-1] = x
    return out
