"""Model tests: tendency oracle cases, RK4 order, kernel equivalence, blow-up."""

import numpy as np
import pytest

from enkc.lorenz96 import (
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

CFG = ModelConfig()


def _kicked():
    # uniform states only decay toward F; a single-grid kick goes chaotic
    x = np.full(40, 8.0)
    x[0] += 0.01
    return x


def test_tendency_fixed_point():
    x = np.full(40, 8.0)
    np.testing.assert_array_equal(tendency(x, CFG), np.zeros(40))


def test_tendency_zero_state():
    np.testing.assert_array_equal(tendency(np.zeros(40), CFG), np.full(40, 8.0))


def test_tendency_hand_case():
    # K=4, F=0, state (1,2,3,4); wraparound evaluated by hand
    cfg = ModelConfig(K=4, F=0.0)
    got = tendency(np.array([1.0, 2.0, 3.0, 4.0]), cfg)
    np.testing.assert_array_equal(got, np.array([-5.0, -3.0, 3.0, -7.0]))


def test_tendency_rejects_bad_states():
    with pytest.raises(ModelError):
        tendency(np.zeros(39), CFG)
    with pytest.raises(ModelError):
        tendency(np.r_[np.zeros(39), np.nan], CFG)


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(K=3)
    with pytest.raises(ValueError):
        ModelConfig(dt=0.0)
    with pytest.raises(ValueError):
        ModelConfig(noise_sd=0.1)


def test_rk4_uniform_state_matches_scalar_polynomial():
    # a uniform state stays uniform and obeys du/dt = F - u; with F=0 one
    # RK4 step is exactly u * (1 - h + h^2/2 - h^3/6 + h^4/24)
    cfg = ModelConfig(K=6, F=0.0, dt=0.05)
    h = cfg.dt
    expected = 1.0 - h + h**2 / 2 - h**3 / 6 + h**4 / 24
    out = rk4_step(np.ones(6), cfg)
    np.testing.assert_allclose(out, np.full(6, expected), rtol=0, atol=1e-15)


def test_rk4_fourth_order_convergence():
    # Richardson: halving dt over a fixed interval shrinks the error ~16x
    x0 = advance_state(_kicked(), 2000, CFG)
    T = 0.2

    def endpoint(dt):
        n = round(T / dt)
        return advance_state(x0, n, ModelConfig(dt=dt))

    ref = endpoint(0.2 / 512)
    e1 = np.max(np.abs(endpoint(0.05) - ref))
    e2 = np.max(np.abs(endpoint(0.025) - ref))
    ratio = e1 / e2
    assert 12.8 < ratio < 19.2, f"convergence ratio {ratio:.2f} not ~16"


def test_integrate_matches_rk4_step_composition_bitwise():
    x = advance_state(_kicked(), 1000, CFG)
    traj = integrate(x, 50, CFG)
    cur = x.copy()
    for i in range(50):
        np.testing.assert_array_equal(traj[i], cur)
        cur = rk4_step(cur, CFG)
    np.testing.assert_array_equal(traj[50], cur)


def test_integrate_shapes_and_identity():
    x = np.full(40, 8.0)
    traj = integrate(x, 0, CFG)
    assert traj.shape == (1, 40)
    np.testing.assert_array_equal(traj[0], x)
    with pytest.raises(ValueError):
        integrate(x, -1, CFG)


def test_ensemble_advance_matches_per_member_bitwise():
    rng = np.random.default_rng(3)
    ens = 8.0 + rng.standard_normal((7, 40))
    batch = advance_ensemble(ens, 25, CFG)
    for i in range(7):
        np.testing.assert_array_equal(batch[i], advance_state(ens[i], 25, CFG))


def test_advance_preserves_input():
    x = _kicked()
    x_copy = x.copy()
    advance_state(x, 10, CFG)
    np.testing.assert_array_equal(x, x_copy)


def test_blowup_reports_step_and_member():
    # uniform states decay toward F, so use a sign-alternating state whose
    # quadratic term dominates and drives the member past the bound
    ens = np.full((3, 40), 8.0)
    ens[1] = 1e4 * (-1.0) ** np.arange(40)
    with pytest.raises(IntegrationError) as info:
        advance_ensemble(ens, 50, CFG)
    assert info.value.step >= 0
    assert 1 in info.value.members


def test_rk4_step_overflow_raises():
    x = 0.5 * BLOWUP_LIMIT * (-1.0) ** np.arange(40)
    with pytest.raises(IntegrationError):
        rk4_step(x, CFG)


def test_long_run_stays_on_attractor():
    x = advance_state(_kicked(), 2000, CFG)
    traj = integrate(x, 100_000, CFG)
    assert np.max(np.abs(traj)) < 25.0
