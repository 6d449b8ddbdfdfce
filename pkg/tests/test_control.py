"""Control-perturbation tests: triggering, gain oracles, sparsifiers, AOEI."""

import numpy as np
import pytest
from scipy import stats

import reference
from enkc.control import (
    ControlLocalization,
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


def test_sparsifier_validation():
    with pytest.raises(ValueError):
        ControlLocalization(L_c=0)
    with pytest.raises(ValueError):
        Thresholding(lambda_frac=0.0)
    with pytest.raises(ValueError):
        Thresholding(lambda_frac=1.5)
    with pytest.raises(ValueError):
        RandomSelection(n_L=0)


def test_control_problem_defaults():
    ctl = ControlProblem()
    assert ctl.horizon_steps == 4
    assert ctl.trigger_threshold == 12.0
    assert ctl.reference_value == 12.0
    assert ctl.base_variance == pytest.approx(0.01)
    assert not ctl.aoei
    with pytest.raises(ValueError):
        ControlProblem(horizon_steps=0)
    with pytest.raises(ValueError):
        ControlProblem(weight_sd=0.0)
    with pytest.raises(ValueError):
        ControlProblem(min_trigger_grids=0)


def test_detect_trigger_cases():
    hm = np.full(40, 5.0)
    assert detect_trigger(hm, 12.0).size == 0
    hm[6] = 13.1
    hm[7] = 12.5
    np.testing.assert_array_equal(detect_trigger(hm, 12.0), [7, 8])
    # the threshold itself does not trigger: exceedance is strict
    hm = np.full(40, 12.0)
    assert detect_trigger(hm, 12.0).size == 0
    hm[0] = 12.0 + 1e-9
    np.testing.assert_array_equal(detect_trigger(hm, 12.0), [1])


def test_threshold_sparsify_hand_cases():
    delta = np.array([0.1, -0.4, 0.3, 0.0, -0.05])
    out = threshold_sparsify(delta, 0.5)
    np.testing.assert_array_equal(out, [0.0, -0.4, 0.3, 0.0, 0.0])
    # an entry sitting exactly at the cut survives (strict inequality zeroes)
    out = threshold_sparsify(np.array([0.2, -0.4]), 0.5)
    np.testing.assert_array_equal(out, [0.2, -0.4])
    # lambda = 1 keeps only the extreme entries
    out = threshold_sparsify(np.array([0.1, -0.4, 0.4]), 1.0)
    np.testing.assert_array_equal(out, [0.0, -0.4, 0.4])
    # all-zero input passes through untouched
    out = threshold_sparsify(np.zeros(5), 0.5)
    np.testing.assert_array_equal(out, np.zeros(5))
    with pytest.raises(ValueError):
        threshold_sparsify(delta, 0.0)


def test_threshold_matches_reference():
    rng = np.random.default_rng(3)
    delta = rng.normal(0, 1, 40)
    for lam in (0.25, 0.5, 0.75, 1.0):
        np.testing.assert_array_equal(
            threshold_sparsify(delta, lam), reference.dense_threshold(delta, lam)
        )


def test_threshold_support_monotone():
    rng = np.random.default_rng(3)
    delta = rng.normal(0, 1, 40)
    supports = []
    for lam in (0.25, 0.5, 0.75, 1.0):
        out = threshold_sparsify(delta, lam)
        supports.append(int(np.count_nonzero(out)))
        np.testing.assert_array_equal(out[out != 0], delta[out != 0])
    assert supports == sorted(supports, reverse=True)
    assert supports[-1] >= 1


def test_random_sparsify_identity_and_support():
    rng = np.random.default_rng(0)
    delta = np.arange(1.0, 41.0)
    out = random_sparsify(delta, 40, rng)
    np.testing.assert_array_equal(out, delta)
    with pytest.raises(ValueError):
        random_sparsify(delta, 41, rng)
    for n_L in (1, 3, 9, 19):
        out = random_sparsify(delta, n_L, rng)
        assert np.count_nonzero(out) == n_L
        kept = out != 0
        np.testing.assert_array_equal(out[kept], delta[kept])


def test_random_sparsify_uniformity():
    # each grid should be kept with probability n_L / K; a chi-square test
    # over 10^4 draws at the 99.9% point keeps false alarms rare
    rng = np.random.default_rng(7)
    delta = np.ones(40)
    counts = np.zeros(40)
    trials = 10_000
    for _ in range(trials):
        counts += random_sparsify(delta, 3, rng) != 0
    expected = trials * 3 / 40
    chi2 = np.sum((counts - expected) ** 2 / expected)
    assert chi2 < stats.chi2.ppf(0.999, df=39)


def test_aoei_hand_cases():
    # innovation 2.0, ensemble variance 1.0, floor 0.01: inflated to 3.0
    out = aoei_variances(np.array([2.0]), np.array([1.0]), 0.01)
    np.testing.assert_allclose(out, [3.0])
    # small innovation keeps the floor
    out = aoei_variances(np.array([0.05]), np.array([1.0]), 0.01)
    np.testing.assert_allclose(out, [0.01])
    out = aoei_variances(np.array([2.0, 0.05]), np.array([1.0, 1.0]), 0.01)
    np.testing.assert_allclose(out, [3.0, 0.01])
    assert np.all(out >= 0.01)
    # the sign of the innovation is irrelevant
    got = aoei_variances(np.array([-3.0]), np.array([4.0]), 0.25)
    np.testing.assert_allclose(got, [5.0])
    with pytest.raises(ValueError):
        aoei_variances(np.array([1.0, 2.0]), np.array([1.0]), 0.01)


def test_aoei_matches_reference():
    rng = np.random.default_rng(11)
    innov = rng.normal(0, 2, 6)
    var = rng.uniform(0.1, 3.0, 6)
    got = aoei_variances(innov, var, 0.01)
    want = reference.dense_aoei_variances(innov, var, 0.01)
    np.testing.assert_array_equal(got, want)


def _random_pair(rng, K, n, spread=1.0):
    analysis = rng.normal(0, spread, (n, K)) + rng.normal(0, 2)
    horizon = analysis + rng.normal(0, 0.5 * spread, (n, K))
    return analysis, horizon


def test_control_gain_dense_oracle():
    for seed in range(8):
        rng = np.random.default_rng(100 + seed)
        K = int(rng.integers(5, 10))
        n = int(rng.integers(3, 7))
        analysis, horizon = _random_pair(rng, K, n)
        n_trig = int(rng.integers(1, 4))
        trig0 = np.sort(rng.choice(K, size=n_trig, replace=False))
        trig = trig0 + 1
        rc = rng.uniform(0.01, 2.0, n_trig)
        spars = None
        loc_inno = False
        if seed % 3 == 1:
            loc_inno = seed % 2 == 0
            spars = ControlLocalization(L_c=2, localize_innovation_term=loc_inno)
        got = control_gain(analysis, horizon, trig, rc, spars)
        want = reference.dense_control_gain(
            analysis, horizon, trig0, rc,
            2 if spars is not None else None, loc_inno,
        )
        assert got.shape == (K, n_trig)
        assert np.max(np.abs(got - want)) < 1e-12


def test_control_gain_single_trigger_geometry():
    # K=6, one triggered grid at label 1, L_c=2: support is grids 6, 1, 2
    rng = np.random.default_rng(21)
    analysis, horizon = _random_pair(rng, 6, 3)
    gain = control_gain(analysis, horizon, np.array([1]), np.array([0.01]),
                        ControlLocalization(L_c=2))
    assert gain.shape == (6, 1)
    np.testing.assert_array_equal(gain[2:5, 0], np.zeros(3))
    assert np.all(gain[[0, 1, 5], 0] != 0.0)


def test_control_gain_rejects_empty_trigger():
    rng = np.random.default_rng(22)
    analysis, horizon = _random_pair(rng, 6, 3)
    with pytest.raises(ValueError):
        control_gain(analysis, horizon, np.array([], dtype=int), np.array([]))


def test_zero_spread_gain_is_zero():
    analysis = np.tile(np.linspace(0, 5, 6), (4, 1))
    horizon = np.tile(np.linspace(1, 6, 6), (4, 1))
    gain = control_gain(analysis, horizon, np.array([2]), np.array([0.01]))
    np.testing.assert_array_equal(gain, np.zeros((6, 1)))


def test_rc_monotone_damping():
    # larger assigned variance shrinks the gain for a single trigger
    rng = np.random.default_rng(33)
    analysis, horizon = _random_pair(rng, 8, 5)
    norms = []
    for rc in (0.01, 0.1, 1.0, 10.0):
        gain = control_gain(analysis, horizon, np.array([3]), np.array([rc]))
        norms.append(float(np.linalg.norm(gain)))
    assert norms == sorted(norms, reverse=True)


def test_huge_rc_kills_delta():
    rng = np.random.default_rng(34)
    analysis, horizon = _random_pair(rng, 8, 5)
    gain = control_gain(analysis, horizon, np.array([3, 6]),
                        np.array([1e12, 1e12]))
    hm = horizon.mean(axis=0)
    delta = compute_perturbation(gain, hm[[2, 5]], 12.0)
    assert np.max(np.abs(delta)) < 1e-6


def test_control_loc_wide_equals_unlocalized():
    # on a 40-ring the largest distance is 20, so a cap of 21 keeps every
    # pair (strict cutoff); a cap of 20 already drops the antipode
    rng = np.random.default_rng(55)
    analysis, horizon = _random_pair(rng, 40, 10)
    trig = np.array([5, 17])
    rc = np.array([0.01, 0.02])
    plain = control_gain(analysis, horizon, trig, rc, None)
    wide = control_gain(analysis, horizon, trig, rc, ControlLocalization(L_c=21))
    np.testing.assert_array_equal(wide, plain)
    clipped = control_gain(analysis, horizon, trig, rc, ControlLocalization(L_c=20))
    assert np.any(clipped != plain)


def test_control_loc_support_width():
    rng = np.random.default_rng(56)
    analysis, horizon = _random_pair(rng, 40, 10)
    for L_c in (1, 2, 5, 10):
        gain = control_gain(analysis, horizon, np.array([20]), np.array([0.01]),
                            ControlLocalization(L_c=L_c))
        assert np.count_nonzero(gain[:, 0]) == 2 * L_c - 1


def test_compute_perturbation_cases():
    gain = np.array([[2.0], [0.5], [-1.0]])
    delta = compute_perturbation(gain, np.array([13.0]), 12.0)
    np.testing.assert_allclose(delta, [-2.0, -0.5, 1.0])
    delta = compute_perturbation(np.zeros((3, 1)), np.array([15.0]), 12.0)
    np.testing.assert_array_equal(delta, np.zeros(3))
    # two triggered points combine linearly
    gain = np.array([[1.0, 2.0], [0.0, -1.0]])
    delta = compute_perturbation(gain, np.array([13.0, 14.0]), 12.0)
    np.testing.assert_allclose(delta, [-5.0, 2.0])


def test_apply_perturbation_shifts_everything():
    rng = np.random.default_rng(4)
    nature = rng.normal(0, 1, 6)
    ens = rng.normal(0, 1, (3, 6))
    delta = np.array([0.5, 0.0, -0.25, 0.0, 0.0, 1.0])
    nat2, ens2 = apply_perturbation(nature, ens, delta)
    np.testing.assert_array_equal(nat2, nature + delta)
    np.testing.assert_array_equal(ens2, ens + delta)
    # inputs untouched, anomalies preserved to rounding
    np.testing.assert_allclose(ens2 - ens2.mean(axis=0), ens - ens.mean(axis=0),
                               rtol=0, atol=1e-13)
    assert nat2 is not nature and ens2 is not ens


def test_extended_forecast_matches_fixture(attractor_pair):
    ens, horizon, model = attractor_pair
    got = extended_forecast(ens, 4, model)
    np.testing.assert_array_equal(got, horizon)


def _threshold_for(horizon, count):
    """A trigger threshold that the horizon mean exceeds at `count` grids."""
    hm = np.sort(horizon.mean(axis=0))[::-1]
    return float(0.5 * (hm[count - 1] + hm[count]))


def test_full_pipeline_dense_oracle(attractor_pair):
    # end-to-end delta against the spelled-out reference on real dynamics
    ens, horizon, _ = attractor_pair
    thr = _threshold_for(horizon, 3)
    cases = [
        dict(aoei=False, sparsifier=None),
        dict(aoei=True, sparsifier=None),
        dict(aoei=False, sparsifier=ControlLocalization(L_c=2)),
        dict(aoei=True, sparsifier=Thresholding(lambda_frac=0.5)),
    ]
    for case in cases:
        problem = ControlProblem(trigger_threshold=thr, reference_value=thr, **case)
        delta, outcome = control_perturbation(ens, horizon, problem)
        assert outcome.intervened
        assert len(outcome.trigger_grids) == 3
        spars = case["sparsifier"]
        want = reference.dense_control_delta(
            ens, horizon, thr, thr, problem.base_variance,
            aoei=case["aoei"],
            L_c=spars.L_c if isinstance(spars, ControlLocalization) else None,
            lambda_frac=spars.lambda_frac if isinstance(spars, Thresholding) else None,
        )
        assert np.max(np.abs(delta - want)) < 1e-12


def test_full_pipeline_random_selection(attractor_pair):
    ens, horizon, _ = attractor_pair
    thr = _threshold_for(horizon, 2)
    problem = ControlProblem(trigger_threshold=thr, reference_value=thr,
                             sparsifier=RandomSelection(n_L=5))
    delta, outcome = control_perturbation(ens, horizon, problem,
                                          rng=np.random.default_rng(77))
    assert outcome.intervened
    assert np.count_nonzero(delta) <= 5
    # replay the same support with the reference pipeline
    keep = np.random.default_rng(77).choice(40, size=5, replace=False)
    want = reference.dense_control_delta(ens, horizon, thr, thr,
                                         problem.base_variance, keep=keep)
    assert np.max(np.abs(delta - want)) < 1e-12
    with pytest.raises(ValueError):
        control_perturbation(ens, horizon, problem, rng=None)


def test_no_trigger_yields_zero_delta(attractor_pair):
    ens, horizon, _ = attractor_pair
    problem = ControlProblem(trigger_threshold=1e9)
    delta, outcome = control_perturbation(ens, horizon, problem)
    np.testing.assert_array_equal(delta, np.zeros(40))
    assert not outcome.intervened
    assert outcome.trigger_grids == ()
    assert outcome.rc_variances == ()


def test_min_trigger_grids_gate(attractor_pair):
    ens, horizon, _ = attractor_pair
    thr = _threshold_for(horizon, 2)
    gated = ControlProblem(trigger_threshold=thr, min_trigger_grids=3)
    delta, outcome = control_perturbation(ens, horizon, gated)
    assert not outcome.intervened
    np.testing.assert_array_equal(delta, np.zeros(40))
    open_ = ControlProblem(trigger_threshold=thr, min_trigger_grids=2)
    delta, outcome = control_perturbation(ens, horizon, open_)
    assert outcome.intervened


def test_perturbation_pushes_horizon_down(attractor_pair):
    # the control step should reduce the horizon-mean exceedance it targets
    ens, horizon, model = attractor_pair
    thr = _threshold_for(horizon, 2)
    problem = ControlProblem(trigger_threshold=thr, reference_value=thr)
    delta, outcome = control_perturbation(ens, horizon, problem)
    trig0 = np.array(outcome.trigger_grids) - 1
    before = horizon.mean(axis=0)[trig0]
    shifted = extended_forecast(ens + delta, 4, model)
    after = shifted.mean(axis=0)[trig0]
    assert np.all(after < before)


def test_aoei_outcome_variances(attractor_pair):
    ens, horizon, _ = attractor_pair
    thr = _threshold_for(horizon, 3)
    problem = ControlProblem(trigger_threshold=thr, reference_value=thr, aoei=True)
    _, outcome = control_perturbation(ens, horizon, problem)
    trig0 = np.array(outcome.trigger_grids) - 1
    innov = thr - horizon.mean(axis=0)[trig0]
    spread = horizon[:, trig0].var(axis=0, ddof=1)
    want = np.maximum(problem.base_variance, innov**2 - spread)
    np.testing.assert_allclose(np.array(outcome.rc_variances), want, rtol=0, atol=0)
    assert all(v >= problem.base_variance for v in outcome.rc_variances)
