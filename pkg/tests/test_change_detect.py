import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calibrate import default_fault_model, median_detection_delay, order_check_model, verify_run_length
from models.change_detect import (ArModel, GllrParams, GllrState, ThresholdState, ar_cross_validate_nrmse,
                                  calibrate_difference_threshold, calibrate_threshold, detection_delays, fit_ar,
                                  gllr_increment, gllr_increments, gllr_step, is_stable, reset_after_alarm,
                                  run_lengths, simulate_detectors, synth_fault_signal, threshold_step)
from util import ConfigError, InsufficientSamples, UnstableModel, make_rng


def test_increment_of_a_single_unit_sample():
    params = GllrParams(b=1.0, sigma_nu=1.0, p=5)
    # z = (0, 0, 0, 0, 0, 0, 1): ||z|| = 1
    assert gllr_increment(1.0, [0.0] * 5, params) == pytest.approx(0.5)
    # z = (0, ..., 0, -1/sqrt(2), 0)
    assert gllr_increment(0.0, [0.0] * 5, params) == pytest.approx(1 / np.sqrt(2) - 0.5)


def test_increment_needs_a_full_window():
    with pytest.raises(ValueError):
        gllr_increment(1.0, [0.0] * 3, GllrParams(p=5))


def test_vectorised_increments_match_the_scalar_form():
    params = GllrParams(b=0.7, sigma_nu=2.0, p=5)
    stream = make_rng(3, 'increments').normal(0.0, 2.0, size=40)
    batch = gllr_increments(stream[None, :], params)[0]
    scalar = [gllr_increment(stream[t], stream[t - 5:t], params) for t in range(5, 40)]
    np.testing.assert_allclose(batch, scalar, rtol=1e-12, atol=1e-12)


def test_statistic_stays_at_zero_during_warm_up():
    params = GllrParams(h=1e9, p=5)
    state = GllrState()
    for value in [3.0, -2.0, 5.0, 1.0, 0.5]:
        state, alarm = gllr_step(state, value, params)
        assert state.g == 0.0 and not alarm
    state, _ = gllr_step(state, 4.0, params)
    assert state.g > 0.0
    assert len(state.window) == 5


def test_zero_threshold_alarms_immediately():
    _, alarm = gllr_step(GllrState(), 0.0, GllrParams(h=0.0))
    assert alarm


@settings(max_examples=50, deadline=None)
@given(values=st.lists(st.floats(-50.0, 50.0), min_size=1, max_size=30))
def test_statistic_is_never_negative(values):
    params = GllrParams(h=1e9, b=3.0, p=2)
    state = GllrState()
    for value in values:
        state, _ = gllr_step(state, value, params)
        assert state.g >= 0.0


def test_rebaseline_uses_the_first_k_samples():
    params = GllrParams(k_rebaseline=4)
    state = GllrState(g=12.0, window=(1.0, 2.0), t=30)
    fresh = reset_after_alarm(state, [10.0, 12.0, 14.0, 16.0, 100.0], params)
    assert fresh.nominal_power == pytest.approx(13.0)
    assert fresh.g == 0.0 and fresh.window == ()
    assert fresh.t_started == 30


def test_rebaseline_needs_k_samples():
    with pytest.raises(InsufficientSamples):
        reset_after_alarm(GllrState(), [1.0, 2.0], GllrParams(k_rebaseline=20))


def test_invalid_params_are_rejected():
    with pytest.raises(ConfigError):
        GllrParams(b=0.0)
    with pytest.raises(ConfigError):
        GllrParams(sigma_nu=-1.0)
    with pytest.raises(ConfigError):
        GllrParams(h=-1.0)


def test_difference_rule():
    state, alarm = threshold_step(ThresholdState(), 100.0, 5.0)
    assert not alarm
    state, alarm = threshold_step(state, 103.0, 5.0)
    assert not alarm
    state, alarm = threshold_step(state, 97.0, 5.0)
    assert alarm
    assert state.t == 3


def test_run_lengths_with_censoring():
    paths = np.array([[0.0, 1.0, 5.0], [0.0, 0.0, 0.0]])
    np.testing.assert_array_equal(run_lengths(2.0, paths), [3.0, 3.0])
    np.testing.assert_array_equal(run_lengths(1.0, paths), [2.0, 3.0])


def test_calibration_is_deterministic():
    first = calibrate_threshold(1.0, 1.0, 5.0, 20.0, 100, rng_seed=11)
    second = calibrate_threshold(1.0, 1.0, 5.0, 20.0, 100, rng_seed=11)
    assert first == second


def test_calibration_needs_enough_runs():
    with pytest.raises(ValueError):
        calibrate_threshold(1.0, 1.0, 20.0, 20.0, 10, rng_seed=0)


def test_threshold_grows_with_the_false_alarm_period():
    short = calibrate_threshold(1.0, 1.0, 5.0, 20.0, 200, rng_seed=0)
    long = calibrate_threshold(1.0, 1.0, 20.0, 20.0, 200, rng_seed=0)
    assert long > short


def test_difference_threshold_scales_with_the_noise():
    unit = calibrate_difference_threshold(1.0, 10.0, 20.0, 200, rng_seed=0)
    assert unit > 2.0
    assert calibrate_difference_threshold(3.0, 10.0, 20.0, 200, rng_seed=0) == pytest.approx(3 * unit, rel=1e-9)


@pytest.mark.slow
def test_calibrated_threshold_meets_the_false_alarm_period():
    h = calibrate_threshold(1.0, 1.0, 20.0, 20.0, 500, rng_seed=0)
    params = GllrParams(b=1.0, h=h, sigma_nu=1.0, gamma=20.0, f_s=20.0)
    assert abs(verify_run_length(params, 500, seed=1) - 400.0) <= 120.0


@pytest.mark.slow
def test_three_sigma_fault_is_detected_quickly():
    h = calibrate_threshold(1.0, 1.0, 20.0, 20.0, 500, rng_seed=0)
    params = GllrParams(b=1.0, h=h, sigma_nu=1.0, gamma=20.0, f_s=20.0)
    assert median_detection_delay(params, default_fault_model(1.0), 200, seed=0) < 25


def test_alarm_on_the_onset_sample_has_zero_delay():
    params = GllrParams(b=1.0, h=50.0, sigma_nu=1.0, p=5)
    streams = np.zeros((2, 150))
    streams[0, 100:] = 100.0
    streams[1, 103:] = 100.0
    np.testing.assert_array_equal(detection_delays(streams, 100, params), [0.0, 3.0])


def test_strong_step_is_caught_by_both_detectors():
    params = GllrParams(b=1.0, h=1000.0, sigma_nu=1.0, k_rebaseline=5)
    power = make_rng(0, 'step').normal(0.0, 1.0, size=200)
    power[100:] += 40.0
    result = simulate_detectors(power, 100, params, h1=10.0)
    first, count = result['gllr']
    assert first is not None and 100 <= first < 110 and count >= 1
    first, count = result['threshold']
    assert first == 100 and count >= 1


def test_ar_fit_recovers_a_first_order_coefficient():
    signal = synth_fault_signal(ArModel(coeffs=(0.6,), mean=2.0, innovation_var=1.0), 5000, 0)
    model = fit_ar(signal, 1)
    assert model.coeffs[0] == pytest.approx(0.6, abs=0.05)
    assert model.mean == pytest.approx(2.0, abs=0.2)
    assert model.innovation_var == pytest.approx(1.0, rel=0.1)


def test_ar_fit_of_a_constant_signal():
    model = fit_ar([3.0] * 100, 2)
    assert model.coeffs == (0.0, 0.0)
    assert model.innovation_var == 0.0


def test_ar_fit_needs_enough_samples():
    with pytest.raises(InsufficientSamples):
        fit_ar(np.arange(20.0), 5)


def test_higher_order_predicts_a_lag_five_process_better():
    signal = synth_fault_signal(order_check_model(), 2000, 0)
    nrmse = dict(ar_cross_validate_nrmse(signal, [1, 5]))
    assert nrmse[5] < nrmse[1]


def test_stability():
    assert is_stable(ArModel(coeffs=(0.5,), mean=0.0, innovation_var=1.0))
    assert is_stable(default_fault_model(1.0))
    assert not is_stable(ArModel(coeffs=(1.2,), mean=0.0, innovation_var=1.0))


def test_unstable_model_cannot_be_simulated():
    with pytest.raises(UnstableModel):
        synth_fault_signal(ArModel(coeffs=(0.5, 0.6), mean=0.0, innovation_var=1.0), 100, 0)


def test_fault_signal_is_reproducible():
    model = default_fault_model(2.0)
    np.testing.assert_array_equal(synth_fault_signal(model, 50, 4), synth_fault_signal(model, 50, 4))
    assert synth_fault_signal(model, 50, 4, sigma_nu=1.0).shape == (50,)
