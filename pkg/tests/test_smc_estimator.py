import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from models.smc_estimator import (ParticleSet, SmcParams, TransitionInputs, adaptive_step, effective_sample_size,
                                  estimate, fit_prior, init_particles, particle_snapshot, propagate, refinement_term,
                                  resample_if_needed, systematic_resample, transition_log_density, transition_mean,
                                  update_weights)
from simulate import static_truth_rmse
from util import ConfigError, make_rng


def _cloud(n=500, v0=100.0, sigma0=0.1):
    params = SmcParams(n_particles=n, v0=v0, sigma0=sigma0)
    return init_particles(params, make_rng(0, 'cloud')), params


def test_prior_draws():
    ps, params = _cloud(n=2000, v0=50.0, sigma0=2.0)
    assert len(ps) == 2000
    assert np.mean(ps.particles) == pytest.approx(50.0, abs=0.2)
    np.testing.assert_allclose(ps.weights, 1.0 / 2000)


def test_default_resampling_threshold_is_half_the_cloud():
    assert SmcParams(n_particles=300).n_thr == 150.0


def test_invalid_params_are_rejected():
    with pytest.raises(ConfigError):
        SmcParams(n_particles=1)
    with pytest.raises(ConfigError):
        SmcParams(sigma_v=0.0)
    with pytest.raises(ConfigError):
        SmcParams(max_step_v=-1.0)


def test_adaptive_step_grows_with_the_distance_to_the_estimate():
    np.testing.assert_allclose(adaptive_step(np.array([10.0, 12.0, 16.0]), 10.0, 0.5), [0.0, 2.0, 18.0])


def test_refinement_term_only_while_latched():
    assert refinement_term(120.0, 100.0, True) == 20.0
    assert refinement_term(120.0, 100.0, False) == 0.0


def test_transition_mean_clips_the_drift():
    params = SmcParams(m0=1.0, max_step_v=2.0)
    inputs = TransitionInputs(slope_est=5.0, u=0.5, v_egmpp=0.0)
    np.testing.assert_allclose(transition_mean(np.array([0.0, 1.0, 10.0]), inputs, params), [0.5, 3.5, 12.5])


def test_transition_inputs_must_be_finite():
    with pytest.raises(ValueError):
        TransitionInputs(slope_est=np.nan, u=0.0, v_egmpp=0.0)


def test_propagation_follows_the_drift():
    ps, params = _cloud(n=4000, v0=100.0, sigma0=0.0)
    inputs = TransitionInputs(slope_est=2.0, u=1.0, v_egmpp=90.0)
    moved = propagate(ps, inputs, params, make_rng(1, 'propagate'))
    expected = 100.0 + params.m0 * 100.0 * 2.0 + 1.0
    assert np.mean(moved.particles) == pytest.approx(expected, abs=4 * params.sigma_w / np.sqrt(4000))
    np.testing.assert_array_equal(moved.weights, ps.weights)


def test_transition_density_peaks_at_the_mean():
    ps, params = _cloud()
    inputs = TransitionInputs(slope_est=0.0, u=0.0, v_egmpp=100.0)
    at_mean = transition_log_density(ps.particles, ps.particles, inputs, params)
    away = transition_log_density(ps.particles + 0.1, ps.particles, inputs, params)
    assert np.all(at_mean > away)


@settings(max_examples=50, deadline=None)
@given(v_measured=st.floats(99.95, 100.05))
def test_weights_are_normalised(v_measured):
    ps, params = _cloud()
    updated = update_weights(ps, v_measured, params)
    assert updated.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(updated.weights >= 0.0)
    assert not updated.collapsed


def test_weights_favour_particles_near_the_measurement():
    params = SmcParams(n_particles=3)
    ps = ParticleSet(particles=np.array([99.99, 100.0, 100.01]), weights=np.full(3, 1 / 3))
    updated = update_weights(ps, 100.0, params)
    assert np.argmax(updated.weights) == 1
    assert updated.weights[0] == pytest.approx(updated.weights[2])


def test_matching_importance_terms_cancel():
    ps, params = _cloud()
    terms = np.linspace(-3.0, 1.0, len(ps))
    plain = update_weights(ps, 100.02, params)
    full = update_weights(ps, 100.02, params, log_transition=terms, log_proposal=terms)
    np.testing.assert_allclose(full.weights, plain.weights, rtol=1e-12)


def test_far_measurement_collapses_to_uniform_weights():
    ps, params = _cloud()
    updated = update_weights(ps, 1e6, params)
    assert updated.collapsed
    np.testing.assert_allclose(updated.weights, 1.0 / len(ps))


def test_effective_sample_size_bounds():
    uniform = ParticleSet(particles=np.zeros(10), weights=np.full(10, 0.1))
    degenerate = ParticleSet(particles=np.zeros(10), weights=np.eye(10)[3])
    assert effective_sample_size(uniform) == pytest.approx(10.0)
    assert effective_sample_size(degenerate) == pytest.approx(1.0)


def test_systematic_resampling_is_unbiased():
    weights = make_rng(0, 'weights').dirichlet(np.ones(20))
    rng = make_rng(0, 'resample')
    counts = np.zeros(20)
    for _ in range(1000):
        counts += np.bincount(systematic_resample(weights, rng), minlength=20)
    expected = 1000 * 20 * weights
    heavy = expected >= 100
    assert np.max(np.abs(counts[heavy] - expected[heavy]) / expected[heavy]) <= 0.10


def test_systematic_resampling_keeps_every_heavy_particle():
    weights = np.array([0.5, 0.25, 0.25, 0.0])
    indices = systematic_resample(weights, make_rng(0, 'resample'))
    assert len(indices) == 4
    assert np.bincount(indices, minlength=4).tolist() == [2, 1, 1, 0]


def test_resampling_only_below_the_threshold():
    ps, params = _cloud()
    assert resample_if_needed(ps, params, make_rng(0, 'r')) is ps
    weights = np.zeros(len(ps))
    weights[:10] = 0.1
    skewed = ParticleSet(particles=ps.particles, weights=weights)
    resampled = resample_if_needed(skewed, params, make_rng(0, 'r'))
    np.testing.assert_allclose(resampled.weights, 1.0 / len(ps))
    assert set(np.unique(resampled.particles)) <= set(ps.particles[:10])


def test_estimate_is_the_weighted_mean():
    ps = ParticleSet(particles=np.array([1.0, 2.0, 4.0]), weights=np.array([0.5, 0.25, 0.25]))
    assert estimate(ps) == pytest.approx(2.0)


def test_prior_fit():
    v0, sigma0 = fit_prior([10.0, 12.0, 14.0])
    assert v0 == pytest.approx(12.0)
    assert sigma0 == pytest.approx(2.0)
    assert fit_prior([5.0]) == (5.0, 0.0)
    with pytest.raises(ValueError):
        fit_prior([])


def test_snapshot_rows():
    ps = ParticleSet(particles=np.array([1.0, 2.0]), weights=np.array([0.25, 0.75]))
    assert particle_snapshot(ps, 0.5) == [{'t': 0.5, 'j': 0, 'v': 1.0, 'w': 0.25},
                                          {'t': 0.5, 'j': 1, 'v': 2.0, 'w': 0.75}]


@pytest.mark.slow
def test_static_truth_is_tracked_below_the_measurement_noise():
    assert static_truth_rmse(seed=0, runs=100) < SmcParams().sigma_v
