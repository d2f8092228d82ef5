import logging
from dataclasses import dataclass

import numpy as np

from util import ConfigError, as_rng

logger = logging.getLogger(__name__)

_LOG_TINY = np.log(np.finfo(float).tiny)


@dataclass(frozen=True)
class SmcParams:
    """
    Sequential Monte Carlo settings of the reference-voltage estimator.
    n_thr defaults to N/2; max_step_v (None = unbounded) clips the drift m(t) * dP/dV.
    """
    n_particles: int = 500
    m0: float = 1e-2
    sigma_w: float = np.sqrt(1e-3)
    sigma_v: float = np.sqrt(1e-5)
    v0: float = 0.0
    sigma0: float = 1.0
    n_thr: float = None
    max_step_v: float = None

    def __post_init__(self):
        if int(self.n_particles) < 2:
            raise ConfigError('n_particles must be >= 2, got %r' % self.n_particles)
        if self.sigma_w <= 0 or self.sigma_v <= 0 or self.sigma0 < 0:
            raise ConfigError('SMC noise standard deviations must be positive')
        if self.n_thr is None:
            object.__setattr__(self, 'n_thr', self.n_particles / 2.0)
        if not 1 <= self.n_thr <= self.n_particles:
            raise ConfigError('n_thr must lie in [1, N], got %r' % self.n_thr)
        if self.max_step_v is not None and self.max_step_v <= 0:
            raise ConfigError('max_step_v must be > 0 when given')


@dataclass(frozen=True, eq=False)
class ParticleSet:
    particles: np.ndarray
    weights: np.ndarray
    collapsed: bool = False

    def __len__(self):
        return len(self.particles)


@dataclass(frozen=True)
class TransitionInputs:
    slope_est: float
    u: float
    v_egmpp: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.slope_est, self.u, self.v_egmpp])):
            raise ValueError('transition inputs must be finite: %r' % (self,))


def init_particles(params, rng_seed):
    """
    Draw N particles from the prior N(v0, sigma0^2) with uniform weights.
    :param params: SmcParams
    :param rng_seed: type int or numpy Generator
    :return: ParticleSet
    """
    rng = as_rng(rng_seed, 'smc-init')
    n = int(params.n_particles)
    particles = params.v0 + params.sigma0 * rng.standard_normal(n)
    return ParticleSet(particles=particles, weights=np.full(n, 1.0 / n))


def adaptive_step(v, v_egmpp, m0):
    """m(t) = m0 (V - V_EGMPP)^2"""
    return m0 * (np.asarray(v) - v_egmpp) ** 2


def refinement_term(v_egmpp, v_meas, alarm_active):
    """Gap between the network estimate and the measured voltage, only while an alarm is latched."""
    return float(v_egmpp - v_meas) if alarm_active else 0.0


def transition_mean(particles, inputs, params):
    drift = adaptive_step(particles, inputs.v_egmpp, params.m0) * inputs.slope_est
    if params.max_step_v is not None:
        drift = np.clip(drift, -params.max_step_v, params.max_step_v)
    return particles + drift + inputs.u


def transition_log_density(new_particles, old_particles, inputs, params):
    """log N(V_new; f(V_old) + u, sigma_w^2) per particle."""
    resid = new_particles - transition_mean(old_particles, inputs, params)
    return -0.5 * (resid / params.sigma_w) ** 2 - np.log(params.sigma_w * np.sqrt(2 * np.pi))


def propagate(ps, inputs, params, rng_seed):
    """
    Draw every particle from its transition density; weights are carried over.
    :param ps: ParticleSet
    :param inputs: TransitionInputs
    :param params: SmcParams
    :param rng_seed: type int or numpy Generator
    :return: ParticleSet
    """
    rng = as_rng(rng_seed, 'smc-propagate')
    mean = transition_mean(ps.particles, inputs, params)
    particles = mean + params.sigma_w * rng.standard_normal(len(ps))
    return ParticleSet(particles=particles, weights=ps.weights.copy(), collapsed=ps.collapsed)


def update_weights(ps, v_measured, params, log_transition=None, log_proposal=None):
    """
    Multiply the weights by the Gaussian voltage likelihood and renormalise (in log space).
    With the transition density as trial distribution the two optional terms
    cancel; passing them reproduces the full importance ratio.
    If every likelihood underflows the weights fall back to uniform and the set is flagged.
    :param ps: ParticleSet (propagated)
    :param v_measured: type float: measured voltage (V)
    :param params: SmcParams
    :return: ParticleSet
    """
    log_likelihood = -0.5 * ((v_measured - ps.particles) / params.sigma_v) ** 2
    with np.errstate(divide='ignore'):
        log_weights = np.log(ps.weights) + log_likelihood
    if log_transition is not None and log_proposal is not None:
        log_weights = log_weights + (np.asarray(log_transition) - np.asarray(log_proposal))

    supported = ps.weights > 0
    if not np.isfinite(v_measured) or not supported.any() or \
            np.max(np.where(supported, log_likelihood, -np.inf)) < _LOG_TINY:
        logger.warning('weight-collapse: all particle likelihoods underflow at v=%r, resetting to uniform weights',
                       v_measured)
        n = len(ps)
        return ParticleSet(particles=ps.particles.copy(), weights=np.full(n, 1.0 / n), collapsed=True)

    weights = np.exp(log_weights - np.max(log_weights))
    weights /= weights.sum()
    return ParticleSet(particles=ps.particles.copy(), weights=weights, collapsed=False)


def estimate(ps):
    """Weighted mean of the particles."""
    return float(np.dot(ps.weights, ps.particles))


def effective_sample_size(ps):
    return float(1.0 / np.sum(ps.weights ** 2))


def systematic_resample(weights, rng):
    """
    Indices drawn with one uniform offset and N evenly spaced pointers.
    """
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side='right')


def resample_if_needed(ps, params, rng_seed):
    """
    Systematic resampling when the effective sample size drops below n_thr.
    :return: ParticleSet (the input unchanged when no resampling is needed)
    """
    if effective_sample_size(ps) >= params.n_thr:
        return ps
    rng = as_rng(rng_seed, 'smc-resample')
    indices = systematic_resample(ps.weights, rng)
    n = len(ps)
    return ParticleSet(particles=ps.particles[indices], weights=np.full(n, 1.0 / n), collapsed=ps.collapsed)


def fit_prior(v_readings):
    """
    Prior mean and std from voltage readings of an offline run under uniform irradiance.
    :param v_readings: type list of float (V)
    :return: (v0, sigma0)
    """
    readings = np.asarray(v_readings, dtype=float)
    if readings.size == 0:
        raise ValueError('fit_prior needs at least one reading')
    sigma0 = float(readings.std(ddof=1)) if readings.size > 1 else 0.0
    return float(readings.mean()), sigma0


def particle_snapshot(ps, t):
    """Rows (t, j, v, w) of the particle cloud, for CSV dumps."""
    return [{'t': t, 'j': j, 'v': float(v), 'w': float(w)}
            for j, (v, w) in enumerate(zip(ps.particles, ps.weights))]
