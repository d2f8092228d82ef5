import logging
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter
from sklearn.model_selection import KFold

from util import (ConfigError, ConvergenceError, InsufficientSamples, SingularRegression, UnstableModel,
                  as_rng, make_rng)

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class GllrParams:
    """
    b: drift parameter, h: decision threshold, sigma_nu: power noise std (W),
    p: window order, gamma: target false-alarm period (s), f_s: sampling rate (Hz),
    k_rebaseline: samples averaged for the new nominal power after an alarm.
    """
    b: float = 1.0
    h: float = 1.0
    sigma_nu: float = 1.0
    p: int = 5
    gamma: float = 20.0
    f_s: float = 20.0
    k_rebaseline: int = 20

    def __post_init__(self):
        if self.b <= 0:
            raise ConfigError('GLLR drift parameter b must be > 0, got %r' % self.b)
        if self.h < 0:
            raise ConfigError('GLLR threshold h must be >= 0, got %r' % self.h)
        if self.sigma_nu <= 0:
            raise ConfigError('sigma_nu must be > 0, got %r' % self.sigma_nu)
        if int(self.p) < 1:
            raise ConfigError('AR window order p must be >= 1, got %r' % self.p)
        if int(self.k_rebaseline) < 1:
            raise ConfigError('k_rebaseline must be >= 1')


@dataclass(frozen=True)
class GllrState:
    g: float = 0.0
    window: tuple = ()
    nominal_power: float = 0.0
    t_started: int = 0
    t: int = 0


@dataclass(frozen=True)
class ThresholdState:
    """State of the consecutive-difference detector |P(t) - P(t-1)| >= h1."""
    previous_power: float = None
    t: int = 0


@dataclass(frozen=True)
class ArModel:
    coeffs: tuple
    mean: float
    innovation_var: float

    @property
    def order(self):
        return len(self.coeffs)


def postprocess(p_measured, nominal):
    """Power deviation from the nominal level."""
    return p_measured - nominal


def gllr_increment(p_tilde_now, window, params):
    """
    Local second-order GLLR increment l_t = b ||z_t|| - b^2 / 2.
    :param p_tilde_now: type float: current post-processed power (W)
    :param window: type sequence: the last p post-processed samples
    :param params: GllrParams
    :return: l_t
    """
    window = np.asarray(window, dtype=float)
    if window.shape != (params.p,):
        raise ValueError('window must hold exactly p=%d samples, got %d' % (params.p, window.size))
    if params.sigma_nu <= 0:
        raise ValueError('sigma_nu must be > 0')
    var = params.sigma_nu ** 2
    z = np.concatenate([p_tilde_now * window / var,
                        [(p_tilde_now ** 2 / var - 1.0) / SQRT2, p_tilde_now / params.sigma_nu]])
    return float(params.b * np.linalg.norm(z) - 0.5 * params.b ** 2)


def gllr_increments(p_tilde, params):
    """
    Vectorised increments for a batch of streams.
    :param p_tilde: ndarray (runs, T) of post-processed power
    :return: ndarray (runs, T - p): increment at t = p .. T-1
    """
    p_tilde = np.atleast_2d(np.asarray(p_tilde, dtype=float))
    var = params.sigma_nu ** 2
    windows = sliding_window_view(p_tilde, params.p, axis=1)[:, :-1, :]
    now = p_tilde[:, params.p:]
    cross = np.sum((now[..., None] * windows / var) ** 2, axis=2)
    middle = ((now ** 2 / var - 1.0) / SQRT2) ** 2
    last = (now / params.sigma_nu) ** 2
    return params.b * np.sqrt(cross + middle + last) - 0.5 * params.b ** 2


def gllr_step(state, p_measured, params):
    """
    One detector update.
    During warm-up (fewer than p samples since the restart) the sample only fills the window.
    :param state: GllrState
    :param p_measured: type float: measured power (W)
    :param params: GllrParams
    :return: (GllrState, alarm)
    """
    p_tilde = postprocess(p_measured, state.nominal_power)
    if len(state.window) < params.p:
        g = 0.0
    else:
        g = max(state.g + gllr_increment(p_tilde, state.window, params), 0.0)
    window = (state.window + (p_tilde,))[-params.p:]
    new_state = replace(state, g=g, window=window, t=state.t + 1)
    return new_state, bool(g >= params.h)


def reset_after_alarm(state, recent_measurements, params):
    """
    Restart the detector on a new nominal level: the mean of the first K post-alarm measurements.
    :param recent_measurements: type list of float: power measured after the alarm (W)
    :return: GllrState
    """
    k = params.k_rebaseline
    if len(recent_measurements) < k:
        raise InsufficientSamples('re-baselining needs %d samples, got %d' % (k, len(recent_measurements)))
    nominal = float(np.mean(np.asarray(recent_measurements[:k], dtype=float)))
    return GllrState(g=0.0, window=(), nominal_power=nominal, t_started=state.t, t=state.t)


def threshold_step(state, p_measured, h1):
    """
    Consecutive-difference rule used by the threshold-triggered baselines.
    :return: (ThresholdState, alarm)
    """
    alarm = state.previous_power is not None and abs(p_measured - state.previous_power) >= h1
    return ThresholdState(previous_power=float(p_measured), t=state.t + 1), bool(alarm)


def run_lengths(h, paths):
    """
    Samples-to-first-alarm of each run for threshold h.
    :param h: type float
    :param paths: ndarray (runs, T) of detector statistics (g_t, or |dP|); NaN before the first valid sample
    :return: ndarray (runs,), censored runs report T
    """
    running_max = np.maximum.accumulate(np.nan_to_num(paths, nan=-np.inf), axis=1)
    crossed = running_max >= h
    first = np.where(crossed.any(axis=1), crossed.argmax(axis=1) + 1, paths.shape[1])
    return first.astype(float)


def gllr_paths(p_tilde, params):
    """
    Statistic g_t of a batch of noise streams without restarts, warm-up samples held at 0.
    """
    increments = gllr_increments(p_tilde, params)
    runs, steps = increments.shape
    g_path = np.zeros((runs, params.p + steps))
    g = np.zeros(runs)
    for t in range(steps):
        g = np.maximum(g + increments[:, t], 0.0)
        g_path[:, params.p + t] = g
    return g_path


def difference_paths(power):
    """|P(t) - P(t-1)|; the first sample cannot alarm."""
    power = np.atleast_2d(np.asarray(power, dtype=float))
    paths = np.full(power.shape, np.nan)
    paths[:, 1:] = np.abs(np.diff(power, axis=1))
    return paths


def _bisect_threshold(paths, target, rel_tol, max_steps, label):
    lo, hi = 0.0, float(np.nanmax(paths))
    if run_lengths(hi, paths).mean() < target * (1 - rel_tol):
        raise ConvergenceError('%s: simulated horizon too short for the target run length' % label,
                               target=target, bracket=(lo, hi))
    for step in range(max_steps):
        mid = 0.5 * (lo + hi)
        mean_rl = run_lengths(mid, paths).mean()
        if abs(mean_rl - target) <= rel_tol * target:
            logger.info('%s calibrated: h=%.6g, mean run length %.1f (target %.1f) after %d steps',
                        label, mid, mean_rl, target, step + 1)
            return mid
        if mean_rl < target:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError('%s: no threshold within tolerance after %d bisection steps' % (label, max_steps),
                           target=target, bracket=(lo, hi))


def calibrate_threshold(b, sigma_nu, gamma, f_s, n_runs, rng_seed, p=5, rel_tol=0.1, max_steps=40,
                        horizon_factor=4.0):
    """
    Threshold h giving a noise-only mean run length of gamma * f_s samples.
    The increments do not depend on h, so every bisection step reuses the same
    simulated trajectories; the result is deterministic given rng_seed.
    :param b: drift parameter
    :param sigma_nu: power noise std (W)
    :param gamma: target false-alarm period (s)
    :param f_s: sampling frequency (Hz)
    :param n_runs: type int: Monte-Carlo runs (>= 100)
    :param rng_seed: type int
    :return: h
    """
    if n_runs < 100:
        raise ValueError('calibration needs at least 100 runs, got %r' % n_runs)
    params = GllrParams(b=b, h=0.0, sigma_nu=sigma_nu, p=p, gamma=gamma, f_s=f_s)
    target = gamma * f_s
    horizon = int(np.ceil(horizon_factor * target)) + p + 1
    noise = make_rng(rng_seed, 'gllr-calibration').normal(0.0, sigma_nu, size=(int(n_runs), horizon))
    return _bisect_threshold(gllr_paths(noise, params), target, rel_tol, max_steps, 'GLLR threshold')


def calibrate_difference_threshold(sigma_nu, gamma, f_s, n_runs, rng_seed, rel_tol=0.1, max_steps=40,
                                   horizon_factor=4.0):
    """
    Threshold h1 of the consecutive-difference rule matched to the same false-alarm period.
    """
    if n_runs < 100:
        raise ValueError('calibration needs at least 100 runs, got %r' % n_runs)
    target = gamma * f_s
    horizon = int(np.ceil(horizon_factor * target)) + 2
    noise = make_rng(rng_seed, 'difference-calibration').normal(0.0, sigma_nu, size=(int(n_runs), horizon))
    return _bisect_threshold(difference_paths(noise), target, rel_tol, max_steps, 'difference threshold h1')


def _lagged_design(x, order):
    """Rows [x(t-1), ..., x(t-p)] with targets x(t)."""
    lags = sliding_window_view(x, order)[:-1, ::-1]
    return lags, x[order:]


def fit_ar(signal, order):
    """
    Ordinary least-squares AR(p) fit on the mean-removed signal.
    :param signal: type list of float (W)
    :param order: type int: p >= 1
    :return: ArModel
    """
    if int(order) < 1:
        raise ValueError('AR order must be >= 1, got %r' % order)
    x = np.asarray(signal, dtype=float)
    if x.size <= 10 * order:
        raise InsufficientSamples('AR(%d) fit needs more than %d samples, got %d' % (order, 10 * order, x.size))
    mean = float(x.mean())
    centred = x - mean
    design, target = _lagged_design(centred, order)
    if np.allclose(centred, 0.0):
        return ArModel(coeffs=(0.0,) * order, mean=mean, innovation_var=0.0)
    if np.linalg.matrix_rank(design) < order:
        raise SingularRegression('lagged design matrix of AR(%d) is rank deficient' % order)
    coeffs, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
    residual = target - design.dot(coeffs)
    return ArModel(coeffs=tuple(float(c) for c in coeffs), mean=mean, innovation_var=float(np.mean(residual ** 2)))


def ar_cross_validate_nrmse(signal, orders, k_folds=5):
    """
    k-fold one-step-ahead prediction error per order, normalised by the signal std.
    :param signal: type list of float
    :param orders: type list of int
    :param k_folds: type int
    :return: list of (order, nrmse)
    """
    x = np.asarray(signal, dtype=float)
    scale = x.std()
    results = []
    for order in orders:
        if int(order) < 1:
            raise ValueError('AR order must be >= 1, got %r' % order)
        if x.size <= 10 * order:
            raise InsufficientSamples('AR(%d) cross-validation needs more than %d samples' % (order, 10 * order))
        design, target = _lagged_design(x - x.mean(), int(order))
        squared_errors = []
        for train_index, test_index in KFold(n_splits=k_folds).split(design):
            if np.linalg.matrix_rank(design[train_index]) < order:
                raise SingularRegression('lagged design matrix of AR(%d) is rank deficient' % order)
            coeffs, _, _, _ = np.linalg.lstsq(design[train_index], target[train_index], rcond=None)
            squared_errors.append((target[test_index] - design[test_index].dot(coeffs)) ** 2)
        rmse = np.sqrt(np.mean(np.concatenate(squared_errors)))
        results.append((int(order), float(rmse / scale) if scale > 0 else 0.0))
    return results


def is_stable(model):
    """Roots of 1 - sum a_j z^j outside the unit circle."""
    if model.order == 0 or not np.any(model.coeffs):
        return True
    polynomial = np.concatenate([-np.asarray(model.coeffs[::-1]), [1.0]])
    return bool(np.all(np.abs(np.roots(polynomial)) > 1.0))


def synth_fault_signal(model, length, rng_seed, sigma_nu=0.0, burn_in=None):
    """
    Disturbance signal from an AR model plus white measurement noise.
    :param model: ArModel (must be stable)
    :param length: type int: samples returned
    :param rng_seed: type int
    :param sigma_nu: type float: measurement noise std (W)
    :return: ndarray of length `length`
    """
    if not is_stable(model):
        raise UnstableModel('AR coefficients %r are not stable' % (model.coeffs,))
    burn_in = 20 * max(model.order, 1) if burn_in is None else int(burn_in)
    rng = as_rng(rng_seed, 'fault-signal')
    innovations = rng.normal(0.0, np.sqrt(model.innovation_var), size=burn_in + int(length))
    denominator = np.concatenate([[1.0], -np.asarray(model.coeffs, dtype=float)])
    disturbance = lfilter([1.0], denominator, innovations)[burn_in:]
    noise = rng.normal(0.0, sigma_nu, size=int(length)) if sigma_nu > 0 else np.zeros(int(length))
    return model.mean + disturbance + noise


def simulate_detectors(power, onset, gllr_params, h1, nominal=0.0):
    """
    Run both detectors with restarts over one power stream.
    After every alarm the detector idles for K samples and re-baselines (GLLR)
    or simply restarts its difference memory (threshold rule).
    :param power: ndarray (T,) measured power (W)
    :param onset: type int: index of the first faulty sample
    :return: dict with first alarm index at/after onset and alarm counts after onset, per detector
    """
    result = {}
    k = gllr_params.k_rebaseline

    state, idle, collected = GllrState(nominal_power=nominal), 0, []
    first, count = None, 0
    for t, value in enumerate(power):
        if idle:
            collected.append(value)
            idle -= 1
            if not idle:
                state = reset_after_alarm(state, collected, gllr_params)
            continue
        state, alarm = gllr_step(state, value, gllr_params)
        if alarm:
            if t >= onset:
                count += 1
                first = t if first is None else first
            idle, collected = k, []
    result['gllr'] = (first, count)

    state, idle = ThresholdState(), 0
    first, count = None, 0
    for t, value in enumerate(power):
        if idle:
            idle -= 1
            if not idle:
                state = ThresholdState()
            continue
        state, alarm = threshold_step(state, value, h1)
        if alarm:
            if t >= onset:
                count += 1
                first = t if first is None else first
            idle = k
    result['threshold'] = (first, count)
    return result


def detection_delays(p_tilde, onset, params):
    """
    Samples between the onset and the first alarm at or after it (0 when the
    onset sample itself alarms), for a batch of streams; the statistic
    restarts from 0 after every alarm.
    :param p_tilde: ndarray (runs, T) post-processed power
    :return: ndarray (runs,), NaN where no alarm followed the onset
    """
    p_tilde = np.atleast_2d(p_tilde)
    increments = gllr_increments(p_tilde, params)
    runs, steps = increments.shape
    g = np.zeros(runs)
    delays = np.full(runs, np.nan)
    for step in range(steps):
        t = params.p + step
        g = np.maximum(g + increments[:, step], 0.0)
        alarm = g >= params.h
        if t >= onset:
            fresh = alarm & np.isnan(delays)
            delays[fresh] = t - onset
        g[alarm] = 0.0
    return delays
