import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from models.ann_gmpp import predict_irr, predict_vi
from models.change_detect import GllrParams, GllrState, ThresholdState, gllr_step, reset_after_alarm, threshold_step
from models.pv_model import array_current, array_open_circuit_voltage
from models.smc_estimator import (SmcParams, TransitionInputs, estimate, init_particles, particle_snapshot, propagate,
                                  refinement_term, resample_if_needed, update_weights)
from util import ConfigError, make_rng

logger = logging.getLogger(__name__)

TRACKING, PROBING, REBASELINE = 'TRACKING', 'PROBING', 'REBASELINE'

KINDS = ('enhanced', 'ic-baseline', 'ann-ic-baseline')
ENHANCED_ANN_MODES = ('vi', 'irradiance', 'none')
BASELINE_ANN_MODES = ('vi-single', 'irr-single', 'vi', 'irradiance')


@dataclass(frozen=True)
class ControllerConfig:
    """
    One tracker under comparison.
    controller_kind: enhanced (GLLR + ANN + SMC) | ic-baseline (fixed-step I-C) |
    ann-ic-baseline (difference threshold h1 + ANN restart + fixed-step I-C).
    m_probes counts probe pairs; step_gain is the I-C gain on dP/dV.
    The enhanced tracker learns its nominal power only once the command has moved
    less than settle_tol_v for settle_steps instants (or settle_max_steps have passed).
    """
    name: str = 'enhanced'
    controller_kind: str = 'enhanced'
    f_s: float = 20.0
    smc: SmcParams = field(default_factory=SmcParams)
    gllr: GllrParams = field(default_factory=GllrParams)
    ann_mode: str = 'vi'
    probe_half_width: float = 10.0
    m_probes: int = 4
    step_gain: float = 0.2
    max_step_v: float = None
    h1: float = None
    restart_offset_v: float = 0.0
    slope_guard_v: float = 1e-3
    settle_tol_v: float = 0.05
    settle_steps: int = 2
    settle_max_steps: int = 10
    ann_model: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.controller_kind not in KINDS:
            raise ConfigError('unknown controller kind %r, expected one of %s' % (self.controller_kind, KINDS))
        if self.f_s <= 0:
            raise ConfigError('f_s must be > 0, got %r' % self.f_s)
        if int(self.m_probes) < 1:
            raise ConfigError('m_probes must be >= 1, got %r' % self.m_probes)
        if self.probe_half_width < 0 or self.restart_offset_v < 0:
            raise ConfigError('probe_half_width and restart_offset_v must be >= 0')
        if self.max_step_v is not None and self.max_step_v <= 0:
            raise ConfigError('max_step_v must be > 0 when given')
        if self.settle_tol_v <= 0 or int(self.settle_steps) < 1 or int(self.settle_max_steps) < 1:
            raise ConfigError('settle_tol_v must be > 0, settle_steps and settle_max_steps >= 1')
        if self.controller_kind == 'enhanced' and self.ann_mode not in ENHANCED_ANN_MODES:
            raise ConfigError('enhanced controller ann_mode must be one of %s, got %r'
                              % (ENHANCED_ANN_MODES, self.ann_mode))
        if self.controller_kind == 'ann-ic-baseline':
            if self.ann_mode not in BASELINE_ANN_MODES:
                raise ConfigError('ann-ic-baseline ann_mode must be one of %s, got %r'
                                  % (BASELINE_ANN_MODES, self.ann_mode))
            if self.h1 is None or self.h1 <= 0:
                raise ConfigError('ann-ic-baseline %r needs a threshold h1 > 0' % self.name)

    @property
    def uses_ann(self):
        return self.controller_kind == 'ann-ic-baseline' or \
            (self.controller_kind == 'enhanced' and self.ann_mode != 'none')


@dataclass(frozen=True)
class Measurement:
    v: float
    i: float
    p: float


@dataclass(frozen=True)
class StepRecord:
    t: float
    v_command: float
    v_meas: float
    i_meas: float
    p_meas: float
    g: float
    alarm: bool
    ann_triggered: bool
    v_hat: float
    v_egmpp: float
    u: float = 0.0
    latched: bool = False
    phase: str = TRACKING


@dataclass(frozen=True, eq=False)
class ControllerState:
    """
    phase_k counts probing or re-baselining instants already spent in the phase;
    settle_streak counts consecutive settled instants before the nominal is learned.
    last_meas is the latest tracking (non-probe) measurement; v_ref is the I-C set-point.
    """
    phase: str
    v_command: float
    v_hat: float
    v_egmpp_latest: float
    detector: object
    particles: object = None
    phase_k: int = 0
    last_meas: Measurement = None
    last_slope: float = 0.0
    alarm_latch: bool = False
    probe_voltages: tuple = ()
    probe_readings: tuple = ()
    rebaseline_samples: tuple = ()
    settle_streak: int = 0
    v_ref: float = 0.0


@dataclass(frozen=True, eq=False)
class Plant:
    """
    The simulated array with its measurement noise.
    sigma_i None derives the current noise from the active shading pattern.
    """
    topo: object
    params: object
    profile: object
    sigma_v: float
    sigma_i: float = None

    def __post_init__(self):
        self.profile.check_topology(self.topo)
        if self.sigma_v < 0 or (self.sigma_i is not None and self.sigma_i < 0):
            raise ConfigError('measurement noise must be >= 0')

    def conditions_at(self, t):
        return self.profile.conditions_at(t)

    def irradiance_readings(self, t):
        return self.conditions_at(t).irradiance

    def current_noise_at(self, t):
        if self.sigma_i is not None:
            return self.sigma_i
        return _pattern_current_noise(self, self.conditions_at(t))

    @property
    def v_limit(self):
        """Largest array open-circuit voltage over the schedule; bounds every command."""
        return _v_limit(self)


@lru_cache(maxsize=64)
def _v_limit(plant):
    return max(array_open_circuit_voltage(entry.conditions, plant.topo, plant.params)
               for entry in plant.profile.schedule)


@lru_cache(maxsize=256)
def _pattern_current_noise(plant, env):
    return current_noise_std(plant.sigma_v, plant.topo, plant.params, env)


@dataclass(frozen=True, eq=False)
class EpisodeRngs:
    """Independent streams: plant noise, particles, probe draws."""
    plant: np.random.Generator
    smc: np.random.Generator
    probes: np.random.Generator

    @classmethod
    def from_seed(cls, seed):
        return cls(plant=make_rng(seed, 'plant'), smc=make_rng(seed, 'smc'), probes=make_rng(seed, 'probes'))


def current_noise_std(sigma_v, topo, params, env):
    """sigma_i = sigma_v * I_sc,array / V_oc,array."""
    v_oc = array_open_circuit_voltage(env, topo, params)
    i_sc = array_current(0.0, env, topo, params)
    return float(sigma_v * i_sc / v_oc) if v_oc > 0 else 0.0


def measure(plant, v_command, t, rng):
    """
    Noisy (v, i, p) at the commanded voltage.
    :param plant: Plant
    :param v_command: type float: volts within [0, v_limit]
    :param t: type float: seconds
    :param rng: numpy Generator (plant stream)
    :return: Measurement, with p = v * i exactly
    """
    current = array_current(v_command, plant.conditions_at(t), plant.topo, plant.params)
    v = v_command + plant.sigma_v * rng.standard_normal()
    i = current + plant.current_noise_at(t) * rng.standard_normal()
    return Measurement(v=float(v), i=float(i), p=float(v * i))


def slope_estimate(prev, v_now, p_now, prev_slope=0.0, guard_v=1e-3):
    """
    Secant dP/dV between two measurements; the previous slope is kept when
    there is no previous measurement or the voltage barely moved.
    """
    if prev is None:
        return float(prev_slope)
    dv = v_now - prev.v
    if abs(dv) < guard_v:
        return float(prev_slope)
    return float((p_now - prev.p) / dv)


def generate_probe_voltages(v_now, half_width, m, v_oc_array, rng_seed):
    """
    M uniform draws in [v_now - half_width, v_now + half_width] clamped to [0, v_oc_array], ascending.
    :param rng_seed: type int or numpy Generator
    :return: ndarray (M,)
    """
    if int(m) < 1:
        raise ValueError('need at least one probe, got %r' % m)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed, 'probes')
    draws = rng.uniform(v_now - half_width, v_now + half_width, size=int(m))
    return np.sort(np.clip(draws, 0.0, v_oc_array))


def initial_state(config, rngs):
    """
    Start in REBASELINE: once the command settles, K samples set the detector's nominal power.
    The prior mean of the SMC cloud doubles as the first network estimate.
    """
    v0 = float(config.smc.v0)
    particles = init_particles(config.smc, rngs.smc) if config.controller_kind == 'enhanced' else None
    detector = GllrState() if config.controller_kind == 'enhanced' else ThresholdState()
    phase = TRACKING if config.controller_kind == 'ic-baseline' else REBASELINE
    return ControllerState(phase=phase, v_command=v0, v_hat=v0, v_egmpp_latest=v0, detector=detector,
                           particles=particles, v_ref=v0)


def _clamp(v, plant):
    return float(np.clip(v, 0.0, plant.v_limit))


def _predict(config, state, plant, t, meas):
    """Network estimate for the current ann_mode, clamped to the array range."""
    model = config.ann_model
    if model is None:
        raise ConfigError('controller %r needs a trained network for ann_mode %r' % (config.name, config.ann_mode))
    if config.ann_mode in ('irradiance', 'irr-single'):
        return predict_irr(model, plant.irradiance_readings(t), plant.v_limit)
    if config.ann_mode == 'vi-single':
        return predict_vi(model, [(meas.v, meas.i)], plant.v_limit)
    return predict_vi(model, list(state.probe_readings), plant.v_limit)


def _probe_step(state, t, plant, config, rngs):
    v_command = float(state.probe_voltages[state.phase_k])
    meas = measure(plant, v_command, t, rngs.plant)
    readings = state.probe_readings + ((meas.v, meas.i),)
    k = state.phase_k + 1
    ann_triggered = False
    if k < len(state.probe_voltages):
        new_state = replace(state, phase_k=k, probe_readings=readings, v_command=v_command)
    else:
        probing = replace(state, probe_readings=readings)
        v_egmpp = _predict(config, probing, plant, t, meas)
        ann_triggered = True
        logger.debug('t=%.3f %s: probing done, V_EGMPP=%.4g', t, config.name, v_egmpp)
        if config.controller_kind == 'enhanced':
            new_state = replace(state, phase=REBASELINE, phase_k=0, probe_voltages=(), probe_readings=(),
                                rebaseline_samples=(), v_egmpp_latest=v_egmpp, alarm_latch=True,
                                v_command=v_command, settle_streak=0)
        else:
            v_restart = _clamp(v_egmpp - config.restart_offset_v, plant)
            new_state = replace(state, phase=REBASELINE, phase_k=0, probe_voltages=(), probe_readings=(),
                                v_egmpp_latest=v_egmpp, v_ref=v_restart, v_command=v_command)
    g = float(state.detector.g) if isinstance(state.detector, GllrState) else 0.0
    record = StepRecord(t=t, v_command=v_command, v_meas=meas.v, i_meas=meas.i, p_meas=meas.p, g=g, alarm=False,
                        ann_triggered=ann_triggered, v_hat=state.v_hat, v_egmpp=new_state.v_egmpp_latest,
                        phase=PROBING)
    return new_state, record


def _rebaseline(state, new_state, v_command, meas, t, config):
    """
    Wait for the command to settle, then collect K power samples and hand the
    detector its new nominal.
    """
    k = state.phase_k + 1
    if not state.rebaseline_samples:
        streak = state.settle_streak + 1 if abs(v_command - state.v_command) <= config.settle_tol_v else 0
        if streak < config.settle_steps and k < config.settle_max_steps:
            return replace(new_state, phase_k=k, settle_streak=streak)
    samples = state.rebaseline_samples + (meas.p,)
    if len(samples) < config.gllr.k_rebaseline:
        return replace(new_state, phase_k=k, rebaseline_samples=samples)
    detector = reset_after_alarm(state.detector, list(samples), config.gllr)
    logger.debug('t=%.3f %s: nominal power %.4g W after %d instants', t, config.name, detector.nominal_power, k)
    return replace(new_state, phase=TRACKING, phase_k=0, rebaseline_samples=(), settle_streak=0, detector=detector)


def _enhanced_step(state, t, plant, config, rngs):
    u = refinement_term(state.v_egmpp_latest, state.last_meas.v if state.last_meas else state.v_hat,
                        state.alarm_latch)
    inputs = TransitionInputs(slope_est=state.last_slope, u=u, v_egmpp=state.v_egmpp_latest)
    propagated = propagate(state.particles, inputs, config.smc, rngs.smc)
    v_command = _clamp(estimate(propagated), plant)
    meas = measure(plant, v_command, t, rngs.plant)
    slope = slope_estimate(state.last_meas, meas.v, meas.p, state.last_slope, config.slope_guard_v)

    weighted = update_weights(propagated, meas.v, config.smc)
    posterior = resample_if_needed(weighted, config.smc, rngs.smc)
    v_hat = estimate(posterior)
    new_state = replace(state, particles=posterior, v_hat=v_hat, v_command=v_command, last_meas=meas,
                        last_slope=slope, alarm_latch=False)

    alarm, ann_triggered = False, False
    if state.phase == REBASELINE:
        new_state = _rebaseline(state, new_state, v_command, meas, t, config)
    else:
        detector, alarm = gllr_step(state.detector, meas.p, config.gllr)
        new_state = replace(new_state, detector=detector)
        if alarm:
            logger.debug('t=%.3f %s: GLLR alarm, g=%.4g', t, config.name, detector.g)
            # the secant across the change mixes two curves
            new_state = replace(new_state, last_slope=0.0)
            if config.ann_mode == 'vi':
                probes = generate_probe_voltages(meas.v, config.probe_half_width, config.m_probes, plant.v_limit,
                                                 rngs.probes)
                new_state = replace(new_state, phase=PROBING, phase_k=0, probe_voltages=tuple(probes),
                                    probe_readings=())
            else:
                if config.ann_mode == 'irradiance':
                    v_egmpp = _predict(config, new_state, plant, t, meas)
                    new_state = replace(new_state, v_egmpp_latest=v_egmpp, alarm_latch=True)
                    ann_triggered = True
                new_state = replace(new_state, phase=REBASELINE, phase_k=0, rebaseline_samples=(), settle_streak=0)

    g = float(new_state.detector.g)
    record = StepRecord(t=t, v_command=v_command, v_meas=meas.v, i_meas=meas.i, p_meas=meas.p, g=g, alarm=alarm,
                        ann_triggered=ann_triggered, v_hat=v_hat, v_egmpp=new_state.v_egmpp_latest, u=u,
                        latched=state.alarm_latch, phase=state.phase)
    return new_state, record


def _ic_step(state, t, plant, config, rngs):
    step = config.step_gain * state.last_slope
    if config.max_step_v is not None:
        step = float(np.clip(step, -config.max_step_v, config.max_step_v))
    v_command = _clamp(state.v_ref + step, plant)
    meas = measure(plant, v_command, t, rngs.plant)
    slope = slope_estimate(state.last_meas, meas.v, meas.p, state.last_slope, config.slope_guard_v)
    new_state = replace(state, v_command=v_command, v_ref=v_command, v_hat=v_command, last_meas=meas,
                        last_slope=slope)

    alarm, ann_triggered, g = False, False, 0.0
    if config.controller_kind == 'ann-ic-baseline':
        if state.phase == REBASELINE:
            k = state.phase_k + 1
            if k >= config.gllr.k_rebaseline:
                detector, _ = threshold_step(ThresholdState(), meas.p, config.h1)
                new_state = replace(new_state, phase=TRACKING, phase_k=0, detector=detector)
            else:
                new_state = replace(new_state, phase_k=k)
        else:
            previous = state.detector.previous_power
            g = abs(meas.p - previous) if previous is not None else 0.0
            detector, alarm = threshold_step(state.detector, meas.p, config.h1)
            new_state = replace(new_state, detector=detector)
            if alarm:
                logger.debug('t=%.3f %s: |dP|=%.4g >= h1', t, config.name, g)
                new_state = replace(new_state, last_slope=0.0)
                if config.ann_mode == 'vi':
                    probes = generate_probe_voltages(meas.v, config.probe_half_width, config.m_probes,
                                                     plant.v_limit, rngs.probes)
                    new_state = replace(new_state, phase=PROBING, phase_k=0, probe_voltages=tuple(probes),
                                        probe_readings=())
                else:
                    v_egmpp = _predict(config, new_state, plant, t, meas)
                    v_restart = _clamp(v_egmpp - config.restart_offset_v, plant)
                    ann_triggered = True
                    new_state = replace(new_state, phase=REBASELINE, phase_k=0, v_egmpp_latest=v_egmpp,
                                        v_ref=v_restart)

    record = StepRecord(t=t, v_command=v_command, v_meas=meas.v, i_meas=meas.i, p_meas=meas.p, g=float(g),
                        alarm=alarm, ann_triggered=ann_triggered, v_hat=v_command,
                        v_egmpp=new_state.v_egmpp_latest, phase=state.phase)
    return new_state, record


def step(state, t, plant, config, rngs):
    """
    Advance the controller by one sampling instant.
    :param state: ControllerState
    :param t: type float: seconds
    :param plant: Plant
    :param config: ControllerConfig
    :param rngs: EpisodeRngs
    :return: (ControllerState, StepRecord)
    """
    if state.phase == PROBING:
        return _probe_step(state, t, plant, config, rngs)
    if config.controller_kind == 'enhanced':
        return _enhanced_step(state, t, plant, config, rngs)
    return _ic_step(state, t, plant, config, rngs)


def run_episode(config, scenario, rng_seed, plant=None, particle_rows=None):
    """
    Closed-loop simulation over t = 0 .. t_end at f_s.
    :param config: ControllerConfig
    :param scenario: ScenarioConfig (t_end and the plant it builds)
    :param rng_seed: type int
    :param plant: Plant or None: reuse an already built plant
    :param particle_rows: list or None: receives the posterior cloud (t, j, v, w) of every step
    :return: list of StepRecord, ceil(t_end * f_s) entries
    """
    plant = scenario.build_plant() if plant is None else plant
    n_steps = int(np.ceil(scenario.t_end * config.f_s - 1e-9))
    rngs = EpisodeRngs.from_seed(rng_seed)
    state = initial_state(config, rngs)
    records = []
    for k in range(n_steps):
        state, record = step(state, k / config.f_s, plant, config, rngs)
        records.append(record)
        if particle_rows is not None and state.particles is not None:
            particle_rows.extend(particle_snapshot(state.particles, record.t))
    return records
