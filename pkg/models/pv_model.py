import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from util import ConfigError, ConvergenceError, CurrentExceedsCapability, check_finite

logger = logging.getLogger(__name__)

ELECTRON_CHARGE = 1.602176634e-19
BOLTZMANN = 1.380649e-23
T_STC = 298.15

# exp() argument ceiling, keeps the diode term finite far beyond open circuit
_EXP_CLIP = 700.0


@dataclass(frozen=True)
class PVModuleParams:
    """
    Datasheet constants of one PV module (default: the 60 W module used throughout the lab).
    i_ph_stc defaults to i_sc_stc; k_v is carried but never enters the model.
    """
    v_oc_stc: float = 21.06
    i_sc_stc: float = 3.80
    i_ph_stc: float = None
    k_i: float = 3.3e-4
    b_const: float = 0.2464
    q_over_k: float = ELECTRON_CHARGE / BOLTZMANN
    t_stc: float = T_STC
    lambda_stc: float = 1.0
    v_mpp_datasheet: float = 17.10
    i_mpp_datasheet: float = 3.50
    p_mpp_datasheet: float = 59.90
    k_v: float = 0.084

    def __post_init__(self):
        if self.i_ph_stc is None:
            object.__setattr__(self, 'i_ph_stc', self.i_sc_stc)
        for name in ('v_oc_stc', 'i_sc_stc', 'i_ph_stc', 'q_over_k', 't_stc', 'lambda_stc',
                     'v_mpp_datasheet', 'i_mpp_datasheet', 'p_mpp_datasheet'):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError('module parameter %s must be strictly positive, got %r' % (name, value))
        if not 0.0 < self.b_const < 1.0:
            raise ConfigError('b_const must lie in (0, 1), got %r' % self.b_const)

    def thermal_exponent(self, temperature):
        """qB/kT"""
        return self.q_over_k * self.b_const / temperature

    def saturation_current(self, temperature):
        """I_sc,STC / exp(qB/kT), the prefactor of the diode term."""
        return self.i_sc_stc / np.exp(self.thermal_exponent(temperature))

    def voltage_exponent(self, temperature):
        """qB/(kT V_oc,STC), the per-volt factor inside the diode exponential."""
        return self.thermal_exponent(temperature) / self.v_oc_stc


@dataclass(frozen=True)
class ArrayTopology:
    """
    Series groups of identical modules; every parallel string is a copy of the
    same group sequence. groups = ((modules_in_series, strings_in_parallel), ...)
    """
    groups: tuple
    bypass: tuple = None

    def __post_init__(self):
        groups = tuple((int(n_series), int(n_parallel)) for n_series, n_parallel in self.groups)
        if not groups:
            raise ConfigError('topology needs at least one group')
        if any(n_series < 1 or n_parallel < 1 for n_series, n_parallel in groups):
            raise ConfigError('group counts must be >= 1, got %r' % (groups,))
        if len({n_parallel for _, n_parallel in groups}) != 1:
            raise ConfigError('strings_in_parallel must be identical across groups, got %r' % (groups,))
        bypass = (True,) * len(groups) if self.bypass is None else tuple(bool(b) for b in self.bypass)
        if len(bypass) != len(groups):
            raise ConfigError('one bypass flag per group expected')
        object.__setattr__(self, 'groups', groups)
        object.__setattr__(self, 'bypass', bypass)

    @property
    def n_groups(self):
        return len(self.groups)

    @property
    def strings(self):
        return self.groups[0][1]

    @property
    def series_counts(self):
        return np.array([n_series for n_series, _ in self.groups], dtype=float)

    @property
    def modules_per_string(self):
        return int(self.series_counts.sum())

    @classmethod
    def small(cls):
        return cls(groups=((5, 12), (5, 12), (2, 12)))

    @classmethod
    def large(cls):
        return cls(groups=((50, 120), (50, 120), (20, 120)))


@dataclass(frozen=True)
class Conditions:
    """Per-group irradiance (kW/m2) and a common temperature (K)."""
    irradiance: tuple
    temperature: float = T_STC

    def __post_init__(self):
        irradiance = tuple(float(level) for level in np.atleast_1d(self.irradiance))
        check_finite(irradiance=irradiance, temperature=self.temperature)
        if any(level < 0 for level in irradiance):
            raise ConfigError('irradiance must be >= 0, got %r' % (irradiance,))
        if self.temperature <= 0:
            raise ConfigError('temperature must be > 0 K, got %r' % self.temperature)
        object.__setattr__(self, 'irradiance', irradiance)
        object.__setattr__(self, 'temperature', float(self.temperature))


@dataclass(frozen=True)
class ScheduleEntry:
    t_start: float
    conditions: Conditions


@dataclass(frozen=True)
class EnvironmentProfile:
    schedule: tuple = field(default_factory=tuple)

    def __post_init__(self):
        schedule = tuple(self.schedule)
        if not schedule:
            raise ConfigError('environment schedule is empty')
        if schedule[0].t_start != 0:
            raise ConfigError('first schedule entry must start at t=0')
        starts = [entry.t_start for entry in schedule]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ConfigError('schedule start times must be strictly increasing, got %r' % starts)
        if len({len(entry.conditions.irradiance) for entry in schedule}) != 1:
            raise ConfigError('every schedule entry needs the same number of group irradiances')
        object.__setattr__(self, 'schedule', schedule)

    def conditions_at(self, t):
        current = self.schedule[0].conditions
        for entry in self.schedule:
            if entry.t_start <= t + 1e-12:
                current = entry.conditions
            else:
                break
        return current

    @property
    def onsets(self):
        return [entry.t_start for entry in self.schedule[1:]]

    def check_topology(self, topo):
        if len(self.schedule[0].conditions.irradiance) != topo.n_groups:
            raise ConfigError('irradiance list length %d does not match %d topology groups'
                              % (len(self.schedule[0].conditions.irradiance), topo.n_groups))


@dataclass(frozen=True)
class CurveSample:
    v: float
    i: float
    p: float


def photocurrent(irradiance, temperature, params):
    """
    Photo-generated current; the irradiance ratio scales the temperature-corrected STC value.
    :param irradiance: kW/m2, scalar or array
    :param temperature: K
    :param params: PVModuleParams
    :return: amperes
    """
    irradiance = np.asarray(irradiance, dtype=float)
    return (params.i_ph_stc + params.k_i * (temperature - params.t_stc)) * irradiance / params.lambda_stc


def module_current(v, irradiance, temperature, params):
    """
    Output current of one module at terminal voltage v.
    :param v: type float or ndarray: volts, >= 0
    :param irradiance: type float: kW/m2, >= 0
    :param temperature: type float: K, > 0
    :param params: PVModuleParams
    :return: amperes (same shape as v)
    """
    check_finite(v=v, irradiance=irradiance, temperature=temperature)
    if np.any(np.asarray(v) < 0) or irradiance < 0 or temperature <= 0:
        raise ValueError('module_current needs v >= 0, irradiance >= 0, temperature > 0')
    exponent = np.minimum(params.voltage_exponent(temperature) * np.asarray(v, dtype=float), _EXP_CLIP)
    current = photocurrent(irradiance, temperature, params) - \
        params.saturation_current(temperature) * (np.exp(exponent) - 1.0)
    return float(current) if np.ndim(current) == 0 else current


def module_open_circuit_voltage(irradiance, temperature, params):
    i_ph = float(photocurrent(irradiance, temperature, params))
    if i_ph <= 0:
        return 0.0
    return float(np.log1p(i_ph / params.saturation_current(temperature)) / params.voltage_exponent(temperature))


def _group_voltage(current, i_ph, i0, alpha, bypass):
    """
    Per-module voltage of each group carrying `current`; -inf where the diode
    term cannot supply it, 0 where an ideal bypass diode conducts.
    """
    arg = 1.0 + (i_ph - current) / i0
    with np.errstate(divide='ignore', invalid='ignore'):
        voltage = np.where(arg > 0, np.log(np.where(arg > 0, arg, 1.0)) / alpha, -np.inf)
    return np.where(bypass, np.maximum(voltage, 0.0), voltage)


def module_voltage_from_current(i, irradiance, temperature, params):
    """
    Invert the module equation: the voltage at which the module delivers i.
    The diode equation has a closed-form inverse, so the result is exact to
    rounding (well inside the 1e-9 A current tolerance).
    :param i: type float: amperes, 0 <= i <= module_current(0)
    :return: volts
    """
    check_finite(i=i, irradiance=irradiance, temperature=temperature)
    i_ph = float(photocurrent(irradiance, temperature, params))
    if i < 0:
        raise ValueError('current must be >= 0, got %r' % i)
    if i > i_ph + 1e-12:
        raise CurrentExceedsCapability('current %.6g A exceeds the short-circuit current %.6g A' % (i, i_ph),
                                       irradiance=irradiance, temperature=temperature)
    voltage = _group_voltage(min(i, i_ph), i_ph, params.saturation_current(temperature),
                             params.voltage_exponent(temperature), False)
    return float(voltage)


def array_open_circuit_voltage(env, topo, params):
    """Sum over groups of n_series x module open-circuit voltage."""
    env_check(env, topo)
    return float(sum(n_series * module_open_circuit_voltage(level, env.temperature, params)
                     for (n_series, _), level in zip(topo.groups, env.irradiance)))


def env_check(env, topo):
    if len(env.irradiance) != topo.n_groups:
        raise ConfigError('irradiance list length %d does not match %d topology groups'
                          % (len(env.irradiance), topo.n_groups))


def array_current(v_total, env, topo, params, tol=1e-10, max_iter=200):
    """
    Total array current at terminal voltage v_total.
    Each string current I solves sum_g n_g * max(V_g(I), 0) = v_total by
    bisection (vectorised over v_total); the parallel strings are summed.
    :param v_total: type float or ndarray: volts, >= 0
    :param env: Conditions: per-group irradiance and temperature
    :param topo: ArrayTopology
    :param params: PVModuleParams
    :return: amperes, same shape as v_total
    """
    env_check(env, topo)
    v_total = np.asarray(v_total, dtype=float)
    check_finite(v_total=v_total)
    if np.any(v_total < 0):
        raise ValueError('v_total must be >= 0')
    scalar = v_total.ndim == 0
    v_flat = np.atleast_1d(v_total).reshape(-1, 1)

    temperature = env.temperature
    i_ph = photocurrent(np.array(env.irradiance), temperature, params)
    i0 = params.saturation_current(temperature)
    alpha = params.voltage_exponent(temperature)
    n_series = topo.series_counts
    bypass = np.array(topo.bypass)

    def string_voltage(current):
        return (n_series * _group_voltage(current, i_ph, i0, alpha, bypass)).sum(axis=1, keepdims=True)

    # below `lo` every group sits at or above v_total / modules_per_string
    per_module = np.minimum(alpha * v_flat / topo.modules_per_string, _EXP_CLIP)
    lo = np.minimum(0.0, (i_ph - i0 * (np.exp(per_module) - 1.0)).min(axis=1, keepdims=True))
    hi = np.full_like(v_flat, max(float(i_ph.max()), 0.0))

    for iteration in range(max_iter):
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        above = string_voltage(mid) >= v_flat
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    else:
        raise ConvergenceError('array current bisection did not converge',
                               iterations=max_iter, worst_bracket=float(np.max(hi - lo)),
                               irradiance=env.irradiance)
    current = 0.5 * (lo + hi)
    if not np.all(np.isfinite(current)):
        raise ConvergenceError('array current bisection produced non-finite values', irradiance=env.irradiance)
    total = (topo.strings * current).reshape(v_total.shape if not scalar else ())
    return float(total) if scalar else total


def curve_arrays(env, topo, params, v_max, n_points):
    """(v, i, p) arrays of a uniform sweep over [0, v_max]."""
    if n_points < 2:
        raise ValueError('n_points must be >= 2, got %r' % n_points)
    v = np.linspace(0.0, v_max, int(n_points))
    i = array_current(v, env, topo, params)
    return v, i, v * i


def sweep_pv_curve(env, topo, params, v_max, n_points):
    """
    I-V / P-V sweep with uniformly spaced voltages.
    :return: list of CurveSample
    """
    v, i, p = curve_arrays(env, topo, params, v_max, n_points)
    return [CurveSample(float(a), float(b), float(c)) for a, b, c in zip(v, i, p)]


def count_local_maxima(p, rel_floor=0.01):
    """Strict interior local maxima of a sampled power curve above rel_floor * max(p)."""
    p = np.asarray(p, dtype=float)
    if p.size < 3:
        return 0
    interior = (p[1:-1] > p[:-2]) & (p[1:-1] > p[2:]) & (p[1:-1] > rel_floor * p.max())
    return int(np.count_nonzero(interior))


def find_gmpp(env, topo, params, n_points=2001, xtol=1e-3):
    """
    Global maximum power point: arg-max of a dense sweep refined by a
    golden-section search on the winning bracket.
    :param env: Conditions
    :param topo: ArrayTopology
    :param params: PVModuleParams
    :param n_points: type int: sweep resolution (>= 2000)
    :param xtol: type float: refinement tolerance in volts
    :return: (v_gmpp, p_gmpp)
    """
    v_max = array_open_circuit_voltage(env, topo, params)
    if v_max <= 0:
        return 0.0, 0.0
    v, _, p = curve_arrays(env, topo, params, v_max, max(int(n_points), 2000))
    k = int(np.argmax(p))

    def negative_power(x):
        return -x * array_current(x, env, topo, params)

    if 0 < k < len(v) - 1 and p[k] > p[k - 1] and p[k] > p[k + 1]:
        scale = max(2.0 * abs(v[k]), 1e-12)
        result = minimize_scalar(negative_power, bracket=(v[k - 1], v[k], v[k + 1]), method='golden',
                                 tol=xtol / scale)
    else:
        lo, hi = v[max(k - 1, 0)], v[min(k + 1, len(v) - 1)]
        result = minimize_scalar(negative_power, bounds=(lo, hi), method='bounded', options={'xatol': xtol})
    v_best, p_best = float(result.x), float(-result.fun)
    if p_best < p[k]:
        v_best, p_best = float(v[k]), float(p[k])
    return v_best, p_best


def power_slope_analytic(v, i, irradiance, temperature, params):
    """
    dP/dV of a single module: I + V dI/dV with the derivative of the diode term.
    :param v: volts, >= 0
    :param i: amperes, the module current at v
    :return: W/V
    """
    check_finite(v=v, i=i, irradiance=irradiance, temperature=temperature)
    alpha = params.voltage_exponent(temperature)
    di_dv = -params.saturation_current(temperature) * alpha * np.exp(min(alpha * v, _EXP_CLIP))
    return float(i + v * di_dv)

