import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from controller import ControllerConfig, Plant
from models.change_detect import GllrParams
from models.pv_model import ArrayTopology, Conditions, EnvironmentProfile, PVModuleParams, ScheduleEntry, T_STC
from models.smc_estimator import SmcParams
from util import ConfigError, load_config

logger = logging.getLogger(__name__)

SECTIONS = ('module', 'topology', 'environment', 'controllers', 'experiment')

# scenario key -> PVModuleParams field
MODULE_FIELDS = {'v_oc_stc_v': 'v_oc_stc',
                 'i_sc_stc_a': 'i_sc_stc',
                 'i_ph_stc_a': 'i_ph_stc',
                 'k_i_a_per_k': 'k_i',
                 'b_const': 'b_const',
                 't_stc_k': 't_stc',
                 'lambda_stc_kw_m2': 'lambda_stc',
                 'v_mpp_v': 'v_mpp_datasheet',
                 'i_mpp_a': 'i_mpp_datasheet',
                 'p_mpp_w': 'p_mpp_datasheet',
                 'k_v_v_per_k': 'k_v'}


@dataclass(frozen=True)
class ExperimentConfig:
    t_end: float = 10.0
    f_s: float = 20.0
    n_replications: int = 100
    base_seed: int = 0
    sigma_v: float = float(np.sqrt(1e-5))
    sigma_w: float = float(np.sqrt(1e-3))
    n_particles: int = 500
    m0: float = 1e-2
    max_step_v: float = None
    gllr_b: float = 1.0
    gllr_p: int = 5
    gamma: float = 20.0
    k_rebaseline: int = 20
    calibration_runs: int = 500
    gllr_h: float = None
    h1: float = None
    sigma_nu: float = None
    prior_readings: int = 100
    ann: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """A full experiment description: plant, shading schedule, trackers to compare."""
    name: str
    params: PVModuleParams
    topology: ArrayTopology
    profile: EnvironmentProfile
    controllers: tuple
    experiment: ExperimentConfig

    def __post_init__(self):
        if not self.controllers:
            raise ConfigError('scenario %s lists no controllers' % self.name)
        names = [c.name for c in self.controllers]
        if len(set(names)) != len(names):
            raise ConfigError('controller names must be unique, got %r' % names)
        if self.profile.schedule[-1].t_start >= self.t_end:
            raise ConfigError('t_end %.3g s does not cover the last schedule entry at %.3g s'
                              % (self.t_end, self.profile.schedule[-1].t_start))
        self.profile.check_topology(self.topology)

    @property
    def t_end(self):
        return self.experiment.t_end

    @property
    def f_s(self):
        return self.experiment.f_s

    def build_plant(self):
        """Plant whose current noise follows the active shading pattern."""
        return Plant(topo=self.topology, params=self.params, profile=self.profile, sigma_v=self.experiment.sigma_v)

    def with_controllers(self, controllers):
        return replace(self, controllers=tuple(controllers))


def _number(section, key, default=None, required=False, cast=float):
    if key not in section or section[key] is None:
        if required:
            raise ConfigError('missing required field %r' % key)
        return default
    try:
        value = cast(section[key])
    except (TypeError, ValueError):
        raise ConfigError('field %r must be numeric, got %r' % (key, section[key]))
    if cast is float and not np.isfinite(value):
        raise ConfigError('field %r must be finite, got %r' % (key, value))
    return value


def parse_module(section):
    unknown = set(section) - set(MODULE_FIELDS)
    if unknown:
        raise ConfigError('unknown module fields %s' % sorted(unknown))
    return PVModuleParams(**{MODULE_FIELDS[key]: float(value) for key, value in section.items()})


def parse_topology(section):
    if isinstance(section, str):
        if section not in ('small', 'large'):
            raise ConfigError('topology preset must be small or large, got %r' % section)
        return getattr(ArrayTopology, section)()
    if 'groups' not in section:
        raise ConfigError('topology needs a groups list of [modules_in_series, strings_in_parallel]')
    try:
        groups = tuple((int(n_series), int(n_parallel)) for n_series, n_parallel in section['groups'])
    except (TypeError, ValueError):
        raise ConfigError('topology groups must be pairs of integers, got %r' % (section['groups'],))
    return ArrayTopology(groups=groups, bypass=section.get('bypass'))


def parse_environment(section):
    temperature = _number(section, 'temperature_k', T_STC)
    entries = []
    for entry in section.get('schedule', []):
        if 'irradiance_kw_m2' not in entry:
            raise ConfigError('schedule entry %r misses irradiance_kw_m2' % (entry,))
        conditions = Conditions(tuple(entry['irradiance_kw_m2']), _number(entry, 'temperature_k', temperature))
        entries.append(ScheduleEntry(t_start=_number(entry, 't_start_s', required=True), conditions=conditions))
    return EnvironmentProfile(schedule=tuple(entries))


def parse_experiment(section):
    sigma_v2 = _number(section, 'sigma_v2', 1e-5)
    sigma_w2 = _number(section, 'sigma_w2', 1e-3)
    if sigma_v2 <= 0 or sigma_w2 <= 0:
        raise ConfigError('noise variances must be > 0')
    experiment = ExperimentConfig(t_end=_number(section, 't_end_s', 10.0),
                                  f_s=_number(section, 'f_s_hz', 20.0),
                                  n_replications=_number(section, 'n_replications', 100, cast=int),
                                  base_seed=_number(section, 'base_seed', 0, cast=int),
                                  sigma_v=float(np.sqrt(sigma_v2)),
                                  sigma_w=float(np.sqrt(sigma_w2)),
                                  n_particles=_number(section, 'n_particles', 500, cast=int),
                                  m0=_number(section, 'm0', 1e-2),
                                  max_step_v=_number(section, 'max_step_v'),
                                  gllr_b=_number(section, 'gllr_b', 1.0),
                                  gllr_p=_number(section, 'gllr_p', 5, cast=int),
                                  gamma=_number(section, 'gamma_s', 20.0),
                                  k_rebaseline=_number(section, 'k_rebaseline', 20, cast=int),
                                  calibration_runs=_number(section, 'calibration_runs', 500, cast=int),
                                  gllr_h=_number(section, 'gllr_h'),
                                  h1=_number(section, 'h1_w'),
                                  sigma_nu=_number(section, 'sigma_nu_w'),
                                  prior_readings=_number(section, 'prior_readings', 100, cast=int),
                                  ann=dict(section.get('ann', {})))
    if experiment.t_end <= 0 or experiment.f_s <= 0 or experiment.n_replications < 1:
        raise ConfigError('t_end_s, f_s_hz and n_replications must be positive')
    if experiment.prior_readings < 2:
        raise ConfigError('prior_readings must be >= 2')
    return experiment


def parse_controller(entry, experiment):
    """
    Controller entry -> ControllerConfig. GLLR threshold, sigma_nu and h1 stay
    placeholders until the harness calibrates them (unless the experiment fixes them).
    """
    if 'name' not in entry or 'kind' not in entry:
        raise ConfigError('controller entries need name and kind, got %r' % (entry,))
    smc = SmcParams(n_particles=experiment.n_particles, m0=experiment.m0, sigma_w=experiment.sigma_w,
                    sigma_v=experiment.sigma_v, max_step_v=_number(entry, 'max_step_v', experiment.max_step_v))
    gllr = GllrParams(b=experiment.gllr_b, h=experiment.gllr_h if experiment.gllr_h is not None else 1.0,
                      sigma_nu=experiment.sigma_nu if experiment.sigma_nu is not None else 1.0,
                      p=experiment.gllr_p, gamma=experiment.gamma, f_s=experiment.f_s,
                      k_rebaseline=experiment.k_rebaseline)
    kind = entry['kind']
    default_mode = 'vi' if kind == 'enhanced' else 'vi-single'
    # h1 is validated once calibrated; a positive placeholder keeps the dataclass legal
    h1 = experiment.h1 if experiment.h1 is not None else (1.0 if kind == 'ann-ic-baseline' else None)
    return ControllerConfig(name=str(entry['name']),
                            controller_kind=kind,
                            f_s=experiment.f_s,
                            smc=smc,
                            gllr=gllr,
                            ann_mode=entry.get('ann_mode', default_mode),
                            probe_half_width=_number(entry, 'probe_half_width_v', 10.0),
                            m_probes=_number(entry, 'm_probes', 4, cast=int),
                            step_gain=_number(entry, 'step_gain', 0.2),
                            max_step_v=_number(entry, 'max_step_v', experiment.max_step_v),
                            h1=h1,
                            restart_offset_v=_number(entry, 'restart_offset_v', 0.0),
                            slope_guard_v=_number(entry, 'slope_guard_v', 1e-3),
                            settle_tol_v=_number(entry, 'settle_tol_v', 0.05),
                            settle_steps=_number(entry, 'settle_steps', 2, cast=int),
                            settle_max_steps=_number(entry, 'settle_max_steps', 10, cast=int))


def parse_scenario(document, name='scenario'):
    """
    :param document: type dict: decoded scenario document
    :return: ScenarioConfig
    """
    missing = [section for section in SECTIONS if section not in document]
    if missing:
        raise ConfigError('scenario %s misses sections %s' % (name, missing))
    experiment = parse_experiment(document['experiment'])
    controllers = tuple(parse_controller(entry, experiment) for entry in document['controllers'])
    return ScenarioConfig(name=document.get('name', name),
                          params=parse_module(document['module']),
                          topology=parse_topology(document['topology']),
                          profile=parse_environment(document['environment']),
                          controllers=controllers,
                          experiment=experiment)


def read_scenario(path):
    """
    Load and validate a scenario document (JSON, or YAML with the same layout).
    :param path: type str
    :return: ScenarioConfig
    """
    document = load_config(path)
    scenario = parse_scenario(document, name=os.path.splitext(os.path.basename(path))[0])
    logger.info('scenario %s: %d groups, %d schedule entries, controllers %s', scenario.name,
                scenario.topology.n_groups, len(scenario.profile.schedule),
                [c.name for c in scenario.controllers])
    return scenario
