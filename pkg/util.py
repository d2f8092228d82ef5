import json
import logging
import os
import zlib

import numpy as np
import yaml

logger = logging.getLogger(__name__)


class MpptLabError(Exception):
    """
    Root of every error raised by the lab. `tag` is the machine-readable token
    printed by the CLI in the form ``error: <tag>: <message>``.
    """
    tag = 'mppt-lab-error'

    def __init__(self, message='', **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self):
        message = super().__str__()
        if self.diagnostics:
            details = ', '.join('%s=%s' % (key, value) for key, value in self.diagnostics.items())
            return '%s (%s)' % (message, details)
        return message


class ConfigError(MpptLabError, ValueError):
    tag = 'invalid-config'


class CurrentExceedsCapability(MpptLabError, ValueError):
    tag = 'current-exceeds-capability'


class ConvergenceError(MpptLabError, RuntimeError):
    tag = 'non-convergence'


class InsufficientSamples(MpptLabError, ValueError):
    tag = 'insufficient-samples'


class SingularRegression(MpptLabError, RuntimeError):
    tag = 'singular-regression'


class UnstableModel(MpptLabError, ValueError):
    tag = 'unstable-model'


class TrainingDiverged(MpptLabError, RuntimeError):
    tag = 'training-diverged'


class ShapeMismatch(MpptLabError, ValueError):
    tag = 'shape-mismatch'


class InvalidInput(MpptLabError, ValueError):
    tag = 'invalid-input'


def check_finite(**values):
    """
    Reject NaN/inf arguments.
    :param values: name -> scalar or array
    :return: None
    """
    for name, value in values.items():
        if not np.all(np.isfinite(value)):
            raise InvalidInput('%s must be finite, got %r' % (name, value))


def load_config(path):
    """
    Read a YAML (or JSON) configuration document.
    :param path: type str: path of the config file
    :return: config: type dict
    """
    if not os.path.isfile(path):
        raise ConfigError('config file %s not found' % path)
    with open(path, 'r') as fp:
        if path.endswith('.json'):
            config = json.load(fp)
        else:
            config = yaml.safe_load(fp)
    if not isinstance(config, dict):
        raise ConfigError('config file %s does not hold a mapping' % path)
    return config


def parse_int_list(value):
    """
    '8,20,10,1' -> [8, 20, 10, 1]; lists pass through as ints.
    """
    if isinstance(value, str):
        value = [item for item in value.replace(' ', '').split(',') if item]
    try:
        return [int(item) for item in value]
    except (TypeError, ValueError):
        raise ConfigError('expected a comma separated list of integers, got %r' % (value,))


def convert_yaml_config(config):
    """
    Normalise the raw YAML dictionary: architectures to integer lists, the GLLR
    noise variance to a standard deviation, missing sections to empty dicts.
    :param config: type dict, config parameters
    :return: config : type dict
    """
    for section in ('gllr', 'ann', 'controller'):
        config.setdefault(section, {})

    ann = config['ann']
    for key in [k for k in ann.keys() if k.startswith('arch')]:
        ann[key] = parse_int_list(ann[key])
    if 'irradiance_levels' in ann:
        ann['irradiance_levels'] = [float(level) for level in ann['irradiance_levels']]

    gllr = config['gllr']
    if 'sigma_nu2' in gllr and 'sigma_nu' not in gllr:
        gllr['sigma_nu'] = float(np.sqrt(gllr['sigma_nu2']))

    config.setdefault('result_rootdir', './results')
    config.setdefault('exp_name', 'exp0')
    config.setdefault('seed', 0)
    return config


def result_dir(config, out=None):
    """
    Output directory of a run, created on demand.
    :param config: type dict: config parameter
    :param out: type str or None: explicit directory overriding result_rootdir/exp_name
    :return: path: type str
    """
    path = out if out else os.path.join(config['result_rootdir'], config['exp_name'])
    if not os.path.exists(path): os.makedirs(path)
    return path


def make_rng(seed, *stream):
    """
    Independent generator for one named stream below a base seed, e.g.
    make_rng(seed, 'plant') and make_rng(seed, 'particles') never share draws.
    :param seed: type int
    :param stream: type str or int: stream identifiers
    :return: numpy.random.Generator
    """
    keys = [int(seed)]
    for item in stream:
        if isinstance(item, str):
            # stable across interpreter runs, unlike hash()
            keys.append(zlib.crc32(item.encode('utf-8')))
        else:
            keys.append(int(item))
    return np.random.default_rng(np.random.SeedSequence(keys))


def setup_logging(verbose=False):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')


def as_rng(seed_or_rng, *stream):
    """Pass generators through; turn integer seeds into a stream generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return make_rng(0 if seed_or_rng is None else seed_or_rng, *stream)
