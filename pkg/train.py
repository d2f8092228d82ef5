import itertools
import logging
import os

import numpy as np
from sklearn.model_selection import train_test_split

from controller import generate_probe_voltages
from models import ann_gmpp
from models.ModelSet import model_for_mode
from models.load_model import save_model
from models.pv_model import Conditions, T_STC, array_current, array_open_circuit_voltage, find_gmpp
from mppt_io.write_csv import write_table
from util import ConfigError, make_rng, result_dir

logger = logging.getLogger(__name__)

# probe centres are drawn from this share of the unshaded array V_oc
PROBE_CENTRE_RANGE = (0.2, 0.9)


def reference_voltage(topo, params, temperature=T_STC):
    """Array V_oc with every group at 1 kW/m2; upper end of the network output range."""
    return array_open_circuit_voltage(Conditions((1.0,) * topo.n_groups, temperature), topo, params)


def irradiance_patterns(levels, n_groups):
    """Full z^groups grid of per-group irradiance patterns."""
    return list(itertools.product(levels, repeat=n_groups))


def generate_training_data(mode, topo, params, irradiance_levels, probes_per_pattern=1, rng_seed=0,
                           m_probes=4, half_width=10.0, temperature=T_STC):
    """
    Training rows from the oracle GMPP of every irradiance pattern of the grid.
    irradiance / irr-single: one row per pattern (inputs = readings or their mean);
    vi / vi-single: probes_per_pattern rows per pattern of noiseless (v, i) probe readings.
    :param mode: type str: 'vi', 'irradiance', 'vi-single' or 'irr-single'
    :param topo: ArrayTopology
    :param params: PVModuleParams
    :param irradiance_levels: type list of float: z >= 2 levels (kW/m2)
    :param rng_seed: type int
    :return: TrainingSet
    """
    if mode not in ann_gmpp.MODES:
        raise ConfigError('unknown training mode %r' % mode)
    levels = [float(level) for level in irradiance_levels]
    if len(levels) < 2:
        raise ConfigError('training grid needs at least 2 irradiance levels, got %r' % (levels,))
    v_ref = reference_voltage(topo, params, temperature)
    rng = make_rng(rng_seed, 'training-data', mode)

    inputs, targets = [], []
    for pattern in irradiance_patterns(levels, topo.n_groups):
        env = Conditions(pattern, temperature)
        v_gmpp, _ = find_gmpp(env, topo, params)
        if mode in ('irradiance', 'irr-single'):
            inputs.append(ann_gmpp.irradiance_features(pattern, mode))
            targets.append(v_gmpp)
            continue
        for _ in range(int(probes_per_pattern)):
            centre = rng.uniform(*PROBE_CENTRE_RANGE) * v_ref
            if mode == 'vi':
                voltages = generate_probe_voltages(centre, half_width, m_probes, v_ref, rng)
            else:
                voltages = np.array([centre])
            currents = array_current(voltages, env, topo, params)
            inputs.append(ann_gmpp.vi_features(np.stack([voltages, currents], axis=1)))
            targets.append(v_gmpp)
    logger.info('training data %s: %d rows from %d patterns', mode, len(targets), len(levels) ** topo.n_groups)
    return ann_gmpp.TrainingSet(inputs=np.array(inputs), targets=np.array(targets), mode=mode,
                                output_range=(0.0, v_ref))


def split_training_set(dataset, validation_split, rng_seed):
    """Random train / held-out split of a TrainingSet."""
    if not validation_split:
        return dataset, None
    x_train, x_val, y_train, y_val = train_test_split(dataset.inputs, dataset.targets, test_size=validation_split,
                                                      random_state=int(rng_seed))
    make = lambda x, y: ann_gmpp.TrainingSet(inputs=x, targets=y, mode=dataset.mode,
                                             output_range=dataset.output_range)
    return make(x_train, y_train), make(x_val, y_val)


def train(config, mode, topo, params, out=None, arch=None, epochs=None, seed=None):
    """
    Generate the grid, train the network for `mode`, save it with its history.
    :param config: type dict: normalised config (ann and controller sections)
    :param out: type str or None: output directory
    :return: (MlpModel, path of the saved model)
    """
    ann = config['ann']
    seed = config['seed'] if seed is None else seed
    config['topology'] = {'groups': [list(group) for group in topo.groups]}
    if arch is None:
        arch, _ = model_for_mode(config, mode)
    dataset = generate_training_data(mode, topo, params, ann.get('irradiance_levels', np.linspace(0.2, 1.0, 6)),
                                     probes_per_pattern=ann.get('probes_per_pattern', 1), rng_seed=seed,
                                     m_probes=config['controller'].get('m_probes', 4),
                                     half_width=config['controller'].get('probe_half_width_v', 10.0))
    train_set, val_set = split_training_set(dataset, ann.get('validation_split', 0.0), seed)

    model = ann_gmpp.train(train_set, arch,
                           epochs=epochs if epochs is not None else ann.get('epochs', 500),
                           learning_rate=ann.get('learning_rate', 0.05),
                           momentum=ann.get('momentum', 0.9),
                           rng_seed=make_rng(seed, 'mlp-init', mode),
                           optimizer=ann.get('optimizer', 'gd'),
                           log_every=ann.get('log_every', 100))
    if val_set is not None:
        predicted = ann_gmpp.forward(model, val_set.inputs)
        lo, hi = model.output_norm
        val_mse = float(np.mean(((predicted - val_set.targets) / (hi - lo)) ** 2))
        logger.info('held-out mse %.6g on %d rows', val_mse, len(val_set.targets))

    path = None
    if out is not None or 'result_rootdir' in config:
        directory = result_dir(config, out)
        path = save_model(model, os.path.join(directory, 'model_%s.json' % mode.replace('-', '_')))
        write_table([{'epoch': k, 'mse': mse} for k, mse in enumerate(model.history)],
                    os.path.join(directory, 'history_%s.csv' % mode.replace('-', '_')), columns=['epoch', 'mse'])
    return model, path
