import logging
import os

import numpy as np

from controller import generate_probe_voltages
from models import ann_gmpp
from models.pv_model import Conditions, T_STC, array_current, find_gmpp
from mppt_io.write_csv import write_table
from train import PROBE_CENTRE_RANGE, reference_voltage
from util import make_rng, result_dir

logger = logging.getLogger(__name__)

# held-out patterns draw every group irradiance from this range (kW/m2)
TEST_IRRADIANCE_RANGE = (0.2, 1.0)


def random_patterns(n_groups, n_tests, rng):
    lo, hi = TEST_IRRADIANCE_RANGE
    return rng.uniform(lo, hi, size=(int(n_tests), n_groups))


def evaluate_pqi(model, topo, params, n_tests, rng_seed, m_probes=4, half_width=10.0, temperature=T_STC):
    """
    PQI of a network on G random irradiance patterns against the oracle GMPP.
    VI networks see probes drawn with the controller's probe rule around a random centre.
    :param model: MlpModel
    :param n_tests: type int: G >= 1
    :param rng_seed: type int
    :return: (PqiReport, list of per-test dict rows)
    """
    if int(n_tests) < 1:
        raise ValueError('need at least one test pattern, got %r' % n_tests)
    rng = make_rng(rng_seed, 'pqi', model.mode)
    v_ref = reference_voltage(topo, params, temperature)
    predicted, truth, rows = [], [], []
    for k, pattern in enumerate(random_patterns(topo.n_groups, n_tests, rng)):
        env = Conditions(tuple(pattern), temperature)
        v_gmpp, p_gmpp = find_gmpp(env, topo, params)
        if model.mode in ('irradiance', 'irr-single'):
            v_pred = ann_gmpp.predict_irr(model, pattern, v_ref)
        else:
            centre = rng.uniform(*PROBE_CENTRE_RANGE) * v_ref
            if model.mode == 'vi':
                voltages = generate_probe_voltages(centre, half_width, m_probes, v_ref, rng)
            else:
                voltages = np.array([centre])
            currents = array_current(voltages, env, topo, params)
            v_pred = ann_gmpp.predict_vi(model, list(zip(voltages, currents)), v_ref)
        predicted.append(v_pred)
        truth.append(v_gmpp)
        row = {'test': k, 'v_egmpp': v_pred, 'v_gmpp': v_gmpp, 'p_gmpp': p_gmpp}
        row.update({'irradiance_%d' % g: level for g, level in enumerate(pattern)})
        rows.append(row)
    report = ann_gmpp.pqi_report(predicted, truth)
    for row, ratio in zip(rows, report.ratios):
        row['ratio'] = ratio
    logger.info('PQI %s over %d tests: %.2f%% (folded %.2f%%)', model.mode, report.g_tests, report.pqi,
                report.pqi_folded)
    return report, rows


def evaluate(config, model, topo, params, n_tests=None, seed=None, out=None):
    """
    Evaluate a trained network and write pqi.csv (per test) and pqi_summary.csv.
    :return: PqiReport
    """
    n_tests = config['ann'].get('n_tests', 1000) if n_tests is None else n_tests
    seed = config['seed'] if seed is None else seed
    report, rows = evaluate_pqi(model, topo, params, n_tests, seed,
                                m_probes=config['controller'].get('m_probes', 4),
                                half_width=config['controller'].get('probe_half_width_v', 10.0))
    directory = result_dir(config, out)
    write_table(rows, os.path.join(directory, 'pqi.csv'))
    write_table([{'mode': model.mode, 'g_tests': report.g_tests, 'pqi': report.pqi,
                  'pqi_folded': report.pqi_folded}],
                os.path.join(directory, 'pqi_summary.csv'), columns=['mode', 'g_tests', 'pqi', 'pqi_folded'])
    return report
