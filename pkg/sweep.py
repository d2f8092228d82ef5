import logging
import os

import pandas as pd

from models.pv_model import array_open_circuit_voltage, count_local_maxima, curve_arrays, find_gmpp
from mppt_io.write_csv import write_table

logger = logging.getLogger(__name__)


def oracle_gmpp(scenario):
    """
    Oracle GMPP of every schedule entry, computed once per scenario.
    :return: list of dict rows (pattern, t_start_s, v_gmpp, p_gmpp, v_oc)
    """
    rows = []
    for k, entry in enumerate(scenario.profile.schedule):
        env = entry.conditions
        v_gmpp, p_gmpp = find_gmpp(env, scenario.topology, scenario.params)
        row = {'pattern': k, 't_start_s': entry.t_start, 'v_gmpp': v_gmpp, 'p_gmpp': p_gmpp,
               'v_oc': array_open_circuit_voltage(env, scenario.topology, scenario.params)}
        row.update({'irradiance_%d' % g: level for g, level in enumerate(env.irradiance)})
        rows.append(row)
        logger.info('%s pattern %d %s: V_GMPP=%.4g V, P_GMPP=%.4g W', scenario.name, k, env.irradiance,
                    v_gmpp, p_gmpp)
    return rows


def sweep(scenario, out, n_points=2001):
    """
    P-V sweep of every shading pattern of a scenario; writes curve.csv and gmpp.csv.
    :return: (curve DataFrame, gmpp rows)
    """
    gmpp = oracle_gmpp(scenario)
    frames = []
    for row, entry in zip(gmpp, scenario.profile.schedule):
        v, i, p = curve_arrays(entry.conditions, scenario.topology, scenario.params, row['v_oc'], n_points)
        row['n_peaks'] = count_local_maxima(p)
        frames.append(pd.DataFrame({'pattern': row['pattern'], 'v': v, 'i': i, 'p': p}))
    curve = pd.concat(frames, ignore_index=True)
    write_table(curve, os.path.join(out, 'curve.csv'))
    write_table(gmpp, os.path.join(out, 'gmpp.csv'))
    return curve, gmpp
