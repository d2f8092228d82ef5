import logging
import os

import numpy as np

from models.change_detect import (ArModel, GllrParams, calibrate_difference_threshold, calibrate_threshold,
                                  detection_delays, gllr_paths, run_lengths, simulate_detectors, synth_fault_signal)
from models.metrics import get_metric
from models.pv_model import array_current, find_gmpp
from mppt_io.write_csv import write_table
from util import ConfigError, make_rng

logger = logging.getLogger(__name__)

STUDY_GAMMAS = (10.0, 15.0, 20.0)
FAULT_COEFFS = (0.5, 0.2, 0.1, 0.05, 0.02)
# lag-5 dominated, so an AR(1) fit cannot explain it
ORDER_CHECK_COEFFS = (0.3, 0.0, 0.0, 0.0, 0.6)


def power_noise_std(scenario, entry=0):
    """
    Std of p = v * i under measurement noise at the GMPP of one schedule entry:
    sqrt((I sigma_v)^2 + (V sigma_i)^2).
    """
    plant = scenario.build_plant()
    schedule_entry = scenario.profile.schedule[entry]
    v_gmpp, _ = find_gmpp(schedule_entry.conditions, scenario.topology, scenario.params)
    i_gmpp = array_current(v_gmpp, schedule_entry.conditions, scenario.topology, scenario.params)
    return float(np.hypot(i_gmpp * plant.sigma_v, v_gmpp * plant.current_noise_at(schedule_entry.t_start)))


def tracking_noise_std(scenario):
    """
    sigma_nu of the GLLR: the measurement noise plus the power swing of a
    process-noise sized voltage move on the current-source side, I_GMPP * sigma_w,
    taken at the first pattern's GMPP.
    """
    env = scenario.profile.schedule[0].conditions
    v_gmpp, _ = find_gmpp(env, scenario.topology, scenario.params)
    i_gmpp = array_current(v_gmpp, env, scenario.topology, scenario.params)
    return float(np.hypot(power_noise_std(scenario), i_gmpp * scenario.experiment.sigma_w))


def default_fault_model(sigma_nu, shift=3.0):
    """Stable AR(5) disturbance with a mean shift of `shift` noise stds."""
    return ArModel(coeffs=FAULT_COEFFS, mean=shift * sigma_nu, innovation_var=sigma_nu ** 2)


def order_check_model(sigma_nu=1.0):
    return ArModel(coeffs=ORDER_CHECK_COEFFS, mean=0.0, innovation_var=sigma_nu ** 2)


def calibrate(b, sigma_nu, gamma, f_s, n_runs, seed, p=5, sigma_p=None):
    """
    GLLR threshold h and the matching difference threshold h1 for one false-alarm period.
    h1 is sized on sigma_p (plain measurement noise) when given, else on sigma_nu.
    :return: (h, h1)
    """
    h = calibrate_threshold(b, sigma_nu, gamma, f_s, n_runs, seed, p=p)
    h1 = calibrate_difference_threshold(sigma_nu if sigma_p is None else sigma_p, gamma, f_s, n_runs, seed)
    return h, h1


def run_length_samples(params, n_runs, seed, horizon_factor=4.0):
    """Noise-only run lengths of a calibrated detector on fresh trajectories (censored at the horizon)."""
    target = params.gamma * params.f_s
    horizon = int(np.ceil(horizon_factor * target)) + params.p + 1
    noise = make_rng(seed, 'run-length-check').normal(0.0, params.sigma_nu, size=(int(n_runs), horizon))
    return run_lengths(params.h, gllr_paths(noise, params))


def verify_run_length(params, n_runs, seed, horizon_factor=4.0):
    """Mean noise-only run length of a calibrated detector on fresh trajectories."""
    return float(run_length_samples(params, n_runs, seed, horizon_factor).mean())


def run_length_histogram(samples, bins=40):
    """Rows (bin_lo, bin_hi, count) of the run-length distribution, in samples."""
    counts, edges = np.histogram(np.asarray(samples, dtype=float), bins=bins)
    return [{'bin_lo': float(lo), 'bin_hi': float(hi), 'count': int(count)}
            for lo, hi, count in zip(edges[:-1], edges[1:], counts)]


def fault_streams(fault_model, sigma_nu, n_runs, onset, length, seed):
    """Noise-only samples up to `onset`, AR fault plus noise afterwards; one row per run."""
    rng = make_rng(seed, 'fault-streams')
    streams = rng.normal(0.0, sigma_nu, size=(int(n_runs), int(length)))
    for k in range(int(n_runs)):
        streams[k, onset:] = synth_fault_signal(fault_model, length - onset, make_rng(seed, 'fault', k),
                                                sigma_nu=sigma_nu)
    return streams


def median_detection_delay(params, fault_model, n_runs, seed, onset=100, length=400):
    """Median samples-to-alarm after the onset of the fault over n_runs streams."""
    delays = detection_delays(fault_streams(fault_model, params.sigma_nu, n_runs, onset, length, seed), onset, params)
    return float(np.nanmedian(delays)) if np.any(np.isfinite(delays)) else np.inf


def detector_study(gammas, b, sigma_nu, f_s, n_runs, fault_model, seed, p=5, k_rebaseline=20, onset=200,
                   length=1400):
    """
    For each false-alarm period: calibrate h and h1, run both detectors with
    restarts on the same fault streams and compare delays and trigger rates.
    :return: list of dict rows
    """
    streams = fault_streams(fault_model, sigma_nu, min(int(n_runs), 200), onset, length, seed)
    duration = (length - onset) / f_s
    saving = get_metric('resource_saving')
    rows = []
    for gamma in gammas:
        h, h1 = calibrate(b, sigma_nu, gamma, f_s, n_runs, seed, p=p)
        params = GllrParams(b=b, h=h, sigma_nu=sigma_nu, p=p, gamma=gamma, f_s=f_s, k_rebaseline=k_rebaseline)
        outcome = [simulate_detectors(power, onset, params, h1) for power in streams]
        row = {'gamma_s': gamma, 'h': h, 'h1': h1}
        for name in ('gllr', 'threshold'):
            firsts = np.array([o[name][0] if o[name][0] is not None else np.nan for o in outcome], dtype=float)
            counts = np.array([o[name][1] for o in outcome], dtype=float)
            row['%s_delay_s' % name] = float(np.nanmean(firsts - onset) / f_s) if np.any(np.isfinite(firsts)) \
                else np.inf
            row['%s_rate_per_s' % name] = float(counts.mean() / duration)
        row['resource_saving'] = saving(row['gllr_rate_per_s'], row['threshold_rate_per_s'], 1.0) \
            if row['threshold_rate_per_s'] > 0 else np.nan
        logger.info('gamma=%g s: h=%.4g h1=%.4g, delays %.3g/%.3g s, saving %.1f%%', gamma, h, h1,
                    row['gllr_delay_s'], row['threshold_delay_s'], row['resource_saving'])
        rows.append(row)
    return rows


def calibrate_gllr(config, out, scenario=None, study=False, b=None, sigma_nu=None, gamma=None, f_s=None):
    """
    CLI driver: calibrate (h, h1), check the run length and optionally run the detector study.
    sigma_nu: the explicit value, else the scenario's tracking noise, else config['gllr'].
    Writes calibration.csv and run_length_histogram.csv (plus detector_study.csv with study).
    :return: dict with h, h1, sigma_nu
    """
    gllr = config['gllr']
    sigma_p = power_noise_std(scenario) if scenario is not None else None
    if sigma_nu is None:
        sigma_nu = tracking_noise_std(scenario) if scenario is not None else float(gllr.get('sigma_nu', 1.0))
    b = float(gllr.get('b', 1.0) if b is None else b)
    gamma = float(gllr.get('gamma_s', 20.0) if gamma is None else gamma)
    f_s = float(gllr.get('f_s_hz', 20.0) if f_s is None else f_s)
    if min(b, sigma_nu, gamma, f_s) <= 0:
        raise ConfigError('b, sigma_nu, gamma and f_s must be > 0')
    p, n_runs = int(gllr.get('p', 5)), int(gllr.get('n_runs', 500))
    h, h1 = calibrate(b, sigma_nu, gamma, f_s, n_runs, config['seed'], p=p, sigma_p=sigma_p)
    params = GllrParams(b=b, h=h, sigma_nu=sigma_nu, p=p, gamma=gamma, f_s=f_s)
    samples = run_length_samples(params, n_runs, config['seed'])
    result = {'b': b, 'sigma_nu': sigma_nu, 'gamma_s': gamma, 'f_s_hz': f_s, 'p': p, 'h': h, 'h1': h1,
              'mean_run_length': float(samples.mean()),
              'target_run_length': gamma * f_s,
              'median_delay_3sigma': median_detection_delay(params, default_fault_model(sigma_nu), 200,
                                                            config['seed'])}
    write_table([result], os.path.join(out, 'calibration.csv'), columns=list(result))
    write_table(run_length_histogram(samples), os.path.join(out, 'run_length_histogram.csv'),
                columns=['bin_lo', 'bin_hi', 'count'])
    if study:
        rows = detector_study(gllr.get('study_gammas', STUDY_GAMMAS), b, sigma_nu, f_s, n_runs,
                              default_fault_model(sigma_nu), config['seed'], p=p,
                              k_rebaseline=int(gllr.get('k_rebaseline', 20)))
        write_table(rows, os.path.join(out, 'detector_study.csv'))
    return result
