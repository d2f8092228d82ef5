import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# delay_to_fraction result when the level is never held within the trace
NOT_REACHED = np.inf


class Metric:
    """
    Tracking metrics computed from replication-averaged record streams.
    Every metric is a pure function of its arrays.
    """

    # first delay after t_shading at which power >= fraction * p_gmpp_new for `hold` consecutive samples
    def delay_to_fraction(self, t, power, t_shading, p_gmpp_new, fraction, hold=3, t_end=None):
        t = np.asarray(t, dtype=float)
        power = np.asarray(power, dtype=float)
        if t.shape != power.shape:
            raise ValueError('time and power traces differ in length: %d vs %d' % (t.size, power.size))
        if not 0 < fraction <= 1 or p_gmpp_new <= 0:
            raise ValueError('need 0 < fraction <= 1 and p_gmpp_new > 0')
        window = t >= t_shading - 1e-9
        if t_end is not None:
            window &= t < t_end - 1e-9
        t_w, above = t[window], power[window] >= fraction * p_gmpp_new
        if above.size < hold:
            return NOT_REACHED
        held = sliding_window_view(above, hold).all(axis=1)
        if not held.any():
            return NOT_REACHED
        return float(t_w[int(np.argmax(held))] - t_shading)

    # (1 - N_GLLR / N_th) x 100 on per-second trigger rates
    def resource_saving(self, n_gllr_triggers, n_threshold_triggers, duration):
        if duration <= 0:
            raise ValueError('duration must be > 0')
        rate_threshold = n_threshold_triggers / duration
        if rate_threshold <= 0:
            raise ValueError('threshold trigger count must be > 0 for a resource saving')
        return float((1.0 - (n_gllr_triggers / duration) / rate_threshold) * 100.0)

    def efficiency_curve(self, t, power_runs, voltage_runs, t_shading, p_gmpp_new, v_gmpp_new, t_end=None):
        """
        Replication-averaged P(t)/P_GMPP and V(t)/V_GMPP from t_shading on.
        :param power_runs: ndarray (runs, T)
        :param voltage_runs: ndarray (runs, T)
        :return: dict of arrays delay, power_ratio, voltage_ratio
        """
        t = np.asarray(t, dtype=float)
        power = np.atleast_2d(np.asarray(power_runs, dtype=float)).mean(axis=0)
        voltage = np.atleast_2d(np.asarray(voltage_runs, dtype=float)).mean(axis=0)
        window = t >= t_shading - 1e-9
        if t_end is not None:
            window &= t < t_end - 1e-9
        return {'delay': t[window] - t_shading,
                'power_ratio': power[window] / p_gmpp_new,
                'voltage_ratio': voltage[window] / v_gmpp_new}


def get_metric(name_metric, **fixed):
    """
    Metric function by name with some arguments bound, e.g.
    get_metric('delay_to_fraction', fraction=0.95).
    """
    metric_func = getattr(Metric, name_metric)
    bound = lambda *args, **kwargs: metric_func(Metric, *args, **{**fixed, **kwargs})
    bound.__name__ = name_metric
    return bound
