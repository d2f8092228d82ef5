import logging
import os

import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.10g'

TRACE_COLUMNS = ['t', 'v_cmd', 'v_meas', 'i_meas', 'p_meas', 'g', 'alarm', 'ann', 'v_hat', 'v_egmpp']


def write_table(rows, path, columns=None):
    """
    Write rows (list of dicts or a DataFrame) with a fixed float format so
    repeated runs produce byte-identical files.
    :return: path
    """
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
    if columns is not None:
        frame = frame[columns]
    directory = os.path.dirname(path)
    if directory and not os.path.exists(directory): os.makedirs(directory)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.debug('wrote %d rows to %s', len(frame), path)
    return path


def read_table(path):
    return pd.read_csv(path)


def records_frame(records):
    """StepRecords -> trace table; booleans as 0/1."""
    return pd.DataFrame({'t': [r.t for r in records],
                         'v_cmd': [r.v_command for r in records],
                         'v_meas': [r.v_meas for r in records],
                         'i_meas': [r.i_meas for r in records],
                         'p_meas': [r.p_meas for r in records],
                         'g': [r.g for r in records],
                         'alarm': [int(r.alarm) for r in records],
                         'ann': [int(r.ann_triggered) for r in records],
                         'v_hat': [r.v_hat for r in records],
                         'v_egmpp': [r.v_egmpp for r in records]}, columns=TRACE_COLUMNS)


def write_trace(records, path):
    return write_table(records_frame(records), path)

