import json
import logging
import os

import numpy as np

from models.ann_gmpp import MlpModel
from util import ConfigError, ShapeMismatch

logger = logging.getLogger(__name__)

FORMAT_TAG = 'mppt-lab-mlp/1'


def save_model(model, path):
    """
    Write an MlpModel as a JSON document (row-major weight matrices).
    :param model: MlpModel
    :param path: type str: target file, parent directories created on demand
    :return: path
    """
    directory = os.path.dirname(path)
    if directory and not os.path.exists(directory): os.makedirs(directory)
    document = {'format': FORMAT_TAG,
                'mode': model.mode,
                'layer_sizes': [int(n) for n in model.layer_sizes],
                'weights': [w.tolist() for w in model.weights],
                'biases': [b.tolist() for b in model.biases],
                'input_norm': model.input_norm.tolist(),
                'output_norm': [float(x) for x in model.output_norm],
                'training_mse': model.training_mse}
    with open(path, 'w') as fp:
        json.dump(document, fp, indent=1)
    logger.info('model saved to %s', path)
    return path


def load_model_file(path):
    """
    Read a model written by save_model.
    :param path: type str
    :return: MlpModel
    """
    if not os.path.isfile(path):
        raise ConfigError('model file %s not found' % path)
    with open(path, 'r') as fp:
        try:
            document = json.load(fp)
        except json.JSONDecodeError as err:
            raise ConfigError('model file %s is not valid JSON: %s' % (path, err))
    if document.get('format') != FORMAT_TAG:
        raise ConfigError('model file %s has format %r, expected %r' % (path, document.get('format'), FORMAT_TAG))
    try:
        model = MlpModel(layer_sizes=[int(n) for n in document['layer_sizes']],
                         weights=[np.array(w, dtype=float) for w in document['weights']],
                         biases=[np.array(b, dtype=float) for b in document['biases']],
                         input_norm=np.array(document['input_norm'], dtype=float),
                         output_norm=tuple(document['output_norm']),
                         mode=document['mode'],
                         training_mse=document.get('training_mse'))
    except KeyError as err:
        raise ConfigError('model file %s misses field %s' % (path, err))
    except ValueError as err:
        raise ShapeMismatch('model file %s is inconsistent: %s' % (path, err))
    return model
