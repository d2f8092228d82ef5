import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from util import ShapeMismatch, TrainingDiverged, as_rng

logger = logging.getLogger(__name__)

MODES = ('vi', 'irradiance', 'vi-single', 'irr-single')


@dataclass(eq=False)
class MlpModel:
    """
    Feed-forward network: sigmoid hidden layers, one linear output unit.
    weights[k] has shape (layer_sizes[k], layer_sizes[k+1]).
    input_norm: (M, 2) per-feature (min, max); output_norm: (v_min, v_max) volts.
    """
    layer_sizes: list
    weights: list
    biases: list
    input_norm: np.ndarray
    output_norm: tuple
    mode: str = 'irradiance'
    training_mse: float = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        sizes = list(self.layer_sizes)
        if len(sizes) < 2 or sizes[-1] != 1:
            raise ShapeMismatch('layer sizes must end in a single output, got %r' % (sizes,))
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise ShapeMismatch('layer %d has weights %r / biases %r for sizes %r' % (k, w.shape, b.shape, sizes))
        self.input_norm = np.asarray(self.input_norm, dtype=float).reshape(sizes[0], 2)
        if np.any(self.input_norm[:, 0] >= self.input_norm[:, 1]) or self.output_norm[0] >= self.output_norm[1]:
            raise ShapeMismatch('normalisation ranges need min < max')
        if self.mode not in MODES:
            raise ShapeMismatch('unknown network mode %r' % self.mode)

    @property
    def n_inputs(self):
        return self.layer_sizes[0]


@dataclass(eq=False)
class TrainingSet:
    """
    Raw feature rows (normalised inside train/forward) and oracle GMPP voltages.
    output_range is the (v_min, v_max) used to normalise the targets.
    """
    inputs: np.ndarray
    targets: np.ndarray
    mode: str
    output_range: tuple

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeMismatch('%d input rows but %d targets' % (self.inputs.shape[0], self.targets.shape[0]))
        if self.mode not in MODES:
            raise ShapeMismatch('unknown training mode %r' % self.mode)


@dataclass
class PqiReport:
    g_tests: int
    pqi: float
    pqi_folded: float
    ratios: list


def sigmoid(z):
    """1 / (1 + exp(-z)) without overflow for large |z|."""
    return expit(z)


def normalise(x, ranges):
    return np.clip((x - ranges[:, 0]) / (ranges[:, 1] - ranges[:, 0]), 0.0, 1.0)


def forward_pass(weights, biases, x):
    """
    :param x: ndarray (n, M) normalised inputs
    :return: (activations per layer, output (n,))
    """
    activations = [x]
    a = x
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = a.dot(w) + b
        a = z if k == len(weights) - 1 else sigmoid(z)
        activations.append(a)
    return activations, a[:, 0]


def backward_pass(weights, activations, d_output):
    """
    Gradients of the loss w.r.t. weights and biases given dL/dy per sample.
    """
    grads_w, grads_b = [None] * len(weights), [None] * len(weights)
    delta = d_output[:, None]
    for k in range(len(weights) - 1, -1, -1):
        grads_w[k] = activations[k].T.dot(delta)
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            a = activations[k]
            delta = delta.dot(weights[k].T) * a * (1.0 - a)
    return grads_w, grads_b


def loss_and_gradients(weights, biases, x, t):
    """Half mean squared error on normalised targets and its gradients."""
    activations, y = forward_pass(weights, biases, x)
    err = y - t
    loss = 0.5 * np.mean(err ** 2)
    grads_w, grads_b = backward_pass(weights, activations, err / len(t))
    return loss, grads_w, grads_b


def init_weights(layer_sizes, rng):
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return weights, biases


def _flatten(weights, biases):
    return np.concatenate([p.ravel() for pair in zip(weights, biases) for p in pair])


def _unflatten(vector, layer_sizes):
    weights, biases, offset = [], [], 0
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(vector[offset:offset + n_in * n_out].reshape(n_in, n_out))
        offset += n_in * n_out
        biases.append(vector[offset:offset + n_out])
        offset += n_out
    return weights, biases


def input_ranges(inputs):
    """Per-feature (min, max) of the training inputs; constant features get a unit span."""
    lo, hi = inputs.min(axis=0), inputs.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    return np.stack([lo, hi], axis=1)


def train(dataset, arch, epochs, learning_rate=0.05, momentum=0.9, rng_seed=0, optimizer='gd', log_every=100):
    """
    Backpropagation training minimising the mean squared error.
    optimizer 'gd': full-batch gradient descent with momentum;
    optimizer 'lbfgs': scipy L-BFGS-B on the same gradient, `epochs` iterations.
    :param dataset: TrainingSet
    :param arch: type list of int: layer sizes, first = feature count, last = 1
    :param epochs: type int: >= 1
    :param rng_seed: type int or numpy Generator
    :return: MlpModel (training_mse and history filled in)
    """
    if epochs < 1:
        raise ValueError('epochs must be >= 1')
    arch = [int(n) for n in arch]
    if arch[0] != dataset.inputs.shape[1]:
        raise ShapeMismatch('architecture expects %d inputs, dataset rows have %d' % (arch[0], dataset.inputs.shape[1]))
    if len(dataset.targets) == 0:
        raise ValueError('empty training set')

    in_norm = input_ranges(dataset.inputs)
    out_lo, out_hi = dataset.output_range
    x = normalise(dataset.inputs, in_norm)
    t = (dataset.targets - out_lo) / (out_hi - out_lo)

    rng = as_rng(rng_seed, 'mlp-init')
    weights, biases = init_weights(arch, rng)
    history = []

    if optimizer == 'gd':
        velocity_w = [np.zeros_like(w) for w in weights]
        velocity_b = [np.zeros_like(b) for b in biases]
        for epoch in range(int(epochs)):
            loss, grads_w, grads_b = loss_and_gradients(weights, biases, x, t)
            if not np.isfinite(loss):
                raise TrainingDiverged('training loss became non-finite', epoch=epoch)
            history.append(2.0 * loss)
            for k in range(len(weights)):
                velocity_w[k] = momentum * velocity_w[k] - learning_rate * grads_w[k]
                velocity_b[k] = momentum * velocity_b[k] - learning_rate * grads_b[k]
                weights[k] = weights[k] + velocity_w[k]
                biases[k] = biases[k] + velocity_b[k]
            if log_every and epoch % log_every == 0:
                logger.info('epoch %d: mse %.6g', epoch, history[-1])
    elif optimizer == 'lbfgs':
        def objective(vector):
            w, b = _unflatten(vector, arch)
            loss, grads_w, grads_b = loss_and_gradients(w, b, x, t)
            return loss, _flatten(grads_w, grads_b)

        def record(vector):
            loss = objective(vector)[0]
            if not np.isfinite(loss):
                raise TrainingDiverged('training loss became non-finite', epoch=len(history))
            history.append(2.0 * loss)

        result = minimize(objective, _flatten(weights, biases), jac=True, method='L-BFGS-B', callback=record,
                          options={'maxiter': int(epochs)})
        weights, biases = _unflatten(result.x, arch)
        weights, biases = [w.copy() for w in weights], [b.copy() for b in biases]
    else:
        raise ValueError('unknown optimizer %r' % optimizer)

    final = 2.0 * loss_and_gradients(weights, biases, x, t)[0]
    if not np.isfinite(final):
        raise TrainingDiverged('training loss became non-finite', epoch=len(history))
    logger.info('training finished: %s %s, mse %.6g (normalised)', dataset.mode, arch, final)
    return MlpModel(layer_sizes=arch, weights=weights, biases=biases, input_norm=in_norm,
                    output_norm=(float(out_lo), float(out_hi)), mode=dataset.mode, training_mse=final,
                    history=history)


def forward(model, features):
    """
    Network output in volts for one feature vector (or a batch of rows).
    :param model: MlpModel
    :param features: ndarray (M,) or (n, M) raw features
    :return: float volts, or ndarray (n,)
    """
    features = np.asarray(features, dtype=float)
    single = features.ndim == 1
    rows = np.atleast_2d(features)
    if rows.shape[1] != model.n_inputs:
        raise ShapeMismatch('network expects %d inputs, got %d' % (model.n_inputs, rows.shape[1]))
    _, y = forward_pass(model.weights, model.biases, normalise(rows, model.input_norm))
    lo, hi = model.output_norm
    volts = lo + y * (hi - lo)
    return float(volts[0]) if single else volts


def vi_features(probes):
    """(v, i) pairs sorted by voltage, flattened as v1, i1, v2, i2, ..."""
    pairs = np.asarray(probes, dtype=float).reshape(-1, 2)
    return pairs[np.argsort(pairs[:, 0], kind='stable')].ravel()


def irradiance_features(irradiances, mode):
    levels = np.asarray(irradiances, dtype=float).ravel()
    return np.array([levels.mean()]) if mode == 'irr-single' else levels


def predict_vi(model, probes, v_oc_array):
    """
    GMPP voltage from M probe readings; order-independent (probes are sorted first).
    :param probes: list of (v, i)
    :param v_oc_array: upper clamp (V)
    :return: volts in [0, v_oc_array]
    """
    features = vi_features(probes)
    if features.size != model.n_inputs:
        raise ShapeMismatch('network takes %d probe pairs, got %d' % (model.n_inputs // 2, features.size // 2))
    return float(np.clip(forward(model, features), 0.0, v_oc_array))


def predict_irr(model, irradiances, v_oc_array):
    """
    GMPP voltage from per-group irradiance readings (kW/m2).
    :return: volts in [0, v_oc_array]
    """
    if model.mode != 'irr-single' and len(irradiances) != model.n_inputs:
        raise ShapeMismatch('network takes %d irradiance readings, got %d' % (model.n_inputs, len(irradiances)))
    return float(np.clip(forward(model, irradiance_features(irradiances, model.mode)), 0.0, v_oc_array))


def pqi_report(v_predicted, v_true):
    """
    Average prediction quality over G tests: pqi = mean(V_EGMPP / V_GMPP) x 100.
    pqi_folded scores min(V_EGMPP, V_GMPP) / max(V_EGMPP, V_GMPP) instead, so
    over- and under-prediction cannot cancel.
    """
    predicted = np.asarray(v_predicted, dtype=float)
    truth = np.asarray(v_true, dtype=float)
    if predicted.size < 1 or predicted.shape != truth.shape:
        raise ShapeMismatch('need matching, non-empty prediction and truth lists')
    ratios = np.where(truth > 0, predicted / np.where(truth > 0, truth, 1.0), 1.0)
    upper = np.maximum(predicted, truth)
    folded = np.where(upper > 0, np.minimum(predicted, truth) / np.where(upper > 0, upper, 1.0), 1.0)
    return PqiReport(g_tests=int(predicted.size), pqi=float(ratios.mean() * 100.0),
                     pqi_folded=float(folded.mean() * 100.0), ratios=[float(r) for r in ratios])
