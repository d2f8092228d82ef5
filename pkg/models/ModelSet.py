import logging

from util import ConfigError, parse_int_list

logger = logging.getLogger(__name__)

# advisory ranges of a GMPP network: (min, max) inclusive
INPUT_RANGE = (3, 10)
HIDDEN_LAYER_RANGE = (1, 4)
FIRST_HIDDEN_RANGE = (4, 20)

MODEL_BY_MODE = {'vi': 'model_mlp_vi',
                 'irradiance': 'model_mlp_irr',
                 'vi-single': 'model_mlp_vi_single',
                 'irr-single': 'model_mlp_irr_single'}


def architecture_from_ranges(n_inputs, n_hidden_layers=2, first_hidden=20):
    """
    [n_inputs, first_hidden, first_hidden/2, ..., 1]; every later hidden layer halves the previous one.
    :param n_inputs: type int: input features
    :param n_hidden_layers: type int
    :param first_hidden: type int: neurons in the first hidden layer
    :return: list of int
    """
    if n_inputs < 1 or n_hidden_layers < 1 or first_hidden < 1:
        raise ConfigError('architecture needs positive sizes, got inputs=%r hidden_layers=%r first=%r'
                          % (n_inputs, n_hidden_layers, first_hidden))
    hidden, width = [], int(first_hidden)
    for _ in range(int(n_hidden_layers)):
        hidden.append(width)
        width = max(width // 2, 1)
    return [int(n_inputs)] + hidden + [1]


def validate_architecture(arch, mode):
    """
    Warn when an architecture leaves the recommended ranges; toy networks stay legal.
    A VI network's input count is checked as probe pairs.
    :return: bool: True if within range
    """
    arch = parse_int_list(arch)
    if len(arch) < 2 or arch[-1] != 1 or any(n < 1 for n in arch):
        raise ConfigError('architecture %r must end in a single output and hold positive sizes' % (arch,))
    inputs = arch[0] // 2 if mode in ('vi', 'vi-single') else arch[0]
    hidden = arch[1:-1]
    checks = []
    if mode in ('vi', 'irradiance'):
        checks.append(('inputs', inputs, INPUT_RANGE))
    checks.append(('hidden layers', len(hidden), HIDDEN_LAYER_RANGE))
    if hidden:
        checks.append(('first hidden layer', hidden[0], FIRST_HIDDEN_RANGE))
    in_range = True
    for name, value, (lo, hi) in checks:
        if not lo <= value <= hi:
            logger.warning('architecture %s: %s = %d outside the recommended range [%d, %d]',
                           arch, name, value, lo, hi)
            in_range = False
    return in_range


class ModelSet:
    """
    Named GMPP network architectures, one per ANN mode (see model_for_mode).
    Every method returns (layer sizes, mode).
    """

    # interleaved (v, i) probe pairs
    def model_mlp_vi(self, config):
        ann = config['ann']
        pairs = int(config['controller'].get('m_probes', 4))
        arch = ann.get('arch_vi') or architecture_from_ranges(2 * pairs)
        if arch[0] != 2 * pairs:
            raise ConfigError('arch_vi takes %d inputs but m_probes=%d needs %d' % (arch[0], pairs, 2 * pairs))
        validate_architecture(arch, 'vi')
        return list(arch), 'vi'

    # one irradiance reading per group
    def model_mlp_irr(self, config):
        n_groups = len(config['topology']['groups'])
        arch = config['ann'].get('arch_irr') or architecture_from_ranges(n_groups)
        if arch[0] != n_groups:
            raise ConfigError('arch_irr takes %d inputs but the topology has %d groups' % (arch[0], n_groups))
        validate_architecture(arch, 'irradiance')
        return list(arch), 'irradiance'

    def model_mlp_vi_single(self, config):
        arch = config['ann'].get('arch_vi_single') or architecture_from_ranges(2)
        if arch[0] != 2:
            raise ConfigError('arch_vi_single must take a single (v, i) pair')
        validate_architecture(arch, 'vi-single')
        return list(arch), 'vi-single'

    def model_mlp_irr_single(self, config):
        arch = config['ann'].get('arch_irr_single') or architecture_from_ranges(1)
        if arch[0] != 1:
            raise ConfigError('arch_irr_single must take the mean irradiance only')
        validate_architecture(arch, 'irr-single')
        return list(arch), 'irr-single'


def model_for_mode(config, mode):
    """Resolve the ModelSet entry serving an ANN mode."""
    if mode not in MODEL_BY_MODE:
        raise ConfigError('unknown ANN mode %r, expected one of %s' % (mode, sorted(MODEL_BY_MODE)))
    call_model = getattr(ModelSet, MODEL_BY_MODE[mode])
    return call_model(self=ModelSet, config=config)
