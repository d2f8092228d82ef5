import json
import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from models import ann_gmpp  # noqa: E402
from models.pv_model import ArrayTopology, PVModuleParams  # noqa: E402
from train import generate_training_data  # noqa: E402
from util import convert_yaml_config, load_config  # noqa: E402

DEFAULT_CONFIG = os.path.join(ROOT, 'config', 'config_default.yaml')
SMALL_SCENARIO = os.path.join(ROOT, 'config', 'scenarios', 'small_sp1_sp2.json')
LARGE_SCENARIO = os.path.join(ROOT, 'config', 'scenarios', 'large_sp1_sp2.json')


@pytest.fixture
def params():
    return PVModuleParams()


@pytest.fixture
def single_module():
    return ArrayTopology(groups=((1, 1),))


@pytest.fixture
def small_topo():
    return ArrayTopology.small()


@pytest.fixture
def config(tmp_path):
    config = convert_yaml_config(load_config(DEFAULT_CONFIG))
    config['result_rootdir'] = str(tmp_path)
    return config


@pytest.fixture(scope='session')
def irradiance_model():
    """Irradiance network of the small array, trained once per session."""
    dataset = generate_training_data('irradiance', ArrayTopology.small(), PVModuleParams(),
                                     np.linspace(0.2, 1.0, 6))
    return ann_gmpp.train(dataset, [3, 20, 10, 1], epochs=500, rng_seed=0, optimizer='lbfgs', log_every=0)


@pytest.fixture(scope='session')
def scenario_irradiance_model():
    """Irradiance network trained on the small scenario's own grid and optimizer settings."""
    with open(SMALL_SCENARIO) as fp:
        ann = json.load(fp)['experiment']['ann']
    dataset = generate_training_data('irradiance', ArrayTopology.small(), PVModuleParams(), ann['irradiance_levels'])
    return ann_gmpp.train(dataset, [3, 20, 10, 1], epochs=ann['epochs'], rng_seed=0, optimizer=ann['optimizer'],
                          log_every=0)


@pytest.fixture
def quick_document():
    """The small shading scenario cut down to two trackers that need no network."""
    with open(SMALL_SCENARIO) as fp:
        document = json.load(fp)
    document['name'] = 'quick'
    document['controllers'] = [{'name': 'enhanced', 'kind': 'enhanced', 'ann_mode': 'none'},
                               {'name': 'ic_baseline', 'kind': 'ic-baseline'}]
    document['experiment'].update({'t_end_s': 8.5, 'n_replications': 2, 'n_particles': 100,
                                   'calibration_runs': 100, 'prior_readings': 20})
    return document


@pytest.fixture
def quick_scenario(tmp_path, quick_document):
    path = tmp_path / 'quick.json'
    path.write_text(json.dumps(quick_document))
    return str(path)
