"""
tests/conftest.py

Shared fixtures: tiny network and training configs, small phantom pools and the
smoke experiment config. Desk-scale tests are marked `slow` and only run with
`--runslow`.
"""

from pathlib import Path

import pytest

from pseudoheal.models.sample import Dataset
from pseudoheal.phantom import generate_phantom
from pseudoheal.schemas import NetConfig, PhantomSpec, TrainConfig, load_experiment_config

ROOT = Path(__file__).resolve().parent.parent
IMAGE_SIZE = (32, 32)


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run desk-scale tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def net_cfg():
    return NetConfig(base_channels=4, levels=2, residual_blocks=1, critic_channels=4, critic_levels=3)


@pytest.fixture
def make_train_cfg(net_cfg):
    def make(**changes):
        fields = {'epochs': 1, 'batch_size': 2, 'critic_iters_warm': 2, 'warm_epochs': 1, 'critic_iters': 1,
                  'seed': 0, 'net': net_cfg}
        fields.update(changes)
        return TrainConfig(**fields)
    return make


def _pool(probability, offset, n, tag):
    spec = PhantomSpec(seed=3, image_size=IMAGE_SIZE, lesion_probability=probability,
                       lesion_radius_range=(2, 5), subject_offset=offset)
    return Dataset(tuple(generate_phantom(spec, n)), tag, 'train')


@pytest.fixture(scope='session')
def pathological_pool():
    return _pool(1.0, 0, 8, 'pathological_pool')


@pytest.fixture(scope='session')
def healthy_pool():
    return _pool(0.0, 1_000, 8, 'healthy_pool')


@pytest.fixture(scope='session')
def mask_pool():
    return _pool(1.0, 2_000, 6, 'mask_pool')


@pytest.fixture
def smoke_config():
    return load_experiment_config(ROOT / 'configs' / 'smoke.json')
