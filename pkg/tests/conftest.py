"""Shared fixtures for the rc-denoise test suite"""

import numpy as np
import pytest

from rc_denoise.experiments.config import ExperimentConfig
from rc_denoise.experiments.datasets import corrupt, simulate, split_data
from rc_denoise.models import HyperParams, LorenzParams, NoiseSpec, RidgeConfig
from rc_denoise.services.dynamics import integrate_lorenz


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow experiment reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def lorenz_short():
    """10 s of Lorenz data (2001 rows)"""
    return integrate_lorenz(LorenzParams(), dt=0.005, duration=10.0)


@pytest.fixture
def small_config(tmp_path):
    """Lorenz experiment shrunk to run in seconds"""
    return ExperimentConfig(
        system="lorenz",
        duration=12.0,
        split_time=8.0,
        reservoir=HyperParams(n_nodes=60),
        search_space={"n_nodes": (40, 60)},
        hyperopt_budget=6,
        ridge=RidgeConfig(lambda_grid=[1e-8, 1e-6, 1e-4, 1e-2], folds=3),
        prune={"prune_fraction": 0.1, "max_trials": 3},
        seeds=[0],
        sigma_grid=[10.0],
        output_dir=tmp_path / "run",
    )


@pytest.fixture
def small_data(small_config):
    clean = simulate(small_config)
    noisy, _ = corrupt(clean, small_config.observed, NoiseSpec(target_snr=4.0), seed=0)
    return split_data(small_config, clean, noisy)
