import json

import numpy as np
import pytest

from eigenrom.problems import get_problem
from eigenrom.rom_pipeline import offline_train
from eigenrom.sampling import uniform_grid


@pytest.fixture(scope="session")
def ho1d():
    return get_problem("ho1d")


@pytest.fixture(scope="session")
def crossing():
    return get_problem("crossing")


@pytest.fixture(scope="session")
def tiny_model(ho1d):
    """HO1D on a coarse mesh, 9 training points; cheap enough for I/O tests."""
    design = uniform_grid(ho1d.parameter_box, 9)
    return offline_train(ho1d, 0.5, design, n_starts=2)


@pytest.fixture(scope="session")
def ho1d_model(ho1d):
    """HO1D, h=0.05, 41 points with delta mu = 0.2 over [1, 9]."""
    design = uniform_grid(ho1d.parameter_box, 41)
    return offline_train(ho1d, 0.05, design)


@pytest.fixture(scope="session")
def crossing_model(crossing):
    """First eigenpair of the crossing problem, h=0.1, mu = -0.9:0.1:0.9."""
    design = uniform_grid(crossing.parameter_box, 19)
    return offline_train(crossing, 0.1, design)


@pytest.fixture
def write_config(tmp_path):
    """Write a run config as JSON and return its path."""
    def write(config: dict, name: str = "config.json") -> str:
        path = tmp_path / name
        path.write_text(json.dumps(config))
        return str(path)
    return write


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
