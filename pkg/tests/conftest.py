import numpy as np
import pytest

from FlowLab.models import IntegratorConfig
from FlowLab.systems import get_system


@pytest.fixture
def cfg():
    return IntegratorConfig(step=0.01)


@pytest.fixture
def fine():
    return IntegratorConfig(step=1e-3)


@pytest.fixture
def lorenz_point(cfg):
    """A point on the Lorenz attractor after a short transient."""
    from FlowLab.flow_core import advance

    return advance(get_system("lorenz"), np.array([1.0, 1.0, 20.0]), 10.0, cfg)


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / "out"
    path.mkdir()
    return path
