import numpy as np
import pytest

from xmexp.data import SyntheticSpec, generate_synthetic, to_pairs
from xmexp.network import ChannelConfig, auditory_config, visual_config
from xmexp.som import SomConfig
from xmexp.trainer import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def full_config():
    return ModelConfig(visual_config(), auditory_config(), SomConfig())


@pytest.fixture(scope="session")
def small_config():
    """Full 100x40 auditory input but a narrow network and a small grid."""
    vis = ChannelConfig(3, 64, 64, (4, 4, 4), (5, 3, 3), 8)
    aud = ChannelConfig(1, 100, 40, (4, 4, 4), (3, 3, 3), 8)
    return ModelConfig(vis, aud, SomConfig(rows=4, cols=4, dim=16, epochs=20))


@pytest.fixture(scope="session")
def synthetic_recordings():
    return generate_synthetic(SyntheticSpec(), seed=0)


@pytest.fixture(scope="session")
def synthetic_pairs(synthetic_recordings):
    return to_pairs(synthetic_recordings)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
