import numpy as np
import pytest

from ergodic_ia.executor import EpisodeExecutor
from ergodic_ia.models import QuantizerConfig, SystemConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def noiseless_config():
    return SystemConfig(num_users=3, noise_variance=0.0)


@pytest.fixture
def noisy_config():
    return SystemConfig.at_snr_db(20.0, num_users=3)


@pytest.fixture
def coarse_quantizer():
    return QuantizerConfig(magnitude_step=1.0, phase_bins=4, magnitude_cap=2.0)


@pytest.fixture
def executor():
    return EpisodeExecutor(workers=2, batch_size=50)


@pytest.fixture
def rng_factory():
    def make(*keys):
        return np.random.default_rng(np.random.SeedSequence(list(keys)))

    return make
