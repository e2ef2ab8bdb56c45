import numpy as np
import pytest

from sca_aec.dsp import StftConfig
from sca_aec.network import ModelConfig, ScaCrnModel

# Tiny analysis grid: F = 5 bins, hop = half window. Fast enough to run the
# full model forward inside gradient checks.
TOY_STFT = dict(window_len=8, hop=4, fft_len=8)


@pytest.fixture
def toy_stft_cfg():
    return StftConfig(**TOY_STFT)


@pytest.fixture
def toy_model():
    cfg = ModelConfig(d=16, n_heads=2, lookahead=0, lstm_hidden=16,
                      stft=StftConfig(**TOY_STFT))
    return ScaCrnModel(cfg, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_l2(a, b):
    denom = np.linalg.norm(b)
    if denom == 0.0:
        return np.linalg.norm(a)
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / denom
