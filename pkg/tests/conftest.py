import numpy as np
import pytest

from kclstm.data_io import synthesize
from kclstm.lstm_core import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    return TrainConfig(epochs=8, hidden_size=6, batch_size=8, seed=3)


@pytest.fixture
def spiky_sine():
    return synthesize("sine", 120, 0.05, 3, 8.0, seed=7)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
