import numpy as np
import pytest

from virtual_channel import FadingChannelModel, make_gilbert_elliott

N_GSM = 114
GAMMA = 0.2
RHO = 1 / 195

_ACCEPTANCE_LINES = []


def record_acceptance(criterion, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
    _ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_model(rng, k, min_stay=0.0):
    """Random primitive channel with strictly positive transitions and sorted erasures."""
    B = rng.random((k, k)) + 0.05
    B /= B.sum(axis=1, keepdims=True)
    if min_stay:
        B = min_stay * np.eye(k) + (1 - min_stay) * B
    eps = np.sort(rng.random(k))[::-1]
    return FadingChannelModel(B, eps)


@pytest.fixture
def fig3_model():
    return make_gilbert_elliott(0.2, 0.3, N_GSM, (0.5, 0.125))


@pytest.fixture
def fig9_model():
    return make_gilbert_elliott(0.2, 0.3, N_GSM, (1.0, 0.0))
