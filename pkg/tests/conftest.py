import numpy as np
import pytest

from gaussflow.operators import random_operator_set

ACCEPTANCE_LINES = []


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    ref = np.linalg.norm(b)
    return np.linalg.norm(a - b) / ref if ref else np.linalg.norm(a - b)


def random_psd(rng, n, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * A @ A.T / n


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def general_ops():
    return random_operator_set(3, seed=7)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
