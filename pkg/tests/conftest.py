import numpy as np
import pytest


def random_spd(rng, D=2, spread=1.0):
    A = rng.normal(size=(D, D))
    w = np.exp(rng.uniform(-spread, spread, size=D))
    Q, _ = np.linalg.qr(A)
    return (Q * w) @ Q.T


def random_sym(rng, D=2, scale=1.0):
    A = rng.normal(scale=scale, size=(D, D))
    return 0.5 * (A + A.T)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
