from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from grassmann_hf.gfi import load_integrals
from grassmann_hf.hf import random_integral_set
from grassmann_hf.manifold import GrassmannPoint, MetricBasis, ProductPoint

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def random_spd(rng, d, scale=0.3):
    A = rng.standard_normal((d, d)) * scale
    return A @ A.T + np.eye(d)


def random_metric(rng, d):
    return MetricBasis.from_matrix(random_spd(rng, d))


def fd_derivative(f, h=1e-5):
    """Central first derivative at 0 of a scalar function of t."""
    return (f(h) - f(-h)) / (2 * h)


def fd_second(f, h=1e-3):
    """Five-point second derivative at 0."""
    return (-f(2 * h) + 16 * f(h) - 30 * f(0.0) + 16 * f(-h) - f(-2 * h)) / (12 * h * h)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk():
    return load_integrals(FIXTURES / "desk4.gfi")


@pytest.fixture(scope="session")
def h2():
    return load_integrals(FIXTURES / "h2_sto3g.gfi")


@pytest.fixture
def small_ints():
    return random_integral_set(4, 2, 2, seed=11)


def core_start(ints):
    from grassmann_hf.cli import make_guess
    pair = make_guess(ints, "core")
    m = ints.metric
    return ProductPoint(GrassmannPoint(m, pair.C_alpha), GrassmannPoint(m, pair.C_beta))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
