import numpy as np
import pytest

from polhdr.crf import Crf
from polhdr.synth import SceneSpec, generate_scene


@pytest.fixture(scope="session")
def small_scene():
    spec = SceneSpec(width=64, height=64, dynamic_range_stops=14, rho_range=(0.6, 1.0), seed=0)
    return generate_scene(spec)


@pytest.fixture
def gamma_crf():
    return Crf("gamma", 2.2, 1.0, 8)


@pytest.fixture
def linear_crf():
    return Crf("gamma", 1.0, 1.0, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
