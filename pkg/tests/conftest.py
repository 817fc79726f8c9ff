import numpy as np
import pytest
from hypothesis import settings

from fluctqkd import ChannelParams, FluctuationBounds, PulseEnsembleSpec

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def peng_channel():
    return ChannelParams(distance_km=50, alpha_db_per_km=0.2, eta_bob=0.045, d_B=1e-5, e_det=0.015)


def peng_spec(delta=0.0, eps=0.0, draw_law="uniform", p_0=0.1):
    p_rest = 1.0 - p_0
    return PulseEnsembleSpec(
        p=p_rest / 3, p_prime=2 * p_rest / 3, p_0=p_0, mu=0.2, mu_prime=0.6,
        fluctuation=FluctuationBounds(delta=delta, eps_d=eps, eps_s=eps, draw_law=draw_law),
    )


@pytest.fixture
def peng():
    return peng_spec
