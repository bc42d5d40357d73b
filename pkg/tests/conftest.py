import warnings

import numpy as np
import pytest

from relvlasov.phase_space import InitialProfile, sample_ensemble

warnings.filterwarnings("ignore", module="numba")

# Lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def gaussian_profile():
    return InitialProfile.gaussian(mass=1.0, sigma_x=0.4, sigma_v=0.3)


@pytest.fixture(scope="session")
def small_ensemble(gaussian_profile):
    return sample_ensemble(gaussian_profile, 64, seed=7)
