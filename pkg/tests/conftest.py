import os
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wassbary.errors import CollisionWarning

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def _quiet_collisions():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CollisionWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    from tests._report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
