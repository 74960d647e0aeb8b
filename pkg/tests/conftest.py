import os
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ssmixer.rng import SplitMix64

settings.register_profile("repo", deadline=None, max_examples=40, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


@pytest.fixture
def rng():
    return SplitMix64(1234)


@pytest.fixture(scope="session")
def desk_runs():
    """Desk training runs shared by the harness and acceptance tests (trained once)."""
    from ssmixer.verify import run_desk_training

    root = Path(tempfile.mkdtemp(prefix="ssmixer-desk-"))
    cache = {}

    def get(kind):
        if kind not in cache:
            cache[kind] = run_desk_training(kind, root / kind)
        return cache[kind]

    return get


def max_abs(a, b):
    return float(np.abs(np.asarray(a) - np.asarray(b)).max())


ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
