import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from acceptance_helpers import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        title, passed, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")


@pytest.fixture(scope="session")
def cartpole_runs(tmp_path_factory):
    """Full method and unconstrained ablation on cartpole, five seeds each."""
    from acceptance_helpers import SEEDS, deterministic_runs

    jobs = {}
    for s in SEEDS:
        jobs["drpo", s] = ("cartpole_move", dict(seed=s))
        jobs["vanilla", s] = ("cartpole_move", dict(seed=s, unconstrained=True, use_shield=False))
    return deterministic_runs(tmp_path_factory.mktemp("cartpole"), jobs)


@pytest.fixture(scope="session")
def double_integrator_runs(tmp_path_factory):
    """Full method with default flags on the double integrator, five seeds."""
    from acceptance_helpers import SEEDS, deterministic_runs

    jobs = {s: ("double_integrator", dict(seed=s)) for s in SEEDS}
    return deterministic_runs(tmp_path_factory.mktemp("double_integrator"), jobs)
