import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from trajtok.geometry import canonical
from trajtok.synth import smooth_corpus
from trajtok.tokenizer import collect_deltas, fit_library
from trajtok.waypoints import WaypointThresholds

settings.register_profile(
    "trajtok",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("trajtok")


def random_quats(rng, n=None):
    q = rng.standard_normal((n, 4) if n is not None else 4)
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return canonical(q)


@pytest.fixture(scope="session")
def small_corpus():
    return smooth_corpus(60, seed=3)


@pytest.fixture(scope="session")
def small_library(small_corpus):
    deltas = collect_deltas(small_corpus, WaypointThresholds())
    return fit_library(deltas, k_trans=24, k_rot=24, seed=0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
