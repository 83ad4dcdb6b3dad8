import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rfcmotion import quat
from rfcmotion.model import builtin_model

settings.register_profile("rfc", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("rfc")


@pytest.fixture(scope="session")
def chain3():
    return builtin_model("chain3")


@pytest.fixture(scope="session")
def biped():
    return builtin_model("biped")


@pytest.fixture(scope="session")
def ball():
    return builtin_model("ball")


@pytest.fixture(scope="session")
def hopper():
    return builtin_model("hopper")


def random_q(model, rng, height=1.0, spread=0.6):
    q = model.rest_q(height)
    q[:3] += rng.normal(size=3) * 0.3
    q[3:7] = quat.normalize(rng.normal(size=4))
    q[7:] = rng.normal(size=model.actuated_dof_count) * spread
    return q


def random_state(model, rng, height=1.0):
    return random_q(model, rng, height), rng.normal(size=model.dof_count)


# -- acceptance report ---------------------------------------------------------

_CRITERIA = []


@pytest.fixture
def verdict(request):
    """Record ``verdict(number, passed, detail)`` lines for the terminal summary."""
    def record(number, passed, detail=""):
        _CRITERIA.append((number, bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_CRITERIA, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
