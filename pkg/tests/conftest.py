import numpy as np
import pytest
from hypothesis import settings

from skelreg.geometry import rotation_about_axis, RigidTransform
from skelreg.synth import CageSpec, generate_cage


def random_rigid(rng, max_angle=np.pi, max_shift=50.0):
    axis = rng.normal(size=3)
    rot = rotation_about_axis(axis, rng.uniform(-max_angle, max_angle))
    return RigidTransform(rot, rng.uniform(-max_shift, max_shift, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cage():
    """Default synthetic cage and its ground truth."""
    return generate_cage(CageSpec(seed=0))


settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")


_CRITERIA = {}


@pytest.fixture(scope="session")
def criterion_log():
    """Acceptance results keyed by criterion number, printed in the terminal summary."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[key])
