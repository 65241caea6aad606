import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from avatarfit.calibration import calibrate_session
from avatarfit.motion import squat_script, tpose_script
from avatarfit.rigs import humanoid, humanoid_long_legs
from avatarfit.session import generate_synthetic_session

settings.register_profile(
    "ci",
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
    deadline=None,
)
settings.load_profile("ci")


def random_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def random_quat(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


@pytest.fixture(scope="session")
def user_skeleton():
    return humanoid()


@pytest.fixture(scope="session")
def long_leg_skeleton():
    return humanoid_long_legs()


@pytest.fixture(scope="session")
def tpose_session(user_skeleton):
    return generate_synthetic_session(user_skeleton, tpose_script(duration=0.5, fps=10.0))


@pytest.fixture(scope="session")
def squat_session(user_skeleton):
    return generate_synthetic_session(user_skeleton, squat_script(user_skeleton))


@pytest.fixture(scope="session")
def matched_setup(tpose_session):
    """Profile captured for the avatar matching the synthetic user."""
    session, truth = tpose_session
    profile, scaled, _ = calibrate_session(session, humanoid())
    return session, truth, profile, scaled


@pytest.fixture(scope="session")
def long_leg_setup(squat_session):
    """Squat session solved against the 10%-longer-legs avatar."""
    session, truth = squat_session
    profile, scaled, _ = calibrate_session(session, humanoid_long_legs())
    return session, truth, profile, scaled
