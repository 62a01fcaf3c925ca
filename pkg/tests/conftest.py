import hypothesis
import numpy as np
import pytest

from dynlo.geometry import Pose

hypothesis.settings.register_profile(
    "default", max_examples=50, deadline=None,
    suppress_health_check=[hypothesis.HealthCheck.too_slow])
hypothesis.settings.load_profile("default")


def random_pose(rng: np.random.Generator, trans_scale: float = 5.0) -> Pose:
    """Uniformly random rotation (QR on a Gaussian) plus Gaussian translation."""
    A = rng.normal(size=(3, 3))
    Q, R = np.linalg.qr(A)
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 2] = -Q[:, 2]
    return Pose(Q, rng.normal(scale=trans_scale, size=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
