import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ultragray.probe import Pose, ProbeGeometry, rotation_about
from ultragray.scene import GaussianField, SceneMeta

settings.register_profile("ultragray", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ultragray")


@pytest.fixture
def geometry():
    return ProbeGeometry(6.0, 6.0, 16, 16)


def random_pose(rng, max_angle=0.4, shift=0.5):
    axis = rng.normal(size=3)
    R = rotation_about(axis, rng.uniform(-max_angle, max_angle))
    return Pose(R, rng.uniform(-shift, shift, 3))


def single_gaussian(mean, scales, quat=(1.0, 0.0, 0.0, 0.0), tau=0.5, sh=(1.0, 0.0, 0.0, 0.0), meta=None):
    return GaussianField(
        means=np.array([mean], dtype=float),
        log_scales=np.log(np.array([scales], dtype=float)),
        quaternions=np.array([quat], dtype=float),
        trans_logits=np.array([np.log(tau) - np.log1p(-tau)]),
        sh_coeffs=np.array([sh], dtype=float),
        meta=meta or SceneMeta(),
    )


# acceptance criteria report one line each at the end of the session
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
