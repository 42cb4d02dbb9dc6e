import math

import numpy as np
import pytest
from hypothesis import strategies as st

from bevlift.camera import Intrinsics, make_rig


def random_rig(rng: np.random.Generator, image_size=None):
    """A downward-looking rig with random mounting and intrinsics."""
    k = Intrinsics(rng.uniform(300, 2000), rng.uniform(300, 2000), rng.uniform(-50, 1000), rng.uniform(-50, 600))
    return make_rig(
        height=rng.uniform(1.0, 20.0),
        pitch_deg=rng.uniform(5.0, 60.0),
        yaw_deg=rng.uniform(-180.0, 180.0),
        roll_deg=rng.uniform(-10.0, 10.0),
        intrinsics=k,
        image_size=image_size,
        position_xy=(rng.uniform(-10, 10), rng.uniform(-10, 10)),
    )


@st.composite
def rigs(draw):
    k = Intrinsics(
        draw(st.floats(200, 2500)), draw(st.floats(200, 2500)),
        draw(st.floats(0, 1500)), draw(st.floats(0, 900)),
    )
    return make_rig(
        height=draw(st.floats(0.5, 30.0)),
        pitch_deg=draw(st.floats(-30.0, 80.0)),
        yaw_deg=draw(st.floats(-180.0, 180.0)),
        roll_deg=draw(st.floats(-20.0, 20.0)),
        intrinsics=k,
        position_xy=(draw(st.floats(-50, 50)), draw(st.floats(-50, 50))),
    )


def ray_plane_oracle(rig, u, v, h):
    """Intersect the pixel's viewing ray with the ego plane z = h.

    Written independently of the virtual frame: the ray is
    C + s * R^T K^-1 [u, v, 1] in ego coordinates, and s solves
    a 1x1 linear system for the z-component.
    """
    e, k = rig.extrinsics, rig.intrinsics
    direction = e.rotation.T @ np.linalg.solve(k.matrix, np.array([u, v, 1.0]))
    center = e.camera_center
    s = np.linalg.solve(np.array([[direction[2]]]), np.array([h - center[2]]))[0]
    return center + s * direction


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def deg(x):
    return math.radians(x)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
