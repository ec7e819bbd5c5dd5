# conftest.py

"""Shared fixtures of the test suite."""

import numpy as np
import pytest

from quadric_slam.geometry import Camera, EllipsoidState, fibonacci_surface


@pytest.fixture(name="cam")
def camera_fixture():
    """
    Fixture of a 640x480 pinhole camera.
    """
    return Camera(fx=525.0, fy=525.0, cx=319.5, cy=239.5, width=640, height=480)


@pytest.fixture(name="ellipsoid")
def ellipsoid_fixture():
    """
    Fixture of a generic ellipsoid with descending semi-axes and small angles.
    """
    return EllipsoidState((0.3, -0.2, 2.5), (0.1, -0.2, 0.3), (0.5, 0.3, 0.2))


@pytest.fixture(name="rng")
def rng_fixture():
    """
    Fixture of a seeded random generator.
    """
    return np.random.default_rng(1234)


@pytest.fixture(name="floor")
def floor_fixture():
    """
    Fixture of a camera-frame floor grid one meter below a level camera.
    """
    xs, zs = np.meshgrid(np.linspace(-1.0, 1.0, 41), np.linspace(1.0, 4.0, 61))
    return np.column_stack([xs.ravel(), np.ones(xs.size), zs.ravel()])


@pytest.fixture(name="sphere")
def sphere_fixture():
    """
    Fixture of the surface of a 0.2 m ball floating 0.1 m above the floor.
    """
    state = EllipsoidState((0.0, 0.7, 2.5), (0.0, 0.0, 0.0), (0.2, 0.2, 0.2))
    points, _ = fibonacci_surface(state, 800)
    return points
