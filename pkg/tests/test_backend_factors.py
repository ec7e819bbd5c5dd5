# test_backend_factors.py

"""Unit tests for the factor residuals and the robust kernel of the back-end."""

import math

import numpy as np
import pytest

from quadric_slam.backend import (
    GraphConfig,
    Mode,
    huber_cost,
    residual_2d,
    residual_3d,
    residual_odometry,
)
from quadric_slam.common import ProjectionFailed
from quadric_slam.fitting import Observation
from quadric_slam.geometry import (
    BBox,
    EllipsoidState,
    Pose,
    conic_bbox,
    ellipsoid_to_dual,
    project_dual,
    transform_ellipsoid,
)

LANDMARK = EllipsoidState((0.0, 0.0, 0.3), (0.0, 0.0, 0.4), (0.3, 0.2, 0.15))


@pytest.fixture(name="pose")
def pose_fixture():
    """
    Fixture of a camera two meters away looking at the landmark.
    """
    return Pose.look_at((2.0, 0.5, 1.2), LANDMARK.t)


def _observation(pose, p_e=1.0):
    state_c = transform_ellipsoid(LANDMARK, pose.inverse())
    return Observation(0, 1, "tv", BBox(0.0, 0.0, 1.0, 1.0), 1.0, state_c, p_e)


def test_residual_odometry_zero_when_consistent():
    """
    Test the odometry residual vanishes for the measured relative motion.
    """
    first = Pose.exp([0.1, 0.2, 0.3, 0.01, -0.02, 0.3])
    second = Pose.exp([0.4, -0.1, 0.2, 0.05, 0.02, -0.2])
    motion = first.inverse().compose(second)
    np.testing.assert_allclose(residual_odometry(first, motion, second), 0.0, atol=1e-12)


def test_residual_odometry_whitening():
    """
    Test a pure translation error is divided by the odometry sigma.
    """
    identity = Pose.identity()
    moved = Pose.exp([0.02, 0.0, 0.0, 0.0, 0.0, 0.0])
    residual = residual_odometry(identity, identity, moved)
    np.testing.assert_allclose(residual, [2.0, 0.0, 0.0, 0.0, 0.0, 0.0], atol=1e-9)


def test_residual_3d_zero_when_consistent(pose):
    """
    Test an exact camera-frame observation gives a zero 3D residual.
    """
    np.testing.assert_allclose(residual_3d(pose, _observation(pose), LANDMARK), 0.0, atol=1e-9)


@pytest.mark.parametrize("k", [0.01, 0.25, 0.5, 0.9])
def test_residual_3d_scales_with_probability(pose, k):
    """
    Test scaling p_e by k scales the squared residual norm by k.
    """
    shifted = EllipsoidState(LANDMARK.t + [0.05, 0.0, 0.0], LANDMARK.rpy, LANDMARK.s)
    full = residual_3d(pose, _observation(pose, 1.0), shifted)
    scaled = residual_3d(pose, _observation(pose, k), shifted)
    np.testing.assert_allclose(scaled, math.sqrt(k) * full)
    assert scaled @ scaled == pytest.approx(k * (full @ full))
    assert full[0] == pytest.approx(-1.0)


@pytest.mark.parametrize("k", [0.01, 0.25, 0.5, 0.9])
def test_residual_2d_scales_with_probability(pose, cam, k):
    """
    Test scaling p_det by k scales the squared box residual norm by k.
    """
    bbox = conic_bbox(project_dual(ellipsoid_to_dual(LANDMARK), pose, cam))
    moved = BBox(bbox.x_min + 3.0, bbox.y_min - 2.0, bbox.x_max, bbox.y_max + 1.0)
    full = residual_2d(pose, moved, 1.0, LANDMARK, cam)
    scaled = residual_2d(pose, moved, k, LANDMARK, cam)
    assert scaled @ scaled == pytest.approx(k * (full @ full))


def test_residual_2d_zero_for_projected_box(pose, cam):
    """
    Test the exact projected box gives a zero 2D residual.
    """
    bbox = conic_bbox(project_dual(ellipsoid_to_dual(LANDMARK), pose, cam))
    np.testing.assert_allclose(residual_2d(pose, bbox, 0.9, LANDMARK, cam), 0.0, atol=1e-9)


def test_residual_2d_scaling(pose, cam):
    """
    Test a one-pixel edge shift is whitened by sigma_2d and scaled by sqrt(p_det).
    """
    bbox = conic_bbox(project_dual(ellipsoid_to_dual(LANDMARK), pose, cam))
    moved = BBox(bbox.x_min + 1.0, bbox.y_min, bbox.x_max, bbox.y_max)
    residual = residual_2d(pose, moved, 0.81, LANDMARK, cam, sigma_2d=2.0)
    np.testing.assert_allclose(residual, [0.45, 0.0, 0.0, 0.0], atol=1e-9)


def test_residual_2d_behind_camera(cam):
    """
    Test a landmark behind the camera raises ProjectionFailed.
    """
    behind = EllipsoidState((0.0, 0.0, -3.0), (0.0, 0.0, 0.0), (0.3, 0.2, 0.1))
    with pytest.raises(ProjectionFailed):
        residual_2d(Pose.identity(), BBox(0.0, 0.0, 10.0, 10.0), 1.0, behind, cam)


@pytest.mark.parametrize(
    "r, delta, expected",
    [
        (0.0, 1.0, 0.0),
        (0.5, 1.0, 0.125),
        (1.0, 1.0, 0.5),
        (2.0, 1.0, 1.5),
        (3.0, 1.0, 2.5),
        (4.0, 2.0, 6.0),
    ],
)
def test_huber_cost(r, delta, expected):
    """
    Test the quadratic and linear branches of the Huber kernel.
    """
    assert huber_cost(r, delta) == pytest.approx(expected)


def test_huber_cost_is_continuous():
    """
    Test both branches meet at delta.
    """
    delta = 0.7
    below = huber_cost(delta - 1e-9, delta)
    above = huber_cost(delta + 1e-9, delta)
    assert above == pytest.approx(below, abs=1e-8)
    assert huber_cost(delta, delta) == pytest.approx(0.5 * delta * delta)


@pytest.mark.parametrize("delta", [0.1, 0.7, 10.0])
def test_huber_cost_slope_is_continuous(delta):
    """
    Test the one-sided slopes at delta both equal delta.
    """
    step = 1e-7
    left = (huber_cost(delta, delta) - huber_cost(delta - step, delta)) / step
    right = (huber_cost(delta + step, delta) - huber_cost(delta, delta)) / step
    assert left == pytest.approx(delta, abs=1e-6)
    assert right == pytest.approx(delta, abs=1e-6)


@pytest.mark.parametrize(
    "mode, uses_2d, uses_3d",
    [(Mode.TWO_D_ONLY, True, False), (Mode.DEPTH_ONLY, False, True), (Mode.DWB, True, True)],
)
def test_mode_factor_selection(mode, uses_2d, uses_3d):
    """
    Test which observation factors each mode uses.
    """
    assert mode.uses_2d is uses_2d
    assert mode.uses_3d is uses_3d


@pytest.mark.parametrize(
    "changes",
    [
        {"epsilon_z": -1.0},
        {"epsilon_z": math.inf},
        {"sigma_2d": 0.0},
        {"sigma_3d": (0.1,) * 8},
        {"sigma_odom": (0.1, 0.1, 0.1, 0.1, 0.1, 0.0)},
        {"mode": "3d"},
    ],
)
def test_graph_config_validation(changes):
    """
    Test invalid back-end settings are rejected.
    """
    with pytest.raises(ValueError):
        GraphConfig(**changes)


def test_graph_config_accepts_zero_epsilon():
    """
    Test epsilon_z may be zero and mode strings are converted.
    """
    config = GraphConfig(epsilon_z=0.0, mode="2d")
    assert config.mode is Mode.TWO_D_ONLY
