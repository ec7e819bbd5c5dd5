# test_geometry_plane.py

"""Unit tests for the Plane type and shared numeric helpers."""

import math

import numpy as np
import pytest

from quadric_slam.common import format_float, wrap_angle
from quadric_slam.geometry import Plane, Pose, point_plane_distance


def test_plane_normalises():
    """
    Test the normal is made unit length and the offset scaled with it.
    """
    plane = Plane((0.0, 0.0, 2.0), -4.0)
    np.testing.assert_allclose(plane.normal, [0.0, 0.0, 1.0])
    assert plane.offset == pytest.approx(-2.0)
    assert point_plane_distance([0.0, 0.0, 3.0], plane) == pytest.approx(1.0)


def test_plane_zero_normal():
    """
    Test a zero normal is rejected.
    """
    with pytest.raises(ValueError):
        Plane((0.0, 0.0, 0.0), 1.0)


def test_plane_project_and_flip():
    """
    Test projection lands on the plane and flipping negates distances.
    """
    plane = Plane.from_point_normal((0.0, 0.0, 1.0), (0.0, 1.0, 1.0))
    points = np.array([[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]])
    np.testing.assert_allclose(plane.distance(plane.project(points)), 0.0, atol=1e-12)
    np.testing.assert_allclose(plane.flipped().distance(points), -plane.distance(points))


def test_plane_transformed_keeps_distances():
    """
    Test a plane moved by a pose keeps the distances of moved points.
    """
    plane = Plane((0.1, -1.0, 0.2), 0.7)
    pose = Pose.exp([0.3, 0.2, -0.5, 0.1, 0.4, -0.2])
    points = np.array([[0.0, 0.0, 1.0], [1.0, -2.0, 3.0]])
    np.testing.assert_allclose(
        plane.transformed(pose).distance(pose.transform_points(points)),
        plane.distance(points),
        atol=1e-12,
    )


@pytest.mark.parametrize(
    "angle, expected",
    [
        (0.0, 0.0),
        (math.pi, math.pi),
        (-math.pi, math.pi),
        (3.0 * math.pi, math.pi),
        (2.0 * math.pi + 0.5, 0.5),
        (-0.5, -0.5),
    ],
)
def test_wrap_angle(angle, expected):
    """
    Test angles are wrapped to (-pi, pi].
    """
    assert wrap_angle(angle) == pytest.approx(expected)


@pytest.mark.parametrize(
    "value, digits, expected",
    [(1.5, 3, "1.500"), (-1e-12, 9, "0.000000000"), (-0.25, 2, "-0.25"), (2.0, 0, "2")],
)
def test_format_float(value, digits, expected):
    """
    Test fixed-decimal formatting without negative zero.
    """
    assert format_float(value, digits) == expected
