# test_fitting_ellipsoid.py

"""Unit tests for the single-frame ellipsoid fit and its probabilities."""

import math
from unittest.mock import patch

import numpy as np
import pytest

from quadric_slam.common import SolverDiverged, TooFewPoints
from quadric_slam.fitting import (
    FIT_NORMALIZER,
    FitParams,
    algebraic_distance,
    combine_probability,
    detection_rng,
    fit_cost,
    fit_ellipsoid,
    fit_probability,
    numeric_jacobian,
    primal_quadric,
)
from quadric_slam.geometry import EllipsoidState, Plane, fibonacci_surface

FLOOR = Plane((0.0, 0.0, 1.0), 0.0)


@pytest.fixture(name="standing")
def standing_fixture():
    """
    Fixture of an upright ellipsoid resting on the floor.
    """
    return EllipsoidState((0.3, -0.2, 0.15), (0.0, 0.0, 0.7), (0.4, 0.25, 0.15))


def test_algebraic_distance_levels(standing):
    """
    Test the algebraic distance is -1 at the centre and 0 on the surface.
    """
    surface, _ = fibonacci_surface(standing, 200)
    assert algebraic_distance(standing.t, standing) == pytest.approx(-1.0)
    np.testing.assert_allclose(algebraic_distance(surface, standing), 0.0, atol=1e-12)
    assert fit_cost(surface, standing) == pytest.approx(0.0, abs=1e-20)


def test_primal_quadric_matches_algebraic_distance(standing, rng):
    """
    Test X^T Q X equals the algebraic distance for arbitrary points.
    """
    points = rng.uniform(-1.0, 1.0, (20, 3))
    homogeneous = np.column_stack([points, np.ones(len(points))])
    quadric = primal_quadric(standing)
    values = np.einsum("ij,jk,ik->i", homogeneous, quadric, homogeneous)
    np.testing.assert_allclose(values, algebraic_distance(points, standing), atol=1e-9)


def test_numeric_jacobian_of_linear_map(rng):
    """
    Test the finite-difference Jacobian of a linear map is the matrix itself.
    """
    matrix = rng.normal(size=(4, 3))
    jac = numeric_jacobian(lambda x: matrix @ x, np.array([0.5, -2.0, 30.0]))
    np.testing.assert_allclose(jac, matrix, atol=1e-6)


def test_fit_recovers_noiseless_ellipsoid(standing):
    """
    Test a full noiseless surface is fitted to its own ellipsoid.
    """
    cloud, _ = fibonacci_surface(standing, 600)
    params = FitParams(max_iterations=200, convergence_tol=1e-12)
    result = fit_ellipsoid(cloud, FLOOR, params=params)

    np.testing.assert_allclose(result.ellipsoid.t, standing.t, atol=1e-3 * 0.4)
    np.testing.assert_allclose(np.sort(result.ellipsoid.s), np.sort(standing.s), rtol=0.01)
    assert np.max(np.abs(algebraic_distance(cloud, result.ellipsoid))) < 0.05
    assert result.residual_T < 1e-4
    assert result.p_fit == pytest.approx(FIT_NORMALIZER, rel=1e-3)


def test_fit_uses_initial_axis(standing):
    """
    Test an explicit in-plane initial axis still converges.
    """
    cloud, _ = fibonacci_surface(standing, 600)
    params = FitParams(max_iterations=200, convergence_tol=1e-12)
    axis = (math.cos(0.7), math.sin(0.7), 0.0)
    result = fit_ellipsoid(cloud, FLOOR, init_axis=axis, params=params)
    np.testing.assert_allclose(result.ellipsoid.t, standing.t, atol=1e-3 * 0.4)


def test_fit_too_few_points(standing):
    """
    Test clouds under min_points raise TooFewPoints.
    """
    cloud, _ = fibonacci_surface(standing, 10)
    with pytest.raises(TooFewPoints):
        fit_ellipsoid(cloud, FLOOR)


@pytest.mark.parametrize(
    "residual, expected",
    [
        (0.0, FIT_NORMALIZER),
        (2.0, FIT_NORMALIZER * math.exp(-1.0)),
        (10.0, FIT_NORMALIZER * math.exp(-5.0)),
    ],
)
def test_fit_probability(residual, expected):
    """
    Test P_fit = exp(-T / 2) / sqrt(2 pi).
    """
    assert fit_probability(residual) == pytest.approx(expected)


def test_fit_probability_negative():
    """
    Test a negative residual is rejected.
    """
    with pytest.raises(ValueError):
        fit_probability(-1.0)


def test_combine_probability():
    """
    Test the combined probability is the product of its factors.
    """
    assert combine_probability(0.9, 0.5, 0.4) == pytest.approx(0.18)


def test_detection_rng_is_order_independent():
    """
    Test generators depend only on their seed tuple.
    """
    first = detection_rng(3, 5, 7).random(4)
    detection_rng(3, 6, 7).random(10)
    np.testing.assert_array_equal(detection_rng(3, 5, 7).random(4), first)
    assert not np.array_equal(detection_rng(3, 5, 8).random(4), first)


@pytest.mark.parametrize(
    "changes", [{"max_iterations": 0}, {"lm_initial_lambda": 0.0}, {"min_points": -3}]
)
def test_fit_params_validation(changes):
    """
    Test invalid solver schedules are rejected.
    """
    with pytest.raises(ValueError):
        FitParams(**changes)


@pytest.mark.parametrize(
    "point, expected",
    [((1.0, 0.0, 0.0), 0.0), ((0.0, 0.0, 0.0), -1.0), ((2.0, 0.0, 0.0), 3.0)],
)
def test_algebraic_distance_unit_sphere(point, expected):
    """
    Test the algebraic distance of a unit sphere at the surface, centre and outside.
    """
    sphere = EllipsoidState((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    assert algebraic_distance(point, sphere) == pytest.approx(expected)


def test_fit_cost_of_empty_cloud(standing):
    """
    Test an empty cloud costs nothing.
    """
    assert fit_cost(np.zeros((0, 3)), standing) == 0.0


def test_fit_noisy_surface(standing):
    """
    Test 5 mm surface noise keeps the median centre error under 1 cm and axes within 5%.
    """
    clean, _ = fibonacci_surface(standing, 600)
    center_errors, axis_errors = [], []
    for seed in range(20):
        noise = np.random.default_rng(seed).normal(scale=0.005, size=clean.shape)
        result = fit_ellipsoid(clean + noise, FLOOR)
        center_errors.append(np.linalg.norm(result.ellipsoid.t - standing.t))
        axis_errors.append(
            np.max(np.abs(np.sort(result.ellipsoid.s) / np.sort(standing.s) - 1.0))
        )
    assert np.median(center_errors) < 0.01
    assert np.median(axis_errors) < 0.05


def test_fit_diverges_without_descent(standing):
    """
    Test SolverDiverged when no trial step within the budget lowers the cost.
    """
    cloud, _ = fibonacci_surface(standing, 100)
    params = FitParams(max_iterations=20)
    with patch("quadric_slam.fitting._fit_residuals", return_value=np.ones(5)) as mock_res:
        with pytest.raises(SolverDiverged):
            fit_ellipsoid(cloud, FLOOR, params=params)
    assert mock_res.call_count > params.max_iterations
