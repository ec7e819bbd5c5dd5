# -*- coding: utf-8 -*-
"""
quadric-slam - single-frame ellipsoid estimation

Volume-regularised least-squares ellipsoid fitting on a completed object
cloud, the fitting probability and the per-frame pipeline that chains
segmentation, symmetry completion and fitting.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from quadric_slam.common import QuadricError, SolverDiverged, TooFewPoints
from quadric_slam.geometry import BBox, EllipsoidState, decompose_dual, ellipsoid_to_dual
from quadric_slam.segmentation import frame_support_planes, segment_object
from quadric_slam.symmetry import estimate_symmetry

FIT_NORMALIZER = 1.0 / math.sqrt(2.0 * math.pi)
MIN_AXIS = 0.01
MAX_LAMBDA = 1e10


@dataclass(frozen=True)
class FitParams:
    """
    Solver schedule of fit_ellipsoid.

    Attributes:
        max_iterations (int): Maximum LM trial steps.
        lm_initial_lambda (float): Initial Marquardt damping.
        convergence_tol (float): Relative cost decrease that stops the solver.
        min_points (int): Smallest cloud accepted.
    """

    max_iterations: int = 50
    lm_initial_lambda: float = 1e-3
    convergence_tol: float = 1e-8
    min_points: int = 30

    def __post_init__(self):
        for name in ("max_iterations", "lm_initial_lambda", "convergence_tol", "min_points"):
            if getattr(self, name) <= 0:
                raise ValueError(f"Fit parameter {name} must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    """Fitted ellipsoid with its mean residual and fitting probability."""

    ellipsoid: EllipsoidState
    residual_T: float  # pylint: disable=invalid-name
    p_fit: float
    iterations: int
    converged: bool


@dataclass(frozen=True, eq=False)
class Observation:
    """
    Single-frame estimate of one object.

    Attributes:
        frame_id (int): Keyframe index.
        object_id (int): Data-association id.
        label (str): Detector label.
        bbox (BBox): Detection box.
        p_det (float): Detection probability.
        ellipsoid_c (EllipsoidState): Ellipsoid in the camera frame.
        p_e (float): Combined probability p_det * p_sym * p_fit.
    """

    frame_id: int
    object_id: int
    label: str
    bbox: BBox
    p_det: float
    ellipsoid_c: EllipsoidState
    p_e: float


def primal_quadric(state):
    """
    Primal matrix Z^-T diag(1/s^2, -1) Z^-1, scaled so X^T Q X is -1 at the centre.

    Args:
        state (EllipsoidState): The ellipsoid.

    Returns:
        numpy.ndarray: 4x4 symmetric matrix.
    """
    z_inv = np.linalg.inv(state.homogeneous())
    return z_inv.T @ np.diag(np.append(1.0 / state.s**2, -1.0)) @ z_inv


def algebraic_distance(points, state):
    """
    Evaluate X^T Q X for one point or an (N, 3) array of points.

    The value is 0 on the surface, -1 at the centre and grows
    quadratically outside.

    Args:
        points (array-like): A 3-vector or an (N, 3) array.
        state (EllipsoidState): The ellipsoid.

    Returns:
        float or numpy.ndarray: One value per point.
    """
    points = np.asarray(points, dtype=float)
    local = (points - state.t) @ state.rotation_matrix()
    return np.sum((local / state.s) ** 2, axis=-1) - 1.0


def fit_cost(cloud, state):
    """Volume-weighted cost sum_i (sqrt(s1 s2 s3) F(X_i))^2."""
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(cloud) == 0:
        return 0.0
    return float(np.prod(state.s) * np.sum(algebraic_distance(cloud, state) ** 2))


def _state_from_params(params):
    return EllipsoidState(params[:3], params[3:6], np.exp(params[6:9]))


def _fit_residuals(params, cloud):
    log_axes = params[6:9]
    if not np.all(np.isfinite(params)) or np.any(np.abs(log_axes) > 50.0):
        return np.full(len(cloud), np.inf)
    state = _state_from_params(params)
    return math.sqrt(float(np.prod(state.s))) * algebraic_distance(cloud, state)


def numeric_jacobian(func, params, rel_step=1e-6):
    """
    Central finite-difference Jacobian.

    Args:
        func (callable): Maps a parameter vector to a residual vector.
        params (numpy.ndarray): Linearisation point.
        rel_step (float): Step relative to max(1, |x_k|).

    Returns:
        numpy.ndarray: (len(residuals), len(params)) matrix.
    """
    params = np.asarray(params, dtype=float)
    columns = []
    for k, value in enumerate(params):
        step = rel_step * max(1.0, abs(value))
        forward, backward = params.copy(), params.copy()
        forward[k] += step
        backward[k] -= step
        columns.append((func(forward) - func(backward)) / (2.0 * step))
    return np.column_stack(columns)


def _initial_params(cloud, support, init_axis):
    centroid = cloud.mean(axis=0)
    z_axis = support.normal
    flat = support.project(cloud) - support.project(centroid)

    x_axis = None
    if init_axis is not None:
        x_axis = np.asarray(init_axis, dtype=float)
        x_axis = x_axis - (x_axis @ z_axis) * z_axis
        if np.linalg.norm(x_axis) < 1e-9:
            x_axis = None
    if x_axis is None:
        _, eigvecs = linalg.eigh(flat.T @ flat / len(flat))
        x_axis = eigvecs[:, -1] - (eigvecs[:, -1] @ z_axis) * z_axis
        if np.linalg.norm(x_axis) < 1e-9:
            x_axis = np.cross(z_axis, np.eye(3)[int(np.argmin(np.abs(z_axis)))])
    x_axis /= np.linalg.norm(x_axis)
    rot = np.column_stack([x_axis, np.cross(z_axis, x_axis), z_axis])

    local = (cloud - centroid) @ rot
    axes = np.maximum(2.0 * np.sqrt(local.var(axis=0)), MIN_AXIS)
    init = EllipsoidState.from_rotation(centroid, rot, axes)
    return np.concatenate([init.t, init.rpy, np.log(init.s)])


def fit_ellipsoid(cloud, support, init_axis=None, params=None):
    """
    Fit a 9-DOF ellipsoid to a point cloud with Levenberg-Marquardt.

    The unknowns are (t, rpy, log s). The solver starts at the centroid with
    the z-axis on the support normal and the x-axis on init_axis (or the main
    planar PCA direction), and minimises fit_cost.

    Args:
        cloud (numpy.ndarray): (N, 3) points, usually the completed cloud.
        support (Plane): Supporting plane, normal pointing up.
        init_axis (array-like): Optional in-plane direction for the x-axis,
            e.g. the symmetry plane normal.
        params (FitParams): Solver schedule.

    Returns:
        FitResult: Canonical ellipsoid, residual T = cost / N and P_fit.

    Raises:
        TooFewPoints: If the cloud has fewer than min_points points.
        SolverDiverged: If the initial cost is not finite or every trial step
            of the budget failed to lower the cost.
    """
    params = FitParams() if params is None else params
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(cloud) < params.min_points:
        raise TooFewPoints(f"Cloud has {len(cloud)} points, need {params.min_points}")

    def residuals(vector):
        return _fit_residuals(vector, cloud)

    x = _initial_params(cloud, support, init_axis)
    r = residuals(x)
    cost = float(r @ r)
    if not math.isfinite(cost):
        raise SolverDiverged("Initial fit cost is not finite")

    lam = params.lm_initial_lambda
    jac, accepted, converged = None, 0, False
    iteration = 0
    for iteration in range(1, params.max_iterations + 1):
        if cost <= 1e-30:
            converged = True
            break
        if jac is None:
            jac = numeric_jacobian(residuals, x)
            hessian, gradient = jac.T @ jac, jac.T @ r
        damped = hessian + lam * np.diag(np.diag(hessian) + 1e-12)
        try:
            step = linalg.solve(damped, -gradient, assume_a="sym")
        except linalg.LinAlgError:
            step = np.full_like(x, np.nan)

        r_new = residuals(x + step)
        cost_new = float(r_new @ r_new)
        if math.isfinite(cost_new) and cost_new < cost:
            decrease = (cost - cost_new) / cost
            x, r, cost = x + step, r_new, cost_new
            lam = max(lam / 10.0, 1e-12)
            jac, accepted = None, accepted + 1
            logging.debug("Fit iteration %d: cost %.6e, lambda %.1e", iteration, cost, lam)
            if decrease < params.convergence_tol:
                converged = True
                break
        else:
            if lam >= MAX_LAMBDA and accepted:
                converged = True
                break
            lam = min(lam * 10.0, MAX_LAMBDA)

    if not converged and accepted == 0:
        raise SolverDiverged(f"No step accepted in {params.max_iterations} iterations")

    state = decompose_dual(ellipsoid_to_dual(_state_from_params(x)))
    residual_t = cost / len(cloud)
    return FitResult(
        ellipsoid=state,
        residual_T=residual_t,
        p_fit=fit_probability(residual_t),
        iterations=iteration,
        converged=converged,
    )


def fit_probability(residual_t):
    """P_fit = (2 pi)^-1/2 exp(-T / 2)."""
    if residual_t < 0:
        raise ValueError(f"Residual must be nonnegative: {residual_t}")
    return FIT_NORMALIZER * math.exp(-0.5 * residual_t)


def combine_probability(p_det, p_sym, p_fit):
    """P_e = P_det * P_sym * P_fit."""
    return p_det * p_sym * p_fit


def detection_rng(seed, frame_id, object_id=None):
    """Generator seeded from (seed, frame_id[, object_id]), independent of call order."""
    entropy = [int(seed), int(frame_id)]
    if object_id is not None:
        entropy.append(int(object_id))
    return np.random.default_rng(entropy)


def estimate_detection(frame, cam, detection, planes, settings, seed=0):
    """
    Run segmentation, symmetry completion and fitting for one detection.

    Args:
        frame (DepthImage or numpy.ndarray): Depth image or camera-frame cloud.
        cam (Camera): Intrinsics.
        detection (Detection): The detection.
        planes (list): Supporting-plane candidates of the frame.
        settings (tuple): (seg_params, sym_params, fit_params, symmetry_table).
        seed (int): Base seed.

    Returns:
        Observation or None: None when a stage fails; the failure is logged.
    """
    seg_params, sym_params, fit_params, table = settings
    rng = detection_rng(seed, detection.frame_id, detection.object_id)
    segmented = segment_object(frame, cam, detection, seg_params, rng, planes=planes)
    if segmented is None:
        logging.warning(
            "Frame %s object %s: segmentation found no envelope cloud",
            detection.frame_id,
            detection.object_id,
        )
        return None
    try:
        symmetry = estimate_symmetry(
            segmented.cloud,
            segmented.support_plane,
            detection.label,
            sym_params,
            table,
            viewpoint=np.zeros(3),
        )
        fit = fit_ellipsoid(
            symmetry.completed, segmented.support_plane, symmetry.planes[0].normal, fit_params
        )
    except QuadricError as err:
        logging.warning(
            "Frame %s object %s: %s: %s",
            detection.frame_id,
            detection.object_id,
            type(err).__name__,
            err,
        )
        return None

    p_e = combine_probability(detection.p_det, symmetry.p_sym, fit.p_fit)
    logging.debug(
        "Frame %s object %s: p_sym=%.4f p_fit=%.4f p_e=%.4f",
        detection.frame_id,
        detection.object_id,
        symmetry.p_sym,
        fit.p_fit,
        p_e,
    )
    return Observation(
        frame_id=detection.frame_id,
        object_id=detection.object_id,
        label=detection.label,
        bbox=detection.bbox,
        p_det=detection.p_det,
        ellipsoid_c=fit.ellipsoid,
        p_e=p_e,
    )


# pylint: disable=too-many-arguments
def estimate_single_frame(
    frame, cam, detections, seg_params, sym_params, fit_params, symmetry_table=None, seed=0
):
    """
    Single-frame ellipsoid estimation for every detection of one frame.

    Supporting planes are extracted once and shared by the detections.
    Detections failing any stage are dropped from the output.

    Args:
        frame (DepthImage or numpy.ndarray): Depth image or camera-frame cloud.
        cam (Camera): Intrinsics.
        detections (list): Detections of this frame.
        seg_params (SegmentationParams): Segmentation thresholds.
        sym_params (SymmetryParams): Symmetry search schedule.
        fit_params (FitParams): Fit schedule.
        symmetry_table (dict): Label to SymmetryType map.
        seed (int): Base seed.

    Returns:
        list: Observation objects in detection order.
    """
    if not detections:
        return []
    frame_id = detections[0].frame_id
    planes = frame_support_planes(frame, cam, seg_params, detection_rng(seed, frame_id))
    logging.debug("Frame %s: %d supporting plane candidate(s)", frame_id, len(planes))
    settings = (seg_params, sym_params, fit_params, symmetry_table)
    observations = []
    for detection in detections:
        observation = estimate_detection(frame, cam, detection, planes, settings, seed)
        if observation is not None:
            observations.append(observation)
    return observations


# vim: ts=4 sw=4 expandtab
