# -*- coding: utf-8 -*-
"""
quadric-slam - object SLAM back-end

Factor graph of camera poses and ellipsoid landmarks with odometry factors,
bounding-box tangency factors (2D) and single-frame ellipsoid factors (3D),
robustified by Huber kernels and solved by Levenberg-Marquardt.
"""
import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from quadric_slam.common import (
    BehindCamera,
    InsufficientViews,
    NotAnEllipsoid,
    ProjectionFailed,
    Unbounded,
    wrap_angle,
)
from quadric_slam.geometry import (
    EllipsoidState,
    Pose,
    conic_bbox,
    decompose_dual,
    ellipsoid_to_dual,
    project_dual,
    transform_dual,
    transform_ellipsoid,
)

FACTOR_ROWS = {"odom": 6, "3d": 9, "2d": 4}
FD_STEP = 1e-6
MAX_LAMBDA = 1e10


class Mode(enum.Enum):
    """Which observation factors enter the graph."""

    TWO_D_ONLY = "2d"
    DEPTH_ONLY = "do"
    DWB = "dwb"

    @property
    def uses_2d(self):
        return self is not Mode.DEPTH_ONLY

    @property
    def uses_3d(self):
        return self is not Mode.TWO_D_ONLY


@dataclass(frozen=True)
# pylint: disable=too-many-instance-attributes
class GraphConfig:
    """
    Weights, kernels and solver budget of the back-end.

    Attributes:
        epsilon_z (float): Weight of 3D factors relative to 2D factors.
        huber_delta_2d (float): Huber threshold of whitened 2D residual norms.
        huber_delta_3d (float): Huber threshold of whitened 3D residual norms.
        huber_delta_odom (float): Huber threshold of whitened odometry norms.
        sigma_2d (float): Bounding-box edge sigma (px).
        sigma_3d (tuple): 9 sigmas for (t, rpy, s).
        sigma_odom (tuple): 6 sigmas for the (rho, phi) odometry error.
        max_iterations (int): LM trial-step budget.
        mode (Mode): Factor selection.
        optimize_poses (bool): Optimise the poses after the first one.
    """

    epsilon_z: float = 1e3
    huber_delta_2d: float = 10.0
    huber_delta_3d: float = 0.1
    huber_delta_odom: float = 1.0
    sigma_2d: float = 5.0
    sigma_3d: tuple = (0.05, 0.05, 0.05, 0.1, 0.1, 0.1, 0.05, 0.05, 0.05)
    sigma_odom: tuple = (0.01, 0.01, 0.01, 0.005, 0.005, 0.005)
    max_iterations: int = 100
    mode: Mode = Mode.DWB
    optimize_poses: bool = True

    def __post_init__(self):
        if self.epsilon_z < 0 or not math.isfinite(self.epsilon_z):
            raise ValueError(f"epsilon_z must be finite and nonnegative: {self.epsilon_z}")
        for name in ("huber_delta_2d", "huber_delta_3d", "huber_delta_odom", "sigma_2d"):
            if getattr(self, name) <= 0:
                raise ValueError(f"Graph parameter {name} must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        for name, size in (("sigma_3d", 9), ("sigma_odom", 6)):
            values = tuple(float(v) for v in getattr(self, name))
            if len(values) != size or min(values) <= 0:
                raise ValueError(f"{name} needs {size} positive values")
            object.__setattr__(self, name, values)
        object.__setattr__(self, "mode", Mode(self.mode))


@dataclass(frozen=True, eq=False)
class OdometryFactor:
    """Relative motion measured between two consecutive keyframes."""

    from_id: int
    to_id: int
    motion: Pose


@dataclass(frozen=True, eq=False)
class BoxFactor:
    """Detection box of a landmark in a keyframe."""

    frame_id: int
    object_id: int
    bbox: object
    p_det: float


@dataclass(frozen=True, eq=False)
class EllipsoidFactor:
    """Single-frame camera-frame ellipsoid of a landmark in a keyframe."""

    frame_id: int
    object_id: int
    ellipsoid_c: EllipsoidState
    p_e: float


class FactorGraph:
    """
    Pose nodes, ellipsoid landmark nodes and the factors linking them.

    The first pose added is the gauge and never moves.
    """

    def __init__(self, cam):
        self.cam = cam
        self.poses = {}
        self.landmarks = {}
        self.labels = {}
        self.odometry = []
        self.boxes = []
        self.ellipsoids = []

    @property
    def gauge_id(self):
        return next(iter(self.poses), None)

    def add_pose(self, frame_id, pose):
        self.poses[frame_id] = pose

    def add_landmark(self, object_id, state, label=""):
        self.landmarks[object_id] = state
        self.labels[object_id] = label

    def _require(self, frame_id, object_id=None):
        if frame_id not in self.poses:
            raise ValueError(f"Unknown pose node {frame_id}")
        if object_id is not None and object_id not in self.landmarks:
            raise ValueError(f"Unknown landmark node {object_id}")

    def add_odometry(self, from_id, to_id, motion):
        self._require(from_id)
        self._require(to_id)
        self.odometry.append(OdometryFactor(from_id, to_id, motion))

    def add_box(self, frame_id, object_id, bbox, p_det):
        self._require(frame_id, object_id)
        self.boxes.append(BoxFactor(frame_id, object_id, bbox, p_det))

    def add_ellipsoid(self, frame_id, object_id, ellipsoid_c, p_e):
        self._require(frame_id, object_id)
        self.ellipsoids.append(EllipsoidFactor(frame_id, object_id, ellipsoid_c, p_e))

    def factor_count(self, object_id):
        """Number of observation factors attached to a landmark."""
        return sum(f.object_id == object_id for f in self.boxes) + sum(
            f.object_id == object_id for f in self.ellipsoids
        )


@dataclass(eq=False)
# pylint: disable=too-many-instance-attributes
class OptimizeReport:
    """Outcome of optimize; final_cost never exceeds initial_cost."""

    initial_cost: float
    final_cost: float
    iterations: int
    landmarks: dict
    poses: dict
    cost_history: list = field(default_factory=list)
    converged: bool = False
    damping: float = 0.0
    skipped_factors: int = 0

    def to_dict(self):
        """JSON-ready summary."""
        return {
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "iterations": self.iterations,
            "converged": self.converged,
            "damping": self.damping,
            "skipped_factors": self.skipped_factors,
            "cost_history": list(self.cost_history),
            "landmarks": {
                str(oid): state.vector().tolist() for oid, state in self.landmarks.items()
            },
        }


def residual_odometry(x_j, u_j, x_j1, sigma_odom=GraphConfig.sigma_odom):
    """
    Whitened odometry error log((x_j o u_j)^-1 o x_j+1) / sigma.

    Returns:
        numpy.ndarray: 6-vector (translation first).
    """
    predicted = x_j.compose(u_j)
    return predicted.inverse().compose(x_j1).log() / np.asarray(sigma_odom)


def residual_3d(x_j, obs, landmark, sigma_3d=GraphConfig.sigma_3d):
    """
    Whitened parameter error between a single-frame ellipsoid and a landmark.

    The observation is moved to the world frame and, among its 24 equivalent
    parametrisations, the one closest to the landmark is compared.

    Args:
        x_j (Pose): Camera-in-world pose of the keyframe.
        obs: Anything with ellipsoid_c (camera frame) and p_e attributes.
        landmark (EllipsoidState): World-frame landmark.
        sigma_3d (tuple): 9 sigmas.

    Returns:
        numpy.ndarray: sqrt(p_e) * (v_w - v_m) / sigma, angles wrapped.
    """
    sigma = np.asarray(sigma_3d)
    reference = landmark.vector()
    world = transform_ellipsoid(obs.ellipsoid_c, x_j).closest_equivalent(reference, sigma)
    diff = world.vector() - reference
    diff[3:6] = wrap_angle(diff[3:6])
    return math.sqrt(obs.p_e) * diff / sigma


# pylint: disable=too-many-arguments
def residual_2d(x_j, bbox, p_det, landmark, cam, sigma_2d=GraphConfig.sigma_2d):
    """
    Whitened difference between a detection box and the projected landmark box.

    Returns:
        numpy.ndarray: sqrt(p_det) * (b - bbox(P Q* P^T)) / sigma_2d.

    Raises:
        ProjectionFailed: If the landmark is behind the camera or its
            projection is not a bounded ellipse.
    """
    try:
        predicted = conic_bbox(project_dual(ellipsoid_to_dual(landmark), x_j, cam))
    except (BehindCamera, Unbounded) as err:
        raise ProjectionFailed(str(err)) from err
    return math.sqrt(p_det) * (bbox.as_array() - predicted.as_array()) / sigma_2d


def huber_cost(r, delta):
    """Huber kernel: r^2/2 below delta, delta (r - delta/2) above."""
    if r <= delta:
        return 0.5 * r * r
    return delta * (r - 0.5 * delta)


def _robust_weight(norm, delta):
    if norm <= delta:
        return 1.0
    return math.sqrt(2.0 * huber_cost(norm, delta)) / norm


def _active_factors(graph, config):
    items = [("odom", factor) for factor in graph.odometry]
    if config.mode.uses_3d:
        items += [("3d", factor) for factor in graph.ellipsoids]
    if config.mode.uses_2d:
        items += [("2d", factor) for factor in graph.boxes]
    return items


def _factor_residual(kind, factor, cam, poses, landmarks, config):
    # robustified residual r~ with 1/2 |r~|^2 equal to the factor's cost
    if kind == "odom":
        raw = residual_odometry(
            poses[factor.from_id], factor.motion, poses[factor.to_id], config.sigma_odom
        )
        return _robust_weight(np.linalg.norm(raw), config.huber_delta_odom) * raw
    if kind == "3d":
        raw = residual_3d(
            poses[factor.frame_id], factor, landmarks[factor.object_id], config.sigma_3d
        )
        weight = _robust_weight(np.linalg.norm(raw), config.huber_delta_3d)
        return math.sqrt(config.epsilon_z) * weight * raw
    try:
        raw = residual_2d(
            poses[factor.frame_id],
            factor.bbox,
            factor.p_det,
            landmarks[factor.object_id],
            cam,
            config.sigma_2d,
        )
    except ProjectionFailed:
        return None
    return _robust_weight(np.linalg.norm(raw), config.huber_delta_2d) * raw


def _evaluate(items, cam, poses, landmarks, config):
    blocks, failed = [], 0
    for kind, factor in items:
        residual = _factor_residual(kind, factor, cam, poses, landmarks, config)
        if residual is None:
            failed += 1
            residual = np.zeros(FACTOR_ROWS[kind])
        blocks.append(residual)
    vector = np.concatenate(blocks) if blocks else np.zeros(0)
    return vector, failed


def total_cost(graph, config):
    """
    Robust cost of the graph in its current state.

    Sum of Huber costs of the odometry factors, epsilon_z times the Huber
    costs of the 3D factors and the Huber costs of the 2D factors; the mode
    selects which observation factors count. 2D factors whose landmark cannot
    be projected are skipped.

    Returns:
        float: The total cost.
    """
    items = _active_factors(graph, config)
    vector, failed = _evaluate(items, graph.cam, graph.poses, graph.landmarks, config)
    if failed:
        logging.debug("Skipped %d 2D factor(s) that failed to project", failed)
    return 0.5 * float(vector @ vector)


def _perturb_landmark(state, delta):
    return EllipsoidState(
        state.t + delta[:3], state.rpy + delta[3:6], state.s * np.exp(delta[6:9])
    )


def _perturbed(variable, delta):
    if isinstance(variable, Pose):
        return variable.retract(delta)
    return _perturb_landmark(variable, delta)


class _Layout:
    """Column offsets of the free variables."""

    def __init__(self, graph, config):
        self.blocks = []
        offset = 0
        if config.optimize_poses:
            for frame_id in graph.poses:
                if frame_id == graph.gauge_id:
                    continue
                self.blocks.append(("pose", frame_id, offset, 6))
                offset += 6
        for object_id in graph.landmarks:
            self.blocks.append(("landmark", object_id, offset, 9))
            offset += 9
        self.size = offset
        self.offsets = {(kind, key): (off, dim) for kind, key, off, dim in self.blocks}

    def apply(self, poses, landmarks, step):
        poses, landmarks = dict(poses), dict(landmarks)
        for kind, key, off, dim in self.blocks:
            delta = step[off : off + dim]
            if kind == "pose":
                poses[key] = poses[key].retract(delta)
            else:
                landmarks[key] = _perturb_landmark(landmarks[key], delta)
        return poses, landmarks


def _factor_variables(kind, factor):
    if kind == "odom":
        return [("pose", factor.from_id), ("pose", factor.to_id)]
    return [("pose", factor.frame_id), ("landmark", factor.object_id)]


# pylint: disable=too-many-locals
def _jacobian(items, cam, poses, landmarks, config, layout):
    rows, cols, values = [], [], []
    row = 0
    for kind, factor in items:
        height = FACTOR_ROWS[kind]
        for var_kind, key in _factor_variables(kind, factor):
            if (var_kind, key) not in layout.offsets:
                continue
            offset, dim = layout.offsets[(var_kind, key)]
            store = poses if var_kind == "pose" else landmarks
            base = store[key]
            for k in range(dim):
                delta = np.zeros(dim)
                delta[k] = FD_STEP
                columns = []
                for sign in (1.0, -1.0):
                    trial = dict(store)
                    trial[key] = _perturbed(base, sign * delta)
                    args = (trial, landmarks) if var_kind == "pose" else (poses, trial)
                    columns.append(_factor_residual(kind, factor, cam, *args, config))
                if columns[0] is None or columns[1] is None:
                    continue
                derivative = (columns[0] - columns[1]) / (2.0 * FD_STEP)
                nonzero = np.flatnonzero(derivative)
                rows.extend(row + nonzero)
                cols.extend(np.full(len(nonzero), offset + k))
                values.extend(derivative[nonzero])
        row += height
    return sparse.coo_matrix((values, (rows, cols)), shape=(row, layout.size)).tocsr()


def optimize(graph, config):
    """
    Levenberg-Marquardt over the free poses and all landmarks.

    Poses are updated on their tangent space, landmarks in (t, rpy, log s).
    A trial step is accepted only when it lowers the cost without making
    more 2D factors fail to project. The graph nodes are updated in place.

    Args:
        graph (FactorGraph): The graph; its first pose is held fixed.
        config (GraphConfig): Weights and budget.

    Returns:
        OptimizeReport: Costs, cost history and estimates.
    """
    items = _active_factors(graph, config)
    layout = _Layout(graph, config)
    poses, landmarks = dict(graph.poses), dict(graph.landmarks)
    residual, failed = _evaluate(items, graph.cam, poses, landmarks, config)
    cost = 0.5 * float(residual @ residual)
    initial_cost, history = cost, [cost]

    lam, converged, iterations = 1e-3, False, 0
    jac = None
    while iterations < config.max_iterations:
        if cost <= 1e-30 or layout.size == 0:
            converged = True
            break
        iterations += 1
        if jac is None:
            jac = _jacobian(items, graph.cam, poses, landmarks, config, layout)
            hessian = (jac.T @ jac).tocsc()
            gradient = jac.T @ residual
        diagonal = hessian.diagonal() + 1e-9
        damped = (hessian + sparse.diags(lam * diagonal, format="csc")).tocsc()
        step = spsolve(damped, -gradient)

        try:
            trial_poses, trial_landmarks = layout.apply(poses, landmarks, step)
            trial_residual, trial_failed = _evaluate(
                items, graph.cam, trial_poses, trial_landmarks, config
            )
            trial_cost = 0.5 * float(trial_residual @ trial_residual)
        except ValueError:
            trial_cost, trial_failed = math.inf, failed

        if math.isfinite(trial_cost) and trial_cost < cost and trial_failed <= failed:
            decrease = (cost - trial_cost) / cost
            poses, landmarks = trial_poses, trial_landmarks
            residual, failed, cost = trial_residual, trial_failed, trial_cost
            history.append(cost)
            lam = max(lam / 10.0, 1e-12)
            jac = None
            logging.debug("Iteration %d: cost %.6e, lambda %.1e", iterations, cost, lam)
            if decrease < 1e-9:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > MAX_LAMBDA:
                converged = True
                break

    graph.poses.update(poses)
    graph.landmarks.update(landmarks)
    logging.info(
        "Optimised %d landmark(s): cost %.6e -> %.6e in %d iteration(s)",
        len(landmarks),
        initial_cost,
        cost,
        iterations,
    )
    return OptimizeReport(
        initial_cost=initial_cost,
        final_cost=cost,
        iterations=iterations,
        landmarks=dict(landmarks),
        poses=dict(poses),
        cost_history=history,
        converged=converged,
        damping=lam,
        skipped_factors=failed,
    )


def initialize_landmark_3d(first_obs, pose):
    """
    World-frame landmark from one single-frame observation.

    Args:
        first_obs: Anything with an ellipsoid_c attribute (camera frame).
        pose (Pose): Camera-in-world pose of that frame.

    Returns:
        EllipsoidState: decompose_dual(H Q_c* H^T).

    Raises:
        NotAnEllipsoid: If the moved quadric is not an ellipsoid.
    """
    return decompose_dual(transform_dual(ellipsoid_to_dual(first_obs.ellipsoid_c), pose))


def _tangent_planes(pose, bbox, cam):
    proj = cam.projection_matrix(pose)
    lines = (
        (1.0, 0.0, -bbox.x_min),
        (1.0, 0.0, -bbox.x_max),
        (0.0, 1.0, -bbox.y_min),
        (0.0, 1.0, -bbox.y_max),
    )
    planes = [proj.T @ np.array(line) for line in lines]
    return [plane / np.linalg.norm(plane) for plane in planes]


_UPPER = [(i, j) for i in range(4) for j in range(i, 4)]


def _tangency_system(views, cam):
    """Conditioned tangency equations and the inverse conditioning transform."""
    inverse = np.linalg.inv(_conditioning(views, cam))
    equations = []
    for pose, bbox in views:
        for plane in _tangent_planes(pose, bbox, cam):
            plane = inverse.T @ plane
            plane /= np.linalg.norm(plane)
            equations.append(
                [plane[i] * plane[j] * (1.0 if i == j else 2.0) for i, j in _UPPER]
            )
    return np.array(equations), inverse


def _conditioning(views, cam):
    """
    Similarity moving the box-centre ray intersection to the origin.

    The scale sets the mean camera distance to one.
    """
    centres, normal_eq, rhs = [], np.zeros((3, 3)), np.zeros(3)
    k_inv = np.linalg.inv(cam.K)
    for pose, bbox in views:
        ray = pose.rotation_matrix() @ k_inv @ np.array([*bbox.center, 1.0])
        ray /= np.linalg.norm(ray)
        projector = np.eye(3) - np.outer(ray, ray)
        normal_eq += projector
        rhs += projector @ pose.translation
        centres.append(pose.translation)
    centres = np.array(centres)
    if np.linalg.cond(normal_eq) < 1e8:
        origin = np.linalg.solve(normal_eq, rhs)
    else:
        origin = centres.mean(axis=0)
    scale = 1.0 / max(np.linalg.norm(centres - origin, axis=1).mean(), 1e-6)
    transform = np.eye(4)
    transform[:3, :3] *= scale
    transform[:3, 3] = -scale * origin
    return transform


def initialize_landmark_2d(views, cam):
    """
    Linear multi-view landmark from bounding boxes.

    Every box edge back-projects to a plane pi = P^T l tangent to the
    ellipsoid, so pi^T Q* pi = 0 is one linear equation in the 10 unique
    entries of Q*; the smallest right singular vector solves the stack.
    The planes are expressed in a frame centred on the object and scaled
    by the viewing distance before solving, and the estimate must lie in
    front of every view.

    Args:
        views (list): (Pose, BBox) pairs of the same landmark.
        cam (Camera): Intrinsics.

    Returns:
        EllipsoidState: The decomposed landmark.

    Raises:
        InsufficientViews: With fewer than 3 views.
        NotAnEllipsoid: If the solution is not an ellipsoid in front of the views.
    """
    if len(views) < 3:
        raise InsufficientViews(f"Need at least 3 views, got {len(views)}")
    equations, inverse = _tangency_system(views, cam)
    _, _, vt = np.linalg.svd(equations)
    q_conditioned = np.zeros((4, 4))
    for value, (i, j) in zip(vt[-1], _UPPER):
        q_conditioned[i, j] = q_conditioned[j, i] = value
    state = decompose_dual(inverse @ q_conditioned @ inverse.T)
    for pose, _ in views:
        if pose.inverse().transform_points(state.t[None])[0, 2] <= 0.0:
            raise NotAnEllipsoid("Box initialisation lies behind a view")
    return state


def _odometry_between(poses, odometry, prev_id, frame_id):
    if odometry is not None and frame_id in odometry:
        return odometry[frame_id]
    return poses[prev_id].inverse().compose(poses[frame_id])


def _try_initialize_2d(views, cam, object_id):
    try:
        return initialize_landmark_2d(views, cam)
    except (InsufficientViews, NotAnEllipsoid) as err:
        logging.debug(
            "Object %s: 2D initialisation with %d views: %s", object_id, len(views), err
        )
        return None


# pylint: disable=too-many-arguments,too-many-locals,too-many-branches
def build_graph(cam, poses, detections, observations, config, odometry=None):
    """
    Assemble a factor graph from keyframe poses and per-frame measurements.

    DwB and DepthOnly initialise each landmark from its first single-frame
    ellipsoid, DwB falling back to the box initialiser when the object has no
    ellipsoid. TwoDOnly adds boxes one by one until the box initialiser
    succeeds and inserts the landmark from then on.

    Args:
        cam (Camera): Intrinsics.
        poses (dict): frame_id to camera-in-world Pose.
        detections (list): Detection records (2D factors).
        observations (list): Observation records (3D factors).
        config (GraphConfig): Mode selects the factor types.
        odometry (dict): Optional frame_id to motion into that frame.

    Returns:
        FactorGraph: The assembled graph.
    """
    graph = FactorGraph(cam)
    frame_ids = sorted(poses)
    for frame_id in frame_ids:
        graph.add_pose(frame_id, poses[frame_id])
    for prev_id, frame_id in zip(frame_ids, frame_ids[1:]):
        motion = _odometry_between(poses, odometry, prev_id, frame_id)
        graph.add_odometry(prev_id, frame_id, motion)

    boxes, shapes, labels = {}, {}, {}
    if config.mode.uses_2d:
        for det in sorted(detections, key=lambda d: (d.frame_id, d.object_id)):
            if det.frame_id in poses:
                boxes.setdefault(det.object_id, []).append(det)
                labels.setdefault(det.object_id, det.label)
    if config.mode.uses_3d:
        for obs in sorted(observations, key=lambda o: (o.frame_id, o.object_id)):
            if obs.frame_id in poses:
                shapes.setdefault(obs.object_id, []).append(obs)
                labels.setdefault(obs.object_id, obs.label)

    for object_id in sorted(set(boxes) | set(shapes)):
        object_boxes = boxes.get(object_id, [])
        object_shapes = shapes.get(object_id, [])
        state = None
        if object_shapes:
            first = object_shapes[0]
            try:
                state = initialize_landmark_3d(first, poses[first.frame_id])
            except NotAnEllipsoid as err:
                logging.warning("Object %s: 3D initialisation failed: %s", object_id, err)
        elif config.mode is Mode.DWB:
            views = [(poses[d.frame_id], d.bbox) for d in object_boxes]
            state = _try_initialize_2d(views, cam, object_id)
        elif config.mode is Mode.TWO_D_ONLY:
            for count in range(3, len(object_boxes) + 1):
                views = [(poses[d.frame_id], d.bbox) for d in object_boxes[:count]]
                state = _try_initialize_2d(views, cam, object_id)
                if state is not None:
                    break

        if state is None:
            logging.warning("Object %s: no landmark initialisation; left out", object_id)
            continue
        graph.add_landmark(object_id, state, labels[object_id])
        for obs in object_shapes:
            graph.add_ellipsoid(obs.frame_id, object_id, obs.ellipsoid_c, obs.p_e)
        for det in object_boxes:
            graph.add_box(det.frame_id, object_id, det.bbox, det.p_det)

    logging.info(
        "Graph: %d pose(s), %d landmark(s), %d box factor(s), %d ellipsoid factor(s)",
        len(graph.poses),
        len(graph.landmarks),
        len(graph.boxes),
        len(graph.ellipsoids),
    )
    return graph


# vim: ts=4 sw=4 expandtab
