# -*- coding: utf-8 -*-
"""
quadric-slam - object map evaluation

Translation, main-axis rotation and shape (Jaccard distance of centred
axis-aligned boxes) errors of estimated landmarks against ground truth, the
convergence curve over observation counts and the epsilon_z sweep.
"""
import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from quadric_slam.backend import Mode, build_graph, optimize
from quadric_slam.common import DegenerateAxis, run_parallel

AMBIGUOUS_AXIS_RATIO = 0.99
CURVE_HEADER = "mode,count,trans_m,rot_deg,shape_jaccard,n_objects"
SWEEP_HEADER = "trajectory,epsilon_z,trans_m,rot_deg,shape_jaccard,n_objects"
EVAL_HEADER = "object_id,label,trans_m,rot_deg,shape_jaccard,n_observations,status"


@dataclass(frozen=True)
class EvalRow:
    """Errors of one object; NaN for missing estimates, rot_deg NaN for degenerate axes."""

    object_id: int = field(metadata={"display_name": "Object", "style": {"style": "cyan"}})
    label: str = field(metadata={"display_name": "Label", "style": {"style": "magenta"}})
    trans_m: float = field(
        metadata={"display_name": "Trans (m)", "style": {"justify": "right"}, "digits": 4}
    )
    rot_deg: float = field(
        metadata={"display_name": "Rot (deg)", "style": {"justify": "right"}, "digits": 2}
    )
    shape_jaccard: float = field(
        metadata={"display_name": "Shape", "style": {"justify": "right"}, "digits": 4}
    )
    n_observations: int = field(
        metadata={"display_name": "Observations", "style": {"justify": "right"}}
    )
    status: str = field(default="ok", metadata={"style": {"style": "green"}})


@dataclass(frozen=True)
class CurveRow:
    """Mean errors after a given number of observations per object."""

    mode: str
    count: int
    trans_m: float
    rot_deg: float
    shape_jaccard: float
    n_objects: int


@dataclass(frozen=True)
class SweepRow:
    """Mean errors of one epsilon_z value on one trajectory."""

    trajectory: str
    epsilon_z: float
    trans_m: float
    rot_deg: float
    shape_jaccard: float
    n_objects: int


@dataclass(eq=False)
# pylint: disable=too-many-instance-attributes
class RunData:
    """
    Everything needed to build and evaluate a map.

    Attributes:
        cam (Camera): Intrinsics.
        poses (dict): frame_id to camera-in-world Pose.
        detections (list): Detection records.
        observations (list): Observation records.
        objects (list): Ground-truth SceneObject records.
        support_plane (Plane): World support plane.
        odometry (dict): Optional frame_id to motion into that frame.
        name (str): Run name used in reports.
    """

    cam: object
    poses: dict
    detections: list
    observations: list
    objects: list
    support_plane: object
    odometry: dict = None
    name: str = ""


def metric_trans(est, gt):
    """Distance between the centres (m)."""
    return float(np.linalg.norm(est.t - gt.t))


def _main_axis(state, support):
    normal = support.normal
    rot = state.rotation_matrix()
    footprint = rot - np.outer(normal, normal @ rot)
    lengths = np.linalg.norm(footprint, axis=0) * state.s
    order = np.argsort(-lengths, kind="stable")
    if lengths[order[0]] <= 1e-12:
        raise DegenerateAxis("Main axis is parallel to the support normal")
    ratio = lengths[order[1]] / lengths[order[0]]
    return footprint[:, order[0]] / np.linalg.norm(footprint[:, order[0]]), ratio


def metric_rot(est, gt, support):
    """
    Angle between the main axes projected on the support plane (deg).

    The main axis is the semi-axis with the longest footprint on the
    plane; the angle is folded to [0, 90] by axis sign symmetry.

    Raises:
        DegenerateAxis: If a footprint vanishes or the ground-truth main
            axis is ambiguous (second footprint within 1% of the first).
    """
    gt_axis, gt_ratio = _main_axis(gt, support)
    if gt_ratio > AMBIGUOUS_AXIS_RATIO:
        raise DegenerateAxis(f"Ground-truth footprint is nearly round (ratio {gt_ratio:.3f})")
    est_axis, _ = _main_axis(est, support)
    cosine = min(1.0, abs(float(est_axis @ gt_axis)))
    return math.degrees(math.acos(cosine))


def metric_shape(est, gt):
    """Jaccard distance 1 - IoU of the world-axis-aligned boxes moved to the origin."""
    est_half, gt_half = est.aabb_half_extents(), gt.aabb_half_extents()
    inter = float(np.prod(np.minimum(est_half, gt_half)))
    union = float(np.prod(est_half)) + float(np.prod(gt_half)) - inter
    return 1.0 - inter / union


def observation_counts(detections, p_det_threshold=0.0):
    """Number of detections per object with p_det above the threshold."""
    counts = {}
    for det in detections:
        if det.p_det > p_det_threshold:
            counts[det.object_id] = counts.get(det.object_id, 0) + 1
    return counts


def valid_objects(detections, min_observations=5, p_det_threshold=0.95):
    """Ids of objects seen at least min_observations times with p_det > threshold."""
    counts = observation_counts(detections, p_det_threshold)
    return {oid for oid, count in counts.items() if count >= min_observations}


def evaluate_map(estimates, objects, support, counts=None, object_ids=None):
    """
    One EvalRow per ground-truth object.

    Args:
        estimates (dict): object_id to estimated EllipsoidState.
        objects (list): Ground-truth SceneObject records.
        support (Plane): Support plane for the rotation metric.
        counts (dict): object_id to number of observations.
        object_ids (set): Restrict to these objects when given.

    Returns:
        list: EvalRow objects ordered by object id; status is 'ok',
            'degenerate_axis' (rotation is NaN) or 'missing'.
    """
    counts = {} if counts is None else counts
    rows = []
    for obj in sorted(objects, key=lambda o: o.object_id):
        if object_ids is not None and obj.object_id not in object_ids:
            continue
        n_obs = counts.get(obj.object_id, 0)
        est = estimates.get(obj.object_id)
        if est is None:
            nan = math.nan
            rows.append(EvalRow(obj.object_id, obj.label, nan, nan, nan, n_obs, "missing"))
            continue
        status = "ok"
        try:
            rot = metric_rot(est, obj.state, support)
        except DegenerateAxis as err:
            logging.debug("Object %s: %s", obj.object_id, err)
            rot, status = math.nan, "degenerate_axis"
        rows.append(
            EvalRow(
                obj.object_id,
                obj.label,
                metric_trans(est, obj.state),
                rot,
                metric_shape(est, obj.state),
                n_obs,
                status,
            )
        )
    return rows


def summarize(rows):
    """
    Per-object means of the metrics.

    Rows without an estimate are left out; rotation means also leave out
    degenerate-axis rows.

    Returns:
        dict: trans_m, rot_deg, shape_jaccard means and object counts.
    """
    estimated = [row for row in rows if row.status != "missing"]
    oriented = [row for row in estimated if row.status == "ok"]

    def mean(values):
        return float(np.mean(values)) if values else math.nan

    return {
        "trans_m": mean([row.trans_m for row in estimated]),
        "rot_deg": mean([row.rot_deg for row in oriented]),
        "shape_jaccard": mean([row.shape_jaccard for row in estimated]),
        "n_objects": len(estimated),
        "n_missing": len(rows) - len(estimated),
        "n_degenerate_axis": len(estimated) - len(oriented),
    }


def truncate_run(run, count):
    """Copy of a run keeping the first count detections and observations of each object."""

    def first(records):
        kept, seen = [], {}
        for record in sorted(records, key=lambda r: (r.frame_id, r.object_id)):
            if seen.get(record.object_id, 0) < count:
                seen[record.object_id] = seen.get(record.object_id, 0) + 1
                kept.append(record)
        return kept

    return dataclasses.replace(
        run, detections=first(run.detections), observations=first(run.observations)
    )


def solve_run(run, config):
    """
    Build the factor graph of a run and optimise it.

    Returns:
        tuple: (FactorGraph, OptimizeReport).
    """
    graph = build_graph(
        run.cam, run.poses, run.detections, run.observations, config, run.odometry
    )
    return graph, optimize(graph, config)


def evaluate_run(run, config, object_ids=None):
    """Solve a run and evaluate its map; returns (rows, summary)."""
    graph, _ = solve_run(run, config)
    counts = observation_counts(run.detections)
    rows = evaluate_map(graph.landmarks, run.objects, run.support_plane, counts, object_ids)
    return rows, summarize(rows)


def _curve_point(run, config, count, object_ids):
    _, summary = evaluate_run(truncate_run(run, count), config, object_ids)
    return CurveRow(
        config.mode.value,
        count,
        summary["trans_m"],
        summary["rot_deg"],
        summary["shape_jaccard"],
        summary["n_objects"],
    )


def convergence_curve(run, config, max_count, object_ids=None, max_workers=1):
    """
    Mean errors as a function of the number of observations per object.

    For every count in 1..max_count the run is truncated to the first
    count observations of each object, re-optimised and evaluated.

    Args:
        run (RunData): The data.
        config (GraphConfig): Mode and weights.
        max_count (int): Largest count.
        object_ids (set): Objects to evaluate.
        max_workers (int): Counts solved concurrently.

    Returns:
        list: CurveRow objects in count order.
    """
    jobs = [(run, config, count, object_ids) for count in range(1, max_count + 1)]
    return run_parallel(_curve_point, jobs, max_workers)


def log_grid(start, stop, num):
    """epsilon_z values 10^start .. 10^stop, num log-spaced points."""
    if num < 2:
        raise ValueError(f"A sweep grid needs at least 2 points, got {num}")
    return [float(v) for v in np.logspace(start, stop, num)]


def _sweep_point(run, config, epsilon_z, object_ids):
    swept = dataclasses.replace(config, epsilon_z=epsilon_z, mode=Mode.DWB)
    _, summary = evaluate_run(run, swept, object_ids)
    return SweepRow(
        run.name,
        epsilon_z,
        summary["trans_m"],
        summary["rot_deg"],
        summary["shape_jaccard"],
        summary["n_objects"],
    )


def sweep_epsilon_z(runs, grid, config, object_ids=None, max_workers=1):
    """
    DwB errors over a grid of epsilon_z values for each run.

    Args:
        runs (list): RunData objects, one per trajectory.
        grid (list): epsilon_z values.
        config (GraphConfig): Base configuration.
        object_ids (dict): Optional run name to evaluated object ids.
        max_workers (int): Grid points solved concurrently.

    Returns:
        list: SweepRow objects, run-major then grid order.
    """
    jobs = []
    for run in runs:
        ids = None if object_ids is None else object_ids.get(run.name)
        jobs.extend((run, config, eps, ids) for eps in grid)
    return run_parallel(_sweep_point, jobs, max_workers)


def sweep_argmin(rows, metric="shape_jaccard"):
    """Per trajectory, the epsilon_z with the smallest finite mean of a metric."""
    best = {}
    for row in rows:
        value = getattr(row, metric)
        if not math.isfinite(value):
            continue
        if row.trajectory not in best or value < best[row.trajectory][1]:
            best[row.trajectory] = (row.epsilon_z, value)
    return best


# vim: ts=4 sw=4 expandtab
