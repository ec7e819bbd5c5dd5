# -*- coding: utf-8 -*-
"""
quadric-slam - subcommand handlers

Each handle_*_cmd function receives the parsed arguments, reads its inputs,
runs the pipeline stage and writes its outputs under --out. Invalid inputs
surface as ValueError (DataError and QuadricError both derive from it).
"""
import csv
import dataclasses
import json
import logging
import math
from dataclasses import fields
from pathlib import Path

import numpy as np

from quadric_slam.backend import build_graph, optimize
from quadric_slam.common import RICH_AVAILABLE, Console, Table, format_float, run_parallel
from quadric_slam.config import Config, load_config, save_config
from quadric_slam.dataset import (
    DatasetPaths,
    check_detections,
    load_camera,
    load_detections,
    load_frame,
    load_objects,
    load_observations,
    load_odometry,
    load_trajectory,
    save_camera,
    save_cloud,
    save_depth,
    save_detections,
    save_objects,
    save_observations,
    save_trajectory,
)
from quadric_slam.evaluation import (
    CURVE_HEADER,
    EVAL_HEADER,
    SWEEP_HEADER,
    EvalRow,
    RunData,
    convergence_curve,
    evaluate_map,
    log_grid,
    observation_counts,
    summarize,
    sweep_argmin,
    sweep_epsilon_z,
    valid_objects,
)
from quadric_slam.fitting import estimate_single_frame
from quadric_slam.simulation import (
    DEFAULT_CAMERA,
    SceneObject,
    TrajectoryMode,
    default_scene,
    generate_trajectory,
    synthesize_observations,
)

MAX_WORKERS_RANGE = (1, 64)
DEFAULT_MAX_WORKERS = 4
FRAME_PERIOD = 1.0 / 30.0
WORLD_GRAVITY = np.array([0.0, 0.0, -1.0])


def check_max_workers(max_workers):
    """
    Raises:
        ValueError: If max_workers is outside 1-64.
    """
    low, high = MAX_WORKERS_RANGE
    if max_workers < low or max_workers > high:
        raise ValueError(
            f"Invalid value for --max-workers. It must be between {low} and {high}."
        )


def load_settings(args, paths=None):
    """
    Effective configuration of a command.

    --config wins; otherwise the config.txt of the dataset is used when it
    exists, and the defaults when it does not.
    """
    if getattr(args, "config", None):
        return load_config(args.config)
    if paths is not None and paths.config.exists():
        logging.debug("Using dataset configuration %s", paths.config)
        return load_config(paths.config)
    return Config()


def output_dir(args, default="."):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def camera_gravity(pose):
    """World gravity (z up) expressed in the camera frame of a camera-in-world pose."""
    return pose.rotation_matrix().T @ WORLD_GRAVITY


def write_csv(path, header, rows):
    """Write comma-separated rows; floats get 6 decimals."""

    def cell(value):
        if isinstance(value, float):
            return format_float(value, 6)
        return str(value)

    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header.split(","))
        for row in rows:
            writer.writerow([cell(getattr(row, name)) for name in header.split(",")])
    logging.info("Wrote %d row(s) to %s", len(rows), path)


def _json_ready(value):
    if isinstance(value, dict):
        return {str(k): _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(path, data):
    """Write a JSON document with sorted keys; non-finite floats become null."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as handle:
        json.dump(_json_ready(data), handle, sort_keys=True, indent=2)
        handle.write("\n")
    logging.info("Wrote %s", path)


# pylint: disable=too-many-arguments
def estimate_observations(cam, poses, detections, load, config, seed=0, max_workers=1):
    """
    Single-frame estimation over every frame that has detections.

    Args:
        cam (Camera): Intrinsics.
        poses (dict): frame_id to camera-in-world Pose, used for gravity.
        detections (list): Detection records.
        load (callable): frame_id to DepthImage or camera-frame cloud.
        config (Config): Effective configuration.
        seed (int): Base seed.
        max_workers (int): Frames processed concurrently.

    Returns:
        list: Observation records ordered by (frame_id, object_id).
    """
    by_frame = {}
    for det in sorted(detections, key=lambda d: (d.frame_id, d.object_id)):
        by_frame.setdefault(det.frame_id, []).append(det)

    def run_frame(frame_id, frame_detections):
        gravity = None
        if config.gravity_from_trajectory and frame_id in poses:
            gravity = camera_gravity(poses[frame_id])
        return estimate_single_frame(
            load(frame_id),
            cam,
            frame_detections,
            config.segmentation_params(gravity),
            config.symmetry_params(),
            config.fit_params(),
            config.symmetry_table,
            seed,
        )

    results = run_parallel(run_frame, sorted(by_frame.items()), max_workers)
    observations = [obs for frame_observations in results for obs in frame_observations]
    logging.info(
        "Estimated %d ellipsoid(s) from %d detection(s)", len(observations), len(detections)
    )
    return observations


def simulate_run(config, trajectory, seed, render="clouds"):
    """
    Synthesise a scene, a trajectory and its frames in memory.

    Returns:
        tuple: (RunData without observations, trajectory entries, frames).
    """
    spec = config.trajectory_spec(trajectory)
    entries = generate_trajectory(spec, seed)
    scene = default_scene(seed)
    poses = [pose for pose, _ in entries]
    frames = synthesize_observations(
        scene, poses, DEFAULT_CAMERA, config.noise_spec(), seed, render
    )
    run = RunData(
        cam=DEFAULT_CAMERA,
        poses=dict(enumerate(poses)),
        detections=[det for frame in frames for det in frame.detections],
        observations=[],
        objects=scene.objects,
        support_plane=scene.support_plane,
        odometry={frame_id: motion for frame_id, (_, motion) in enumerate(entries)},
        name=spec.mode.value,
    )
    return run, entries, frames


def load_run(paths, config, with_observations=True, seed=0):
    """
    RunData of a dataset directory.

    Observations are read from observations.txt; when the file is missing
    and with_observations is set they are estimated from the frames.
    """
    cam = load_camera(paths.camera)
    trajectory = load_trajectory(paths.trajectory)
    poses = {frame_id: pose for frame_id, (_, pose) in enumerate(trajectory)}
    detections = load_detections(paths.detections)
    check_detections(paths.detections, detections, len(poses))
    odometry = load_odometry(paths.odometry) if paths.odometry.exists() else None
    objects = load_objects(paths.objects_gt) if paths.objects_gt.exists() else []
    observations = []
    if paths.observations.exists():
        observations = load_observations(paths.observations)
    elif with_observations:
        logging.info("No %s; estimating single-frame ellipsoids", paths.observations)
        observations = estimate_observations(
            cam,
            poses,
            detections,
            lambda frame_id: load_frame(paths, frame_id),
            config,
            seed,
            DEFAULT_MAX_WORKERS,
        )
    return RunData(
        cam=cam,
        poses=poses,
        detections=detections,
        observations=observations,
        objects=objects,
        support_plane=config.support(),
        odometry=odometry,
        name=paths.root.name,
    )


def display_evaluation(rows, summary):
    """
    Show per-object errors and their means.

    Column names and styles come from the EvalRow field metadata. Without
    rich, a tab-separated table is printed.
    """
    dataclass_fields = fields(EvalRow)
    table_rows = []
    for row in rows:
        cells = []
        for field_obj in dataclass_fields:
            value = getattr(row, field_obj.name)
            if "digits" in field_obj.metadata:
                value = format_float(value, field_obj.metadata["digits"])
            cells.append(str(value))
        table_rows.append(cells)
    headers = [
        field_obj.metadata.get("display_name", field_obj.name.replace("_", " ").title())
        for field_obj in dataclass_fields
    ]

    if RICH_AVAILABLE:
        console = Console()
        table = Table(show_header=True, header_style="bold magenta")
        for header, field_obj in zip(headers, dataclass_fields):
            table.add_column(header, **field_obj.metadata.get("style", {}))
        for cells in table_rows:
            table.add_row(*cells)
        console.print(table)
    else:
        print("\t".join(headers))
        for cells in table_rows:
            print("\t".join(cells))

    print("Summary")
    print("-------")
    print(f"Objects evaluated: {summary['n_objects']} (missing: {summary['n_missing']})")
    print(f"Mean translation error: {format_float(summary['trans_m'], 4)} m")
    print(f"Mean rotation error: {format_float(summary['rot_deg'], 2)} deg")
    print(f"Mean shape error: {format_float(summary['shape_jaccard'], 4)}")


def display_report(report, graph):
    """Show the optimizer outcome and the landmarks of the map."""
    if RICH_AVAILABLE:
        console = Console()
        table = Table(show_header=True, header_style="bold magenta")
        table.add_column("Object", style="cyan")
        table.add_column("Label", style="magenta")
        table.add_column("Centre (m)", justify="right")
        table.add_column("Semi-axes (m)", justify="right")
        for object_id, state in sorted(report.landmarks.items()):
            table.add_row(
                str(object_id),
                graph.labels[object_id],
                " ".join(format_float(v, 3) for v in state.t),
                " ".join(format_float(v, 3) for v in state.s),
            )
        console.print(table)
    else:
        for object_id, state in sorted(report.landmarks.items()):
            print(f"-- {object_id} {graph.labels[object_id]}")
            print(f"   |-- centre: {' '.join(format_float(v, 3) for v in state.t)}")
            print(f"   |-- semi-axes: {' '.join(format_float(v, 3) for v in state.s)}")

    print("Summary")
    print("-------")
    print(f"Cost: {report.initial_cost:.6g} -> {report.final_cost:.6g}")
    print(f"Iterations: {report.iterations} (converged: {report.converged})")
    print(f"Skipped 2D factors: {report.skipped_factors}")


def display_sweep(best):
    """Show the best epsilon_z of every trajectory."""
    if RICH_AVAILABLE:
        console = Console()
        table = Table(show_header=True, header_style="bold magenta")
        table.add_column("Trajectory", style="cyan")
        table.add_column("Best epsilon_z", justify="right")
        table.add_column("Shape", justify="right")
        for trajectory, (epsilon_z, value) in sorted(best.items()):
            table.add_row(trajectory, f"{epsilon_z:.4g}", format_float(value, 4))
        console.print(table)
    else:
        for trajectory, (epsilon_z, value) in sorted(best.items()):
            print(f"{trajectory}\t{epsilon_z:.4g}\t{format_float(value, 4)}")


def display_config(config, plain=False):
    """Show every effective value; the plain form is a loadable config file."""
    if plain or not RICH_AVAILABLE:
        print(config.to_text(), end="")
        return
    console = Console()
    table = Table(show_header=True, header_style="bold magenta")
    table.add_column("Key", style="cyan", no_wrap=True)
    table.add_column("Value", style="green")
    for key, value in config.items():
        table.add_row(key, value)
    console.print(table)


def handle_simulate_cmd(args):
    """
    Handle the 'simulate' subcommand: write a synthetic dataset.

    Args:
        args (argparse.Namespace): Parsed command-line arguments.
    """
    config = load_settings(args)
    if args.trajectory:
        config = dataclasses.replace(config, trajectory=args.trajectory)
    out = output_dir(args)
    paths = DatasetPaths(out)

    run, entries, frames = simulate_run(config, config.trajectory, args.seed, args.render)

    save_camera(paths.camera, run.cam)
    save_trajectory(
        paths.trajectory, [(k * FRAME_PERIOD, pose) for k, (pose, _) in enumerate(entries)]
    )
    save_trajectory(
        paths.odometry, [(k * FRAME_PERIOD, motion) for k, (_, motion) in enumerate(entries)]
    )
    save_detections(paths.detections, run.detections)
    save_objects(paths.objects_gt, run.objects)
    for frame in frames:
        if frame.cloud is not None:
            save_cloud(paths.cloud_path(frame.frame_id), frame.cloud)
        if frame.depth is not None:
            save_depth(paths.depth_path(frame.frame_id), frame.depth)
    save_config(paths.config, config)

    print(f"Dataset written to {out}")
    print(f"Frames: {len(frames)}, detections: {len(run.detections)}")


def handle_estimate_cmd(args):
    """
    Handle the 'estimate' subcommand: single-frame ellipsoids of a dataset.

    Raises:
        ValueError: If --max-workers is out of range or the dataset is invalid.
    """
    check_max_workers(args.max_workers)
    paths = DatasetPaths(args.data)
    config = load_settings(args, paths)
    run = load_run(paths, config, with_observations=False)
    observations = estimate_observations(
        run.cam,
        run.poses,
        run.detections,
        lambda frame_id: load_frame(paths, frame_id),
        config,
        args.seed,
        args.max_workers,
    )
    out = DatasetPaths(output_dir(args, args.data))
    save_observations(out.observations, observations)
    print(f"Observations: {len(observations)} of {len(run.detections)} detection(s)")


def handle_slam_cmd(args):
    """
    Handle the 'slam' subcommand: build and optimise the object map.

    Writes objects.txt (the landmarks in the ground-truth format) and
    report.json (the optimizer report).
    """
    paths = DatasetPaths(args.data)
    config = load_settings(args, paths)
    graph_config = config.graph_config(mode=args.mode, epsilon_z=args.epsilon_z)
    run = load_run(paths, config, graph_config.mode.uses_3d, args.seed)

    graph = build_graph(
        run.cam, run.poses, run.detections, run.observations, graph_config, run.odometry
    )
    report = optimize(graph, graph_config)

    out = DatasetPaths(output_dir(args, args.data))
    landmarks = [
        SceneObject(object_id, graph.labels[object_id], state)
        for object_id, state in sorted(report.landmarks.items())
    ]
    save_objects(out.objects, landmarks)
    summary = report.to_dict()
    summary.update({"mode": graph_config.mode.value, "epsilon_z": graph_config.epsilon_z})
    write_json(out.root / "report.json", summary)
    display_report(report, graph)


def handle_evaluate_cmd(args):
    """Handle the 'evaluate' subcommand: compare a map with the ground truth."""
    paths = DatasetPaths(args.data)
    config = load_settings(args, paths)
    objects = load_objects(paths.objects_gt)
    estimates = {obj.object_id: obj.state for obj in load_objects(args.map or paths.objects)}
    detections = load_detections(paths.detections)
    object_ids = valid_objects(detections, config.min_observations, config.p_det_threshold)
    logging.debug("Valid objects: %s", sorted(object_ids))

    rows = evaluate_map(
        estimates, objects, config.support(), observation_counts(detections), object_ids
    )
    summary = summarize(rows)
    out = output_dir(args, args.data)
    write_csv(out / "evaluation.csv", EVAL_HEADER, rows)
    write_json(out / "summary.json", summary)
    display_evaluation(rows, summary)


def handle_curve_cmd(args):
    """Handle the 'curve' subcommand: mean errors against observation counts."""
    check_max_workers(args.max_workers)
    if args.max_count < 1:
        raise ValueError("--max-count must be at least 1")
    paths = DatasetPaths(args.data)
    config = load_settings(args, paths)
    modes = args.mode or ["2d", "do", "dwb"]
    run = load_run(paths, config, any(mode != "2d" for mode in modes), args.seed)
    object_ids = valid_objects(run.detections, config.min_observations, config.p_det_threshold)

    rows = []
    for mode in modes:
        rows.extend(
            convergence_curve(
                run,
                config.graph_config(mode=mode),
                args.max_count,
                object_ids,
                args.max_workers,
            )
        )
    write_csv(output_dir(args, args.data) / "curve.csv", CURVE_HEADER, rows)
    print(f"Curve points: {len(rows)} ({', '.join(modes)})")


def handle_sweep_cmd(args):
    """
    Handle the 'sweep' subcommand: DwB errors over a log grid of epsilon_z.

    Both trajectory kinds are simulated with the same seed and evaluated on
    every grid value.
    """
    check_max_workers(args.max_workers)
    config = load_settings(args)
    grid = log_grid(*args.grid)

    runs, object_ids = [], {}
    for trajectory in TrajectoryMode:
        run, _, frames = simulate_run(config, trajectory, args.seed)
        clouds = {frame.frame_id: frame.cloud for frame in frames}
        observations = estimate_observations(
            run.cam,
            run.poses,
            run.detections,
            clouds.__getitem__,
            config,
            args.seed,
            args.max_workers,
        )
        run = dataclasses.replace(run, observations=observations)
        runs.append(run)
        object_ids[run.name] = valid_objects(
            run.detections, config.min_observations, config.p_det_threshold
        )

    graph_config = config.graph_config(mode="dwb")
    rows = sweep_epsilon_z(runs, grid, graph_config, object_ids, args.max_workers)
    best = sweep_argmin(rows)
    out = output_dir(args)
    write_csv(out / "sweep.csv", SWEEP_HEADER, rows)
    write_json(
        out / "summary.json",
        {name: {"epsilon_z": eps, "shape_jaccard": v} for name, (eps, v) in best.items()},
    )
    display_sweep(best)


def handle_config_cmd(args):
    """Handle the 'config' subcommand: echo the effective configuration."""
    display_config(load_settings(args), args.plain)


# vim: ts=4 sw=4 expandtab
