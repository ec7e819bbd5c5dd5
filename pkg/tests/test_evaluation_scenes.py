# test_evaluation_scenes.py

"""End-to-end tests on the synthetic orbit and forward scenes."""

import dataclasses
import math

import pytest

from quadric_slam.commands import estimate_observations, simulate_run
from quadric_slam.config import Config
from quadric_slam.evaluation import (
    convergence_curve,
    evaluate_map,
    evaluate_run,
    log_grid,
    observation_counts,
    solve_run,
    sweep_argmin,
    sweep_epsilon_z,
    valid_objects,
)

SCENE = Config(surface_samples=1500, plane_samples=3000)


def _estimated_run(trajectory):
    run, _, frames = simulate_run(SCENE, trajectory, seed=0)
    clouds = {frame.frame_id: frame.cloud for frame in frames}
    observations = estimate_observations(
        run.cam, run.poses, run.detections, clouds.get, SCENE, seed=0, max_workers=4
    )
    run = dataclasses.replace(run, observations=observations)
    ids = valid_objects(run.detections, SCENE.min_observations, SCENE.p_det_threshold)
    return run, ids


@pytest.fixture(name="orbit", scope="module")
def orbit_fixture():
    """
    Fixture of the orbit scene with its single-frame observations.
    """
    return _estimated_run("orbit")


@pytest.fixture(name="forward", scope="module")
def forward_fixture():
    """
    Fixture of the forward scene with its single-frame observations.
    """
    return _estimated_run("forward")


def test_orbit_dwb_map(orbit):
    """
    Test the orbit DwB map places and shapes every valid object closely.
    """
    run, ids = orbit
    _, summary = evaluate_run(run, SCENE.graph_config(mode="dwb", trajectory="orbit"), ids)
    assert summary["n_missing"] == 0
    assert summary["trans_m"] < 0.05
    assert summary["shape_jaccard"] < 0.25


def test_forward_dwb_beats_two_d_only(forward):
    """
    Test DwB is more accurate than TwoDOnly on the forward scene, whose boxes
    leave at least one landmark unobservable or badly shaped.
    """
    run, ids = forward
    _, dwb = evaluate_run(run, SCENE.graph_config(mode="dwb", trajectory="forward"), ids)

    two_d_config = SCENE.graph_config(mode="2d", trajectory="forward")
    graph, _ = solve_run(run, two_d_config)
    counts = observation_counts(run.detections)
    rows = evaluate_map(graph.landmarks, run.objects, run.support_plane, counts, ids)
    estimated = [row for row in rows if row.status != "missing"]
    assert any(row.status == "missing" or row.shape_jaccard > 0.5 for row in rows)
    assert estimated

    two_d_trans = sum(row.trans_m for row in estimated) / len(estimated)
    two_d_shape = sum(row.shape_jaccard for row in estimated) / len(estimated)
    assert dwb["n_missing"] == 0
    assert dwb["trans_m"] < two_d_trans
    assert dwb["shape_jaccard"] < two_d_shape


def _settled_count(curve, tolerance=0.1):
    """Smallest count from which the Shape error stays within tolerance of its last value."""
    final = curve[-1].shape_jaccard
    settled = curve[-1].count
    for row in reversed(curve):
        if not abs(row.shape_jaccard - final) <= tolerance * final:
            break
        settled = row.count
    return settled


def test_forward_convergence(forward):
    """
    Test DwB is usable from the first observation and settles before TwoDOnly.
    """
    run, ids = forward
    dwb_config = SCENE.graph_config(mode="dwb", trajectory="forward")
    two_d_config = SCENE.graph_config(mode="2d", trajectory="forward")
    dwb = convergence_curve(run, dwb_config, 25, ids)
    two_d = convergence_curve(run, two_d_config, 25, ids)

    assert math.isfinite(dwb[0].shape_jaccard)
    assert dwb[0].shape_jaccard <= 2.0 * dwb[-1].shape_jaccard
    assert _settled_count(dwb) <= 10
    assert [row.n_objects for row in two_d[:2]] == [0, 0]
    assert _settled_count(two_d) > 15


def test_sweep_argmin_orbit_below_forward(orbit, forward):
    """
    Test the best epsilon_z of the orbit scene is smaller than that of the forward scene.
    """
    runs = [orbit[0], forward[0]]
    object_ids = {"orbit": orbit[1], "forward": forward[1]}
    rows = sweep_epsilon_z(
        runs, log_grid(0.0, 7.0, 8), SCENE.graph_config(mode="dwb"), object_ids, max_workers=4
    )
    best = sweep_argmin(rows)
    assert best["orbit"][0] < best["forward"][0]
