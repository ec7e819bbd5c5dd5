# test_simulation_scene.py

"""Unit tests for the synthetic scene, trajectories and frames."""

import math

import numpy as np
import pytest

from quadric_slam.geometry import Camera, EllipsoidState, Pose
from quadric_slam.simulation import (
    NoiseSpec,
    Scene,
    SceneObject,
    TrajectoryMode,
    TrajectorySpec,
    default_scene,
    generate_trajectory,
    observe_box,
    render_depth,
    synthesize_cloud,
    synthesize_detections,
    synthesize_observations,
    trajectory_poses,
    vertical_extent,
)

SPARSE = NoiseSpec(surface_samples=300, plane_samples=500)


@pytest.fixture(name="small_cam")
def small_camera_fixture():
    """
    Fixture of a 64x48 camera with the principal point on a pixel centre.
    """
    return Camera(fx=50.0, fy=50.0, cx=32.0, cy=24.0, width=64, height=48)


def test_default_scene_objects_rest_on_floor():
    """
    Test every default object touches the support plane from above.
    """
    scene = default_scene()
    assert len(scene.objects) == 6
    assert len({obj.object_id for obj in scene.objects}) == 6
    for obj in scene.objects:
        height = scene.support_plane.distance(obj.state.t)
        assert height == pytest.approx(vertical_extent(obj.state, scene.support_plane.normal))


def test_scene_rejects_sinking_object():
    """
    Test an object crossing the support plane is rejected.
    """
    state = EllipsoidState((0.0, 0.0, 0.1), (0.0, 0.0, 0.0), (0.3, 0.3, 0.2))
    with pytest.raises(ValueError):
        Scene(objects=[SceneObject(0, "cup", state)])


def test_orbit_poses_look_at_target():
    """
    Test orbit keyframes lie on the circle and aim at the target.
    """
    spec = TrajectorySpec(n_frames=12, radius=2.0, camera_height=1.0, target_height=0.3)
    poses = trajectory_poses(spec)
    assert len(poses) == 12
    for pose in poses:
        assert np.linalg.norm(pose.translation[:2]) == pytest.approx(2.0)
        assert pose.translation[2] == pytest.approx(1.0)
        direction = np.array([0.0, 0.0, 0.3]) - pose.translation
        direction /= np.linalg.norm(direction)
        np.testing.assert_allclose(pose.rotation_matrix()[:, 2], direction, atol=1e-12)


def test_forward_poses_are_equally_spaced():
    """
    Test forward keyframes advance along +x by length / (n - 1).
    """
    spec = TrajectorySpec(mode="forward", n_frames=5, length=2.0, forward_start=(-3.0, 0.5))
    positions = np.array([pose.translation for pose in trajectory_poses(spec)])
    np.testing.assert_allclose(positions[:, 0], [-3.0, -2.5, -2.0, -1.5, -1.0])
    np.testing.assert_allclose(positions[:, 1], 0.5)
    assert spec.mode is TrajectoryMode.FORWARD


@pytest.mark.parametrize("sweep", [0.0, 20.0, -12.0])
def test_forward_heading_turns_by_sweep(sweep):
    """
    Test the forward heading starts at the offset and turns linearly by the sweep.
    """
    spec = TrajectorySpec(
        mode="forward", n_frames=5, forward_yaw_offset=10.0, forward_yaw_sweep=sweep
    )
    headings = []
    for pose in trajectory_poses(spec):
        axis = pose.rotation_matrix()[:, 2]
        headings.append(math.degrees(math.atan2(axis[1], axis[0])))
    np.testing.assert_allclose(headings, 10.0 + sweep * np.linspace(0.0, 1.0, 5), atol=1e-9)


def test_generate_trajectory_noiseless_odometry():
    """
    Test frame 0 has identity odometry and the others chain the poses.
    """
    frames = generate_trajectory(TrajectorySpec(n_frames=6))
    np.testing.assert_allclose(frames[0][1].matrix(), np.eye(4))
    for (prev, _), (pose, motion) in zip(frames, frames[1:]):
        np.testing.assert_allclose(prev.compose(motion).matrix(), pose.matrix(), atol=1e-12)


def test_generate_trajectory_noise_depends_on_seed():
    """
    Test noisy odometry is reproducible per seed and differs across seeds.
    """
    spec = TrajectorySpec(n_frames=4, odom_sigma_trans=0.01, odom_sigma_rot=0.01)
    first = generate_trajectory(spec, seed=5)
    again = generate_trajectory(spec, seed=5)
    other = generate_trajectory(spec, seed=6)
    np.testing.assert_array_equal(first[2][1].matrix(), again[2][1].matrix())
    assert not np.allclose(first[2][1].matrix(), other[2][1].matrix())


def test_observe_box_behind_camera():
    """
    Test objects behind the camera have no box.
    """
    state = EllipsoidState((0.0, 0.0, -2.0), (0.0, 0.0, 0.0), (0.2, 0.2, 0.2))
    assert observe_box(state, Pose.identity(), Camera(500, 500, 320, 240, 640, 480)) is None


def test_synthesize_detections_without_noise(cam):
    """
    Test noiseless boxes equal the analytic projections.
    """
    scene = default_scene()
    pose = trajectory_poses(TrajectorySpec(n_frames=8))[0]
    noise = NoiseSpec(bbox_sigma=0.0, p_det_min=0.97, p_det_max=0.97)
    detections = synthesize_detections(scene, 3, pose, cam, noise, np.random.default_rng(0))
    assert detections
    states = {obj.object_id: obj.state for obj in scene.objects}
    for det in detections:
        assert det.frame_id == 3
        assert det.p_det == pytest.approx(0.97)
        expected = observe_box(states[det.object_id], pose, cam)
        np.testing.assert_allclose(det.bbox.as_array(), expected.as_array())
        assert not det.bbox.touches_border(cam, noise.edge_margin_px)


def test_synthesize_cloud_is_inside_image(cam, rng):
    """
    Test every synthesised point is in front of the camera and inside the image.
    """
    pose = trajectory_poses(TrajectorySpec(n_frames=8))[2]
    cloud = synthesize_cloud(default_scene(), pose, cam, SPARSE, rng)
    assert len(cloud) > 0
    assert np.all(cloud[:, 2] > 0)
    pixels = cam.project_points(cloud)
    assert np.all((pixels[:, 0] >= 0) & (pixels[:, 0] <= cam.width - 1))
    assert np.all((pixels[:, 1] >= 0) & (pixels[:, 1] <= cam.height - 1))


def test_render_depth_floor_and_ball(small_cam):
    """
    Test the centre pixel sees the top of a ball and a corner sees the floor.
    """
    ball = EllipsoidState((0.0, 0.0, 0.2), (0.0, 0.0, 0.0), (0.2, 0.2, 0.2))
    pose = Pose.look_at((0.0, 0.0, 1.0), (0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0))

    depth, labels = render_depth(Scene(objects=[]), pose, small_cam)
    assert depth.samples[24, 32] == 5000
    assert np.all(labels == -1)

    depth, labels = render_depth(Scene(objects=[SceneObject(4, "cup", ball)]), pose, small_cam)
    assert depth.samples[24, 32] == 3000
    assert labels[24, 32] == 4
    assert labels[0, 0] == -1
    assert depth.samples[0, 0] == 5000


def test_render_depth_nothing_hit(small_cam):
    """
    Test rays missing everything are invalid.
    """
    pose = Pose.look_at((0.0, 0.0, 1.0), (1.0, 0.0, 1.5))
    depth, _ = render_depth(Scene(objects=[]), pose, small_cam)
    assert depth.samples[0, 32] == 0


def test_synthesize_observations_is_deterministic(cam):
    """
    Test frames depend only on the seed.
    """
    scene = default_scene()
    poses = trajectory_poses(TrajectorySpec(n_frames=3))
    first = synthesize_observations(scene, poses, cam, SPARSE, seed=9)
    second = synthesize_observations(scene, poses, cam, SPARSE, seed=9)
    assert [f.frame_id for f in first] == [0, 1, 2]
    for one, two in zip(first, second):
        np.testing.assert_array_equal(one.cloud, two.cloud)
        assert [d.bbox for d in one.detections] == [d.bbox for d in two.detections]
        assert one.depth is None


def test_synthesize_observations_unknown_render(cam):
    """
    Test an unknown render mode is rejected.
    """
    poses = trajectory_poses(TrajectorySpec(n_frames=2))
    with pytest.raises(ValueError):
        synthesize_observations(default_scene(), poses, cam, SPARSE, render="mesh")


@pytest.mark.parametrize(
    "factory, changes",
    [
        (TrajectorySpec, {"n_frames": 1}),
        (TrajectorySpec, {"radius": 0.0}),
        (TrajectorySpec, {"mode": "spiral"}),
        (NoiseSpec, {"p_det_min": 0.9, "p_det_max": 0.8}),
        (NoiseSpec, {"bbox_sigma": -1.0}),
        (NoiseSpec, {"surface_samples": 0}),
    ],
)
def test_spec_validation(factory, changes):
    """
    Test invalid trajectory and noise settings are rejected.
    """
    with pytest.raises(ValueError):
        factory(**changes)


def test_orbit_angle_spacing():
    """
    Test consecutive orbit keyframes are separated by 2 pi / n around the target.
    """
    poses = trajectory_poses(TrajectorySpec(n_frames=8))
    angles = [math.atan2(p.translation[1], p.translation[0]) for p in poses]
    steps = np.diff(np.unwrap(angles))
    np.testing.assert_allclose(steps, 2.0 * math.pi / 8)
