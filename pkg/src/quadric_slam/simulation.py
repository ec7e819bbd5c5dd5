# -*- coding: utf-8 -*-
"""
quadric-slam - synthetic scenes, trajectories and observations

A desk-scale world (z-up, support plane z = 0) with ellipsoidal objects is
observed by a pinhole camera moving on an orbit or a forward line. Each frame
yields noisy detection boxes and either a camera-frame point cloud or a
rendered 16-bit depth image.
"""
import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from quadric_slam.common import BehindCamera, Unbounded
from quadric_slam.geometry import (
    BBox,
    Camera,
    EllipsoidState,
    Plane,
    Pose,
    conic_bbox,
    ellipsoid_to_dual,
    project_dual,
    sample_surface,
)
from quadric_slam.segmentation import Detection, DepthImage

DEFAULT_CAMERA = Camera(fx=525.0, fy=525.0, cx=319.5, cy=239.5, width=640, height=480)
DEFAULT_DEPTH_SCALE = 5000.0
_TRAJECTORY_STREAM = 0
_FRAME_STREAM = 1


class TrajectoryMode(enum.Enum):
    """Camera motion patterns."""

    ORBIT = "orbit"
    FORWARD = "forward"


@dataclass(frozen=True)
# pylint: disable=too-many-instance-attributes
class TrajectorySpec:
    """
    Camera path and odometry noise.

    Attributes:
        mode (TrajectoryMode): Orbit around the scene or forward line.
        n_frames (int): Number of keyframes, at least 2.
        radius (float): Orbit radius (m).
        length (float): Forward path length (m).
        camera_height (float): Camera height above the support plane (m).
        target_height (float): Height of the point the camera looks at (m).
        forward_start (tuple): (x, y) start of the forward path (m).
        forward_yaw_offset (float): Heading offset towards the objects at the start (deg).
        forward_yaw_sweep (float): Heading change from the first to the last frame (deg).
        odom_sigma_trans (float): Odometry translation noise (m).
        odom_sigma_rot (float): Odometry rotation noise (rad).
    """

    mode: TrajectoryMode = TrajectoryMode.ORBIT
    n_frames: int = 36
    radius: float = 2.0
    length: float = 3.0
    camera_height: float = 1.0
    target_height: float = 0.3
    forward_start: tuple = (-4.0, -0.8)
    forward_yaw_offset: float = 10.0
    forward_yaw_sweep: float = 20.0
    odom_sigma_trans: float = 0.0
    odom_sigma_rot: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mode", TrajectoryMode(self.mode))
        if self.n_frames < 2:
            raise ValueError(f"A trajectory needs at least 2 frames, got {self.n_frames}")
        for name in ("radius", "length", "camera_height"):
            if getattr(self, name) <= 0:
                raise ValueError(f"Trajectory parameter {name} must be positive")
        if self.odom_sigma_trans < 0 or self.odom_sigma_rot < 0:
            raise ValueError("Odometry noise sigmas must be nonnegative")


@dataclass(frozen=True)
# pylint: disable=too-many-instance-attributes
class NoiseSpec:
    """
    Measurement noise and sampling density of synthetic frames.

    Attributes:
        bbox_sigma (float): Gaussian noise on box edges (px).
        depth_sigma (float): Gaussian range noise along the ray (m).
        p_det_min, p_det_max (float): Range of the drawn detection probability.
        surface_samples (int): Surface samples per object and frame.
        plane_samples (int): Support-plane disc samples per frame.
        plane_radius (float): Radius of the support-plane disc (m).
        edge_margin_px (float): Boxes closer than this to the border are dropped.
    """

    bbox_sigma: float = 1.0
    depth_sigma: float = 0.005
    p_det_min: float = 0.95
    p_det_max: float = 1.0
    surface_samples: int = 4000
    plane_samples: int = 6000
    plane_radius: float = 2.5
    edge_margin_px: float = 2.0

    def __post_init__(self):
        if self.bbox_sigma < 0 or self.depth_sigma < 0 or self.edge_margin_px < 0:
            raise ValueError("Noise sigmas and edge margin must be nonnegative")
        if not 0.0 <= self.p_det_min <= self.p_det_max <= 1.0:
            raise ValueError(f"Invalid p_det range ({self.p_det_min}, {self.p_det_max})")
        if self.surface_samples <= 0 or self.plane_samples < 0 or self.plane_radius <= 0:
            raise ValueError("Sample counts and plane radius must be positive")


@dataclass(frozen=True, eq=False)
class SceneObject:
    """A ground-truth object of the world map."""

    object_id: int
    label: str
    state: EllipsoidState


@dataclass(eq=False)
class Scene:
    """Objects resting on a support plane."""

    objects: list
    support_plane: Plane = field(default_factory=lambda: Plane((0.0, 0.0, 1.0), 0.0))
    rng_seed: int = 0

    def __post_init__(self):
        for obj in self.objects:
            height = float(self.support_plane.distance(obj.state.t))
            if height < vertical_extent(obj.state, self.support_plane.normal) - 1e-9:
                raise ValueError(f"Object {obj.object_id} sinks into the support plane")


@dataclass(eq=False)
class SyntheticFrame:
    """Detections and the depth data of one keyframe."""

    frame_id: int
    detections: list
    cloud: np.ndarray = None
    depth: DepthImage = None


def vertical_extent(state, normal):
    """Half extent of the ellipsoid along a unit direction."""
    local = state.rotation_matrix().T @ np.asarray(normal, dtype=float)
    return float(np.linalg.norm(local * state.s))


def _resting(object_id, label, x, y, yaw, axes):
    state = EllipsoidState((x, y, axes[2]), (0.0, 0.0, yaw), axes)
    return SceneObject(object_id, label, state)


def default_scene(seed=0):
    """
    Six desk-scale objects on the floor: five symmetric ones and a distractor.

    Args:
        seed (int): Stored as the scene seed.

    Returns:
        Scene: The scene.
    """
    objects = [
        _resting(0, "table", 0.0, 0.0, 0.2, (0.6, 0.4, 0.375)),
        _resting(1, "chair", 0.05, 0.9, 1.4, (0.25, 0.2, 0.45)),
        _resting(2, "tv", -0.9, -0.75, 0.5, (0.4, 0.1, 0.3)),
        _resting(3, "keyboard", 0.85, -0.7, -0.3, (0.22, 0.08, 0.04)),
        _resting(4, "laptop", 0.95, 0.6, 0.8, (0.18, 0.12, 0.1)),
        _resting(5, "pottedplant", -0.9, 0.6, 0.0, (0.15, 0.15, 0.3)),
    ]
    return Scene(objects=objects, rng_seed=seed)


def trajectory_poses(spec):
    """
    Noiseless camera-in-world poses of a trajectory.

    Orbit poses lie on a circle of the given radius at equal angular spacing,
    aimed at the scene centre. Forward poses are equally spaced along +x from
    forward_start, looking ahead with the yaw offset, which turns linearly by
    forward_yaw_sweep over the path. A zero sweep keeps the heading fixed;
    box tangency alone cannot then constrain every shape term of a landmark.

    Args:
        spec (TrajectorySpec): The trajectory.

    Returns:
        list: Pose objects.
    """
    poses = []
    if spec.mode is TrajectoryMode.ORBIT:
        target = np.array([0.0, 0.0, spec.target_height])
        for k in range(spec.n_frames):
            angle = 2.0 * math.pi * k / spec.n_frames
            eye = np.array([math.cos(angle), math.sin(angle), 0.0]) * spec.radius
            eye[2] = spec.camera_height
            poses.append(Pose.look_at(eye, target))
        return poses

    spacing = spec.length / (spec.n_frames - 1)
    for k in range(spec.n_frames):
        heading = math.radians(
            spec.forward_yaw_offset + spec.forward_yaw_sweep * k / (spec.n_frames - 1)
        )
        direction = np.array([math.cos(heading), math.sin(heading), 0.0])
        eye = np.array(
            [spec.forward_start[0] + k * spacing, spec.forward_start[1], spec.camera_height]
        )
        target = eye + spec.radius * direction
        target[2] = spec.target_height
        poses.append(Pose.look_at(eye, target))
    return poses


def generate_trajectory(spec, seed=0):
    """
    Ground-truth poses and noisy odometry.

    The odometry of frame k is the relative motion from frame k-1 composed
    with exp(n), n drawn from the configured Gaussian; frame 0 has identity.

    Args:
        spec (TrajectorySpec): The trajectory.
        seed (int): Noise seed.

    Returns:
        list: (Pose, odometry Pose) tuples.
    """
    rng = np.random.default_rng([seed, _TRAJECTORY_STREAM])
    poses = trajectory_poses(spec)
    sigma = np.array([spec.odom_sigma_trans] * 3 + [spec.odom_sigma_rot] * 3)
    result = [(poses[0], Pose.identity())]
    for prev, pose in zip(poses, poses[1:]):
        motion = prev.inverse().compose(pose)
        noise = rng.normal(size=6) * sigma
        if np.any(noise):
            motion = motion.compose(Pose.exp(noise))
        result.append((pose, motion))
    logging.debug("Generated %s trajectory with %d frames", spec.mode.value, len(result))
    return result


def observe_box(state, pose, cam):
    """
    Analytic box of an ellipsoid in a camera.

    Returns:
        BBox or None: None when the object is behind the camera or its
            outline is not a bounded ellipse.
    """
    try:
        return conic_bbox(project_dual(ellipsoid_to_dual(state), pose, cam))
    except (BehindCamera, Unbounded):
        return None


def visible_surface(state, pose, count, rng):
    """
    Surface samples facing the camera (outward normal . view ray < 0).

    Returns:
        tuple: (points, normals) in the world frame.
    """
    points, normals = sample_surface(state, count, rng)
    view = points - pose.translation
    facing = np.einsum("ij,ij->i", normals, view) < 0.0
    return points[facing], normals[facing]


def _plane_disc(plane, radius, count, rng):
    # uniform samples on a disc of the plane centred at the foot of the origin
    helper = np.eye(3)[int(np.argmin(np.abs(plane.normal)))]
    axis_u = np.cross(plane.normal, helper)
    axis_u /= np.linalg.norm(axis_u)
    axis_v = np.cross(plane.normal, axis_u)
    rho = radius * np.sqrt(rng.uniform(size=count))
    theta = rng.uniform(0.0, 2.0 * math.pi, size=count)
    centre = plane.project(np.zeros(3))
    offsets = np.outer(rho * np.cos(theta), axis_u) + np.outer(rho * np.sin(theta), axis_v)
    return centre + offsets


def _in_image(points_c, cam):
    in_front = points_c[:, 2] > 1e-6
    pixels = np.full((len(points_c), 2), -1.0)
    pixels[in_front] = cam.project_points(points_c[in_front])
    return (
        in_front
        & (pixels[:, 0] >= 0)
        & (pixels[:, 0] <= cam.width - 1)
        & (pixels[:, 1] >= 0)
        & (pixels[:, 1] <= cam.height - 1)
    )


def synthesize_cloud(scene, pose, cam, noise, rng):
    """
    Camera-frame cloud of one frame: camera-facing object surfaces plus the
    support-plane disc, with Gaussian range noise along each ray.
    """
    world = []
    for obj in scene.objects:
        points, _ = visible_surface(obj.state, pose, noise.surface_samples, rng)
        world.append(points)
    if noise.plane_samples and scene.support_plane.distance(pose.translation) > 0:
        world.append(
            _plane_disc(scene.support_plane, noise.plane_radius, noise.plane_samples, rng)
        )
    cloud = pose.inverse().transform_points(np.vstack(world))
    cloud = cloud[_in_image(cloud, cam)]
    if noise.depth_sigma > 0:
        ranges = np.linalg.norm(cloud, axis=1, keepdims=True)
        cloud = cloud * (1.0 + rng.normal(0.0, noise.depth_sigma, (len(cloud), 1)) / ranges)
    return cloud


def synthesize_detections(scene, frame_id, pose, cam, noise, rng):
    """
    Noisy detection boxes of every object visible in a frame.

    Boxes are perturbed, clipped to the image and dropped when an edge comes
    within edge_margin_px of the border.
    """
    detections = []
    for obj in scene.objects:
        box = observe_box(obj.state, pose, cam)
        if box is None:
            continue
        values = box.as_array() + rng.normal(0.0, noise.bbox_sigma, 4)
        p_det = float(rng.uniform(noise.p_det_min, noise.p_det_max))
        values[[0, 2]] = np.clip(values[[0, 2]], 0.0, cam.width - 1)
        values[[1, 3]] = np.clip(values[[1, 3]], 0.0, cam.height - 1)
        if not (values[0] < values[2] and values[1] < values[3]):
            continue
        noisy = BBox.from_array(values)
        if noisy.touches_border(cam, noise.edge_margin_px):
            logging.debug(
                "Frame %d object %d: box touches the image edge", frame_id, obj.object_id
            )
            continue
        detections.append(Detection(frame_id, obj.object_id, obj.label, noisy, p_det))
    return detections


def render_depth(scene, pose, cam, depth_scale=DEFAULT_DEPTH_SCALE, rng=None, depth_sigma=0.0):
    """
    Ray-cast the support plane and all ellipsoids into a depth image.

    Args:
        scene (Scene): The world.
        pose (Pose): Camera-in-world pose.
        cam (Camera): Intrinsics.
        depth_scale (float): Counts per meter.
        rng (numpy.random.Generator): Noise source, needed when depth_sigma > 0.
        depth_sigma (float): Gaussian noise on the depth (m).

    Returns:
        tuple: (DepthImage, labels) where labels holds the object id hit by
            each pixel and -1 for the plane or nothing.
    """
    cols, rows = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    rays_c = np.stack(
        [(cols - cam.cx) / cam.fx, (rows - cam.cy) / cam.fy, np.ones(cols.shape)], axis=-1
    ).reshape(-1, 3)
    rays_w = rays_c @ pose.rotation_matrix().T
    origin = pose.translation

    depth = np.full(len(rays_w), np.inf)
    labels = np.full(len(rays_w), -1, dtype=np.int32)

    plane = scene.support_plane
    denom = rays_w @ plane.normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = -plane.distance(origin) / denom
    t_plane[~(t_plane > 0)] = np.inf
    depth = np.minimum(depth, t_plane)

    for obj in scene.objects:
        rot = obj.state.rotation_matrix()
        o_local = (rot.T @ (origin - obj.state.t)) / obj.state.s
        d_local = (rays_w @ rot) / obj.state.s
        a = np.einsum("ij,ij->i", d_local, d_local)
        b = 2.0 * d_local @ o_local
        c = o_local @ o_local - 1.0
        disc = b * b - 4.0 * a * c
        hit = disc >= 0
        t_hit = np.full(len(rays_w), np.inf)
        t_hit[hit] = (-b[hit] - np.sqrt(disc[hit])) / (2.0 * a[hit])
        t_hit[~(t_hit > 0)] = np.inf
        closer = t_hit < depth
        depth[closer] = t_hit[closer]
        labels[closer] = obj.object_id

    valid = np.isfinite(depth)
    if depth_sigma > 0 and rng is not None:
        depth[valid] += rng.normal(0.0, depth_sigma, int(np.count_nonzero(valid)))
    counts = np.zeros(len(depth))
    counts[valid] = np.clip(np.round(depth[valid] * depth_scale), 0, 65535)
    samples = counts.astype(np.uint16).reshape(cam.height, cam.width)
    return DepthImage(samples, depth_scale), labels.reshape(cam.height, cam.width)


# pylint: disable=too-many-arguments
def synthesize_observations(scene, poses, cam, noise, seed=0, render="clouds"):
    """
    Per-frame detections and depth data for a trajectory.

    Every frame draws from its own generator seeded with (seed, frame_id),
    so the output does not depend on evaluation order.

    Args:
        scene (Scene): The world.
        poses (list): Camera-in-world poses, indexed by frame id.
        cam (Camera): Intrinsics.
        noise (NoiseSpec): Measurement noise.
        seed (int): Base seed.
        render (str): "clouds" for point clouds, "depth" for depth images.

    Returns:
        list: SyntheticFrame objects.
    """
    if render not in ("clouds", "depth"):
        raise ValueError(f"Unknown render mode '{render}'")
    frames = []
    for frame_id, pose in enumerate(poses):
        rng = np.random.default_rng([seed, _FRAME_STREAM, frame_id])
        detections = synthesize_detections(scene, frame_id, pose, cam, noise, rng)
        frame = SyntheticFrame(frame_id, detections)
        if render == "clouds":
            frame.cloud = synthesize_cloud(scene, pose, cam, noise, rng)
        else:
            frame.depth, _ = render_depth(
                scene, pose, cam, rng=rng, depth_sigma=noise.depth_sigma
            )
        frames.append(frame)
    logging.info(
        "Synthesised %d frame(s) with %d detection(s)",
        len(frames),
        sum(len(f.detections) for f in frames),
    )
    return frames


# vim: ts=4 sw=4 expandtab
