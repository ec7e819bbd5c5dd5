# -*- coding: utf-8 -*-
"""
quadric-slam - object point-cloud segmentation

Extracts the envelope point cloud of each detected object from one depth
frame: candidate supporting planes are found by sequential RANSAC, the plane
right below the object is selected, points above it are clustered and the
cluster nearest the bbox centre is kept.

A frame is either a DepthImage or an (N, 3) camera-frame point cloud.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from quadric_slam.common import EmptyRegion, NoSupportingPlane
from quadric_slam.geometry import BBox, Plane


@dataclass(frozen=True, eq=False)
class DepthImage:
    """
    16-bit depth frame.

    Attributes:
        samples (numpy.ndarray): (height, width) unsigned depths; 0 is invalid.
        depth_scale (float): Counts per meter.
    """

    samples: np.ndarray
    depth_scale: float = 5000.0

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 2:
            raise ValueError(f"Depth samples must be 2-D, got shape {samples.shape}")
        if self.depth_scale <= 0:
            raise ValueError(f"depth_scale must be positive: {self.depth_scale}")
        object.__setattr__(self, "samples", samples.astype(np.uint16, copy=False))

    @property
    def width(self):
        return self.samples.shape[1]

    @property
    def height(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
# pylint: disable=too-many-instance-attributes
class SegmentationParams:
    """
    Thresholds of the segmentation stage.

    Attributes:
        eps0 (float): Max angle between plane normal and -gravity (deg).
        eps1 (int): Min plane inlier count.
        eps2 (float): Min height above the supporting plane (m).
        eps3 (int): Min cluster size.
        ransac_iters (int): RANSAC hypotheses per extracted plane.
        ransac_inlier_dist (float): Plane inlier distance (m).
        cluster_tolerance (float): Euclidean clustering radius (m).
        gravity (tuple): Unit gravity direction in the camera frame.
        plane_sample_stride (int): Pixel stride of the full-frame plane cloud.
        anchor_search_px (int): Radius searched for a valid anchor depth.
    """

    eps0: float = 10.0
    eps1: int = 200
    eps2: float = 0.05
    eps3: int = 100
    ransac_iters: int = 200
    ransac_inlier_dist: float = 0.01
    cluster_tolerance: float = 0.05
    gravity: tuple = (0.0, 1.0, 0.0)
    plane_sample_stride: int = 4
    anchor_search_px: int = 5

    def __post_init__(self):
        for name in (
            "eps0",
            "eps1",
            "eps2",
            "eps3",
            "ransac_iters",
            "ransac_inlier_dist",
            "cluster_tolerance",
            "plane_sample_stride",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"Segmentation parameter {name} must be positive")
        gravity = np.asarray(self.gravity, dtype=float)
        if gravity.shape != (3,) or abs(np.linalg.norm(gravity) - 1.0) > 1e-6:
            raise ValueError(f"gravity must be a unit 3-vector: {self.gravity}")
        object.__setattr__(self, "gravity", tuple(float(g) for g in gravity))


@dataclass(frozen=True)
class Detection:
    """A labelled detection box of one object in one frame."""

    frame_id: int
    object_id: int
    label: str
    bbox: BBox
    p_det: float


@dataclass(eq=False)
class SegmentedObject:
    """Detection box plus the envelope cloud above its supporting plane."""

    bbox: BBox
    label: str
    p_det: float
    cloud: np.ndarray
    support_plane: Plane
    object_id: int = field(default=-1)


def _pixel_window(width, height, region):
    if region is None:
        return 0, 0, width - 1, height - 1
    u_0 = max(0, math.ceil(region.x_min))
    v_0 = max(0, math.ceil(region.y_min))
    u_1 = min(width - 1, math.floor(region.x_max))
    v_1 = min(height - 1, math.floor(region.y_max))
    return u_0, v_0, u_1, v_1


def backproject(depth, cam, region=None, stride=1):
    """
    Back-project valid depth pixels to camera-frame points.

    Args:
        depth (DepthImage): The depth frame.
        cam (Camera): Intrinsics.
        region (BBox): Optional pixel rectangle; the full image when None.
        stride (int): Keep every stride-th pixel in both directions.

    Returns:
        numpy.ndarray: (N, 3) points in meters.

    Raises:
        EmptyRegion: If no valid depth lies in the region.
    """
    u_0, v_0, u_1, v_1 = _pixel_window(depth.width, depth.height, region)
    if u_1 < u_0 or v_1 < v_0:
        raise EmptyRegion(f"Region {region} does not overlap the image")
    window = depth.samples[v_0 : v_1 + 1 : stride, u_0 : u_1 + 1 : stride]
    rows, cols = np.nonzero(window)
    if rows.size == 0:
        raise EmptyRegion(f"No valid depth in region {region}")
    z = window[rows, cols].astype(float) / depth.depth_scale
    u = cols * stride + u_0
    v = rows * stride + v_0
    return np.column_stack([z * (u - cam.cx) / cam.fx, z * (v - cam.cy) / cam.fy, z])


def region_points(frame, cam, region):
    """
    Points of a frame falling inside a pixel rectangle.

    Args:
        frame (DepthImage or numpy.ndarray): Depth image or camera-frame cloud.
        cam (Camera): Intrinsics.
        region (BBox): The rectangle.

    Returns:
        numpy.ndarray: (N, 3) camera-frame points.

    Raises:
        EmptyRegion: If no point falls inside.
    """
    if isinstance(frame, DepthImage):
        return backproject(frame, cam, region)
    cloud = np.asarray(frame, dtype=float)
    in_front = cloud[cloud[:, 2] > 0]
    pixels = cam.project_points(in_front)
    mask = (
        (pixels[:, 0] >= region.x_min)
        & (pixels[:, 0] <= region.x_max)
        & (pixels[:, 1] >= region.y_min)
        & (pixels[:, 1] <= region.y_max)
    )
    if not np.any(mask):
        raise EmptyRegion(f"No cloud point projects into region {region}")
    return in_front[mask]


def anchor_point(frame, cam, bbox, search_px=5):
    """
    The 3D point behind the bbox centre pixel.

    For depth images an invalid centre falls back to the nearest valid pixel
    within search_px; for clouds the point projecting nearest the centre is used.

    Returns:
        numpy.ndarray or None: The anchor, or None when nothing is found.
    """
    u_c, v_c = bbox.center
    if isinstance(frame, DepthImage):
        u_i, v_i = int(round(u_c)), int(round(v_c))
        u_0, u_1 = max(0, u_i - search_px), min(frame.width - 1, u_i + search_px)
        v_0, v_1 = max(0, v_i - search_px), min(frame.height - 1, v_i + search_px)
        if u_1 < u_0 or v_1 < v_0:
            return None
        window = frame.samples[v_0 : v_1 + 1, u_0 : u_1 + 1]
        rows, cols = np.nonzero(window)
        if rows.size == 0:
            return None
        dist2 = (cols + u_0 - u_i) ** 2 + (rows + v_0 - v_i) ** 2
        best = int(np.argmin(dist2))
        u, v = cols[best] + u_0, rows[best] + v_0
        z = float(window[rows[best], cols[best]]) / frame.depth_scale
        return np.array([z * (u - cam.cx) / cam.fx, z * (v - cam.cy) / cam.fy, z])

    cloud = np.asarray(frame, dtype=float)
    in_front = cloud[cloud[:, 2] > 0]
    if in_front.size == 0:
        return None
    pixels = cam.project_points(in_front)
    best = int(np.argmin((pixels[:, 0] - u_c) ** 2 + (pixels[:, 1] - v_c) ** 2))
    return in_front[best]


def _fit_plane(points):
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid, full_matrices=False)
    return Plane.from_point_normal(centroid, vt[-1])


def extract_planes(cloud, params, rng):
    """
    Sequential RANSAC plane extraction.

    A plane is fitted, refined on its inliers, removed from the cloud and the
    search repeats until the best hypothesis has fewer than eps1 inliers.
    Normals are oriented against gravity.

    Args:
        cloud (numpy.ndarray): (N, 3) points.
        params (SegmentationParams): Thresholds.
        rng (numpy.random.Generator): Random source for the hypotheses.

    Returns:
        list: (Plane, inlier count) tuples in extraction order.
    """
    gravity = np.asarray(params.gravity)
    remaining = np.asarray(cloud, dtype=float)
    planes = []

    while len(remaining) >= 3:
        samples = rng.integers(0, len(remaining), size=(params.ransac_iters, 3))
        p_0, p_1, p_2 = (remaining[samples[:, k]] for k in range(3))
        normals = np.cross(p_1 - p_0, p_2 - p_0)
        norms = np.linalg.norm(normals, axis=1)

        best_count, best_mask = 0, None
        for k in np.flatnonzero(norms > 1e-9):
            normal = normals[k] / norms[k]
            mask = np.abs(remaining @ normal - normal @ p_0[k]) < params.ransac_inlier_dist
            count = int(np.count_nonzero(mask))
            if count > best_count:
                best_count, best_mask = count, mask

        if best_mask is None or best_count < params.eps1:
            logging.debug("Best plane hypothesis has %d inliers; stopping", best_count)
            break

        plane = _fit_plane(remaining[best_mask])
        refined = np.abs(plane.distance(remaining)) < params.ransac_inlier_dist
        if np.count_nonzero(refined) >= best_count:
            best_mask = refined
        if plane.normal @ gravity > 0:
            plane = plane.flipped()

        count = int(np.count_nonzero(best_mask))
        logging.debug("Extracted plane %s with %d inliers", plane.vector(), count)
        planes.append((plane, count))
        remaining = remaining[~best_mask]

    return planes


def filter_support_planes(planes, params):
    """
    Keep near-horizontal planes with enough inliers.

    Args:
        planes (list): (Plane, inlier count) tuples.
        params (SegmentationParams): eps0 (deg), eps1 and gravity are used.

    Returns:
        list: The accepted planes (Plane objects).
    """
    up = -np.asarray(params.gravity)
    support = []
    for plane, count in planes:
        angle = math.degrees(math.acos(float(np.clip(plane.normal @ up, -1.0, 1.0))))
        if angle < params.eps0 and count > params.eps1:
            support.append(plane)
        else:
            logging.debug(
                "Rejected plane %s (angle %.1f deg, %d inliers)", plane.vector(), angle, count
            )
    return support


def select_supporting_plane(planes, center):
    """
    The nearest plane lying below a point.

    Args:
        planes (list): Candidate planes, normals pointing up.
        center (array-like): Object centre.

    Returns:
        Plane: The plane with the smallest positive signed distance.

    Raises:
        NoSupportingPlane: If no plane has positive distance.
    """
    best, best_dist = None, math.inf
    for plane in planes:
        dist = float(plane.distance(center))
        if 0.0 < dist < best_dist:
            best, best_dist = plane, dist
    if best is None:
        raise NoSupportingPlane(f"No candidate plane below {np.asarray(center)}")
    return best


def filter_above_plane(cloud, plane, eps2):
    """Keep the points higher than eps2 above the plane."""
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    return cloud[plane.distance(cloud) > eps2]


def euclidean_cluster(cloud, tolerance):
    """
    Connected components of the graph linking points closer than tolerance.

    Args:
        cloud (numpy.ndarray): (N, 3) points.
        tolerance (float): Link radius (m).

    Returns:
        list: One (M, 3) array per cluster; together they partition the input.
    """
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    count = len(cloud)
    if count == 0:
        return []
    pairs = cKDTree(cloud).query_pairs(tolerance, output_type="ndarray")
    graph = coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(count, count)
    )
    n_clusters, labels = connected_components(graph, directed=False)
    return [cloud[labels == k] for k in range(n_clusters)]


def select_cluster(clusters, anchor, eps3):
    """
    The cluster closest to the anchor, if it has more than eps3 points.

    Returns:
        numpy.ndarray or None: The chosen cluster.
    """
    anchor = np.asarray(anchor, dtype=float)
    best, best_dist = None, math.inf
    for cluster in clusters:
        if len(cluster) == 0:
            continue
        dist = float(np.min(np.linalg.norm(cluster - anchor, axis=1)))
        if dist < best_dist:
            best, best_dist = cluster, dist
    if best is None:
        return None
    if len(best) <= eps3:
        logging.debug("Nearest cluster has %d points (eps3=%d)", len(best), eps3)
        return None
    return best


def frame_support_planes(frame, cam, params, rng):
    """
    Candidate supporting planes of a whole frame.

    Args:
        frame (DepthImage or numpy.ndarray): Depth image or camera-frame cloud.
        cam (Camera): Intrinsics.
        params (SegmentationParams): Thresholds.
        rng (numpy.random.Generator): RANSAC random source.

    Returns:
        list: Supporting-plane candidates (set S).
    """
    if isinstance(frame, DepthImage):
        try:
            cloud = backproject(frame, cam, None, stride=params.plane_sample_stride)
        except EmptyRegion:
            return []
    else:
        cloud = np.asarray(frame, dtype=float)
    return filter_support_planes(extract_planes(cloud, params, rng), params)


def segment_object(frame, cam, detection, params, rng, planes=None):
    """
    Envelope point cloud of one detection.

    Args:
        frame (DepthImage or numpy.ndarray): Depth image or camera-frame cloud.
        cam (Camera): Intrinsics.
        detection (Detection): The detection to segment.
        params (SegmentationParams): Thresholds.
        rng (numpy.random.Generator): RANSAC random source.
        planes (list): Precomputed supporting-plane candidates of the frame.

    Returns:
        SegmentedObject or None: None when any stage yields nothing.
    """
    if planes is None:
        planes = frame_support_planes(frame, cam, params, rng)
    if not planes:
        logging.debug("Frame %s: no supporting plane candidates", detection.frame_id)
        return None

    anchor = anchor_point(frame, cam, detection.bbox, params.anchor_search_px)
    if anchor is None:
        logging.debug("Object %s: no valid anchor depth", detection.object_id)
        return None

    try:
        region = region_points(frame, cam, detection.bbox)
        support = select_supporting_plane(planes, anchor)
    except (EmptyRegion, NoSupportingPlane) as err:
        logging.debug("Object %s: %s", detection.object_id, err)
        return None

    above = filter_above_plane(region, support, params.eps2)
    if len(above) == 0:
        logging.debug("Object %s: nothing above the supporting plane", detection.object_id)
        return None

    clusters = euclidean_cluster(above, params.cluster_tolerance)
    cloud = select_cluster(clusters, anchor, params.eps3)
    if cloud is None:
        return None

    return SegmentedObject(
        bbox=detection.bbox,
        label=detection.label,
        p_det=detection.p_det,
        cloud=cloud,
        support_plane=support,
        object_id=detection.object_id,
    )


# vim: ts=4 sw=4 expandtab
