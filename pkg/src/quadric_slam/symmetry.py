# -*- coding: utf-8 -*-
"""
quadric-slam - symmetry plane estimation and cloud completion

Man-made objects standing on a supporting plane are assumed mirror symmetric
about one vertical plane, or about two perpendicular vertical planes. The
object label selects the symmetry type; PCA on the support plane gives the
initial plane, a grid search refines it, and the mirrored points complete the
self-occluded side of the cloud.
"""
import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from quadric_slam.common import DegenerateCloud
from quadric_slam.geometry import Plane

DEDUP_TOL = 1e-6
FACING_COSINE = 0.5
PLACEMENT_RATIO = 0.95
RAY_SPACINGS = 3.0


class SymmetryType(enum.Enum):
    """Mirror symmetry kinds of the ellipsoid object model."""

    PLANE_REFLECTION = "plane"
    DUAL_PLANE_REFLECTION = "dual"

    @property
    def plane_count(self):
        return 1 if self is SymmetryType.PLANE_REFLECTION else 2


DEFAULT_SYMMETRY_TABLE = {
    "chair": SymmetryType.PLANE_REFLECTION,
    "laptop": SymmetryType.PLANE_REFLECTION,
    "cup": SymmetryType.PLANE_REFLECTION,
    "table": SymmetryType.DUAL_PLANE_REFLECTION,
    "tv": SymmetryType.DUAL_PLANE_REFLECTION,
    "keyboard": SymmetryType.DUAL_PLANE_REFLECTION,
}


@dataclass(frozen=True)
class SymmetryParams:
    """
    Refinement schedule.

    Attributes:
        sigma_sym (float): Score length scale (m).
        angle_search (float): Rotation range searched on each side (deg).
        offset_search (float): Offset range searched on each side (m).
        grid_steps (int): Samples per search dimension.
    """

    sigma_sym: float = 0.02
    angle_search: float = 15.0
    offset_search: float = 0.05
    grid_steps: int = 11

    def __post_init__(self):
        for name in ("sigma_sym", "angle_search", "offset_search", "grid_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"Symmetry parameter {name} must be positive")


@dataclass(eq=False)
class SymmetryResult:
    """Estimated symmetry planes, their probability and the completed cloud."""

    planes: list
    p_sym: float
    completed: np.ndarray = field(default=None)


def symmetry_prior(label, table=None):
    """
    Symmetry type of an object label.

    Args:
        label (str): Detector label.
        table (dict): Label to SymmetryType map; the built-in table when None.

    Returns:
        SymmetryType: The listed type, PLANE_REFLECTION for unknown labels.
    """
    table = DEFAULT_SYMMETRY_TABLE if table is None else table
    key = label.strip().lower()
    if key not in table:
        logging.debug("Label '%s' not in the symmetry table; using plane reflection", label)
    return table.get(key, SymmetryType.PLANE_REFLECTION)


def _plane_basis(normal):
    helper = np.eye(3)[int(np.argmin(np.abs(normal)))]
    first = np.cross(normal, helper)
    first /= np.linalg.norm(first)
    return first, np.cross(normal, first)


def init_symmetry_plane(cloud, support):
    """
    Initial symmetry plane from planar PCA.

    Points are projected on the support plane; the principal direction becomes
    the plane normal and the plane passes through the cloud centroid.

    Args:
        cloud (numpy.ndarray): (N, 3) object points.
        support (Plane): Supporting plane.

    Returns:
        Plane: A plane perpendicular to the support plane.

    Raises:
        DegenerateCloud: With fewer than 3 points or collinear projections.
    """
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(cloud) < 3:
        raise DegenerateCloud(f"Need at least 3 points, got {len(cloud)}")
    centroid = cloud.mean(axis=0)
    axis_u, axis_v = _plane_basis(support.normal)
    flat = support.project(cloud) - support.project(centroid)
    coords = np.column_stack([flat @ axis_u, flat @ axis_v])
    eigvals, eigvecs = np.linalg.eigh(coords.T @ coords / len(coords))
    if eigvals[1] <= 0.0 or eigvals[0] <= 1e-12 * eigvals[1]:
        raise DegenerateCloud("Projected points are collinear")
    main = eigvecs[0, 1] * axis_u + eigvecs[1, 1] * axis_v
    return Plane.from_point_normal(centroid, main)


def mirror_cloud(cloud, plane):
    """Reflect every point about the plane: p - 2 (n.p + d) n."""
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    return cloud - 2.0 * np.outer(plane.distance(cloud), plane.normal)


@dataclass(eq=False)
class ViewRays:
    """
    An observed cloud as rays from the sensor, for occlusion tests.

    Attributes:
        viewpoint (numpy.ndarray): Sensor position in the cloud frame.
        tree (scipy.spatial.cKDTree): Tree of the unit ray directions.
        ranges (numpy.ndarray): Distance of every observed point.
        tolerance (float): Largest direction difference of matching rays.
    """

    viewpoint: np.ndarray
    tree: cKDTree
    ranges: np.ndarray
    tolerance: float

    @classmethod
    def from_cloud(cls, cloud, viewpoint):
        """Rays of a cloud with at least 2 points; tolerance is 3 ray spacings."""
        viewpoint = np.asarray(viewpoint, dtype=float).reshape(3)
        directions, ranges = _unit_rays(cloud, viewpoint)
        tree = cKDTree(directions)
        spacing, _ = tree.query(directions, k=2)
        return cls(viewpoint, tree, ranges, RAY_SPACINGS * float(np.median(spacing[:, 1])))

    def hidden(self, points, margin):
        """
        True for points lying behind the observed surface along their ray.

        A point whose ray misses the observed cloud, or that lies in front of
        the surface or within margin of it, is not hidden.
        """
        directions, ranges = _unit_rays(points, self.viewpoint)
        dist, index = self.tree.query(directions, distance_upper_bound=self.tolerance)
        on_cloud = np.isfinite(dist)
        hidden = np.zeros(len(directions), dtype=bool)
        hidden[on_cloud] = self.ranges[index[on_cloud]] < ranges[on_cloud] - margin
        return hidden


def _unit_rays(points, viewpoint):
    offsets = np.asarray(points, dtype=float).reshape(-1, 3) - viewpoint
    ranges = np.maximum(np.linalg.norm(offsets, axis=1), 1e-12)
    return offsets / ranges[:, None], ranges


def symmetry_score(cloud, plane, params, tree=None, rays=None):
    """
    Probability that the cloud is mirror symmetric about the plane.

    Each point is mirrored and matched to its nearest original point;
    P_sym = exp(-mean(d^2) / (2 sigma_sym^2)). With rays, mirrored points
    hidden behind the observed surface are unobservable and count as d = 0.

    Args:
        cloud (numpy.ndarray): (N, 3) points, N > 0.
        plane (Plane): Candidate symmetry plane.
        params (SymmetryParams): Provides sigma_sym.
        tree (scipy.spatial.cKDTree): Optional prebuilt tree of cloud.
        rays (ViewRays): Optional sensor rays of cloud.

    Returns:
        float: Score in (0, 1].
    """
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    tree = cKDTree(cloud) if tree is None else tree
    mirrored = mirror_cloud(cloud, plane)
    dist, _ = tree.query(mirrored)
    if rays is not None:
        dist[rays.hidden(mirrored, params.sigma_sym)] = 0.0
    mean_sq = float(np.mean(dist**2))
    return math.exp(-mean_sq / (2.0 * params.sigma_sym**2))


def _perpendicular(normal, axis):
    normal = normal - (normal @ axis) * axis
    return normal / np.linalg.norm(normal)


def place_facing_plane(cloud, plane, params, rays, tree=None):
    """
    Move a plane facing the sensor back to the nearest consistent offset.

    A plane whose normal is within 60 deg of the viewing direction is
    shifted away from the sensor in sigma_sym / 2 steps across the cloud's
    depth; the first offset scoring at least 0.95 of the best score wins.
    Other planes are returned unchanged.

    Args:
        cloud (numpy.ndarray): (N, 3) object points.
        plane (Plane): Vertical symmetry plane.
        params (SymmetryParams): Provides sigma_sym.
        rays (ViewRays): Sensor rays of cloud.
        tree (scipy.spatial.cKDTree): Optional prebuilt tree of cloud.

    Returns:
        tuple: (Plane, score).
    """
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    tree = cKDTree(cloud) if tree is None else tree
    pivot = plane.project(cloud.mean(axis=0))
    view = pivot - rays.viewpoint
    cosine = float(plane.normal @ view) / max(float(np.linalg.norm(view)), 1e-12)
    if abs(cosine) < FACING_COSINE:
        return plane, symmetry_score(cloud, plane, params, tree, rays)

    normal = plane.normal if cosine > 0.0 else -plane.normal
    depth = (cloud - pivot) @ normal
    shifts = np.arange(0.0, np.ptp(depth) + params.sigma_sym, 0.5 * params.sigma_sym)
    candidates = [Plane.from_point_normal(pivot + shift * normal, normal) for shift in shifts]
    scores = [symmetry_score(cloud, c, params, tree, rays) for c in candidates]
    best = max(scores)
    chosen = next(k for k, score in enumerate(scores) if score >= PLACEMENT_RATIO * best)
    if chosen:
        logging.debug("Facing plane moved %.3f m away from the sensor", shifts[chosen])
    return candidates[chosen], scores[chosen]


# pylint: disable=too-many-arguments,too-many-locals
def refine_symmetry(cloud, init, sym_type, params, support, viewpoint=None):
    """
    Grid search of the symmetry plane around an initial guess.

    The plane normal is rotated about the support normal within
    +-angle_search and shifted along itself within +-offset_search. For dual
    reflection the second plane is perpendicular to the first and shares its
    vertical axis; p_sym is then the geometric mean of both scores.

    Given the sensor viewpoint, scores ignore mirrored points hidden behind
    the observed surface and planes facing the sensor are moved back with
    place_facing_plane.

    Args:
        cloud (numpy.ndarray): (N, 3) object points.
        init (Plane): Initial symmetry plane.
        sym_type (SymmetryType): Number of planes to return.
        params (SymmetryParams): Search schedule.
        support (Plane): Supporting plane (rotation axis).
        viewpoint (array-like): Optional sensor position in the cloud frame.

    Returns:
        SymmetryResult: Planes and p_sym; completed is left unset.
    """
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    tree = cKDTree(cloud)
    rays = None
    if viewpoint is not None and len(cloud) > 1:
        rays = ViewRays.from_cloud(cloud, viewpoint)
    axis = support.normal
    pivot = init.project(cloud.mean(axis=0))

    best_plane = init
    best_score = symmetry_score(cloud, init, params, tree, rays)
    half_angle = params.angle_search
    angles = np.radians(np.linspace(-half_angle, half_angle, params.grid_steps))
    offsets = np.linspace(-params.offset_search, params.offset_search, params.grid_steps)
    for angle in angles:
        normal = _perpendicular(Rotation.from_rotvec(axis * angle).apply(init.normal), axis)
        for offset in offsets:
            candidate = Plane.from_point_normal(pivot + offset * normal, normal)
            score = symmetry_score(cloud, candidate, params, tree, rays)
            if score > best_score + 1e-12:
                best_plane, best_score = candidate, score
    if rays is not None:
        best_plane, best_score = place_facing_plane(cloud, best_plane, params, rays, tree)

    planes = [best_plane]
    p_sym = best_score
    if sym_type is SymmetryType.DUAL_PLANE_REFLECTION:
        second_normal = _perpendicular(np.cross(axis, best_plane.normal), axis)
        second = Plane.from_point_normal(best_plane.project(pivot), second_normal)
        if rays is None:
            second_score = symmetry_score(cloud, second, params, tree)
        else:
            second, second_score = place_facing_plane(cloud, second, params, rays, tree)
        planes.append(second)
        p_sym = math.sqrt(best_score * second_score)

    logging.debug("Symmetry refined: %d plane(s), p_sym=%.4f", len(planes), p_sym)
    return SymmetryResult(planes=planes, p_sym=p_sym)


def _merge_mirrored(cloud, mirrored, tol=DEDUP_TOL):
    """Append the mirrored points farther than tol from every kept point."""
    if len(cloud):
        dist, _ = cKDTree(cloud).query(mirrored, distance_upper_bound=tol)
        mirrored = mirrored[~(dist <= tol)]
    if len(mirrored) == 0:
        return cloud
    pairs = cKDTree(mirrored).query_pairs(tol, output_type="ndarray")
    keep = np.ones(len(mirrored), dtype=bool)
    if len(pairs):
        keep[pairs.max(axis=1)] = False
    return np.vstack([cloud, mirrored[keep]])


def complete_cloud(cloud, planes):
    """
    Union of the cloud and its mirror images.

    One plane adds the reflection about it; two planes add both reflections
    and their composition. Mirrored points closer than 1e-6 m to an original
    point or to another mirrored point are merged; the originals are all kept.

    Args:
        cloud (numpy.ndarray): (N, 3) object points.
        planes (list): Zero, one or two symmetry planes.

    Returns:
        numpy.ndarray: The completed cloud, starting with the original points.
    """
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if not planes or len(cloud) == 0:
        return cloud
    parts = [mirror_cloud(cloud, planes[0])]
    if len(planes) > 1:
        parts.append(mirror_cloud(cloud, planes[1]))
        parts.append(mirror_cloud(parts[0], planes[1]))
    return _merge_mirrored(cloud, np.vstack(parts))


def estimate_symmetry(cloud, support, label, params, table=None, viewpoint=None):
    """
    Full symmetry stage for one object: prior, PCA init, refinement, completion.

    Args:
        cloud (numpy.ndarray): (N, 3) object points.
        support (Plane): Supporting plane.
        label (str): Detector label.
        params (SymmetryParams): Search schedule.
        table (dict): Label to SymmetryType map.
        viewpoint (array-like): Sensor position in the cloud frame, the
            origin for camera-frame clouds.

    Returns:
        SymmetryResult: Planes, p_sym and the completed cloud.

    Raises:
        DegenerateCloud: If the initial plane cannot be computed.
    """
    sym_type = symmetry_prior(label, table)
    init = init_symmetry_plane(cloud, support)
    result = refine_symmetry(cloud, init, sym_type, params, support, viewpoint)
    result.completed = complete_cloud(cloud, result.planes)
    return result


# vim: ts=4 sw=4 expandtab
