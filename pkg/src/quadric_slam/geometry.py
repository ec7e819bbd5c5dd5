# -*- coding: utf-8 -*-
"""
quadric-slam - projective geometry of dual quadrics

Value types (poses, cameras, planes, boxes, ellipsoid states) and the pure
functions that build, decompose, move and project dual quadrics.

Conventions:
    - World frame is z-up. Camera frame has x right, y down, z forward.
    - Euler angles are intrinsic Z-Y-X: R = Rz(yaw) @ Ry(pitch) @ Rx(roll).
    - A dual quadric is built as Q* = Z diag(s1^2, s2^2, s3^2, -1) Z^T where Z is
      the homogeneous matrix of the ellipsoid pose.
"""
import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.transform import Rotation

from quadric_slam.common import (
    BehindCamera,
    NotAnEllipsoid,
    Singular,
    Unbounded,
    wrap_angle,
)

SYMMETRY_TOL = 1e-9
SINGULAR_TOL = 1e-12


def hat(vector):
    """Return the 3x3 skew-symmetric matrix of a 3-vector."""
    x, y, z = vector
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _so3_left_jacobian(phi):
    theta = np.linalg.norm(phi)
    w = hat(phi)
    if theta < 1e-8:
        return np.eye(3) + w / 2.0 + w @ w / 6.0
    return (
        np.eye(3)
        + (1.0 - math.cos(theta)) / theta**2 * w
        + (theta - math.sin(theta)) / theta**3 * (w @ w)
    )


def _so3_left_jacobian_inv(phi):
    theta = np.linalg.norm(phi)
    w = hat(phi)
    if theta < 1e-8:
        return np.eye(3) - w / 2.0 + w @ w / 12.0
    coeff = (1.0 - theta * math.sin(theta) / (2.0 * (1.0 - math.cos(theta)))) / theta**2
    return np.eye(3) - w / 2.0 + coeff * (w @ w)


def _rpy_from_matrix(rot_matrix):
    # scipy warns about gimbal lock; the returned angles are still a valid solution
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yaw_pitch_roll = Rotation.from_matrix(rot_matrix).as_euler("ZYX")
    return wrap_angle(yaw_pitch_roll[..., ::-1])


@dataclass(frozen=True, eq=False)
class Pose:
    """
    Rigid transform in SE(3).

    Attributes:
        translation (numpy.ndarray): 3-vector in meters.
        rotation (scipy.spatial.transform.Rotation): Unit-quaternion rotation.
    """

    translation: np.ndarray
    rotation: Rotation

    def __post_init__(self):
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=float).reshape(3)
        )

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), Rotation.identity())

    @classmethod
    def from_quaternion(cls, translation, quat_xyzw):
        return cls(translation, Rotation.from_quat(quat_xyzw))

    @classmethod
    def from_matrix(cls, matrix):
        matrix = np.asarray(matrix, dtype=float)
        return cls(matrix[:3, 3], Rotation.from_matrix(matrix[:3, :3]))

    @classmethod
    def exp(cls, xi):
        """
        SE(3) exponential of a tangent vector.

        Args:
            xi (array-like): 6-vector (rho, phi), translation part first.

        Returns:
            Pose: The corresponding transform.
        """
        xi = np.asarray(xi, dtype=float)
        rho, phi = xi[:3], xi[3:]
        return cls(_so3_left_jacobian(phi) @ rho, Rotation.from_rotvec(phi))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)):
        """
        Camera-in-world pose with the optical axis from eye towards target.

        Args:
            eye (array-like): Camera centre in world coordinates.
            target (array-like): Point the optical axis passes through.
            up (array-like): World up direction; image rows grow against it.

        Returns:
            Pose: Camera-to-world transform (x right, y down, z forward).
        """
        eye = np.asarray(eye, dtype=float)
        z_axis = np.asarray(target, dtype=float) - eye
        z_axis /= np.linalg.norm(z_axis)
        x_axis = np.cross(z_axis, np.asarray(up, dtype=float))
        x_axis /= np.linalg.norm(x_axis)
        y_axis = np.cross(z_axis, x_axis)
        return cls(eye, Rotation.from_matrix(np.column_stack([x_axis, y_axis, z_axis])))

    @property
    def quaternion(self):
        """Quaternion in (qx, qy, qz, qw) order."""
        return self.rotation.as_quat()

    def rotation_matrix(self):
        return self.rotation.as_matrix()

    def matrix(self):
        """Return the 4x4 homogeneous matrix."""
        out = np.eye(4)
        out[:3, :3] = self.rotation.as_matrix()
        out[:3, 3] = self.translation
        return out

    def compose(self, other):
        """Return self o other (apply other first, then self)."""
        return Pose(
            self.rotation.apply(other.translation) + self.translation,
            self.rotation * other.rotation,
        )

    def inverse(self):
        inv_rot = self.rotation.inv()
        return Pose(-inv_rot.apply(self.translation), inv_rot)

    def transform_points(self, points):
        """Apply the transform to an (N, 3) array of points."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.as_matrix().T + self.translation

    def log(self):
        """SE(3) logarithm as a 6-vector (rho, phi)."""
        phi = self.rotation.as_rotvec()
        return np.concatenate([_so3_left_jacobian_inv(phi) @ self.translation, phi])

    def retract(self, delta):
        """Right perturbation self o exp(delta)."""
        return self.compose(Pose.exp(delta))


@dataclass(frozen=True)
class Camera:
    """
    Pinhole intrinsics.

    Attributes:
        fx, fy (float): Focal lengths in pixels.
        cx, cy (float): Principal point in pixels.
        width, height (int): Image size in pixels.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"Focal lengths must be positive: fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"Image size must be positive: {self.width}x{self.height}")

    @property
    def K(self):  # pylint: disable=invalid-name
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def projection_matrix(self, pose):
        """
        Return P = K [R|t] for a camera-in-world pose.

        Args:
            pose (Pose): Camera-to-world transform.

        Returns:
            numpy.ndarray: 3x4 projection matrix.
        """
        return self.K @ pose.inverse().matrix()[:3]

    def project_points(self, points_c):
        """Project camera-frame points to pixel coordinates (N, 2)."""
        points_c = np.asarray(points_c, dtype=float).reshape(-1, 3)
        z = points_c[:, 2]
        u = self.fx * points_c[:, 0] / z + self.cx
        v = self.fy * points_c[:, 1] / z + self.cy
        return np.column_stack([u, v])


@dataclass(frozen=True)
class BBox:
    """Axis-aligned image rectangle in pixel coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"Invalid bbox ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @classmethod
    def from_array(cls, values):
        return cls(*(float(v) for v in values))

    def as_array(self):
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max])

    @property
    def center(self):
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def touches_border(self, cam, margin):
        """True when any edge lies within margin pixels of the image border."""
        return (
            self.x_min <= margin
            or self.y_min <= margin
            or self.x_max >= cam.width - 1 - margin
            or self.y_max >= cam.height - 1 - margin
        )


@dataclass(frozen=True, eq=False)
class Plane:
    """
    Oriented plane n.x + d = 0 with unit normal.

    Points on the normal side have positive signed distance.
    """

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            raise ValueError("Plane normal must be non-zero")
        object.__setattr__(self, "normal", normal / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    @classmethod
    def from_vector(cls, vector):
        vector = np.asarray(vector, dtype=float)
        return cls(vector[:3], vector[3])

    @classmethod
    def from_point_normal(cls, point, normal):
        normal = np.asarray(normal, dtype=float)
        normal = normal / np.linalg.norm(normal)
        return cls(normal, -float(normal @ np.asarray(point, dtype=float)))

    def vector(self):
        return np.append(self.normal, self.offset)

    def flipped(self):
        return Plane(-self.normal, -self.offset)

    def distance(self, points):
        """Signed distance of one point or an (N, 3) array of points."""
        return np.asarray(points, dtype=float) @ self.normal + self.offset

    def project(self, points):
        """Orthogonal projection of points onto the plane."""
        points = np.asarray(points, dtype=float)
        return points - np.multiply.outer(self.distance(points), self.normal)

    def transformed(self, pose):
        """The same plane expressed in the parent frame of pose."""
        normal = pose.rotation.apply(self.normal)
        return Plane(normal, self.offset - normal @ pose.translation)


@dataclass(frozen=True, eq=False)
class EllipsoidState:
    """
    9-DOF ellipsoid: centre, intrinsic Z-Y-X Euler angles and semi-axes.

    Attributes:
        t (numpy.ndarray): Centre in meters.
        rpy (numpy.ndarray): Roll, pitch, yaw in radians, each in (-pi, pi].
        s (numpy.ndarray): Semi-axes in meters, all positive.
    """

    t: np.ndarray
    rpy: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))
        object.__setattr__(
            self, "rpy", wrap_angle(np.asarray(self.rpy, dtype=float).reshape(3))
        )
        s = np.asarray(self.s, dtype=float).reshape(3)
        if not np.all(s > 0) or not np.all(np.isfinite(s)):
            raise ValueError(f"Semi-axes must be positive and finite: {s}")
        object.__setattr__(self, "s", s)

    @classmethod
    def from_vector(cls, vector):
        """Build from v = [x, y, z, roll, pitch, yaw, s1, s2, s3]."""
        vector = np.asarray(vector, dtype=float)
        return cls(vector[:3], vector[3:6], vector[6:9])

    @classmethod
    def from_rotation(cls, t, rot_matrix, s):
        return cls(t, _rpy_from_matrix(np.asarray(rot_matrix, dtype=float)), s)

    def vector(self):
        """The 9-vector [x, y, z, roll, pitch, yaw, s1, s2, s3]."""
        return np.concatenate([self.t, self.rpy, self.s])

    def rotation(self):
        roll, pitch, yaw = self.rpy
        return Rotation.from_euler("ZYX", [yaw, pitch, roll])

    def rotation_matrix(self):
        return self.rotation().as_matrix()

    def homogeneous(self):
        """The 4x4 matrix Z mapping ellipsoid-frame points to the parent frame."""
        z_mat = np.eye(4)
        z_mat[:3, :3] = self.rotation_matrix()
        z_mat[:3, 3] = self.t
        return z_mat

    def volume(self):
        return 4.0 / 3.0 * math.pi * float(np.prod(self.s))

    def equivalent_vectors(self):
        """
        All 24 parameter vectors describing the same ellipsoid.

        Each one permutes the semi-axes together with the rotation columns and
        flips column signs so that the rotation stays proper.

        Returns:
            numpy.ndarray: Array of shape (24, 9); row 0 is this state.
        """
        rot = self.rotation_matrix()
        rotations, axes = [], []
        for perm in itertools.permutations(range(3)):
            for signs in itertools.product((1.0, -1.0), repeat=3):
                candidate = rot[:, perm] * np.array(signs)
                if np.linalg.det(candidate) > 0:
                    rotations.append(candidate)
                    axes.append(self.s[list(perm)])
        rpys = _rpy_from_matrix(np.array(rotations))
        vectors = np.column_stack(
            [np.tile(self.t, (len(rotations), 1)), rpys, np.array(axes)]
        )
        vectors[0, 3:6] = self.rpy
        return vectors

    def closest_equivalent(self, reference, weights=None):
        """
        Pick the equivalent parametrisation nearest to a reference vector.

        Args:
            reference (array-like): 9-vector to compare against.
            weights (array-like): Optional per-component divisors (sigmas).

        Returns:
            EllipsoidState: The equivalent state minimising the weighted,
                angle-wrapped difference to reference.
        """
        vectors = self.equivalent_vectors()
        diff = vectors - np.asarray(reference, dtype=float)
        diff[:, 3:6] = wrap_angle(diff[:, 3:6])
        if weights is not None:
            diff = diff / np.asarray(weights, dtype=float)
        best = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
        return EllipsoidState.from_vector(vectors[best])

    def aabb_half_extents(self):
        """Half extents of the parent-frame axis-aligned bounding box."""
        rot = self.rotation_matrix()
        return np.sqrt(((rot * self.s) ** 2).sum(axis=1))


def ellipsoid_to_dual(state):
    """
    Build the dual quadric of an ellipsoid state.

    Args:
        state (EllipsoidState): The ellipsoid.

    Returns:
        numpy.ndarray: 4x4 matrix Z diag(s^2, -1) Z^T.
    """
    z_mat = state.homogeneous()
    return z_mat @ np.diag(np.append(state.s**2, -1.0)) @ z_mat.T


def _canonical_rotation(eigvecs):
    # pick the proper column-sign combination closest to identity (largest trace)
    target_sign = 1.0 if np.linalg.det(eigvecs) > 0 else -1.0
    best, best_trace = None, -np.inf
    for signs in itertools.product((1.0, -1.0), repeat=3):
        if np.prod(signs) != target_sign:
            continue
        candidate = eigvecs * np.array(signs)
        trace = float(np.trace(candidate))
        if trace > best_trace + 1e-12:
            best, best_trace = candidate, trace
    return best


def _descending_order(eigvals):
    # eigvals ascending (eigh); values equal within 1e-9 keep eigh's order
    keys = eigvals.copy()
    for idx in range(1, len(keys)):
        if abs(eigvals[idx] - keys[idx - 1]) <= SYMMETRY_TOL * max(abs(eigvals[-1]), 1.0):
            keys[idx] = keys[idx - 1]
    return np.argsort(-keys, kind="stable")


def decompose_dual(q_dual):
    """
    Recover the canonical ellipsoid state from a dual quadric.

    The matrix is normalised by its largest entry and then by -Q*[3,3]; the
    translated shape matrix must then be positive definite. Semi-axes are
    returned in descending order with a proper rotation closest to identity.

    Args:
        q_dual (array-like): 4x4 symmetric matrix, any non-zero scale.

    Returns:
        EllipsoidState: The canonical state.

    Raises:
        NotAnEllipsoid: If the signature is not (+,+,+,-).
    """
    q_dual = np.asarray(q_dual, dtype=float)
    if q_dual.shape != (4, 4) or not np.all(np.isfinite(q_dual)):
        raise NotAnEllipsoid("Expected a finite 4x4 matrix")
    scale = np.max(np.abs(q_dual))
    if scale == 0.0:
        raise NotAnEllipsoid("Zero matrix")
    q_norm = q_dual / scale
    if np.max(np.abs(q_norm - q_norm.T)) > 1e-6:
        raise NotAnEllipsoid("Matrix is not symmetric")
    q_norm = 0.5 * (q_norm + q_norm.T)

    if abs(q_norm[3, 3]) < SINGULAR_TOL:
        raise NotAnEllipsoid("Centre at infinity (Q*[3,3] = 0)")
    q_norm = q_norm / -q_norm[3, 3]

    center = -q_norm[:3, 3]
    shape = q_norm[:3, :3] + np.outer(center, center)
    eigvals, eigvecs = linalg.eigh(0.5 * (shape + shape.T))
    if eigvals[0] <= SINGULAR_TOL * max(abs(eigvals[-1]), 1e-300):
        raise NotAnEllipsoid(f"Shape eigenvalues {eigvals} are not all positive")

    order = _descending_order(eigvals)
    axes = np.sqrt(eigvals[order])
    rot = _canonical_rotation(eigvecs[:, order])
    return EllipsoidState.from_rotation(center, rot, axes)


def dual_from_primal(q_primal):
    """
    Adjugate of a primal quadric, |Q| Q^-1, computed on the scale-normalised matrix.

    Args:
        q_primal (array-like): 4x4 symmetric matrix.

    Returns:
        numpy.ndarray: The dual quadric (up to scale).

    Raises:
        Singular: If the normalised determinant is below 1e-12.
    """
    q_primal = np.asarray(q_primal, dtype=float)
    scale = np.max(np.abs(q_primal))
    if scale == 0.0:
        raise Singular("Zero matrix")
    q_norm = q_primal / scale
    det = np.linalg.det(q_norm)
    if abs(det) < SINGULAR_TOL:
        raise Singular(f"Determinant {det:.3e} below {SINGULAR_TOL}")
    return det * np.linalg.inv(q_norm)


def dual_center(q_dual):
    """Centre of an ellipsoid dual quadric, Q*[:3,3] / Q*[3,3]."""
    q_dual = np.asarray(q_dual, dtype=float)
    if abs(q_dual[3, 3]) < SINGULAR_TOL * np.max(np.abs(q_dual)):
        raise NotAnEllipsoid("Centre at infinity (Q*[3,3] = 0)")
    return q_dual[:3, 3] / q_dual[3, 3]


def project_dual(q_dual, pose, cam):
    """
    Project a world dual quadric into a camera: C* = P Q* P^T.

    Args:
        q_dual (array-like): 4x4 world-frame dual quadric.
        pose (Pose): Camera-in-world pose.
        cam (Camera): Intrinsics.

    Returns:
        numpy.ndarray: 3x3 dual conic.

    Raises:
        BehindCamera: If the quadric centre is not in front of the camera.
    """
    q_dual = np.asarray(q_dual, dtype=float)
    try:
        center = dual_center(q_dual)
    except NotAnEllipsoid as err:
        raise BehindCamera(str(err)) from err
    world_to_cam = pose.inverse()
    depth = world_to_cam.transform_points(center[None, :])[0, 2]
    if depth <= 0.0:
        raise BehindCamera(f"Object centre depth {depth:.3f} m is not positive")
    proj = cam.K @ world_to_cam.matrix()[:3]
    return proj @ q_dual @ proj.T


def conic_bbox(c_dual):
    """
    Circumscribed rectangle of a dual conic ellipse.

    Vertical tangents l = (1, 0, -x) and horizontal tangents l = (0, 1, -y)
    satisfy l^T C* l = 0; the roots of those quadratics are the box edges.

    Args:
        c_dual (array-like): 3x3 symmetric dual conic, any non-zero scale.

    Returns:
        BBox: The rectangle.

    Raises:
        Unbounded: If the conic is not a bounded real ellipse.
    """
    c_dual = np.asarray(c_dual, dtype=float)
    scale = np.max(np.abs(c_dual))
    if scale == 0.0 or not np.isfinite(scale):
        raise Unbounded("Degenerate conic")
    c_norm = c_dual / scale
    c_norm = 0.5 * (c_norm + c_norm.T)
    c22 = c_norm[2, 2]
    if abs(c22) < SINGULAR_TOL:
        raise Unbounded("Conic passes through the line at infinity (C*[2,2] = 0)")
    if np.linalg.det(c_norm) * c22 <= 0.0:
        raise Unbounded("Conic is not an ellipse")

    disc_x = c_norm[0, 2] ** 2 - c_norm[0, 0] * c22
    disc_y = c_norm[1, 2] ** 2 - c_norm[1, 1] * c22
    if disc_x <= 0.0 or disc_y <= 0.0:
        raise Unbounded("Tangent quadratics have no real roots")

    root_x, root_y = math.sqrt(disc_x), math.sqrt(disc_y)
    xs = sorted(((c_norm[0, 2] - root_x) / c22, (c_norm[0, 2] + root_x) / c22))
    ys = sorted(((c_norm[1, 2] - root_y) / c22, (c_norm[1, 2] + root_y) / c22))
    return BBox(xs[0], ys[0], xs[1], ys[1])


def transform_dual(q_dual, pose):
    """Move a dual quadric by pose: H Q* H^T."""
    h_mat = pose.matrix()
    return h_mat @ np.asarray(q_dual, dtype=float) @ h_mat.T


def transform_ellipsoid(state, pose):
    """
    Parameter-space counterpart of transform_dual.

    Args:
        state (EllipsoidState): Ellipsoid in the child frame.
        pose (Pose): Child-to-parent transform.

    Returns:
        EllipsoidState: The same ellipsoid in the parent frame, axes unchanged.
    """
    rot = pose.rotation_matrix()
    return EllipsoidState.from_rotation(
        rot @ state.t + pose.translation, rot @ state.rotation_matrix(), state.s
    )


def point_plane_distance(point, plane):
    """Signed distance n.p + d; positive above the plane."""
    return plane.distance(point)


def sample_surface(state, count, rng):
    """
    Random points on the ellipsoid surface with outward unit normals.

    Directions are drawn uniformly on the unit sphere and scaled by the axes.

    Args:
        state (EllipsoidState): The ellipsoid.
        count (int): Number of points.
        rng (numpy.random.Generator): Random source.

    Returns:
        tuple: (points, normals), both (count, 3) arrays in the parent frame.
    """
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return _surface_from_directions(state, directions)


def fibonacci_surface(state, count):
    """Deterministic, nearly uniform surface lattice; returns (points, normals)."""
    idx = np.arange(count) + 0.5
    polar = np.arccos(1.0 - 2.0 * idx / count)
    azimuth = math.pi * (1.0 + math.sqrt(5.0)) * idx
    directions = np.column_stack(
        [np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)]
    )
    return _surface_from_directions(state, directions)


def _surface_from_directions(state, directions):
    rot = state.rotation_matrix()
    points = (directions * state.s) @ rot.T + state.t
    normals = (directions / state.s) @ rot.T
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return points, normals


# vim: ts=4 sw=4 expandtab
