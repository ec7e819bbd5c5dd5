# -*- coding: utf-8 -*-
"""
quadric-slam - dataset file formats

Plain-text, whitespace-separated records with '#' comments, plus 16-bit PGM
depth images. Every loader reports the offending file and line (or byte
offset) on malformed input.
"""
import logging
import math
import re
from pathlib import Path

import numpy as np

from quadric_slam.common import (
    DataError,
    InvalidBBox,
    NonPositiveAxis,
    NonUnitQuaternion,
    ParseError,
    TruncatedFile,
    UnsupportedFormat,
    format_float,
)
from quadric_slam.fitting import Observation
from quadric_slam.geometry import BBox, Camera, EllipsoidState, Pose
from quadric_slam.segmentation import DepthImage, Detection
from quadric_slam.simulation import SceneObject

QUATERNION_TOL = 1e-3


class DatasetPaths:
    """File layout of a dataset directory."""

    def __init__(self, root):
        self.root = Path(root)

    camera = property(lambda self: self.root / "camera.txt")
    trajectory = property(lambda self: self.root / "trajectory.txt")
    odometry = property(lambda self: self.root / "odometry.txt")
    detections = property(lambda self: self.root / "detections.txt")
    objects_gt = property(lambda self: self.root / "objects_gt.txt")
    observations = property(lambda self: self.root / "observations.txt")
    objects = property(lambda self: self.root / "objects.txt")
    config = property(lambda self: self.root / "config.txt")
    clouds_dir = property(lambda self: self.root / "clouds")
    depth_dir = property(lambda self: self.root / "depth")

    def cloud_path(self, frame_id):
        return self.clouds_dir / f"{frame_id}.xyz"

    def depth_path(self, frame_id):
        return self.depth_dir / f"{frame_id}.pgm"


def _records(path, n_fields):
    """Yield (line_no, fields) of the data lines of a text file."""
    path = Path(path)
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            fields = text.split()
            if len(fields) != n_fields:
                raise ParseError(
                    path, line_no, f"expected {n_fields} fields, got {len(fields)}"
                )
            yield line_no, fields


def _floats(path, line_no, fields):
    try:
        values = [float(f) for f in fields]
    except ValueError as err:
        raise ParseError(path, line_no, str(err)) from err
    if not all(math.isfinite(v) for v in values):
        raise ParseError(path, line_no, "non-finite value")
    return values


def _int(path, line_no, field):
    try:
        return int(field)
    except ValueError as err:
        raise ParseError(path, line_no, str(err)) from err


def _write_lines(path, header, lines):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        if header:
            handle.write(f"# {header}\n")
        for line in lines:
            handle.write(line + "\n")


def _fmt(values, digits=9):
    return " ".join(format_float(float(v), digits) for v in values)


def load_trajectory(path):
    """
    Load "timestamp tx ty tz qx qy qz qw" lines.

    Quaternions within 1e-3 of unit norm are normalised.

    Args:
        path (str or Path): The file.

    Returns:
        list: (timestamp, Pose) tuples; the list index is the frame id.

    Raises:
        ParseError: On malformed lines.
        NonUnitQuaternion: If a quaternion norm is off by more than 1e-3.
    """
    entries = []
    for line_no, fields in _records(path, 8):
        values = _floats(path, line_no, fields)
        quat = np.array(values[4:8])
        norm = float(np.linalg.norm(quat))
        if abs(norm - 1.0) > QUATERNION_TOL:
            raise NonUnitQuaternion(path, line_no, f"quaternion norm {norm:.6f}")
        entries.append((values[0], Pose.from_quaternion(values[1:4], quat / norm)))
    logging.debug("Loaded %d pose(s) from %s", len(entries), path)
    return entries


def save_trajectory(path, entries):
    """Write (timestamp, Pose) tuples in the trajectory format."""
    lines = [
        f"{format_float(stamp, 6)} {_fmt(pose.translation)} {_fmt(pose.quaternion)}"
        for stamp, pose in entries
    ]
    _write_lines(path, "timestamp tx ty tz qx qy qz qw", lines)


def load_detections(path):
    """
    Load "frame_id object_id label x_min y_min x_max y_max p_det" lines.

    Raises:
        ParseError: On malformed lines or p_det outside [0, 1].
        InvalidBBox: If x_min >= x_max or y_min >= y_max.
    """
    detections = []
    for line_no, fields in _records(path, 8):
        frame_id = _int(path, line_no, fields[0])
        object_id = _int(path, line_no, fields[1])
        values = _floats(path, line_no, fields[3:])
        if not 0.0 <= values[4] <= 1.0:
            raise ParseError(path, line_no, f"p_det {values[4]} outside [0, 1]")
        try:
            bbox = BBox.from_array(values[:4])
        except ValueError as err:
            raise InvalidBBox(path, line_no, str(err)) from err
        detections.append(Detection(frame_id, object_id, fields[2], bbox, values[4]))
    return detections


def save_detections(path, detections):
    lines = [
        f"{d.frame_id} {d.object_id} {d.label} {_fmt(d.bbox.as_array(), 6)} "
        f"{format_float(d.p_det, 6)}"
        for d in detections
    ]
    _write_lines(path, "frame_id object_id label x_min y_min x_max y_max p_det", lines)


def check_detections(path, detections, n_frames):
    """
    Dataset invariants: frames exist and an object appears once per frame.

    Raises:
        DataError: On the first violation.
    """
    seen = set()
    for det in detections:
        if not 0 <= det.frame_id < n_frames:
            raise DataError(f"{path}: detection references unknown frame {det.frame_id}")
        key = (det.frame_id, det.object_id)
        if key in seen:
            raise DataError(f"{path}: object {det.object_id} twice in frame {det.frame_id}")
        seen.add(key)


def _state_from_fields(path, line_no, values):
    if min(values[6:9]) <= 0:
        raise NonPositiveAxis(path, line_no, f"semi-axes {values[6:9]} must be positive")
    return EllipsoidState.from_vector(values)


def load_objects(path):
    """
    Load "object_id label x y z roll pitch yaw s1 s2 s3" lines.

    Raises:
        ParseError: On malformed lines.
        NonPositiveAxis: If a semi-axis is zero or negative.
    """
    objects = []
    for line_no, fields in _records(path, 11):
        object_id = _int(path, line_no, fields[0])
        state = _state_from_fields(path, line_no, _floats(path, line_no, fields[2:]))
        objects.append(SceneObject(object_id, fields[1], state))
    return objects


def save_objects(path, objects):
    lines = [f"{o.object_id} {o.label} {_fmt(o.state.vector())}" for o in objects]
    _write_lines(path, "object_id label x y z roll pitch yaw s1 s2 s3", lines)


_OBSERVATION_HEADER = (
    "frame_id object_id label x_min y_min x_max y_max p_det "
    "x y z roll pitch yaw s1 s2 s3 p_e"
)


def load_observations(path):
    """Load single-frame observations (detection fields, camera-frame ellipsoid, p_e)."""
    observations = []
    for line_no, fields in _records(path, 18):
        frame_id = _int(path, line_no, fields[0])
        object_id = _int(path, line_no, fields[1])
        values = _floats(path, line_no, fields[3:])
        try:
            bbox = BBox.from_array(values[:4])
        except ValueError as err:
            raise InvalidBBox(path, line_no, str(err)) from err
        state = _state_from_fields(path, line_no, values[5:14])
        for name, prob in (("p_det", values[4]), ("p_e", values[14])):
            if not 0.0 <= prob <= 1.0:
                raise ParseError(path, line_no, f"{name} {prob} outside [0, 1]")
        observations.append(
            Observation(frame_id, object_id, fields[2], bbox, values[4], state, values[14])
        )
    return observations


def save_observations(path, observations):
    lines = [
        f"{o.frame_id} {o.object_id} {o.label} {_fmt(o.bbox.as_array(), 6)} "
        f"{format_float(o.p_det, 6)} {_fmt(o.ellipsoid_c.vector())} {format_float(o.p_e)}"
        for o in observations
    ]
    _write_lines(path, _OBSERVATION_HEADER, lines)


def load_camera(path):
    """Load the single "fx fy cx cy width height" line."""
    records = list(_records(path, 6))
    if len(records) != 1:
        raise ParseError(path, 0, f"expected one camera line, got {len(records)}")
    line_no, fields = records[0]
    values = _floats(path, line_no, fields)
    try:
        return Camera(*values[:4], int(values[4]), int(values[5]))
    except ValueError as err:
        raise ParseError(path, line_no, str(err)) from err


def save_camera(path, cam):
    line = f"{_fmt([cam.fx, cam.fy, cam.cx, cam.cy], 6)} {cam.width} {cam.height}"
    _write_lines(path, "fx fy cx cy width height", [line])


def load_cloud(path):
    """Load "x y z" camera-frame points; an empty file gives an empty (0, 3) array."""
    points = [_floats(path, line_no, fields) for line_no, fields in _records(path, 3)]
    return np.array(points, dtype=float).reshape(-1, 3)


def save_cloud(path, cloud):
    _write_lines(path, None, [_fmt(p, 6) for p in np.asarray(cloud).reshape(-1, 3)])


_PGM_TOKEN = re.compile(rb"(#[^\n]*\n?)|(\S+)")


def _pgm_header(data, path):
    # returns magic, width, height, maxval and the payload offset
    tokens, pos = [], 0
    while len(tokens) < 4:
        match = _PGM_TOKEN.search(data, pos)
        if match is None:
            raise TruncatedFile(f"{path}: header ends at byte {len(data)}")
        pos = match.end()
        if match.group(2) is not None:
            tokens.append(match.group(2))
        if len(tokens) == 1 and tokens[0] not in (b"P2", b"P5"):
            raise UnsupportedFormat(f"{path}: magic {tokens[0][:2]!r} is not P2 or P5")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as err:
        raise UnsupportedFormat(f"{path}: malformed header ({err})") from err
    if width <= 0 or height <= 0 or not 0 < maxval <= 65535:
        raise UnsupportedFormat(f"{path}: unsupported size {width}x{height} maxval {maxval}")
    return tokens[0], width, height, maxval, pos + 1


def load_depth(path, scale=5000.0):
    """
    Load a 16-bit grey PGM depth image (P5 binary or P2 ASCII).

    Args:
        path (str or Path): The image.
        scale (float): Depth counts per meter.

    Returns:
        DepthImage: Samples in row-major order.

    Raises:
        UnsupportedFormat: For other PNM types or maxval above 65535.
        TruncatedFile: If the payload is shorter than declared.
    """
    data = Path(path).read_bytes()
    magic, width, height, maxval, offset = _pgm_header(data, path)
    count = width * height
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        needed = count * dtype.itemsize
        if len(data) - offset < needed:
            raise TruncatedFile(
                f"{path}: payload ends at byte {len(data)}, expected {offset + needed}"
            )
        samples = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    else:
        values = data[offset - 1 :].split()
        if len(values) < count:
            raise TruncatedFile(
                f"{path}: {len(values)} of {count} samples at byte {len(data)}"
            )
        try:
            samples = np.array([int(v) for v in values[:count]])
        except ValueError as err:
            raise UnsupportedFormat(f"{path}: malformed sample ({err})") from err
        if samples.min() < 0 or samples.max() > maxval:
            raise UnsupportedFormat(f"{path}: sample outside [0, {maxval}]")
    return DepthImage(samples.astype(np.uint16).reshape(height, width), scale)


def save_depth(path, depth):
    """Write a P5 PGM with maxval 65535, big-endian samples."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"P5\n{depth.width} {depth.height}\n65535\n".encode("ascii")
    path.write_bytes(header + depth.samples.astype(">u2").tobytes())


def load_frame(paths, frame_id, depth_scale=5000.0):
    """
    The depth data of a frame: a cloud file if present, else a depth image.

    Raises:
        DataError: If neither file exists.
    """
    cloud_path = paths.cloud_path(frame_id)
    if cloud_path.exists():
        return load_cloud(cloud_path)
    depth_path = paths.depth_path(frame_id)
    if depth_path.exists():
        return load_depth(depth_path, depth_scale)
    raise DataError(f"No cloud or depth file for frame {frame_id} in {paths.root}")


def load_odometry(path):
    """Odometry file as frame_id to relative motion into that frame."""
    return {frame_id: pose for frame_id, (_, pose) in enumerate(load_trajectory(path))}


# vim: ts=4 sw=4 expandtab
