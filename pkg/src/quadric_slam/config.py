# -*- coding: utf-8 -*-
"""
quadric-slam - configuration file

A flat "key = value" text file; every key is a field of Config. Symmetry
types of labels use the dynamic keys "symmetry.<label> = plane | dual".
"""
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from quadric_slam.backend import GraphConfig, Mode
from quadric_slam.common import ConfigError
from quadric_slam.fitting import FitParams
from quadric_slam.geometry import Plane
from quadric_slam.segmentation import SegmentationParams
from quadric_slam.simulation import NoiseSpec, TrajectoryMode, TrajectorySpec
from quadric_slam.symmetry import DEFAULT_SYMMETRY_TABLE, SymmetryParams, SymmetryType

SYMMETRY_PREFIX = "symmetry."
TRUE_WORDS = ("true", "yes", "1")
FALSE_WORDS = ("false", "no", "0")


@dataclass(frozen=True)
# pylint: disable=too-many-instance-attributes
class Config:
    """
    Every tunable value of the pipeline.

    Field names are the keys of the configuration file. Construction builds
    each per-module parameter object once, so an invalid value raises
    ValueError here rather than deep inside a command.
    """

    # segmentation
    eps0: float = 10.0
    eps1: int = 200
    eps2: float = 0.05
    eps3: int = 100
    ransac_iters: int = 200
    ransac_inlier_dist: float = 0.01
    cluster_tolerance: float = 0.05
    gravity: tuple = (0.0, 1.0, 0.0)
    gravity_from_trajectory: bool = True
    plane_sample_stride: int = 4
    anchor_search_px: int = 5
    # symmetry
    sigma_sym: float = 0.02
    symmetry_angle_search: float = 15.0
    symmetry_offset_search: float = 0.05
    symmetry_grid_steps: int = 11
    # ellipsoid fit
    fit_max_iterations: int = 50
    fit_initial_lambda: float = 1e-3
    fit_convergence_tol: float = 1e-8
    fit_min_points: int = 30
    # back-end
    mode: str = "dwb"
    epsilon_z_orbit: float = 1.0
    epsilon_z_forward: float = 1e3
    huber_delta_2d: float = 10.0
    huber_delta_3d: float = 0.1
    huber_delta_odom: float = 1.0
    sigma_2d: float = 5.0
    sigma_3d: tuple = GraphConfig.sigma_3d
    sigma_odom: tuple = GraphConfig.sigma_odom
    graph_max_iterations: int = 100
    optimize_poses: bool = True
    # simulation
    trajectory: str = "orbit"
    n_frames: int = 36
    orbit_radius: float = 2.0
    forward_length: float = 3.0
    camera_height: float = 1.0
    target_height: float = 0.3
    forward_start: tuple = (-4.0, -0.8)
    forward_yaw_offset: float = 10.0
    forward_yaw_sweep: float = 20.0
    odom_sigma_trans: float = 0.0
    odom_sigma_rot: float = 0.0
    bbox_sigma: float = 1.0
    depth_sigma: float = 0.005
    p_det_min: float = 0.95
    p_det_max: float = 1.0
    surface_samples: int = 4000
    plane_samples: int = 6000
    plane_radius: float = 2.5
    edge_margin_px: float = 2.0
    # evaluation
    support_plane: tuple = (0.0, 0.0, 1.0, 0.0)
    min_observations: int = 5
    p_det_threshold: float = 0.95
    symmetry_table: dict = field(default_factory=lambda: dict(DEFAULT_SYMMETRY_TABLE))

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode).value)
        object.__setattr__(self, "trajectory", TrajectoryMode(self.trajectory).value)
        if self.min_observations < 1:
            raise ValueError("min_observations must be at least 1")
        if not 0.0 <= self.p_det_threshold <= 1.0:
            raise ValueError(f"p_det_threshold {self.p_det_threshold} outside [0, 1]")
        for mode in TrajectoryMode:
            self.trajectory_spec(mode)
            self.graph_config(trajectory=mode)
        self.segmentation_params()
        self.symmetry_params()
        self.fit_params()
        self.noise_spec()
        self.support()

    def segmentation_params(self, gravity=None):
        """SegmentationParams; gravity overrides the configured direction."""
        return SegmentationParams(
            eps0=self.eps0,
            eps1=self.eps1,
            eps2=self.eps2,
            eps3=self.eps3,
            ransac_iters=self.ransac_iters,
            ransac_inlier_dist=self.ransac_inlier_dist,
            cluster_tolerance=self.cluster_tolerance,
            gravity=self.gravity if gravity is None else tuple(gravity),
            plane_sample_stride=self.plane_sample_stride,
            anchor_search_px=self.anchor_search_px,
        )

    def symmetry_params(self):
        return SymmetryParams(
            sigma_sym=self.sigma_sym,
            angle_search=self.symmetry_angle_search,
            offset_search=self.symmetry_offset_search,
            grid_steps=self.symmetry_grid_steps,
        )

    def fit_params(self):
        return FitParams(
            max_iterations=self.fit_max_iterations,
            lm_initial_lambda=self.fit_initial_lambda,
            convergence_tol=self.fit_convergence_tol,
            min_points=self.fit_min_points,
        )

    def epsilon_z(self, trajectory=None):
        """The 3D factor weight tuned for a trajectory kind."""
        trajectory = TrajectoryMode(self.trajectory if trajectory is None else trajectory)
        if trajectory is TrajectoryMode.FORWARD:
            return self.epsilon_z_forward
        return self.epsilon_z_orbit

    def graph_config(self, mode=None, epsilon_z=None, trajectory=None):
        """
        GraphConfig of the back-end.

        Args:
            mode (str or Mode): Overrides the configured mode.
            epsilon_z (float): Overrides the per-trajectory weight.
            trajectory (str or TrajectoryMode): Selects the per-trajectory weight.

        Returns:
            GraphConfig: The configuration.
        """
        return GraphConfig(
            epsilon_z=self.epsilon_z(trajectory) if epsilon_z is None else epsilon_z,
            huber_delta_2d=self.huber_delta_2d,
            huber_delta_3d=self.huber_delta_3d,
            huber_delta_odom=self.huber_delta_odom,
            sigma_2d=self.sigma_2d,
            sigma_3d=self.sigma_3d,
            sigma_odom=self.sigma_odom,
            max_iterations=self.graph_max_iterations,
            mode=Mode(self.mode if mode is None else mode),
            optimize_poses=self.optimize_poses,
        )

    def noise_spec(self):
        return NoiseSpec(
            bbox_sigma=self.bbox_sigma,
            depth_sigma=self.depth_sigma,
            p_det_min=self.p_det_min,
            p_det_max=self.p_det_max,
            surface_samples=self.surface_samples,
            plane_samples=self.plane_samples,
            plane_radius=self.plane_radius,
            edge_margin_px=self.edge_margin_px,
        )

    def trajectory_spec(self, mode=None):
        """TrajectorySpec of the configured kind, or of mode when given."""
        return TrajectorySpec(
            mode=TrajectoryMode(self.trajectory if mode is None else mode),
            n_frames=self.n_frames,
            radius=self.orbit_radius,
            length=self.forward_length,
            camera_height=self.camera_height,
            target_height=self.target_height,
            forward_start=self.forward_start,
            forward_yaw_offset=self.forward_yaw_offset,
            forward_yaw_sweep=self.forward_yaw_sweep,
            odom_sigma_trans=self.odom_sigma_trans,
            odom_sigma_rot=self.odom_sigma_rot,
        )

    def support(self):
        """The world support plane used by the rotation metric."""
        if len(self.support_plane) != 4:
            raise ValueError(f"support_plane needs 4 values: {self.support_plane}")
        return Plane.from_vector(self.support_plane)

    def items(self):
        """
        Every effective value as (key, text) pairs in file syntax.

        Returns:
            list: Scalar keys in declaration order, then symmetry.<label>
                entries sorted by label.
        """
        pairs = []
        for item in dataclasses.fields(self):
            if item.name == "symmetry_table":
                continue
            pairs.append((item.name, format_value(getattr(self, item.name))))
        for label in sorted(self.symmetry_table):
            pairs.append((SYMMETRY_PREFIX + label, self.symmetry_table[label].value))
        return pairs

    def to_text(self):
        """The configuration as a loadable file."""
        return "".join(f"{key} = {value}\n" for key, value in self.items())


def format_value(value):
    """Render a config value in the syntax parse_value reads back."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(format_value(float(v)) for v in value)
    return str(value)


def _parse_bool(text):
    word = text.lower()
    if word in TRUE_WORDS:
        return True
    if word in FALSE_WORDS:
        return False
    raise ValueError(f"expected one of {TRUE_WORDS + FALSE_WORDS}, got '{text}'")


def _parse_float(text):
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"value must be finite, got '{text}'")
    return value


def parse_value(kind, text):
    """
    Convert the text of a value to the type of a Config field.

    Args:
        kind (type): The field type.
        text (str): The stripped value text.

    Returns:
        The converted value.

    Raises:
        ValueError: If the text does not parse.
    """
    if kind is bool:
        return _parse_bool(text)
    if kind is int:
        return int(text)
    if kind is float:
        return _parse_float(text)
    if kind is tuple:
        return tuple(_parse_float(part.strip()) for part in text.split(","))
    return text


_FIELD_TYPES = {
    item.name: item.type
    for item in dataclasses.fields(Config)
    if item.name != "symmetry_table"
}


def load_config(path, base=None):
    """
    Read a configuration file on top of a base configuration.

    Args:
        path (str or Path): The file.
        base (Config): Values not set in the file; defaults when None.

    Returns:
        Config: The effective configuration.

    Raises:
        ConfigError: On unknown, duplicate or malformed keys, or values
            rejected by the parameter objects.
    """
    path = Path(path)
    base = Config() if base is None else base
    values, table, seen = {}, dict(base.symmetry_table), set()
    line_no = 0
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            key, sep, raw = text.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep or not key or not raw:
                raise ConfigError(path, line_no, f"expected 'key = value', got '{text}'")
            if key in seen:
                raise ConfigError(path, line_no, f"duplicate key '{key}'")
            seen.add(key)
            if key.startswith(SYMMETRY_PREFIX) and len(key) > len(SYMMETRY_PREFIX):
                try:
                    table[key[len(SYMMETRY_PREFIX) :].lower()] = SymmetryType(raw.lower())
                except ValueError as err:
                    raise ConfigError(path, line_no, f"{key}: {err}") from err
                continue
            if key not in _FIELD_TYPES:
                raise ConfigError(path, line_no, f"unknown key '{key}'")
            try:
                values[key] = parse_value(_FIELD_TYPES[key], raw)
            except ValueError as err:
                raise ConfigError(path, line_no, f"{key}: {err}") from err
    try:
        config = dataclasses.replace(base, symmetry_table=table, **values)
    except ValueError as err:
        raise ConfigError(path, line_no, f"invalid configuration: {err}") from err
    logging.debug("Loaded %d key(s) from %s", len(seen), path)
    return config


def save_config(path, config):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.to_text(), encoding="utf-8")


# vim: ts=4 sw=4 expandtab
