# test_config_file.py

"""Unit tests for the key = value configuration file."""

import pytest

from quadric_slam.backend import Mode
from quadric_slam.common import ConfigError
from quadric_slam.config import Config, format_value, load_config, parse_value, save_config
from quadric_slam.simulation import TrajectoryMode
from quadric_slam.symmetry import DEFAULT_SYMMETRY_TABLE, SymmetryType


def _write(tmp_path, text):
    path = tmp_path / "config.txt"
    path.write_text(text, encoding="utf-8")
    return path


def test_load_config_values(tmp_path):
    """
    Test typed values, comments and symmetry keys are read.
    """
    path = _write(
        tmp_path,
        "# tuned for the desk scene\n"
        "eps2 = 0.1\n"
        "eps3 = 50  # fewer points\n"
        "mode = do\n"
        "optimize_poses = no\n"
        "gravity = 0, 0, 1\n"
        "symmetry.Chair = dual\n"
        "symmetry.bottle = plane\n",
    )
    config = load_config(path)
    assert config.eps2 == 0.1
    assert config.eps3 == 50
    assert config.mode == "do"
    assert config.optimize_poses is False
    assert config.gravity == (0.0, 0.0, 1.0)
    assert config.symmetry_table["chair"] is SymmetryType.DUAL_PLANE_REFLECTION
    assert config.symmetry_table["bottle"] is SymmetryType.PLANE_REFLECTION
    assert config.symmetry_table["tv"] is SymmetryType.DUAL_PLANE_REFLECTION
    assert config.graph_config().mode is Mode.DEPTH_ONLY


@pytest.mark.parametrize(
    "text, line_no",
    [
        ("eps2 = 0.1\nunknown_key = 3\n", 2),
        ("eps2 = 0.1\neps2 = 0.2\n", 2),
        ("eps2 0.1\n", 1),
        ("eps2 =\n", 1),
        ("\n\neps1 = many\n", 3),
        ("optimize_poses = maybe\n", 1),
        ("eps2 = inf\n", 1),
        ("symmetry.cup = radial\n", 1),
        ("eps2 = 0.1\neps0 = -5\n", 2),
        ("mode = 3d\n", 1),
    ],
)
def test_load_config_errors(tmp_path, text, line_no):
    """
    Test malformed, duplicate, unknown and out-of-range keys name their line.
    """
    with pytest.raises(ConfigError) as exc_info:
        load_config(_write(tmp_path, text))
    assert exc_info.value.line_no == line_no


def test_load_config_on_base(tmp_path):
    """
    Test values missing from the file come from the base configuration.
    """
    base = Config(eps1=500)
    config = load_config(_write(tmp_path, "eps2 = 0.2\n"), base)
    assert (config.eps1, config.eps2) == (500, 0.2)


def test_config_text_round_trip(tmp_path):
    """
    Test the echoed configuration loads back to the same values.
    """
    table = {**DEFAULT_SYMMETRY_TABLE, "mug": SymmetryType.PLANE_REFLECTION}
    config = Config(eps0=12.5, trajectory="forward", symmetry_table=table)
    save_config(tmp_path / "saved.txt", config)
    assert load_config(tmp_path / "saved.txt") == config


def test_config_items_order():
    """
    Test scalar keys come first and symmetry entries are sorted by label.
    """
    items = Config().items()
    assert items[0] == ("eps0", "10.0")
    labels = [key for key, _ in items if key.startswith("symmetry.")]
    assert labels == sorted(labels)
    assert ("symmetry.tv", "dual") in items


def test_epsilon_z_follows_trajectory():
    """
    Test the 3D factor weight is chosen per trajectory kind.
    """
    config = Config(epsilon_z_orbit=10.0, epsilon_z_forward=1e5)
    assert config.epsilon_z() == 10.0
    assert config.epsilon_z(TrajectoryMode.FORWARD) == 1e5
    assert config.graph_config(trajectory="forward").epsilon_z == 1e5
    assert config.graph_config(epsilon_z=3.0).epsilon_z == 3.0


@pytest.mark.parametrize(
    "changes",
    [{"min_observations": 0}, {"p_det_threshold": 1.5}, {"support_plane": (0.0, 0.0, 1.0)}],
)
def test_config_validation(changes):
    """
    Test invalid evaluation settings are rejected at construction.
    """
    with pytest.raises(ValueError):
        Config(**changes)


@pytest.mark.parametrize(
    "kind, value, text",
    [
        (bool, True, "true"),
        (int, 7, "7"),
        (float, 0.05, "0.05"),
        (tuple, (1.0, 2.5), "1.0, 2.5"),
    ],
)
def test_format_and_parse_value(kind, value, text):
    """
    Test values are printed in the syntax they are parsed from.
    """
    assert format_value(value) == text
    assert parse_value(kind, text) == value
