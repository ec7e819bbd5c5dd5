# test_logging_config_setup.py

"""Unit tests for the logging_config setup_logging function."""

import logging
import sys

import pytest

from quadric_slam.logging_config import setup_logging


@pytest.fixture(name="root_logger")
def fixture_root_logger():
    """Root logger restored to its handlers and level after the test."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield root
    root.handlers[:] = handlers
    root.setLevel(level)


def test_setup_logging_replaces_handler(root_logger):
    """
    Test repeated calls keep a single stderr handler and update the level.
    """
    setup_logging(logging.INFO)
    setup_logging(logging.DEBUG)
    ours = [h for h in root_logger.handlers if h.get_name() == "quadric_slam"]
    assert len(ours) == 1
    assert ours[0].stream is sys.stderr
    assert root_logger.level == logging.DEBUG
