# -*- coding: utf-8 -*-
"""quadric-slam logging module."""

import logging
import sys

_HANDLER_NAME = "quadric_slam"


def setup_logging(log_level=logging.INFO):
    """Setup logging configuration for the application.

    Diagnostics go to stderr so that stdout only carries command output.
    Calling it again replaces the handler installed by a previous call.
    """
    datefmt = "%Y-%m-%d %H:%M:%S"
    msg_fmt = "%(asctime)s %(module)s - %(funcName)s [%(levelname)s] %(message)s"

    formatter = logging.Formatter(
        fmt=msg_fmt,
        datefmt=datefmt,
    )
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(formatter)
    handler.set_name(_HANDLER_NAME)

    root_logger = logging.getLogger()
    for old in [h for h in root_logger.handlers if h.get_name() == _HANDLER_NAME]:
        root_logger.removeHandler(old)
    root_logger.setLevel(log_level)
    root_logger.addHandler(handler)


# vim: ts=4 sw=4 expandtab
