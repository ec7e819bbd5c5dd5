# -*- coding: utf-8 -*-
"""
quadric-slam - shared helpers and error types
"""
import concurrent.futures
import logging
import math

try:
    from rich.console import Console
    from rich.table import Table

    RICH_AVAILABLE = True
except ImportError:
    RICH_AVAILABLE = False
    Console = None
    Table = None

__all__ = [
    "RICH_AVAILABLE",
    "Console",
    "Table",
    "QuadricError",
    "DataError",
    "wrap_angle",
    "format_float",
    "run_parallel",
]


class QuadricError(ValueError):
    """Base class for numeric and geometric failures."""


class NotAnEllipsoid(QuadricError):
    """The matrix does not have the (+,+,+,-) ellipsoid signature."""


class Singular(QuadricError):
    """The matrix cannot be inverted."""


class BehindCamera(QuadricError):
    """The object centre is not in front of the camera."""


class Unbounded(QuadricError):
    """The projected conic is not a bounded real ellipse."""


class EmptyRegion(QuadricError):
    """No valid depth sample inside the requested region."""


class NoSupportingPlane(QuadricError):
    """No candidate plane lies below the object."""


class DegenerateCloud(QuadricError):
    """The cloud has too few non-collinear points."""


class TooFewPoints(QuadricError):
    """The cloud is smaller than the fit requires."""


class SolverDiverged(QuadricError):
    """The least-squares solver could not make progress."""


class ProjectionFailed(QuadricError):
    """A landmark could not be projected into a camera."""


class InsufficientViews(QuadricError):
    """Not enough views to initialise a landmark from boxes."""


class DegenerateAxis(QuadricError):
    """The main axis of an object is undefined on the support plane."""


class DataError(ValueError):
    """Base class for malformed input data."""


class ParseError(DataError):
    """A line of an input file cannot be parsed."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class NonUnitQuaternion(ParseError):
    """A quaternion is too far from unit norm to be normalised silently."""


class InvalidBBox(ParseError):
    """A bounding box violates x_min < x_max, y_min < y_max."""


class NonPositiveAxis(ParseError):
    """An ellipsoid semi-axis is zero or negative."""


class UnsupportedFormat(DataError):
    """The image file is not a 16-bit grey PGM."""


class TruncatedFile(DataError):
    """The file ends before the declared payload."""


class ConfigError(ParseError):
    """A configuration key or value is invalid."""


def wrap_angle(angle):
    """
    Wrap an angle (or an array of angles) to the interval (-pi, pi].

    Args:
        angle (float or numpy.ndarray): Angle(s) in radians.

    Returns:
        float or numpy.ndarray: The wrapped angle(s).
    """
    wrapped = math.pi - (math.pi - angle) % (2.0 * math.pi)
    return wrapped


def format_float(value, digits=9):
    """
    Format a float with a fixed number of decimals and no negative zero.

    Args:
        value (float): The value to format.
        digits (int): Number of decimals.

    Returns:
        str: The formatted value.
    """
    text = f"{value:.{digits}f}"
    if text.startswith("-") and float(text) == 0.0:
        text = text[1:]
    return text


def run_parallel(func, jobs, max_workers):
    """
    Call func(*job) for every job, on a thread pool when max_workers > 1.

    Args:
        func (callable): The work function.
        jobs (list): Argument tuples.
        max_workers (int): Maximum number of worker threads.

    Returns:
        list: The results in job order.
    """
    if max_workers <= 1 or len(jobs) <= 1:
        return [func(*job) for job in jobs]

    num_workers = min(max_workers, len(jobs))
    logging.debug("Using %s threads", num_workers)

    with concurrent.futures.ThreadPoolExecutor(max_workers=num_workers) as executor:
        futures = [executor.submit(func, *job) for job in jobs]
        return [future.result() for future in futures]


# vim: ts=4 sw=4 expandtab
