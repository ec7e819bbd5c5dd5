#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Quadric SLAM CLI Tool

Object-level SLAM with ellipsoid landmarks on desk-scale RGB-D data:
- 'simulate' (alias 'sim'): Write a synthetic dataset (scene, trajectory, frames).
- 'estimate' (alias 'est'): Single-frame ellipsoid estimation for every detection.
- 'slam': Build and optimise the object map (modes 2d, do, dwb).
- 'evaluate' (alias 'eval'): Compare a map with the ground-truth objects.
- 'curve': Mean errors against the number of observations per object.
- 'sweep': Errors over a log grid of the 3D factor weight epsilon_z.
- 'config' (alias 'cfg'): Print the effective configuration.

Run 'quadric-slam --help' for global usage or 'quadric-slam <subcommand> --help'
for details on each subcommand. Exit status is 0 on success, 1 on usage errors
and 2 on invalid data.
"""
import argparse
import logging
import sys

from quadric_slam import __version__
from quadric_slam.commands import (
    handle_config_cmd,
    handle_curve_cmd,
    handle_estimate_cmd,
    handle_evaluate_cmd,
    handle_simulate_cmd,
    handle_slam_cmd,
    handle_sweep_cmd,
)
from quadric_slam.logging_config import setup_logging

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_grid(grid_str):
    """
    Parses a 'START:STOP:N' grid of log10 exponents.

    Args:
        grid_str (str): The grid, e.g. '0:7:8'.

    Returns:
        tuple: (start, stop, num).

    Raises:
        argparse.ArgumentTypeError: If the grid is malformed.
    """
    parts = grid_str.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"Invalid grid: '{grid_str}' (expected START:STOP:N)")
    try:
        start, stop, num = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"Invalid grid: '{grid_str}' ({err})") from err
    if num < 2 or start >= stop:
        raise argparse.ArgumentTypeError(
            f"Invalid grid: '{grid_str}' (need START < STOP and N >= 2)"
        )
    return start, stop, num


def parse_epsilon_z(value):
    """Parses a nonnegative epsilon_z."""
    try:
        epsilon_z = float(value)
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"Invalid epsilon_z: '{value}'") from err
    if not 0.0 <= epsilon_z < float("inf"):
        raise argparse.ArgumentTypeError(f"epsilon_z must be finite and >= 0: '{value}'")
    return epsilon_z


def build_parser():
    """
    Build the command-line parser.

    Returns:
        CliParser: The parser with one subparser per command.
    """
    epilog = """
    Example of use:
        %(prog)s --help
        %(prog)s simulate --trajectory forward --seed 7 --out data/forward
        %(prog)s slam --data data/forward --mode dwb
        %(prog)s evaluate --data data/forward
        %(prog)s sweep --grid 0:7:8 --out results/
    """

    parser = CliParser(
        description="Quadric SLAM tool",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=epilog,
    )

    parser.add_argument("--debug", "-d", action="store_true", help="debug flag")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    # Options shared by every subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Configuration file (default: built-in values)")
    common.add_argument(
        "--seed", type=int, default=0, help="Random seed (default: %(default)s)"
    )
    common.add_argument("--out", help="Output directory")

    subparsers = parser.add_subparsers(required=True, dest="command")

    ############
    # Simulate #
    ############
    simulate_parser = subparsers.add_parser(
        "simulate",
        aliases=["sim"],
        parents=[common],
        description="Write a synthetic desk-scale dataset",
        help="Write a synthetic desk-scale dataset",
        epilog="""
    Example:
      %(prog)s --out data/orbit
      %(prog)s --trajectory forward --render depth --seed 7 --out data/forward
    """,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    simulate_parser.add_argument(
        "--trajectory",
        choices=("orbit", "forward"),
        help="Camera motion (default: the configured trajectory)",
    )
    simulate_parser.add_argument(
        "--render",
        choices=("clouds", "depth"),
        default="clouds",
        help="Depth data written per frame (default: %(default)s)",
    )
    simulate_parser.set_defaults(func=handle_simulate_cmd)

    ############
    # Estimate #
    ############
    estimate_parser = subparsers.add_parser(
        "estimate",
        aliases=["est"],
        parents=[common],
        description="Estimate single-frame ellipsoids for every detection of a dataset",
        help="Estimate single-frame ellipsoids for every detection of a dataset",
    )
    estimate_parser.add_argument("--data", required=True, help="Dataset directory")
    estimate_parser.add_argument(
        "--max-workers",
        type=int,
        default=4,
        help="Maximum number of worker threads (default: %(default)s)",
    )
    estimate_parser.set_defaults(func=handle_estimate_cmd)

    ########
    # SLAM #
    ########
    slam_parser = subparsers.add_parser(
        "slam",
        parents=[common],
        description="Build and optimise the object map of a dataset",
        help="Build and optimise the object map of a dataset",
        epilog="""
    Example:
      %(prog)s --data data/forward
      %(prog)s --data data/forward --mode 2d
      %(prog)s --data data/orbit --mode dwb --epsilon-z 1000
    """,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    slam_parser.add_argument("--data", required=True, help="Dataset directory")
    slam_parser.add_argument(
        "--mode",
        choices=("2d", "do", "dwb"),
        help="Factor selection (default: the configured mode)",
    )
    slam_parser.add_argument(
        "--epsilon-z",
        type=parse_epsilon_z,
        help="Weight of 3D factors (default: the configured value for the trajectory)",
    )
    slam_parser.set_defaults(func=handle_slam_cmd)

    ############
    # Evaluate #
    ############
    evaluate_parser = subparsers.add_parser(
        "evaluate",
        aliases=["eval"],
        parents=[common],
        description="Compare an object map with the ground-truth objects",
        help="Compare an object map with the ground-truth objects",
    )
    evaluate_parser.add_argument("--data", required=True, help="Dataset directory")
    evaluate_parser.add_argument(
        "--map", help="Object map file (default: objects.txt of the dataset)"
    )
    evaluate_parser.set_defaults(func=handle_evaluate_cmd)

    #########
    # Curve #
    #########
    curve_parser = subparsers.add_parser(
        "curve",
        parents=[common],
        description="Mean errors as a function of the number of observations per object",
        help="Mean errors as a function of the number of observations per object",
    )
    curve_parser.add_argument("--data", required=True, help="Dataset directory")
    curve_parser.add_argument(
        "--mode",
        choices=("2d", "do", "dwb"),
        action="append",
        help="Mode to evaluate; repeat for several (default: all)",
    )
    curve_parser.add_argument(
        "--max-count",
        type=int,
        default=30,
        help="Largest observation count (default: %(default)s)",
    )
    curve_parser.add_argument(
        "--max-workers",
        type=int,
        default=4,
        help="Maximum number of worker threads (default: %(default)s)",
    )
    curve_parser.set_defaults(func=handle_curve_cmd)

    #########
    # Sweep #
    #########
    sweep_parser = subparsers.add_parser(
        "sweep",
        parents=[common],
        description="DwB errors over a log grid of epsilon_z for orbit and forward scenes",
        help="DwB errors over a log grid of epsilon_z for orbit and forward scenes",
    )
    sweep_parser.add_argument(
        "--grid",
        type=parse_grid,
        default=(0.0, 7.0, 8),
        help="log10 exponents START:STOP:N (default: 0:7:8)",
    )
    sweep_parser.add_argument(
        "--max-workers",
        type=int,
        default=4,
        help="Maximum number of worker threads (default: %(default)s)",
    )
    sweep_parser.set_defaults(func=handle_sweep_cmd)

    ##########
    # Config #
    ##########
    config_parser = subparsers.add_parser(
        "config",
        aliases=["cfg"],
        parents=[common],
        description="Print every effective configuration value",
        help="Print every effective configuration value",
    )
    config_parser.add_argument(
        "--plain", action="store_true", help="Print loadable 'key = value' lines"
    )
    config_parser.set_defaults(func=handle_config_cmd)

    return parser


def run_cli(argv=None):
    """
    Parse arguments, set up logging and dispatch the subcommand.

    Args:
        argv (list): Arguments without the program name; sys.argv when None.

    Returns:
        int: 0 on success, 1 on usage errors, 2 on invalid data.
    """
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as err:
        return EXIT_OK if err.code is None else err.code

    log_level = logging.DEBUG if args.debug else logging.INFO

    # Initialize logging
    setup_logging(log_level)

    logging.debug(args)

    try:
        args.func(args)
    except (ValueError, OSError) as e:
        logging.error("%s", e)
        return EXIT_DATA
    return EXIT_OK


def main():
    """Main entry point for the script."""
    sys.exit(run_cli())


if __name__ == "__main__":
    main()

# vim: ts=4 sw=4 expandtab
