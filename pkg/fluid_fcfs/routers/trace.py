"""
trace: piecewise-linear fluid trajectory from given initial positions
"""
import argparse
import logging

from ..services import fluid
from .common import initial_positions, load_spec_arg, wants_csv, writer_for

logger = logging.getLogger(__name__)

TRAJECTORY_CSV_HEADER = ["t", "server_group", "position"]


def register(subparsers):
    parser = subparsers.add_parser("trace", help="Fluid trajectory of the server levels")
    parser.add_argument("--horizon", type=float, default=10.0, help="Trace until this time")
    parser.add_argument("--positions", default=None, help="Comma-separated initial positions, one per server")
    parser.add_argument("--resolution", type=float, default=0.1, help="Time step of the sampled CSV")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    spec = load_spec_arg(args)
    writer = writer_for(args)
    positions = initial_positions(spec, args.positions)

    trajectory = fluid.trace(spec, positions, args.horizon)
    writer.write_json("trajectory.json", trajectory.to_document())
    if wants_csv(args):
        rows = [(f"{t:.10g}", group, f"{position:.10g}") for t, group, position in trajectory.sample(args.resolution)]
        writer.write_csv("trajectory.csv", TRAJECTORY_CSV_HEADER, rows)

    writer.write_manifest(
        "trace",
        args.spec,
        {"horizon": args.horizon, "positions": positions, "resolution": args.resolution},
    )
    logger.info(f"Traced {len(trajectory.segments)} segment(s), {len(trajectory.events)} event(s)")
    return 0
