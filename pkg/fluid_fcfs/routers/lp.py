"""
lp: static planning optimum, optimal design and the pruned compatibility graph
"""
import argparse
import logging

from ..services.lp import extract_design, solve_static_plan
from .common import load_spec_arg, wants_csv, writer_for

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("lp", help="Maximal throughput and the throughput-optimal design")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    spec = load_spec_arg(args)
    writer = writer_for(args)

    solution = solve_static_plan(spec)
    design = extract_design(spec, solution)
    writer.write_json("lp_solution.json", solution.to_document(spec))
    writer.write_json("optimal_design.json", design.to_document(spec))
    writer.write_json("pruned_spec.json", design.to_spec_document(spec))

    if wants_csv(args):
        rows = []
        for block_index, block in enumerate(design.blocks, start=1):
            for k, rate in zip(block.tree_edges, block.matching_rates):
                j, i = spec.edges[k]
                rows.append([block_index, spec.servers[j], spec.customers[i], f"{rate:.10g}"])
        writer.write_csv("design_edges.csv", ["block", "server", "customer", "matching_rate"], rows)

    writer.write_manifest("lp", args.spec, {})
    logger.info(f"mu*={solution.mu_star:.10g}, {len(design.blocks)} design block(s)")
    return 0
