"""
permutations: stationary distribution of server orderings
"""
import argparse
import logging

from ..models.schemas import PermutationRow, PermutationTableDocument
from ..services.simulation import permutation_distribution_theoretical
from .common import load_spec_arg, wants_csv, writer_for

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("permutations", help="Theoretical ordering probabilities (exponential SD)")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    spec = load_spec_arg(args)
    writer = writer_for(args)

    distribution = permutation_distribution_theoretical(spec)
    table = PermutationTableDocument(
        rows=[PermutationRow(ordering=label, probability=probability) for label, probability in distribution.items()]
    )
    writer.write_json("permutation_table.json", table)
    if wants_csv(args):
        writer.write_csv(
            "permutation_table.csv",
            ["ordering", "probability"],
            [(row.ordering, f"{row.probability:.12g}") for row in table.rows],
        )
    writer.write_manifest("permutations", args.spec, {})
    logger.info(f"{len(table.rows)} orderings of {spec.num_servers} servers")
    return 0
