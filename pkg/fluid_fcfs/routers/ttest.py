"""
ttest: Hotelling T² of simulated replication vectors against a theoretical mean
"""
import argparse
import logging
from pathlib import Path
from typing import Dict

from ..core.exceptions import UsageError
from ..models.schemas import ReplicationVectorsDocument
from ..models.system import SystemSpec
from ..services.statistics import REPORT_CSV_HEADER, TheoreticalSource, compare_laws, report_table
from ..storage.artifacts import read_document
from ..storage.fixtures import fixture_store
from .common import load_spec_arg, wants_csv, writer_for

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("ttest", help="Test simulated vectors against theoretical matching rates")
    parser.add_argument("--vectors", type=Path, nargs="+", required=True, help="replication_vectors.json file(s)")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--from-lp", dest="source", action="store_const", const="lp", help="Mean from the static planning optimum")
    source.add_argument("--from-tree", dest="source", action="store_const", const="tree", help="Mean from the tree allocation")
    source.add_argument("--from-complete", dest="source", action="store_const", const="complete",
                        help="Mean from the complete-graph closed form")
    source.add_argument("--from-product-form", dest="source", action="store_const", const="permutation",
                        help="Ordering probabilities of the exponential SD product form")
    source.add_argument("--fixture", default=None, help="Shipped system whose reference theoretical values are the mean")
    parser.add_argument("--target", choices=["matching", "permutation"], default="matching")
    parser.set_defaults(handler=handle)


def _spec_for(args: argparse.Namespace) -> SystemSpec:
    if getattr(args, "spec", None):
        return load_spec_arg(args)
    if args.fixture:
        return fixture_store.spec(args.fixture)
    raise UsageError("--spec is required unless --fixture names a shipped system")


def _mean_source(args: argparse.Namespace) -> TheoreticalSource:
    if not args.fixture:
        if args.target == "permutation" and args.source != "permutation":
            raise UsageError("permutation tests take their mean from --from-product-form or --fixture")
        return args.source
    if args.target == "permutation":
        return fixture_store.permutations(args.fixture).theoretical
    return fixture_store.theoretical_matrix(args.fixture)


def handle(args: argparse.Namespace) -> int:
    spec = _spec_for(args)
    writer = writer_for(args)
    source = _mean_source(args)
    edges = spec.edge_names(spec.edges)

    studies: Dict[str, ReplicationVectorsDocument] = {}
    systems = set()
    for path in args.vectors:
        document = read_document(path, ReplicationVectorsDocument)
        if [tuple(edge) for edge in document.edges] != edges:
            raise UsageError(f"{path} was simulated on a different compatibility graph")
        if document.law.value in studies:
            raise UsageError(f"two vector files for law {document.law.value}")
        studies[document.law.value] = document
        systems.add(document.system)

    system = args.fixture or (systems.pop() if len(systems) == 1 else "")
    reports = compare_laws(spec, source, studies, target=args.target, system=system)
    writer.write_json("test_report.json", report_table(reports))
    if wants_csv(args):
        writer.write_csv("test_report.csv", REPORT_CSV_HEADER, [report.csv_row() for report in reports])

    writer.write_manifest(
        "ttest",
        args.spec,
        {
            "vectors": [str(path) for path in args.vectors],
            "source": args.source,
            "fixture": args.fixture,
            "target": args.target,
        },
    )
    return 0
