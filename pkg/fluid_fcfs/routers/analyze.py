"""
analyze: pooling verdict, decomposition and fluid stability
"""
import argparse
import logging

from ..core.exceptions import AmbiguityError, ModeError
from ..models.schemas import AnalysisDocument, RateMode, VerdictKind
from ..services import fluid
from ..services.lp import solve_static_plan
from ..services.pooling import pooling_service
from .common import initial_positions, load_spec_arg, writer_for

logger = logging.getLogger(__name__)

EXIT_CODES = {
    VerdictKind.COMPLETE: 0,
    VerdictKind.WEAK: 10,
    VerdictKind.VIOLATED: 11,
}


def register(subparsers):
    parser = subparsers.add_parser("analyze", help="Resource pooling verdict, decomposition and stability")
    parser.add_argument("--method", choices=["exhaustive", "greedy"], default=None, help="SD decomposition search")
    parser.add_argument("--positions", default=None, help="Initial fluid positions for the stability trace")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    """
    Writes analysis.json (and decomposition.json for SD systems).

    Exit status: 0 COMPLETE, 10 WEAK, 11 VIOLATED.
    """
    spec = load_spec_arg(args)
    writer = writer_for(args)

    if spec.mode is RateMode.GENERAL and spec.is_tree():
        verdict_document = pooling_service.check_crp_tree(spec).to_document(spec)
    else:
        verdict_document = pooling_service.check(spec).to_document(spec)

    decomposition = None
    decomposition_error = None
    if spec.mode is RateMode.SD:
        try:
            decomposition = pooling_service.decompose_sd(spec, args.method).to_document(spec)
            writer.write_json("decomposition.json", decomposition)
        except AmbiguityError as e:
            logger.warning(f"No unique decomposition: {e}")
            decomposition_error = str(e)

    stability = None
    if spec.arrival_rate is not None:
        try:
            stability = fluid.stability(spec, initial_positions(spec, args.positions)).to_document()
        except ModeError as e:
            logger.warning(f"Stability not assessed: {e}")

    analysis = AnalysisDocument(
        verdict=verdict_document,
        decomposition=decomposition,
        decomposition_error=decomposition_error,
        stability=stability,
        max_throughput=solve_static_plan(spec).mu_star,
    )
    writer.write_json("analysis.json", analysis)
    writer.write_manifest("analyze", args.spec, {"method": args.method, "positions": args.positions})
    logger.info(f"Verdict {verdict_document.kind.value}")
    return EXIT_CODES[verdict_document.kind]
