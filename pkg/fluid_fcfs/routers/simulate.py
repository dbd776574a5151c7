"""
simulate: replicated FCFS-ALIS study under one service law
"""
import argparse
import logging
from pathlib import Path

from ..core.config import settings
from ..models.schemas import LawFamily
from ..services.simulation import SimulationProtocol, run_study
from ..storage.artifacts import matrix_rows, read_manifest
from .common import load_spec_arg, wants_csv, writer_for

logger = logging.getLogger(__name__)

REPLAYED_PARAMETERS = ("law", "warmup", "services", "reps", "infinite_supply", "allow_underload", "system_name")


def register(subparsers):
    parser = subparsers.add_parser("simulate", help="Estimate matching rates by simulation")
    parser.add_argument("--law", choices=[family.value for family in LawFamily], default=LawFamily.EXPONENTIAL.value)
    parser.add_argument("--warmup", type=int, default=None, help=f"Services discarded per replication (default {settings.warmup_services})")
    parser.add_argument("--services", type=int, default=None, help=f"Measured services per replication (default {settings.measured_services})")
    parser.add_argument("--reps", type=int, default=None, help=f"Independent replications (default {settings.replications})")
    supply = parser.add_mutually_exclusive_group()
    supply.add_argument("--infinite-supply", dest="infinite_supply", action="store_true", default=True,
                        help="Servers never idle; customers are drawn as needed (default)")
    supply.add_argument("--finite", dest="infinite_supply", action="store_false",
                        help="Poisson arrivals at the spec's lambda")
    parser.add_argument("--allow-underload", action="store_true", help="Run a finite-lambda study below maximal throughput")
    parser.add_argument("--from-manifest", type=Path, default=None, help="Repeat the run recorded in a manifest")
    parser.add_argument("--system-name", default="", help="Label written into the replication vectors")
    parser.set_defaults(handler=handle)


def _apply_manifest(args: argparse.Namespace):
    manifest = read_manifest(args.from_manifest)
    logger.info(f"Replaying {manifest.command} run from {args.from_manifest}")
    for name in REPLAYED_PARAMETERS:
        if name in manifest.parameters:
            setattr(args, name, manifest.parameters[name])
    if manifest.seeds:
        args.seed = manifest.seeds[0]
    if manifest.spec_path and not getattr(args, "spec", None):
        args.spec = manifest.spec_path


def handle(args: argparse.Namespace) -> int:
    if args.from_manifest is not None:
        _apply_manifest(args)
    spec = load_spec_arg(args)
    writer = writer_for(args)

    warmup = settings.warmup_services if args.warmup is None else args.warmup
    services = settings.measured_services if args.services is None else args.services
    reps = settings.replications if args.reps is None else args.reps
    seed = settings.seed if args.seed is None else args.seed
    jobs = settings.jobs if args.jobs is None else args.jobs

    estimate = run_study(
        spec,
        args.law,
        SimulationProtocol(warmup_services=warmup, measured_services=services),
        replications=reps,
        seed_base=seed,
        infinite_supply=args.infinite_supply,
        allow_underload=args.allow_underload,
        jobs=jobs,
        progress=not args.quiet,
    )
    writer.write_json("sim_estimate.json", estimate.to_document())
    writer.write_json("replication_vectors.json", estimate.vectors_document(args.system_name))

    if wants_csv(args):
        writer.write_csv("r_hat.csv", ["customer"] + list(spec.servers), matrix_rows(spec.customers, estimate.r_hat))
        writer.write_csv("span_histogram.csv", ["span", "count"], sorted(estimate.span_histogram.items()))
        writer.write_csv(
            "permutations.csv",
            ["ordering", "frequency"],
            [(row.ordering, f"{row.probability:.10g}") for row in estimate.permutation_table().rows],
        )

    writer.write_manifest(
        "simulate",
        args.spec,
        {
            "law": args.law,
            "warmup": warmup,
            "services": services,
            "reps": reps,
            "infinite_supply": args.infinite_supply,
            "allow_underload": args.allow_underload,
            "system_name": args.system_name,
        },
        seeds=[seed],
    )
    return 0
