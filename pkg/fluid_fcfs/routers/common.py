"""
Helpers shared by the subcommands
"""
import argparse
import logging
from pathlib import Path
from typing import List, Optional

from ..core.exceptions import UsageError
from ..models.system import SystemSpec
from ..services.spec_loader import load_spec
from ..storage.artifacts import ArtifactWriter
from ..storage.fixtures import fixture_store

logger = logging.getLogger(__name__)


def spec_reference(args: argparse.Namespace) -> str:
    if not getattr(args, "spec", None):
        raise UsageError("--spec is required (a JSON file or a shipped system name such as system1)")
    return args.spec


def load_spec_arg(args: argparse.Namespace) -> SystemSpec:
    """--spec may name a file or a shipped fixture system"""
    reference = spec_reference(args)
    path = Path(reference)
    if path.exists() or reference.lstrip().startswith("{"):
        return load_spec(path if path.exists() else reference)
    return load_spec(fixture_store.resolve(reference))


def writer_for(args: argparse.Namespace) -> ArtifactWriter:
    return ArtifactWriter(Path(args.out_dir))


def wants_csv(args: argparse.Namespace) -> bool:
    return getattr(args, "format", "csv") == "csv"


def initial_positions(spec: SystemSpec, raw: Optional[str]) -> List[float]:
    """Comma-separated fluid positions, one per server; every server at -1 by default"""
    if raw is None:
        return [-1.0] * spec.num_servers
    try:
        values = [float(part) for part in raw.split(",") if part.strip()]
    except ValueError as e:
        raise UsageError(f"--positions must be comma-separated numbers: {e}") from e
    if len(values) == 1:
        values = values * spec.num_servers
    if len(values) != spec.num_servers:
        raise UsageError(f"--positions needs {spec.num_servers} values, got {len(values)}")
    return values
