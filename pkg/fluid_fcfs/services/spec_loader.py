"""
Configuration document ingestion and validation
"""
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

from pydantic import ValidationError

from ..core.exceptions import SpecParseError, SpecValidationError
from ..models.schemas import CustomerEntry, RateMode, RatesDocument, SpecDocument
from ..models.system import MAX_INDEX_SPACE, RateModel, SystemSpec

logger = logging.getLogger(__name__)

ALPHA_TOLERANCE = 1e-12

SpecSource = Union[str, Path, Dict[str, Any], SpecDocument]


def _read_document(source: SpecSource) -> SpecDocument:
    if isinstance(source, SpecDocument):
        return source
    if isinstance(source, dict):
        payload = source
    else:
        text = str(source)
        if isinstance(source, Path) or not text.lstrip().startswith("{"):
            try:
                text = Path(source).read_text(encoding="utf-8")
            except OSError as e:
                raise SpecParseError(f"cannot read spec file {source}: {e}") from e
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as e:
            raise SpecParseError(f"malformed JSON: {e}") from e
    if not isinstance(payload, dict):
        raise SpecParseError("spec document must be a JSON object")
    try:
        return SpecDocument.model_validate(payload)
    except ValidationError as e:
        raise SpecParseError(f"spec document does not match the expected format: {e}") from e


def _positive(value: float, what: str) -> float:
    if not math.isfinite(value) or value <= 0:
        raise SpecValidationError(f"{what} must be finite and > 0, got {value}")
    return float(value)


def _unique_names(names: List[str], what: str) -> Dict[str, int]:
    lookup: Dict[str, int] = {}
    for index, name in enumerate(names):
        if name in lookup:
            raise SpecValidationError(f"duplicate {what} identifier '{name}'")
        lookup[name] = index
    if len(lookup) > MAX_INDEX_SPACE:
        raise SpecValidationError(f"at most {MAX_INDEX_SPACE} {what}s are supported, got {len(lookup)}")
    return lookup


def _rate_values(
    rates: RatesDocument,
    servers: Dict[str, int],
    customers: Dict[str, int],
    edges: List[Tuple[int, int]],
) -> Tuple[float, ...]:
    if rates.mode is RateMode.SD:
        table = rates.per_server or {}
        unknown = set(table) - set(servers)
        if unknown:
            raise SpecValidationError(f"rates reference undeclared servers {sorted(unknown)}")
        missing = [name for name in servers if name not in table]
        if missing:
            raise SpecValidationError(f"SD rates missing for servers {missing}")
        return tuple(_positive(table[name], f"rate of {name}") for name in servers)

    if rates.mode is RateMode.CD:
        table = rates.per_customer or {}
        unknown = set(table) - set(customers)
        if unknown:
            raise SpecValidationError(f"rates reference undeclared customer types {sorted(unknown)}")
        missing = [name for name in customers if name not in table]
        if missing:
            raise SpecValidationError(f"CD rates missing for customer types {missing}")
        return tuple(_positive(table[name], f"rate of {name}") for name in customers)

    by_edge: Dict[Tuple[int, int], float] = {}
    for server, customer, value in rates.per_edge or []:
        if server not in servers or customer not in customers:
            raise SpecValidationError(f"rate entry ({server}, {customer}) references an undeclared identifier")
        key = (servers[server], customers[customer])
        if key in by_edge:
            raise SpecValidationError(f"duplicate rate entry for edge ({server}, {customer})")
        by_edge[key] = _positive(value, f"rate of edge ({server}, {customer})")
    declared = set(edges)
    stray = [key for key in by_edge if key not in declared]
    if stray:
        j, i = stray[0]
        raise SpecValidationError(f"rate given for ({_name(servers, j)}, {_name(customers, i)}) which is not an edge")
    missing_edges = [key for key in edges if key not in by_edge]
    if missing_edges:
        j, i = missing_edges[0]
        raise SpecValidationError(f"GENERAL rates missing for edge ({_name(servers, j)}, {_name(customers, i)})")
    return tuple(by_edge[key] for key in edges)


def _name(lookup: Dict[str, int], index: int) -> str:
    return next(name for name, k in lookup.items() if k == index)


def spec_from_document(document: SpecDocument) -> SystemSpec:
    """Validate a parsed document and build the immutable spec"""
    servers = _unique_names(document.servers, "server")
    customers = _unique_names([entry.name for entry in document.customers], "customer type")

    alpha = [entry.alpha for entry in document.customers]
    for entry in document.customers:
        if not math.isfinite(entry.alpha) or entry.alpha <= 0:
            raise SpecValidationError(f"alpha of {entry.name} must be > 0, got {entry.alpha}")
    total = math.fsum(alpha)
    if abs(total - 1.0) > ALPHA_TOLERANCE:
        raise SpecValidationError(f"alpha sums to {total:.12g}")
    if total != 1.0:
        alpha = [value / total for value in alpha]
        # fold the rounding residue into the largest entry so reloading is a no-op
        largest = max(range(len(alpha)), key=alpha.__getitem__)
        alpha[largest] += 1.0 - math.fsum(alpha)

    edge_set = set()
    for server, customer in document.edges:
        if server not in servers:
            raise SpecValidationError(f"edge ({server}, {customer}) references undeclared server '{server}'")
        if customer not in customers:
            raise SpecValidationError(f"edge ({server}, {customer}) references undeclared customer type '{customer}'")
        key = (servers[server], customers[customer])
        if key in edge_set:
            raise SpecValidationError(f"duplicate edge ({server}, {customer})")
        edge_set.add(key)
    edges = sorted(edge_set, key=lambda edge: (edge[1], edge[0]))

    covered_servers = {j for j, _ in edges}
    covered_customers = {i for _, i in edges}
    isolated = [name for name, j in servers.items() if j not in covered_servers]
    isolated += [name for name, i in customers.items() if i not in covered_customers]
    if isolated:
        raise SpecValidationError(f"isolated nodes without edges: {isolated}")

    values = _rate_values(document.rates, servers, customers, edges)

    arrival_rate = document.arrival_rate
    if arrival_rate is not None:
        arrival_rate = _positive(arrival_rate, "lambda")

    return SystemSpec(
        servers=tuple(document.servers),
        customers=tuple(customers),
        alpha=tuple(alpha),
        edges=tuple(edges),
        rates=RateModel(mode=document.rates.mode, values=values),
        arrival_rate=arrival_rate,
    )


def load_spec(source: SpecSource) -> SystemSpec:
    """
    Load and validate a system specification

    Args:
        source: path to a JSON file, JSON text, a parsed dict or a SpecDocument

    Returns:
        The validated SystemSpec
    """
    document = _read_document(source)
    spec = spec_from_document(document)
    logger.debug(
        f"Loaded spec with {spec.num_servers} servers, {spec.num_customers} customer types, "
        f"{len(spec.edges)} edges, {spec.mode.value} rates"
    )
    return spec


def spec_to_document(spec: SystemSpec) -> SpecDocument:
    rates = RatesDocument(mode=spec.mode)
    if spec.mode is RateMode.SD:
        rates.per_server = dict(zip(spec.servers, spec.rates.values))
    elif spec.mode is RateMode.CD:
        rates.per_customer = dict(zip(spec.customers, spec.rates.values))
    else:
        rates.per_edge = [
            (spec.servers[j], spec.customers[i], value)
            for (j, i), value in zip(spec.edges, spec.rates.values)
        ]
    return SpecDocument(
        servers=list(spec.servers),
        customers=[CustomerEntry(name=name, alpha=a) for name, a in zip(spec.customers, spec.alpha)],
        edges=spec.edge_names(spec.edges),
        rates=rates,
        arrival_rate=spec.arrival_rate,
    )


def dump_spec(spec: SystemSpec) -> Dict[str, Any]:
    """Serialize a spec back to the configuration document format"""
    return spec_to_document(spec).model_dump(mode="json", by_alias=True, exclude_none=True)
