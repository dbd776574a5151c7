"""
Complete resource pooling verdicts and the unique decomposition of
server-dependent systems
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx

from ..core.config import settings
from ..core.exceptions import (
    AmbiguityError,
    InternalInconsistencyError,
    ModeError,
)
from ..models.schemas import (
    DecompositionBlockDocument,
    DecompositionDocument,
    EdgeValue,
    RateMode,
    VerdictDocument,
    VerdictKind,
)
from ..models.system import SystemSpec, iter_bits, popcount

logger = logging.getLogger(__name__)


def compare(lhs: float, rhs: float, tolerance: Optional[float] = None) -> int:
    """Sign of lhs - rhs, zero when the gap is inside the relative tolerance"""
    tolerance = settings.crp_tolerance if tolerance is None else tolerance
    gap = lhs - rhs
    if abs(gap) < tolerance * max(1.0, abs(lhs)):
        return 0
    return 1 if gap > 0 else -1


@dataclass(frozen=True)
class PoolingVerdict:
    kind: VerdictKind
    witnesses: Tuple[int, ...] = ()
    condition: str = "sd"
    # witnesses are server masks (sd), customer masks (cd) or edge indices (tree)

    def witness_names(self, spec: SystemSpec) -> List[List[str]]:
        if self.condition == "sd":
            return [spec.server_names(mask) for mask in self.witnesses]
        if self.condition == "cd":
            return [spec.customer_names(mask) for mask in self.witnesses]
        return [list(spec.edge_names([spec.edges[k]])[0]) for k in self.witnesses]

    def to_document(self, spec: SystemSpec) -> VerdictDocument:
        return VerdictDocument(kind=self.kind, witnesses=self.witness_names(spec), condition=self.condition)


@dataclass(frozen=True)
class TreeSolution:
    verdict: PoolingVerdict
    eta: Tuple[float, ...]
    mu: float

    def to_document(self, spec: SystemSpec) -> VerdictDocument:
        document = self.verdict.to_document(spec)
        document.pooled_rate = self.mu
        document.eta = [
            EdgeValue(server=spec.servers[j], customer=spec.customers[i], value=value)
            for (j, i), value in zip(spec.edges, self.eta)
        ]
        return document


@dataclass(frozen=True)
class DecompositionBlock:
    servers: int
    customers: int
    rate: float
    critical_rate: float


@dataclass(frozen=True)
class Decomposition:
    blocks: Tuple[DecompositionBlock, ...]
    method: str = "exhaustive"

    def to_document(self, spec: SystemSpec) -> DecompositionDocument:
        return DecompositionDocument(
            method=self.method,
            blocks=[
                DecompositionBlockDocument(
                    servers=spec.server_names(block.servers),
                    customers=spec.customer_names(block.customers),
                    rate=block.rate,
                    critical_rate=block.critical_rate,
                )
                for block in self.blocks
            ],
        )


def _classify(margins: Sequence[Tuple[int, float, float]], condition: str) -> PoolingVerdict:
    """Turn (witness, lhs, rhs) triples of a strict > condition into a verdict"""
    violated, equal = [], []
    for witness, lhs, rhs in margins:
        sign = compare(lhs, rhs)
        if sign < 0:
            violated.append(witness)
        elif sign == 0:
            equal.append(witness)
    if violated:
        return PoolingVerdict(VerdictKind.VIOLATED, tuple(violated), condition)
    if equal:
        return PoolingVerdict(VerdictKind.WEAK, tuple(equal), condition)
    return PoolingVerdict(VerdictKind.COMPLETE, (), condition)


class PoolingService:
    """Resource pooling conditions for SD, CD and tree systems"""

    def check_crp_sd(self, spec: SystemSpec) -> PoolingVerdict:
        """β_S > α_𝒰(S) for every proper nonempty server subset S"""
        if spec.mode is not RateMode.SD:
            raise ModeError(f"SD pooling condition needs SD rates, spec is {spec.mode.value}")
        total = spec.total_server_rate
        margins = []
        for mask in range(1, spec.all_servers):
            beta = spec.server_rate_of(mask) / total
            margins.append((mask, beta, spec.alpha_of(spec.unique_customers_mask(mask))))
        verdict = _classify(margins, "sd")
        logger.info(f"SD pooling verdict {verdict.kind.value} over {len(margins)} server subsets")
        return verdict

    def check_crp_cd(self, spec: SystemSpec) -> PoolingVerdict:
        """|𝒮(C)|/|𝒮| > Σ_C α m / Σ_𝒞 α m for every proper nonempty customer subset C"""
        if spec.mode is not RateMode.CD:
            raise ModeError(f"CD pooling condition needs CD rates, spec is {spec.mode.value}")
        total = spec.workload_of(spec.all_customers)
        margins = []
        for mask in range(1, spec.all_customers):
            share = popcount(spec.servers_mask(mask)) / spec.num_servers
            margins.append((mask, share, spec.workload_of(mask) / total))
        verdict = _classify(margins, "cd")
        logger.info(f"CD pooling verdict {verdict.kind.value} over {len(margins)} customer subsets")
        return verdict

    def check_crp_tree(self, spec: SystemSpec) -> TreeSolution:
        """Solve the square tree system for (η, μ) and read the verdict off the signs of η"""
        if not spec.is_tree():
            raise ModeError("compatibility graph is not a tree")
        eta, mu = solve_tree_system(spec, spec.all_servers, spec.all_customers)
        zero, negative = [], []
        for k, value in enumerate(eta):
            sign = compare(value, 0.0)
            if sign < 0:
                negative.append(k)
            elif sign == 0:
                zero.append(k)
        if negative:
            verdict = PoolingVerdict(VerdictKind.VIOLATED, tuple(negative), "tree")
        elif zero:
            verdict = PoolingVerdict(VerdictKind.WEAK, tuple(zero), "tree")
        else:
            verdict = PoolingVerdict(VerdictKind.COMPLETE, (), "tree")
        logger.info(f"Tree pooling verdict {verdict.kind.value}, pooled rate {mu:.6g}")
        return TreeSolution(verdict=verdict, eta=tuple(eta), mu=mu)

    def check(self, spec: SystemSpec) -> PoolingVerdict:
        """Pick the applicable pooling condition for the spec"""
        if spec.mode is RateMode.SD:
            return self.check_crp_sd(spec)
        if spec.mode is RateMode.CD:
            return self.check_crp_cd(spec)
        if spec.is_tree():
            return self.check_crp_tree(spec).verdict
        raise ModeError("no pooling condition exists for GENERAL rates on a non-tree graph")

    def decompose_sd(self, spec: SystemSpec, method: Optional[str] = None) -> Decomposition:
        """
        Unique ordered decomposition into internally pooled blocks.

        Args:
            spec: SD system
            method: "exhaustive", "greedy", or None to choose by system size

        Returns:
            Blocks ordered from the slowest (lagging) to the fastest
        """
        if spec.mode is not RateMode.SD:
            raise ModeError(f"SD decomposition needs SD rates, spec is {spec.mode.value}")
        if method is None:
            method = "exhaustive" if spec.num_servers <= settings.exhaustive_limit else "greedy"
        if method == "exhaustive":
            chains = _valid_chains(spec, limit=2)
            if len(chains) != 1:
                reason = "no ordered partition" if not chains else "more than one ordered partition"
                raise AmbiguityError(f"{reason} satisfies the pooling conditions (weak boundary)")
            chain = chains[0]
        elif method == "greedy":
            chain = _greedy_chain(spec)
        else:
            raise ValueError(f"unknown decomposition method '{method}'")

        blocks = []
        prefix = 0
        for block in chain:
            customers = spec.unique_customers_mask(prefix | block) & ~spec.unique_customers_mask(prefix)
            rate = spec.server_rate_of(block)
            blocks.append(DecompositionBlock(block, customers, rate, rate / spec.alpha_of(customers)))
            prefix |= block
        logger.info(f"Decomposed into {len(blocks)} block(s) by {method} search")
        return Decomposition(blocks=tuple(blocks), method=method)


def _block_speed(spec: SystemSpec, prefix: int, block: int) -> float:
    customers = spec.unique_customers_mask(prefix | block) & ~spec.unique_customers_mask(prefix)
    alpha = spec.alpha_of(customers)
    if alpha == 0.0:
        return float("inf")
    return spec.server_rate_of(block) / alpha


def _block_is_pooled(spec: SystemSpec, prefix: int, block: int, strict: bool = True) -> bool:
    """Every proper rear subset T of the block would run faster than the block itself"""
    speed = _block_speed(spec, prefix, block)
    if speed == float("inf"):
        return False
    sub = (block - 1) & block
    while sub:
        sign = compare(_block_speed(spec, prefix, sub), speed)
        if sign < 0 or (strict and sign == 0):
            return False
        sub = (sub - 1) & block
    return True


def _valid_chains(spec: SystemSpec, limit: int) -> List[List[int]]:
    """Ordered partitions into pooled blocks with strictly increasing critical rates"""
    found: List[List[int]] = []
    memo: Dict[Tuple[int, int], bool] = {}

    def pooled(prefix: int, block: int) -> bool:
        key = (prefix, block)
        if key not in memo:
            memo[key] = _block_is_pooled(spec, prefix, block)
        return memo[key]

    def extend(prefix: int, last_speed: float, chain: List[int]):
        if len(found) >= limit:
            return
        remaining = spec.all_servers & ~prefix
        if not remaining:
            found.append(list(chain))
            return
        block = remaining
        while block:
            speed = _block_speed(spec, prefix, block)
            if compare(speed, last_speed) > 0 and pooled(prefix, block):
                chain.append(block)
                extend(prefix | block, speed, chain)
                chain.pop()
            block = (block - 1) & remaining

    extend(0, float("-inf"), [])
    return found


def _greedy_chain(spec: SystemSpec) -> List[int]:
    """Peel the subset with the smallest critical rate, preferring the largest on ties"""
    chain, prefix = [], 0
    while prefix != spec.all_servers:
        remaining = spec.all_servers & ~prefix
        best, best_speed = None, float("inf")
        sub = remaining
        while sub:
            speed = _block_speed(spec, prefix, sub)
            sign = compare(speed, best_speed) if best is not None else -1
            if sign < 0 or (sign == 0 and popcount(sub) > popcount(best)):
                best, best_speed = sub, speed
            sub = (sub - 1) & remaining
        if best is None or best_speed == float("inf"):
            raise AmbiguityError("remaining servers have no unique customer types to peel")
        chain.append(best)
        prefix |= best
    return chain


def solve_tree_system(spec: SystemSpec, server_mask: int, customer_mask: int) -> Tuple[List[float], float]:
    """
    Solve Σ_c η_{s,c} = 1 per server and Σ_s (μ_{s,c}/α_c) η_{s,c} = μ per
    customer type on a tree by repeatedly eliminating a leaf.

    Each η is carried as an affine function a + b·μ until the last remaining
    node fixes μ. Returns η in spec edge order (zero off the subgraph) and μ.
    """
    nodes = [("s", j) for j in iter_bits(server_mask)] + [("c", i) for i in iter_bits(customer_mask)]
    sub_edges = [
        k for k, (j, i) in enumerate(spec.edges)
        if server_mask >> j & 1 and customer_mask >> i & 1
    ]
    graph = nx.Graph()
    graph.add_nodes_from(nodes)
    graph.add_edges_from((("s", spec.edges[k][0]), ("c", spec.edges[k][1]), {"k": k}) for k in sub_edges)
    if not nx.is_tree(graph):
        raise ModeError("subsystem compatibility graph is not a tree")

    affine: Dict[int, Tuple[float, float]] = {}
    # known contributions per node, as affine terms in μ
    known: Dict[Tuple[str, int], Tuple[float, float]] = {node: (0.0, 0.0) for node in nodes}

    def gain(k: int) -> float:
        j, i = spec.edges[k]
        return spec.rate(j, i) / spec.alpha[i]

    working = graph.copy()
    while working.number_of_edges() > 0:
        leaf = next(node for node in nodes if working.has_node(node) and working.degree(node) == 1)
        neighbour = next(iter(working.neighbors(leaf)))
        k = working.edges[leaf, neighbour]["k"]
        a, b = known[leaf]
        if leaf[0] == "s":
            # η + Σ known = 1
            value = (1.0 - a, -b)
        else:
            # g·η + Σ known = μ
            g = gain(k)
            value = ((-a) / g, (1.0 - b) / g)
        affine[k] = value
        other_a, other_b = known[neighbour]
        weight = 1.0 if neighbour[0] == "s" else gain(k)
        known[neighbour] = (other_a + weight * value[0], other_b + weight * value[1])
        working.remove_node(leaf)

    last = next(iter(working.nodes))
    a, b = known[last]
    if last[0] == "s":
        numerator, denominator = 1.0 - a, b
    else:
        numerator, denominator = a, 1.0 - b
    if abs(denominator) < 1e-14:
        raise InternalInconsistencyError("tree linear system is singular")
    mu = numerator / denominator

    eta = [0.0] * len(spec.edges)
    for k, (a, b) in affine.items():
        eta[k] = a + b * mu
    return eta, mu


# Global instance
pooling_service = PoolingService()

check_crp_sd = pooling_service.check_crp_sd
check_crp_cd = pooling_service.check_crp_cd
check_crp_tree = pooling_service.check_crp_tree
decompose_sd = pooling_service.decompose_sd
