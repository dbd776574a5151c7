"""
Static planning LP: maximal pooled throughput of a compatibility graph.

maximize μ subject to
    Σ_{c∈𝒞(s)} η_{s,c} = 1                       for every server s
    μ − Σ_{s∈𝒮(c)} (μ_{s,c}/α_c) η_{s,c} + θ_c = 0   for every customer type c
    η, θ, μ ≥ 0

solved by a dense revised simplex with Bland's rule. Basic solutions of
this network with gains are forests, which is what the design extraction
relies on.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import networkx as nx
import numpy as np

from ..core.config import settings
from ..core.exceptions import InternalInconsistencyError, ModeError
from ..models.schemas import (
    DesignBlockDocument,
    DualsDocument,
    EdgeValue,
    LpSolutionDocument,
    OptimalDesignDocument,
    RateMode,
    SpecDocument,
    VerdictKind,
)
from ..models.system import SystemSpec, iter_bits
from .spec_loader import spec_to_document

logger = logging.getLogger(__name__)

ZERO_TOLERANCE = 1e-9


@dataclass(frozen=True)
class StaticPlanLp:
    """Equality-form LP over a subsystem; columns are η per edge, θ per type, then μ"""
    server_mask: int
    customer_mask: int
    edges: Tuple[int, ...]
    servers: Tuple[int, ...]
    customers: Tuple[int, ...]
    matrix: np.ndarray
    rhs: np.ndarray
    cost: np.ndarray

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def mu_column(self) -> int:
        return self.matrix.shape[1] - 1

    def column_label(self, spec: SystemSpec, column: int) -> str:
        if column < self.num_edges:
            j, i = spec.edges[self.edges[column]]
            return f"eta[{spec.servers[j]},{spec.customers[i]}]"
        if column < self.mu_column:
            return f"theta[{spec.customers[self.customers[column - self.num_edges]]}]"
        return "mu"


@dataclass(frozen=True)
class LpSolution:
    """Optimal basic solution; per-edge and per-node tuples are indexed like the spec"""
    mu_star: float
    eta: Tuple[float, ...]
    theta: Tuple[float, ...]
    y: Tuple[float, ...]
    z: Tuple[float, ...]
    x: Tuple[float, ...]
    basic_arcs: Tuple[int, ...]
    iterations: int
    server_mask: int
    customer_mask: int
    status: str = "OPTIMAL"

    def dual_objective(self) -> float:
        return float(sum(self.y[j] for j in iter_bits(self.server_mask)))

    def to_document(self, spec: SystemSpec) -> LpSolutionDocument:
        in_scope = [
            k for k, (j, i) in enumerate(spec.edges)
            if self.server_mask >> j & 1 and self.customer_mask >> i & 1
        ]

        def edge_values(values):
            return [
                EdgeValue(server=spec.servers[spec.edges[k][0]], customer=spec.customers[spec.edges[k][1]], value=values[k])
                for k in in_scope
            ]

        return LpSolutionDocument(
            status=self.status,
            mu_star=self.mu_star,
            eta=edge_values(self.eta),
            theta={spec.customers[i]: self.theta[i] for i in iter_bits(self.customer_mask)},
            duals=DualsDocument(
                y={spec.servers[j]: self.y[j] for j in iter_bits(self.server_mask)},
                z={spec.customers[i]: self.z[i] for i in iter_bits(self.customer_mask)},
                x=edge_values(self.x),
            ),
            basic_arcs=spec.edge_names(spec.edges[k] for k in self.basic_arcs),
            iterations=self.iterations,
        )


@dataclass(frozen=True)
class DesignBlock:
    servers: int
    customers: int
    tree_edges: Tuple[int, ...]
    rate: float
    matching_rates: Tuple[float, ...]
    pooling_kind: VerdictKind
    zero_basic_arcs: Tuple[int, ...] = ()


@dataclass(frozen=True)
class OptimalDesign:
    blocks: Tuple[DesignBlock, ...]
    disconnected_peel: bool = False

    def to_document(self, spec: SystemSpec) -> OptimalDesignDocument:
        blocks = []
        for block in self.blocks:
            blocks.append(DesignBlockDocument(
                servers=spec.server_names(block.servers),
                customers=spec.customer_names(block.customers),
                tree_edges=spec.edge_names(spec.edges[k] for k in block.tree_edges),
                rate=block.rate,
                matching_rates=[
                    EdgeValue(server=spec.servers[spec.edges[k][0]], customer=spec.customers[spec.edges[k][1]], value=r)
                    for k, r in zip(block.tree_edges, block.matching_rates)
                ],
                pooling_kind=block.pooling_kind,
                zero_basic_arcs=spec.edge_names(spec.edges[k] for k in block.zero_basic_arcs),
            ))
        return OptimalDesignDocument(blocks=blocks, disconnected_peel=self.disconnected_peel)

    def to_spec_document(self, spec: SystemSpec) -> SpecDocument:
        """The designed forest as a configuration document with the same α and λ"""
        kept = sorted({k for block in self.blocks for k in block.tree_edges})
        document = spec_to_document(spec)
        document.edges = spec.edge_names(spec.edges[k] for k in kept)
        if spec.mode is RateMode.GENERAL:
            document.rates.per_edge = [
                (spec.servers[spec.edges[k][0]], spec.customers[spec.edges[k][1]], spec.rates.values[k])
                for k in kept
            ]
        return document


@dataclass(frozen=True)
class CompleteGraphRates:
    matrix: np.ndarray
    server_rates: Tuple[float, ...]
    mu: float


def build_static_plan(spec: SystemSpec, server_mask: Optional[int] = None, customer_mask: Optional[int] = None) -> StaticPlanLp:
    server_mask = spec.all_servers if server_mask is None else server_mask
    customer_mask = spec.all_customers if customer_mask is None else customer_mask
    servers = tuple(iter_bits(server_mask))
    customers = tuple(iter_bits(customer_mask))
    edges = tuple(
        k for k, (j, i) in enumerate(spec.edges)
        if server_mask >> j & 1 and customer_mask >> i & 1
    )
    server_row = {j: r for r, j in enumerate(servers)}
    customer_row = {i: len(servers) + r for r, i in enumerate(customers)}

    rows = len(servers) + len(customers)
    columns = len(edges) + len(customers) + 1
    matrix = np.zeros((rows, columns))
    for col, k in enumerate(edges):
        j, i = spec.edges[k]
        matrix[server_row[j], col] = 1.0
        matrix[customer_row[i], col] = -spec.rate(j, i) / spec.alpha[i]
    for r, i in enumerate(customers):
        matrix[customer_row[i], len(edges) + r] = 1.0
        matrix[customer_row[i], columns - 1] = 1.0
    rhs = np.zeros(rows)
    rhs[: len(servers)] = 1.0
    cost = np.zeros(columns)
    cost[-1] = 1.0
    return StaticPlanLp(server_mask, customer_mask, edges, servers, customers, matrix, rhs, cost)


class StaticPlanSolver:
    """Dense revised simplex with Bland's anti-cycling rule"""

    def __init__(self, tolerance: Optional[float] = None, max_iterations: int = 10000):
        self.tolerance = tolerance
        self.max_iterations = max_iterations

    def _initial_basis(self, spec: SystemSpec, lp: StaticPlanLp) -> List[int]:
        # one edge per server row plus every θ column: block triangular, nonsingular, feasible
        basis = []
        for j in lp.servers:
            column = next((col for col, k in enumerate(lp.edges) if spec.edges[k][0] == j), None)
            if column is None:
                raise InternalInconsistencyError(f"server index {j} has no edge inside the subsystem")
            basis.append(column)
        basis.extend(lp.num_edges + r for r in range(len(lp.customers)))
        return basis

    def solve_lp(self, spec: SystemSpec, lp: StaticPlanLp) -> LpSolution:
        tolerance = self.tolerance if self.tolerance is not None else settings.lp_tolerance
        for i in lp.customers:
            if not spec.customer_masks[i] & lp.server_mask:
                raise InternalInconsistencyError(f"customer type {spec.customers[i]} has no server inside the subsystem")

        A, b, c = lp.matrix, lp.rhs, lp.cost
        scale = max(1.0, float(np.abs(A).max()))
        basis = self._initial_basis(spec, lp)
        iterations = 0
        while True:
            B = A[:, basis]
            x_basic = np.linalg.solve(B, b)
            prices = np.linalg.solve(B.T, c[basis])
            reduced = c - A.T @ prices
            reduced[basis] = 0.0
            entering = next((col for col in range(A.shape[1]) if reduced[col] > tolerance * scale), None)
            if entering is None:
                break
            direction = np.linalg.solve(B, A[:, entering])
            leaving, best_ratio = None, np.inf
            for row, step in enumerate(direction):
                if step <= tolerance:
                    continue
                ratio = max(x_basic[row], 0.0) / step
                if leaving is None or ratio < best_ratio - tolerance or (
                    abs(ratio - best_ratio) <= tolerance and basis[row] < basis[leaving]
                ):
                    leaving, best_ratio = row, ratio
            if leaving is None:
                raise InternalInconsistencyError("static planning LP reported unbounded")
            logger.debug(
                f"Pivot {iterations}: {lp.column_label(spec, entering)} enters, "
                f"{lp.column_label(spec, basis[leaving])} leaves at ratio {best_ratio:.6g}"
            )
            basis[leaving] = entering
            iterations += 1
            if iterations > self.max_iterations:
                raise InternalInconsistencyError(f"simplex did not terminate in {self.max_iterations} pivots")

        values = np.zeros(A.shape[1])
        values[basis] = x_basic
        values[np.abs(values) < 1e-13] = 0.0

        eta = [0.0] * len(spec.edges)
        x = [0.0] * len(spec.edges)
        theta = [0.0] * spec.num_customers
        y = [0.0] * spec.num_servers
        z = [0.0] * spec.num_customers
        for r, j in enumerate(lp.servers):
            y[j] = float(prices[r])
        for r, i in enumerate(lp.customers):
            z[i] = float(prices[len(lp.servers) + r])
            theta[i] = float(values[lp.num_edges + r])
        for col, k in enumerate(lp.edges):
            j, i = spec.edges[k]
            eta[k] = float(values[col])
            x[k] = y[j] - spec.rate(j, i) / spec.alpha[i] * z[i]

        basic_arcs = tuple(sorted(lp.edges[col] for col in basis if col < lp.num_edges))
        solution = LpSolution(
            mu_star=float(values[-1]),
            eta=tuple(eta),
            theta=tuple(theta),
            y=tuple(y),
            z=tuple(z),
            x=tuple(x),
            basic_arcs=basic_arcs,
            iterations=iterations,
            server_mask=lp.server_mask,
            customer_mask=lp.customer_mask,
        )
        certify_basic_forest(spec, solution)
        return solution

    def solve_static_plan(
        self,
        spec: SystemSpec,
        server_mask: Optional[int] = None,
        customer_mask: Optional[int] = None,
    ) -> LpSolution:
        """
        Maximal throughput of the (sub)system

        Args:
            spec: validated system
            server_mask, customer_mask: restrict to a subsystem; α is not renormalized

        Returns:
            The optimal basic solution reached by Bland's rule
        """
        try:
            lp = build_static_plan(spec, server_mask, customer_mask)
            solution = self.solve_lp(spec, lp)
        except Exception as e:
            logger.error(f"Failed to solve static planning LP: {e}")
            raise
        logger.info(f"Static planning optimum mu*={solution.mu_star:.10g} after {solution.iterations} pivots")
        return solution


def certify_basic_forest(spec: SystemSpec, solution: LpSolution):
    """Basic arcs of a network with gains never close a cycle"""
    forest = nx.Graph()
    forest.add_edges_from((("s", spec.edges[k][0]), ("c", spec.edges[k][1])) for k in solution.basic_arcs)
    if forest.number_of_edges() and not nx.is_forest(forest):
        raise InternalInconsistencyError("basic arcs of the static planning LP contain a cycle")


def _components(spec: SystemSpec, server_mask: int, customer_mask: int) -> List[Tuple[int, int]]:
    graph = nx.Graph()
    graph.add_nodes_from(("s", j) for j in iter_bits(server_mask))
    graph.add_nodes_from(("c", i) for i in iter_bits(customer_mask))
    graph.add_edges_from(
        (("s", j), ("c", i)) for j, i in spec.edges
        if server_mask >> j & 1 and customer_mask >> i & 1
    )
    parts = []
    for component in nx.connected_components(graph):
        smask = sum(1 << index for kind, index in component if kind == "s")
        cmask = sum(1 << index for kind, index in component if kind == "c")
        parts.append((smask, cmask))
    return sorted(parts)


class DesignExtractor:
    """Peel the LP optimum into blocks of strictly increasing throughput"""

    def __init__(self, solver: StaticPlanSolver):
        self.solver = solver

    def extract_design(self, spec: SystemSpec, solution: LpSolution) -> OptimalDesign:
        blocks: List[DesignBlock] = []
        flags = {"disconnected": False}
        self._peel(spec, solution, blocks, flags)
        blocks.sort(key=lambda block: block.rate)
        for before, after in zip(blocks, blocks[1:]):
            if after.rate <= before.rate + ZERO_TOLERANCE:
                logger.warning(f"Design blocks are not strictly ordered: {before.rate:.10g} then {after.rate:.10g}")
        if flags["disconnected"]:
            logger.warning("Zero-slack subgraph was disconnected; peeled per connected component")
        return OptimalDesign(blocks=tuple(blocks), disconnected_peel=flags["disconnected"])

    def _peel(self, spec: SystemSpec, solution: LpSolution, blocks: List[DesignBlock], flags: dict):
        server_mask, customer_mask = solution.server_mask, solution.customer_mask
        tight = sum(1 << i for i in iter_bits(customer_mask) if solution.theta[i] <= ZERO_TOLERANCE)
        if not tight:
            raise InternalInconsistencyError("optimal solution has no zero slack")

        if tight == customer_mask:
            parts = _components(spec, server_mask, customer_mask)
            if len(parts) == 1:
                blocks.append(self._block(spec, solution))
                return
            flags["disconnected"] = True
            for smask, cmask in parts:
                self._peel(spec, self.solver.solve_static_plan(spec, smask, cmask), blocks, flags)
            return

        first_servers = spec.servers_mask(tight) & server_mask
        rest_servers, rest_customers = server_mask & ~first_servers, customer_mask & ~tight
        if not rest_servers:
            raise InternalInconsistencyError("peeling left customer types without servers")
        self._peel(spec, self.solver.solve_static_plan(spec, first_servers, tight), blocks, flags)
        self._peel(spec, self.solver.solve_static_plan(spec, rest_servers, rest_customers), blocks, flags)

    @staticmethod
    def _block(spec: SystemSpec, solution: LpSolution) -> DesignBlock:
        tree, zero = [], []
        for k in solution.basic_arcs:
            (tree if solution.eta[k] > ZERO_TOLERANCE else zero).append(k)
        alpha = spec.alpha_of(solution.customer_mask)
        rates = tuple(
            spec.rate(*spec.edges[k]) * solution.eta[k] / (solution.mu_star * alpha) for k in tree
        )
        return DesignBlock(
            servers=solution.server_mask,
            customers=solution.customer_mask,
            tree_edges=tuple(tree),
            rate=solution.mu_star,
            matching_rates=rates,
            pooling_kind=VerdictKind.WEAK if zero else VerdictKind.COMPLETE,
            zero_basic_arcs=tuple(zero),
        )


def matching_rates_tree(spec: SystemSpec, eta, mu: float) -> np.ndarray:
    """r_{s,c} = μ_{s,c} η_{s,c} / μ as a customers-by-servers matrix"""
    matrix = np.zeros((spec.num_customers, spec.num_servers))
    for k, (j, i) in enumerate(spec.edges):
        if eta[k] <= ZERO_TOLERANCE:
            raise ModeError(
                f"matching rates need a positive tree solution, "
                f"eta[{spec.servers[j]},{spec.customers[i]}]={eta[k]:.3g}"
            )
        matrix[i, j] = spec.rate(j, i) * eta[k] / mu
    return matrix


def matching_rates_complete(spec: SystemSpec) -> CompleteGraphRates:
    """Matching rates of a complete bipartite graph from per-server mean service times"""
    if not spec.is_complete():
        raise ModeError("matching rates in closed form need a complete compatibility graph")
    means = [
        sum(spec.alpha[i] * spec.mean(j, i) for i in range(spec.num_customers))
        for j in range(spec.num_servers)
    ]
    server_rates = tuple(1.0 / m for m in means)
    mu = sum(server_rates)
    matrix = np.outer(spec.alpha_array, np.asarray(server_rates) / mu)
    return CompleteGraphRates(matrix=matrix, server_rates=server_rates, mu=mu)


# Global instances
static_plan_solver = StaticPlanSolver()
design_extractor = DesignExtractor(static_plan_solver)

solve_static_plan = static_plan_solver.solve_static_plan
extract_design = design_extractor.extract_design
