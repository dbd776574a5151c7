"""
System specification: servers, customer types, compatibility graph and service rates.

Subsets of servers and of customer types are bitmasks over the declared index
order, so the subset algebra below is a handful of integer operations.
"""
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Tuple

import networkx as nx
import numpy as np

from ..core.exceptions import ModeError
from .schemas import RateMode

MAX_INDEX_SPACE = 63


def iter_bits(mask: int) -> Iterator[int]:
    """Yield the indices of the set bits of mask, lowest first"""
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def mask_of(indices: Iterable[int]) -> int:
    mask = 0
    for index in indices:
        mask |= 1 << index
    return mask


def popcount(mask: int) -> int:
    return bin(mask).count("1")


@dataclass(frozen=True)
class RateModel:
    """
    Service rates in one of three indexings.

    values holds one rate per server (SD), per customer type (CD) or per
    compatibility edge in the spec's edge order (GENERAL).
    """
    mode: RateMode
    values: Tuple[float, ...]


@dataclass(frozen=True)
class SystemSpec:
    """
    Validated, immutable description of a parallel service system.

    edges are (server index, customer index) pairs sorted by customer then
    server, which is the row-major order of a customers-by-servers matrix.
    """
    servers: Tuple[str, ...]
    customers: Tuple[str, ...]
    alpha: Tuple[float, ...]
    edges: Tuple[Tuple[int, int], ...]
    rates: RateModel
    arrival_rate: Optional[float] = None

    # derived views, excluded from equality
    server_masks: Tuple[int, ...] = field(init=False, compare=False, repr=False)
    customer_masks: Tuple[int, ...] = field(init=False, compare=False, repr=False)
    edge_index: Dict[Tuple[int, int], int] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        server_masks = [0] * len(self.servers)
        customer_masks = [0] * len(self.customers)
        for j, i in self.edges:
            server_masks[j] |= 1 << i
            customer_masks[i] |= 1 << j
        object.__setattr__(self, "server_masks", tuple(server_masks))
        object.__setattr__(self, "customer_masks", tuple(customer_masks))
        object.__setattr__(self, "edge_index", {edge: k for k, edge in enumerate(self.edges)})

    @property
    def num_servers(self) -> int:
        return len(self.servers)

    @property
    def num_customers(self) -> int:
        return len(self.customers)

    @property
    def all_servers(self) -> int:
        return (1 << self.num_servers) - 1

    @property
    def all_customers(self) -> int:
        return (1 << self.num_customers) - 1

    @property
    def mode(self) -> RateMode:
        return self.rates.mode

    def has_edge(self, j: int, i: int) -> bool:
        return bool(self.server_masks[j] >> i & 1)

    def rate(self, j: int, i: int) -> float:
        """Effective service rate of server j on customer type i"""
        if not self.has_edge(j, i):
            raise KeyError(f"{self.servers[j]} is not compatible with {self.customers[i]}")
        if self.rates.mode is RateMode.SD:
            return self.rates.values[j]
        if self.rates.mode is RateMode.CD:
            return self.rates.values[i]
        return self.rates.values[self.edge_index[(j, i)]]

    def mean(self, j: int, i: int) -> float:
        return 1.0 / self.rate(j, i)

    @cached_property
    def alpha_array(self) -> np.ndarray:
        return np.asarray(self.alpha, dtype=float)

    @cached_property
    def rate_matrix(self) -> np.ndarray:
        """Customers-by-servers matrix of edge rates, zero off the graph"""
        matrix = np.zeros((self.num_customers, self.num_servers))
        for j, i in self.edges:
            matrix[i, j] = self.rate(j, i)
        return matrix

    @cached_property
    def graph(self) -> nx.Graph:
        """Bipartite compatibility graph with nodes ("s", j) and ("c", i)"""
        g = nx.Graph()
        g.add_nodes_from(("s", j) for j in range(self.num_servers))
        g.add_nodes_from(("c", i) for i in range(self.num_customers))
        g.add_edges_from((("s", j), ("c", i)) for j, i in self.edges)
        return g

    def is_tree(self) -> bool:
        return nx.is_tree(self.graph)

    def is_complete(self) -> bool:
        return len(self.edges) == self.num_servers * self.num_customers

    # Subset algebra on bitmasks
    def customers_mask(self, server_mask: int) -> int:
        result = 0
        for j in iter_bits(server_mask):
            result |= self.server_masks[j]
        return result

    def servers_mask(self, customer_mask: int) -> int:
        result = 0
        for i in iter_bits(customer_mask):
            result |= self.customer_masks[i]
        return result

    def unique_customers_mask(self, server_mask: int) -> int:
        outside = self.all_servers & ~server_mask
        return self.all_customers & ~self.customers_mask(outside)

    def alpha_of(self, customer_mask: int) -> float:
        return sum(self.alpha[i] for i in iter_bits(customer_mask))

    def server_rate_of(self, server_mask: int) -> float:
        if self.rates.mode is not RateMode.SD:
            raise ModeError("pooled server rate is defined only in SD mode")
        return sum(self.rates.values[j] for j in iter_bits(server_mask))

    def workload_of(self, customer_mask: int) -> float:
        """Σ α_c m_c over a set of customer types (CD mode)"""
        if self.rates.mode is not RateMode.CD:
            raise ModeError("customer workload is defined only in CD mode")
        return sum(self.alpha[i] / self.rates.values[i] for i in iter_bits(customer_mask))

    @property
    def total_server_rate(self) -> float:
        return self.server_rate_of(self.all_servers)

    def server_names(self, server_mask: int) -> List[str]:
        return [self.servers[j] for j in iter_bits(server_mask)]

    def customer_names(self, customer_mask: int) -> List[str]:
        return [self.customers[i] for i in iter_bits(customer_mask)]

    def edge_names(self, edges: Iterable[Tuple[int, int]]) -> List[Tuple[str, str]]:
        return [(self.servers[j], self.customers[i]) for j, i in edges]


class SubsetKind(str, Enum):
    SERVER = "server"
    CUSTOMER = "customer"


@dataclass(frozen=True)
class SubsetView:
    """A set of servers or of customer types, as a bitmask"""
    kind: SubsetKind
    mask: int

    @classmethod
    def of_servers(cls, spec: SystemSpec, names: Iterable[str]) -> "SubsetView":
        lookup = {name: j for j, name in enumerate(spec.servers)}
        return cls(SubsetKind.SERVER, mask_of(lookup[name] for name in names))

    @classmethod
    def of_customers(cls, spec: SystemSpec, names: Iterable[str]) -> "SubsetView":
        lookup = {name: i for i, name in enumerate(spec.customers)}
        return cls(SubsetKind.CUSTOMER, mask_of(lookup[name] for name in names))

    @property
    def indices(self) -> List[int]:
        return list(iter_bits(self.mask))

    @property
    def size(self) -> int:
        return popcount(self.mask)

    def __contains__(self, index: int) -> bool:
        return bool(self.mask >> index & 1)

    def names(self, spec: SystemSpec) -> FrozenSet[str]:
        if self.kind is SubsetKind.SERVER:
            return frozenset(spec.server_names(self.mask))
        return frozenset(spec.customer_names(self.mask))


@dataclass(frozen=True)
class Aggregates:
    alpha: float
    beta: Optional[float]
    mu: Optional[float]


def _require(view: SubsetView, kind: SubsetKind):
    if view.kind is not kind:
        raise ValueError(f"expected a {kind.value} subset, got a {view.kind.value} subset")


def customers_of(spec: SystemSpec, servers: SubsetView) -> SubsetView:
    """𝒞(S): customer types compatible with at least one server of S"""
    _require(servers, SubsetKind.SERVER)
    return SubsetView(SubsetKind.CUSTOMER, spec.customers_mask(servers.mask))


def servers_of(spec: SystemSpec, customers: SubsetView) -> SubsetView:
    """𝒮(C): servers compatible with at least one type of C"""
    _require(customers, SubsetKind.CUSTOMER)
    return SubsetView(SubsetKind.SERVER, spec.servers_mask(customers.mask))


def unique_customers_of(spec: SystemSpec, servers: SubsetView) -> SubsetView:
    """𝒰(S): customer types that no server outside S can serve"""
    _require(servers, SubsetKind.SERVER)
    return SubsetView(SubsetKind.CUSTOMER, spec.unique_customers_mask(servers.mask))


def aggregates(
    spec: SystemSpec,
    servers: SubsetView,
    customers: SubsetView,
    require_beta: bool = True,
) -> Aggregates:
    """α_C, β_S and μ_S; β and μ exist only for server-dependent rates"""
    _require(servers, SubsetKind.SERVER)
    _require(customers, SubsetKind.CUSTOMER)
    alpha = spec.alpha_of(customers.mask)
    if spec.mode is not RateMode.SD:
        if require_beta:
            raise ModeError(f"beta requires SD rates, spec is {spec.mode.value}")
        return Aggregates(alpha=alpha, beta=None, mu=None)
    mu = spec.server_rate_of(servers.mask)
    return Aggregates(alpha=alpha, beta=mu / spec.total_server_rate, mu=mu)
