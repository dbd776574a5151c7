from typing import Dict, List, Optional, Sequence, Tuple

import pytest

from fluid_fcfs.models.system import SystemSpec
from fluid_fcfs.services.spec_loader import load_spec
from fluid_fcfs.storage.fixtures import fixture_store


def make_spec(
    *,
    servers: Sequence[str],
    alpha: Dict[str, float],
    edges: Sequence[Tuple[str, str]],
    sd: Optional[Dict[str, float]] = None,
    cd: Optional[Dict[str, float]] = None,
    general: Optional[List[Tuple[str, str, float]]] = None,
    arrival_rate: Optional[float] = None,
) -> SystemSpec:
    if sd is not None:
        rates = {"mode": "SD", "per_server": sd}
    elif cd is not None:
        rates = {"mode": "CD", "per_customer": cd}
    else:
        rates = {"mode": "GENERAL", "per_edge": [list(entry) for entry in general]}
    document = {
        "servers": list(servers),
        "customers": [{"name": name, "alpha": value} for name, value in alpha.items()],
        "edges": [list(edge) for edge in edges],
        "rates": rates,
    }
    if arrival_rate is not None:
        document["lambda"] = arrival_rate
    return load_spec(document)


def with_lambda(spec: SystemSpec, arrival_rate: float) -> SystemSpec:
    return SystemSpec(
        servers=spec.servers,
        customers=spec.customers,
        alpha=spec.alpha,
        edges=spec.edges,
        rates=spec.rates,
        arrival_rate=arrival_rate,
    )


@pytest.fixture
def system1() -> SystemSpec:
    return fixture_store.spec("system1")


@pytest.fixture
def system2() -> SystemSpec:
    return fixture_store.spec("system2")


@pytest.fixture
def system3() -> SystemSpec:
    return fixture_store.spec("system3")


@pytest.fixture
def disjoint_pair() -> SystemSpec:
    """s1-c1 and s2-c2, the first server overloaded"""
    return make_spec(
        servers=["s1", "s2"],
        alpha={"c1": 0.8, "c2": 0.2},
        edges=[("s1", "c1"), ("s2", "c2")],
        sd={"s1": 0.4, "s2": 0.6},
    )


@pytest.fixture
def small_tree() -> SystemSpec:
    """s1 serves c1 and c2, s2 serves c2, all edge rates 1"""
    return make_spec(
        servers=["s1", "s2"],
        alpha={"c1": 0.4, "c2": 0.6},
        edges=[("s1", "c1"), ("s1", "c2"), ("s2", "c2")],
        general=[("s1", "c1", 1.0), ("s1", "c2", 1.0), ("s2", "c2", 1.0)],
    )


@pytest.fixture
def complete_2x2() -> SystemSpec:
    return make_spec(
        servers=["s1", "s2"],
        alpha={"c1": 0.5, "c2": 0.5},
        edges=[("s1", "c1"), ("s1", "c2"), ("s2", "c1"), ("s2", "c2")],
        sd={"s1": 1.0, "s2": 1.0},
        arrival_rate=1.0,
    )


@pytest.fixture
def single_edge() -> SystemSpec:
    return make_spec(servers=["s1"], alpha={"c1": 1.0}, edges=[("s1", "c1")], sd={"s1": 5.0})


def random_spec(
    rng,
    *,
    max_servers: int = 5,
    max_customers: int = 5,
    mode: str = "SD",
    tree: bool = False,
    density: float = 0.5,
    arrival_rate: Optional[float] = None,
) -> SystemSpec:
    """Random compatibility graph without isolated nodes; a random spanning tree when tree is set"""
    num_servers = int(rng.integers(1, max_servers + 1))
    num_customers = int(rng.integers(1, max_customers + 1))
    servers = [f"s{j + 1}" for j in range(num_servers)]
    customers = [f"c{i + 1}" for i in range(num_customers)]

    edges = set()
    if tree:
        placed = [("s", 0)]
        pending = [("s", j) for j in range(1, num_servers)] + [("c", i) for i in range(num_customers)]
        while pending:
            attachable = [node for node in pending if any(other[0] != node[0] for other in placed)]
            node = attachable[int(rng.integers(len(attachable)))]
            partners = [other for other in placed if other[0] != node[0]]
            other = partners[int(rng.integers(len(partners)))]
            server, customer = (node, other) if node[0] == "s" else (other, node)
            edges.add((server[1], customer[1]))
            placed.append(node)
            pending.remove(node)
    else:
        for j in range(num_servers):
            for i in range(num_customers):
                if rng.random() < density:
                    edges.add((j, i))
        for j in range(num_servers):
            if not any(edge[0] == j for edge in edges):
                edges.add((j, int(rng.integers(num_customers))))
        for i in range(num_customers):
            if not any(edge[1] == i for edge in edges):
                edges.add((int(rng.integers(num_servers)), i))

    weights = rng.uniform(0.2, 1.0, size=num_customers)
    alpha = {name: float(w) for name, w in zip(customers, weights / weights.sum())}
    named_edges = [(servers[j], customers[i]) for j, i in sorted(edges)]
    if mode == "SD":
        rates = {"sd": {name: float(rng.uniform(0.2, 2.0)) for name in servers}}
    elif mode == "CD":
        rates = {"cd": {name: float(rng.uniform(0.2, 2.0)) for name in customers}}
    else:
        rates = {"general": [(s, c, float(rng.uniform(0.2, 2.0))) for s, c in named_edges]}
    return make_spec(servers=servers, alpha=alpha, edges=named_edges, arrival_rate=arrival_rate, **rates)
