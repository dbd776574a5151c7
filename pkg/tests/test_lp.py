from itertools import combinations

import networkx as nx
import numpy as np
import pytest
from scipy.optimize import linprog

from fluid_fcfs.core.exceptions import ModeError
from fluid_fcfs.models.schemas import VerdictKind
from fluid_fcfs.services.lp import (
    build_static_plan,
    extract_design,
    matching_rates_complete,
    matching_rates_tree,
    solve_static_plan,
)
from fluid_fcfs.services.pooling import check_crp_sd, check_crp_tree
from fluid_fcfs.services.spec_loader import load_spec

from .conftest import make_spec, random_spec


def _assert_lp_invariants(spec, solution):
    # server rows tight
    for j in range(spec.num_servers):
        used = sum(solution.eta[k] for k, (s, _) in enumerate(spec.edges) if s == j)
        assert used == pytest.approx(1.0, abs=1e-9)
    # customer rows balanced
    for i in range(spec.num_customers):
        served = sum(spec.rate(s, c) / spec.alpha[c] * solution.eta[k] for k, (s, c) in enumerate(spec.edges) if c == i)
        assert served == pytest.approx(solution.mu_star + solution.theta[i], abs=1e-9)
    # duality
    assert sum(solution.z) == pytest.approx(1.0, abs=1e-9)
    assert all(y >= -1e-9 for y in solution.y)
    assert solution.dual_objective() == pytest.approx(solution.mu_star, abs=1e-9)
    for k in range(len(spec.edges)):
        assert solution.x[k] >= -1e-9
        assert solution.eta[k] * solution.x[k] == pytest.approx(0.0, abs=1e-9)
    for i in range(spec.num_customers):
        assert solution.theta[i] * solution.z[i] == pytest.approx(0.0, abs=1e-9)
    # basic arcs form a forest
    forest = nx.Graph()
    forest.add_edges_from((("s", spec.edges[k][0]), ("c", spec.edges[k][1])) for k in solution.basic_arcs)
    assert forest.number_of_edges() == 0 or nx.is_forest(forest)
    positive = sum(1 for value in solution.eta if value > 1e-9)
    assert min(spec.num_servers, spec.num_customers) <= positive <= spec.num_servers + spec.num_customers - 1


def test_single_edge(single_edge):
    solution = solve_static_plan(single_edge)
    assert solution.mu_star == pytest.approx(5.0)
    assert solution.eta == pytest.approx((1.0,))
    assert solution.theta == pytest.approx((0.0,))


def test_small_tree(small_tree):
    solution = solve_static_plan(small_tree)
    assert solution.mu_star == pytest.approx(2.0)
    assert solution.eta == pytest.approx((0.8, 0.2, 1.0))
    assert solution.theta == pytest.approx((0.0, 0.0), abs=1e-12)
    _assert_lp_invariants(small_tree, solution)


@pytest.mark.parametrize("name", ["system1", "system2", "system3"])
def test_pooled_sd_systems_reach_total_capacity(name, request):
    spec = request.getfixturevalue(name)
    solution = solve_static_plan(spec)
    assert solution.mu_star == pytest.approx(spec.total_server_rate, abs=1e-9)
    assert max(solution.theta) == pytest.approx(0.0, abs=1e-9)


def test_system1_total_capacity_is_one(system1):
    assert solve_static_plan(system1).mu_star == pytest.approx(1.0, abs=1e-9)


def test_against_scipy_linprog():
    rng = np.random.default_rng(3)
    for _ in range(60):
        spec = random_spec(rng, max_servers=5, max_customers=5, mode="GENERAL")
        lp = build_static_plan(spec)
        reference = linprog(-lp.cost, A_eq=lp.matrix, b_eq=lp.rhs, bounds=(0, None), method="highs")
        assert reference.status == 0
        assert solve_static_plan(spec).mu_star == pytest.approx(-reference.fun, abs=1e-9)


def test_brute_force_basis_enumeration():
    rng = np.random.default_rng(8)
    for _ in range(40):
        spec = random_spec(rng, max_servers=3, max_customers=3, mode="GENERAL", density=0.6)
        if len(spec.edges) > 8:
            continue
        lp = build_static_plan(spec)
        A, b = lp.matrix, lp.rhs
        rows, columns = A.shape
        best = -np.inf
        for basis in combinations(range(columns), rows):
            B = A[:, basis]
            if abs(np.linalg.det(B)) < 1e-12:
                continue
            values = np.linalg.solve(B, b)
            if np.all(values >= -1e-10):
                full = np.zeros(columns)
                full[list(basis)] = values
                best = max(best, full[-1])
        assert solve_static_plan(spec).mu_star == pytest.approx(best, abs=1e-9)


def test_structural_invariants_on_random_specs():
    rng = np.random.default_rng(17)
    for _ in range(500):
        mode = ("SD", "CD", "GENERAL")[int(rng.integers(3))]
        spec = random_spec(rng, max_servers=5, max_customers=5, mode=mode)
        _assert_lp_invariants(spec, solve_static_plan(spec))


def test_sd_pooled_capacity_consistency():
    rng = np.random.default_rng(19)
    for _ in range(200):
        spec = random_spec(rng, max_servers=5, max_customers=5)
        if check_crp_sd(spec).kind is VerdictKind.COMPLETE:
            assert solve_static_plan(spec).mu_star == pytest.approx(spec.total_server_rate, abs=1e-9)


def test_tree_solution_matches_lp():
    rng = np.random.default_rng(29)
    matched = 0
    for _ in range(200):
        spec = random_spec(rng, max_servers=6, max_customers=6, mode="GENERAL", tree=True)
        tree = check_crp_tree(spec)
        if tree.verdict.kind is not VerdictKind.COMPLETE:
            continue
        solution = solve_static_plan(spec)
        assert solution.mu_star == pytest.approx(tree.mu, abs=1e-9)
        assert solution.eta == pytest.approx(tree.eta, abs=1e-9)
        matched += 1
    assert matched > 0


def test_design_single_edge(single_edge):
    design = extract_design(single_edge, solve_static_plan(single_edge))
    assert len(design.blocks) == 1
    block = design.blocks[0]
    assert block.rate == pytest.approx(5.0)
    assert block.tree_edges == (0,)
    assert block.matching_rates == pytest.approx((1.0,))


def test_design_small_tree(small_tree):
    design = extract_design(small_tree, solve_static_plan(small_tree))
    assert len(design.blocks) == 1
    block = design.blocks[0]
    assert block.pooling_kind is VerdictKind.COMPLETE
    assert block.tree_edges == (0, 1, 2)
    assert block.matching_rates == pytest.approx((0.4, 0.1, 0.5))


def test_design_disjoint_pair_peels_two_blocks(disjoint_pair):
    design = extract_design(disjoint_pair, solve_static_plan(disjoint_pair))
    assert [disjoint_pair.server_names(b.servers) for b in design.blocks] == [["s1"], ["s2"]]
    assert [b.rate for b in design.blocks] == pytest.approx([0.5, 3.0])
    for block in design.blocks:
        assert sum(block.matching_rates) == pytest.approx(1.0)


def test_design_blocks_increase_and_balance():
    rng = np.random.default_rng(37)
    for _ in range(150):
        spec = random_spec(rng, max_servers=5, max_customers=5, mode="GENERAL")
        design = extract_design(spec, solve_static_plan(spec))
        rates = [block.rate for block in design.blocks]
        assert rates == sorted(rates)
        for block in design.blocks:
            assert sum(block.matching_rates) == pytest.approx(1.0, abs=1e-9)
            alpha = spec.alpha_of(block.customers)
            for i in (c for c in range(spec.num_customers) if block.customers >> c & 1):
                row = sum(r for k, r in zip(block.tree_edges, block.matching_rates) if spec.edges[k][1] == i)
                assert row == pytest.approx(spec.alpha[i] / alpha, abs=1e-9)


def test_pruned_spec_round_trips(system1):
    solution = solve_static_plan(system1)
    design = extract_design(system1, solution)
    pruned = load_spec(design.to_spec_document(system1).model_dump(mode="json", by_alias=True, exclude_none=True))
    assert pruned.alpha == system1.alpha
    assert set(pruned.edges) <= set(system1.edges)
    assert len(pruned.edges) == sum(len(block.tree_edges) for block in design.blocks)


def test_matching_rates_tree(small_tree):
    tree = check_crp_tree(small_tree)
    matrix = matching_rates_tree(small_tree, tree.eta, tree.mu)
    assert matrix.sum() == pytest.approx(1.0)
    assert matrix[0, 0] == pytest.approx(0.4)
    assert matrix[1, 0] == pytest.approx(0.1)
    assert matrix[1, 1] == pytest.approx(0.5)


def test_matching_rates_tree_needs_positive_solution():
    spec = make_spec(servers=["s1", "s2"], alpha={"c1": 0.5, "c2": 0.5},
                     edges=[("s1", "c1"), ("s1", "c2"), ("s2", "c2")],
                     general=[("s1", "c1", 1.0), ("s1", "c2", 1.0), ("s2", "c2", 1.0)])
    tree = check_crp_tree(spec)
    with pytest.raises(ModeError):
        matching_rates_tree(spec, tree.eta, tree.mu)


def test_matching_rates_complete_symmetric(complete_2x2):
    rates = matching_rates_complete(complete_2x2)
    assert rates.matrix == pytest.approx(np.full((2, 2), 0.25))


def test_matching_rates_complete_single_server():
    spec = make_spec(servers=["s1"], alpha={"c1": 0.5, "c2": 0.5}, edges=[("s1", "c1"), ("s1", "c2")],
                     general=[("s1", "c1", 1.0), ("s1", "c2", 1.0 / 3.0)])
    rates = matching_rates_complete(spec)
    assert rates.mu == pytest.approx(0.5)
    assert rates.matrix[:, 0] == pytest.approx([0.5, 0.5])


def test_matching_rates_complete_two_servers():
    spec = make_spec(servers=["s1", "s2"], alpha={"c1": 1.0}, edges=[("s1", "c1"), ("s2", "c1")],
                     sd={"s1": 2.0, "s2": 1.0})
    rates = matching_rates_complete(spec)
    assert rates.matrix[0] == pytest.approx([2 / 3, 1 / 3])


def test_matching_rates_complete_rejects_sparse_graph(small_tree):
    with pytest.raises(ModeError):
        matching_rates_complete(small_tree)
