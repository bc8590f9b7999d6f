import numpy as np
import pytest

from helpers import random_case, random_connected_graph, triangle_case, two_bus_case
from opflearn.cases import build_case
from opflearn.network import (
    build_all_matrices,
    build_matrices,
    enumerate_contingencies,
    find_bridges,
)
from oracles import brute_force_bridges


def path_case():
    return build_case(
        100.0,
        buses=[(1, 0.0), (2, 30.0), (3, 20.0)],
        branches=[(1, 2, 0.1, 60.0), (2, 3, 0.1, 60.0)],
        generators=[(1, 0.0, 100.0, (0.01, 20.0, 0.0))],
        slack_bus_id=1,
    )


def test_triangle_has_four_cases_no_bridges():
    cont = enumerate_contingencies(triangle_case())
    assert cont.n_cases == 4
    assert cont.skipped == ()
    assert cont.outages == (None, 0, 1, 2)
    assert len(cont.cases[0]) == 3
    # every outage case drops exactly the indicated branch
    for c in range(1, 4):
        assert set(cont.cases[0]) - set(cont.cases[c]) == {cont.outages[c]}


def test_path_network_keeps_only_intact_case():
    cont = enumerate_contingencies(path_case())
    assert cont.n_cases == 1
    assert [k for k, _ in cont.skipped] == [0, 1]


def test_bridge_detection_matches_brute_force(rng):
    for _ in range(60):
        n = int(rng.integers(2, 9))
        edges = random_connected_graph(rng, n)
        assert find_bridges(n, edges) == brute_force_bridges(n, edges)


def test_parallel_branches_are_not_bridges():
    # two parallel branches between the same pair: neither is a bridge
    assert find_bridges(2, [(0, 1), (0, 1)]) == set()
    assert find_bridges(2, [(0, 1)]) == {0}


def test_triangle_susceptance_entries():
    case = triangle_case()
    cont = enumerate_contingencies(case)
    b = build_matrices(case, cont, 0).b_full
    expected = np.array([
        [15.0, -10.0, -5.0],
        [-10.0, 14.0, -4.0],
        [-5.0, -4.0, 9.0],
    ])
    np.testing.assert_allclose(b, expected, rtol=0, atol=1e-13)


def test_monitor_row_for_unit_limit_branch():
    # branch (1,2): limit 1.0 p.u. (100 MW on a 100 MVA base), x = 0.1 -> +/-10
    case = build_case(
        100.0,
        buses=[(1, 0.0), (2, 0.0), (3, 0.0)],
        branches=[(1, 2, 0.1, 100.0), (1, 3, 0.2, 100.0), (2, 3, 0.25, 100.0)],
        generators=[(1, 0.0, 100.0, (0.01, 1.0, 0.0))],
        slack_bus_id=1,
    )
    cont = enumerate_contingencies(case)
    mats = build_matrices(case, cont, 0)
    np.testing.assert_allclose(mats.monitor[0], [10.0, -10.0, 0.0], atol=1e-13)
    # each row has exactly two entries of equal magnitude and opposite sign
    for row in mats.monitor:
        nz = row[row != 0]
        assert nz.size == 2 and nz[0] == -nz[1]


def test_two_bus_reduced_matrix():
    case = two_bus_case(x=0.5)
    cont = enumerate_contingencies(case)
    mats = build_matrices(case, cont, 0)
    np.testing.assert_allclose(mats.b_reduced, [[2.0]], atol=0)


def test_row_sums_zero_and_reduced_spd(rng):
    for _ in range(15):
        case = random_case(rng)
        cont = enumerate_contingencies(case)
        for c, mats in enumerate(build_all_matrices(case, cont)):
            rows = mats.b_full @ np.ones(case.n_bus)
            assert np.max(np.abs(rows)) <= 1e-12
            assert np.allclose(mats.b_full, mats.b_full.T)
            # positive definite: Cholesky succeeded and its pivots are positive
            factor, _ = mats.b_reduced_factor
            assert np.all(np.diag(factor) > 0)


def test_contingency_matrices_drop_the_outaged_branch(rng):
    case = random_case(rng)
    cont = enumerate_contingencies(case)
    mats = build_all_matrices(case, cont)
    for c in range(1, cont.n_cases):
        out = cont.outages[c]
        br = case.branches[out]
        w = 1.0 / br.reactance_pu
        diff = mats[0].b_full - mats[c].b_full
        expected = np.zeros_like(diff)
        expected[br.from_bus, br.to_bus] = -w
        expected[br.to_bus, br.from_bus] = -w
        expected[br.from_bus, br.from_bus] = w
        expected[br.to_bus, br.to_bus] = w
        np.testing.assert_allclose(diff, expected, atol=1e-12)
        assert out not in mats[c].branch_ids


def test_solve_reduced_uses_factorization(triangle, triangle_mats):
    rhs = np.array([0.3, -0.3])
    x = triangle_mats[0].solve_reduced(rhs)
    np.testing.assert_allclose(triangle_mats[0].b_reduced @ x, rhs, atol=1e-12)


def test_case_index_out_of_range(triangle, triangle_cont):
    with pytest.raises(IndexError):
        build_matrices(triangle, triangle_cont, triangle_cont.n_cases)
