"""Shared test utilities: random grid cases and small builders."""

from __future__ import annotations

import numpy as np

from opflearn.cases import GridCase, build_case
from opflearn.network import build_all_matrices, enumerate_contingencies
from opflearn.pipeline import reconstruct_angles


def triangle_case() -> GridCase:
    """The desk-scale three-bus case used throughout the suite."""
    return build_case(
        100.0,
        buses=[(1, 0.0), (2, 60.0), (3, 40.0)],
        branches=[(1, 2, 0.1, 130.0), (1, 3, 0.2, 130.0), (2, 3, 0.25, 100.0)],
        generators=[(1, 0.0, 120.0, (0.02, 30.0, 0.0)), (3, 0.0, 50.0, (0.04, 32.0, 0.0))],
        slack_bus_id=1,
    )


def two_bus_case(x: float = 0.5, limit: float = 80.0, load: float = 50.0) -> GridCase:
    return build_case(
        100.0,
        buses=[(1, 0.0), (2, load)],
        branches=[(1, 2, x, limit)],
        generators=[(1, 0.0, 100.0, (0.01, 20.0, 0.0))],
        slack_bus_id=1,
    )


def random_connected_graph(rng: np.random.Generator, n_bus: int) -> list[tuple[int, int]]:
    """Random spanning tree plus a few extra (possibly parallel) edges."""
    edges = [(int(rng.integers(0, v)), v) for v in range(1, n_bus)]
    for _ in range(int(rng.integers(0, 4))):
        u, v = rng.integers(0, n_bus, size=2)
        if u != v:
            edges.append((int(min(u, v)), int(max(u, v))))
    return edges


def random_case(rng: np.random.Generator, max_bus: int = 8, max_gen: int = 3) -> GridCase:
    """Random connected case whose SC-DCOPF is guaranteed feasible.

    Generators are placed first and a load total is chosen so that the
    mid-range dispatch is strictly inside every generator band; line limits
    are then set around that dispatch's actual flows (factor 1.05-1.8), which
    keeps the instance solvable while leaving some limits nearly binding.
    """
    n_bus = int(rng.integers(2, max_bus + 1))
    edges = random_connected_graph(rng, n_bus)
    n_gen = int(rng.integers(1, min(max_gen, n_bus) + 1))
    gen_buses = rng.choice(n_bus, size=n_gen, replace=False)

    p_min = rng.uniform(0.0, 20.0, size=n_gen)
    p_max = p_min + rng.uniform(30.0, 150.0, size=n_gen)
    mids = p_min + rng.uniform(0.3, 0.7, size=n_gen) * (p_max - p_min)
    total_load = float(np.sum(mids))

    n_load = int(rng.integers(1, n_bus + 1))
    load_buses = rng.choice(n_bus, size=n_load, replace=False)
    weights = rng.dirichlet(np.ones(n_load))
    loads = np.zeros(n_bus)
    loads[load_buses] = weights * total_load

    # Provisional case with huge limits, to measure the mid-dispatch flows.
    def make(limits):
        return build_case(
            100.0,
            buses=[(i + 1, float(loads[i])) for i in range(n_bus)],
            branches=[
                (u + 1, v + 1, float(x), float(limits[k]))
                for k, ((u, v), x) in enumerate(zip(edges, reactances))
            ],
            generators=[
                (int(gen_buses[i]) + 1, float(p_min[i]), float(p_max[i]),
                 (float(c2[i]), float(c1[i]), float(c0[i])))
                for i in range(n_gen)
            ],
            slack_bus_id=int(gen_buses[0]) + 1,
        )

    reactances = rng.uniform(0.05, 0.5, size=len(edges))
    c2 = rng.uniform(0.005, 0.05, size=n_gen)
    c1 = rng.uniform(10.0, 50.0, size=n_gen)
    c0 = rng.uniform(0.0, 100.0, size=n_gen)

    provisional = make(np.full(len(edges), 100.0 * max(total_load, 1.0)))
    cont = enumerate_contingencies(provisional)
    matrices = build_all_matrices(provisional, cont)
    theta = reconstruct_angles(provisional, matrices, mids, loads)

    worst = np.zeros(len(edges))
    for c, m in enumerate(matrices):
        for row, branch_id in enumerate(m.branch_ids):
            br = provisional.branches[branch_id]
            flow = abs(theta[c, br.from_bus] - theta[c, br.to_bus]) / br.reactance_pu
            worst[branch_id] = max(worst[branch_id], flow * 100.0)
    limits = np.maximum(worst * rng.uniform(1.05, 1.8, size=len(edges)), 5.0)
    return make(limits)
