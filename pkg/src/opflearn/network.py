"""Per-contingency electrical matrices for the DC network model.

Builds the bus susceptance matrix B (a reactance-weighted graph Laplacian),
its slack-reduced form with a cached Cholesky factorization, and the monitor
matrix A whose rows map phase angles to line flows normalized by each branch's
limit. A contingency is the outage of a single branch; branches whose removal
disconnects the network (bridges) are excluded from the contingency set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .cases import GridCase

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContingencySet:
    """Ordered outage cases: index 0 is the intact network, c >= 1 removes one branch.

    ``cases[c]`` lists in-service branch indices; ``outage[c]`` is the removed
    branch (None for the intact case). ``skipped`` holds (branch index, reason)
    for bridge branches whose outage would disconnect the network.
    """

    cases: tuple[tuple[int, ...], ...]
    outages: tuple[int | None, ...]
    skipped: tuple[tuple[int, str], ...]

    @property
    def n_cases(self) -> int:
        return len(self.cases)


def find_bridges(n_bus: int, edges: list[tuple[int, int]]) -> set[int]:
    """Indices of bridge edges, by iterative DFS low-link (parallel-edge aware)."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n_bus)]
    for eid, (a, b) in enumerate(edges):
        adj[a].append((b, eid))
        adj[b].append((a, eid))

    disc = [-1] * n_bus
    low = [0] * n_bus
    bridges: set[int] = set()
    counter = 0
    for root in range(n_bus):
        if disc[root] != -1:
            continue
        # Stack entries: (node, incoming edge id, iterator position).
        stack = [(root, -1, 0)]
        disc[root] = low[root] = counter
        counter += 1
        while stack:
            u, in_edge, pos = stack.pop()
            if pos < len(adj[u]):
                stack.append((u, in_edge, pos + 1))
                v, eid = adj[u][pos]
                if eid == in_edge:
                    continue
                if disc[v] == -1:
                    disc[v] = low[v] = counter
                    counter += 1
                    stack.append((v, eid, 0))
                else:
                    low[u] = min(low[u], disc[v])
            elif in_edge != -1:
                # Finished u: propagate low-link to the DFS parent.
                parent = stack[-1][0]
                low[parent] = min(low[parent], low[u])
                if low[u] > disc[parent]:
                    bridges.add(in_edge)
    return bridges


def enumerate_contingencies(case: GridCase) -> ContingencySet:
    """All single-branch outages that keep the network connected, in file order."""
    edges = [(br.from_bus, br.to_bus) for br in case.branches]
    bridges = find_bridges(case.n_bus, edges)

    all_branches = tuple(range(case.n_branch))
    cases: list[tuple[int, ...]] = [all_branches]
    outages: list[int | None] = [None]
    skipped: list[tuple[int, str]] = []
    for k in range(case.n_branch):
        if k in bridges:
            reason = "outage disconnects the network"
            skipped.append((k, reason))
            logger.warning("skipping contingency for bridge branch %d: %s", k, reason)
            continue
        cases.append(tuple(b for b in all_branches if b != k))
        outages.append(k)
    return ContingencySet(cases=tuple(cases), outages=tuple(outages), skipped=tuple(skipped))


@dataclass(frozen=True)
class ContingencyMatrices:
    """Electrical matrices for one contingency case, in per-unit.

    ``b_full`` is the N x N susceptance matrix, ``b_reduced`` its form with the
    slack row/column removed, ``b_reduced_factor`` a Cholesky factorization of
    the reduced matrix reusable across right-hand sides, and ``monitor`` the
    N_a x N matrix whose row for branch (i, j) holds +/- 1 / (limit * x) so
    that ``monitor @ theta`` yields limit-normalized line flows.
    ``branch_ids`` gives the source branch of each monitor row.
    """

    case_index: int
    branch_ids: tuple[int, ...]
    b_full: np.ndarray
    b_reduced: np.ndarray
    b_reduced_factor: tuple[np.ndarray, bool] = field(repr=False)
    monitor: np.ndarray

    def solve_reduced(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``b_reduced @ x = rhs`` using the cached factorization."""
        return cho_solve(self.b_reduced_factor, rhs)


def nonslack_indices(case: GridCase) -> np.ndarray:
    keep = np.ones(case.n_bus, dtype=bool)
    keep[case.slack_bus] = False
    return np.flatnonzero(keep)


def build_matrices(case: GridCase, cont: ContingencySet, c: int) -> ContingencyMatrices:
    """Construct B, reduced B (with factorization), and the monitor matrix for case c."""
    if not 0 <= c < cont.n_cases:
        raise IndexError(f"contingency index {c} out of range [0, {cont.n_cases})")
    n = case.n_bus
    base = case.base_mva
    in_service = cont.cases[c]

    b_full = np.zeros((n, n))
    monitor = np.zeros((len(in_service), n))
    for row, k in enumerate(in_service):
        br = case.branches[k]
        i, j, x = br.from_bus, br.to_bus, br.reactance_pu
        w = 1.0 / x
        b_full[i, j] -= w
        b_full[j, i] -= w
        b_full[i, i] += w
        b_full[j, j] += w
        a = 1.0 / (br.limit_mw / base * x)
        monitor[row, i] = a
        monitor[row, j] = -a

    keep = nonslack_indices(case)
    b_reduced = b_full[np.ix_(keep, keep)]
    try:
        factor = cho_factor(b_reduced)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded upstream
        raise RuntimeError(
            f"reduced susceptance matrix for contingency {c} is not positive definite; "
            "the case should have been excluded by enumerate_contingencies"
        ) from exc

    return ContingencyMatrices(
        case_index=c,
        branch_ids=tuple(in_service),
        b_full=b_full,
        b_reduced=b_reduced,
        b_reduced_factor=factor,
        monitor=monitor,
    )


def build_all_matrices(case: GridCase, cont: ContingencySet) -> list[ContingencyMatrices]:
    """Matrices for every contingency case. Construction per case is independent."""
    return [build_matrices(case, cont, c) for c in range(cont.n_cases)]
