"""Independent brute-force oracles the implementation is checked against.

Nothing here shares solution machinery with the package: the QP oracle
enumerates active sets, the LP oracle enumerates vertices, projections are
found by grid search, bridges by removal-and-reconnect, and the network
forward pass is re-implemented with plain loops. Keep it that way — a shared
shortcut would make the comparisons circular.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def enumerate_qp(quadratic, linear, a_eq=None, b_eq=None, a_ineq=None, b_ineq=None,
                 tol=1e-7, max_subsets=2_000_000):
    """Global optimum of a convex QP by active-set enumeration.

    Reduces to the equality null space (the reduced Hessian must be positive
    definite), then tries every subset of inequality rows up to the reduced
    dimension as the active set, solving each KKT system exactly. Subsets of a
    given size are solved as one batched linear solve for speed; the math is
    plain enumeration. Returns (x, objective) or None when no feasible KKT
    point exists.
    """
    q_vec = np.asarray(linear, dtype=float)
    n = q_vec.size
    q_mat = np.asarray(quadratic, dtype=float)
    a = np.zeros((0, n)) if a_eq is None else np.asarray(a_eq, dtype=float)
    b = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    g = np.zeros((0, n)) if a_ineq is None else np.asarray(a_ineq, dtype=float)
    h = np.zeros(0) if b_ineq is None else np.asarray(b_ineq, dtype=float)
    m = g.shape[0]

    if a.shape[0]:
        x_p, *_ = np.linalg.lstsq(a, b, rcond=None)
        if np.max(np.abs(a @ x_p - b), initial=0.0) > 1e-7 * (1 + np.max(np.abs(b))):
            return None  # equalities inconsistent
        _, sv, vt = np.linalg.svd(a)
        rank = int(np.sum(sv > sv[0] * max(a.shape) * np.finfo(float).eps * 10))
        null_basis = vt[rank:].T
    else:
        x_p = np.zeros(n)
        null_basis = np.eye(n)
    k = null_basis.shape[1]

    q_red = null_basis.T @ q_mat @ null_basis
    lin_red = null_basis.T @ (q_mat @ x_p + q_vec)
    g_red = g @ null_basis
    h_red = h - g @ x_p

    if k and np.min(np.linalg.eigvalsh((q_red + q_red.T) / 2)) <= 1e-10:
        raise ValueError("enumeration oracle needs a positive definite reduced Hessian")

    def objective_of(v_rows):
        x = x_p[None, :] + v_rows @ null_basis.T
        return 0.5 * np.einsum("ni,ij,nj->n", x, q_mat, x) + x @ q_vec, x

    best = None

    def consider(v_rows):
        nonlocal best
        if v_rows.shape[0] == 0:
            return
        if m:
            ok = np.max(v_rows @ g_red.T - h_red, axis=1) <= tol
            v_rows = v_rows[ok]
            if v_rows.shape[0] == 0:
                return
        objs, xs = objective_of(v_rows)
        i = int(np.argmin(objs))
        if best is None or objs[i] < best[1]:
            best = (xs[i], float(objs[i]))

    # Unconstrained-in-the-null-space candidate (empty active set).
    if k:
        consider(np.linalg.solve(q_red, -lin_red)[None, :])
    else:
        consider(np.zeros((1, 0)))

    for size in range(1, k + 1):
        n_subsets = math.comb(m, size)
        if n_subsets == 0:
            continue
        if n_subsets > max_subsets:
            raise ValueError(f"too many active-set candidates: C({m},{size})")
        idx = np.array(list(itertools.combinations(range(m), size)), dtype=int)
        rows = g_red[idx]  # (n_subsets, size, k)
        gram = np.einsum("nik,njk->nij", rows, rows)
        diag = np.einsum("nii->ni", gram)
        dets = np.linalg.det(gram)
        keep = dets > 1e-14 * np.prod(np.maximum(diag, 1e-30), axis=1)
        idx, rows = idx[keep], rows[keep]
        if idx.shape[0] == 0:
            continue

        dim = k + size
        kkt = np.zeros((idx.shape[0], dim, dim))
        kkt[:, :k, :k] = q_red
        kkt[:, :k, k:] = np.swapaxes(rows, 1, 2)
        kkt[:, k:, :k] = rows
        rhs = np.concatenate(
            [np.broadcast_to(-lin_red, (idx.shape[0], k)), h_red[idx]], axis=1
        )
        try:
            sol = np.linalg.solve(kkt, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            # A near-singular subset slipped through the filter; do them one by one.
            sol = np.full((idx.shape[0], dim), np.nan)
            for i in range(idx.shape[0]):
                try:
                    sol[i] = np.linalg.solve(kkt[i], rhs[i])
                except np.linalg.LinAlgError:
                    pass
        v, lam = sol[:, :k], sol[:, k:]
        ok = np.all(np.isfinite(sol), axis=1) & np.all(lam >= -tol, axis=1)
        consider(v[ok])

    if best is None:
        return None
    return best[0], best[1]


def enumerate_lp_vertices(linear, a_eq=None, b_eq=None, a_ineq=None, b_ineq=None,
                          tol=1e-8):
    """Optimal objective of a bounded LP by brute-force vertex enumeration.

    Every choice of (n - rank(A_eq)) inequality rows is tried as an active
    basis; the best feasible vertex wins. Returns (x, objective) or None.
    """
    c = np.asarray(linear, dtype=float)
    n = c.size
    a = np.zeros((0, n)) if a_eq is None else np.asarray(a_eq, dtype=float)
    b = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    g = np.asarray(a_ineq, dtype=float)
    h = np.asarray(b_ineq, dtype=float)
    m = g.shape[0]

    if a.shape[0]:
        rank = np.linalg.matrix_rank(a, tol=1e-10)
    else:
        rank = 0
    free = n - rank

    best = None
    for subset in itertools.combinations(range(m), free):
        stacked = np.vstack([a, g[list(subset)]])
        rhs = np.concatenate([b, h[list(subset)]])
        if np.linalg.matrix_rank(stacked, tol=1e-10) < n:
            continue
        x, *_ = np.linalg.lstsq(stacked, rhs, rcond=None)
        if np.max(np.abs(stacked @ x - rhs), initial=0.0) > 1e-8:
            continue
        if np.max(g @ x - h, initial=0.0) > tol:
            continue
        if a.shape[0] and np.max(np.abs(a @ x - b), initial=0.0) > tol:
            continue
        val = float(c @ x)
        if best is None or val < best[1]:
            best = (x, val)
    return best


def forward_reference(weights, biases, x):
    """Plain-Python re-implementation of the network forward pass."""
    h = [float(v) for v in x]
    n_layers = len(weights)
    for layer in range(n_layers):
        w, b = weights[layer], biases[layer]
        out = []
        for i in range(len(b)):
            s = float(b[i])
            for j in range(len(h)):
                s += float(w[i][j]) * h[j]
            if layer < n_layers - 1:
                out.append(max(0.0, s))
            else:
                out.append(1.0 / (1.0 + math.exp(-s)))
        h = out
    return np.array(h)


def brute_force_bridges(n_bus, edges):
    """Bridge set by removing each edge and re-testing connectivity."""

    def connected(active):
        adj = [[] for _ in range(n_bus)]
        for idx in active:
            u, v = edges[idx]
            adj[u].append(v)
            adj[v].append(u)
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == n_bus

    all_idx = set(range(len(edges)))
    return {k for k in all_idx if not connected(all_idx - {k})}


def knn_reference(train_x, train_y, query, k):
    """Naive O(n d) scan with index tie-breaking."""
    dists = []
    for i, row in enumerate(train_x):
        d = 0.0
        for a, b in zip(row, query):
            d += (float(a) - float(b)) ** 2
        dists.append((d, i))
    dists.sort()  # ties fall back to the index
    picked = [i for _, i in dists[:k]]
    return np.mean([train_y[i] for i in picked], axis=0)


def l1_projection_grid(case, matrices, p_hat_mw, p_d_mw, step_pu=2e-6, tol=1e-6):
    """L1-optimal feasible dispatch for a two-generator case, by grid search.

    Power balance pins U2 = total - U1, so the feasible set is an interval
    family in U1; the grid scans it and keeps the best feasible point. Returns
    (U MW, distance MW) or None when no grid point is feasible.
    """
    assert case.n_gen == 2, "grid oracle is for two-generator cases"
    base = case.base_mva
    g1, g2 = case.generators
    total = float(np.sum(p_d_mw)) / base
    p_hat = np.asarray(p_hat_mw, dtype=float) / base

    lo = max(g1.p_min_mw / base, total - g2.p_max_mw / base)
    hi = min(g1.p_max_mw / base, total - g2.p_min_mw / base)
    if lo > hi:
        return None
    u1 = np.arange(lo, hi + step_pu, step_pu)
    u1 = np.clip(u1, lo, hi)

    # Injections are affine in u1: base point at u1 = 0 plus a unit shift.
    keep = [i for i in range(case.n_bus) if i != case.slack_bus]
    inj0 = -np.asarray(p_d_mw, dtype=float) / base
    inj0[g2.bus] += total
    unit = np.zeros(case.n_bus)
    unit[g1.bus] += 1.0
    unit[g2.bus] -= 1.0

    feasible = np.ones(u1.size, dtype=bool)
    for m in matrices:
        f0 = m.monitor[:, keep] @ np.linalg.solve(m.b_reduced, inj0[keep])
        f1 = m.monitor[:, keep] @ np.linalg.solve(m.b_reduced, unit[keep])
        flows = f0[:, None] + np.outer(f1, u1)
        feasible &= np.all(np.abs(flows) <= 1.0 + tol, axis=0)
    if not np.any(feasible):
        return None

    dist = np.abs(p_hat[0] - u1) + np.abs(p_hat[1] - (total - u1))
    dist[~feasible] = np.inf
    best = int(np.argmin(dist))
    u = np.array([u1[best], total - u1[best]]) * base
    return u, float(dist[best]) * base
