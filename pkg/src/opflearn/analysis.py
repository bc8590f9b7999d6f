"""Computable capacity theory for the load-to-dispatch mapping.

The optimal-dispatch mapping is piecewise linear and Lipschitz, so a ReLU
network of depth ``n_hid`` and width ``m`` — which realizes at most
``(2m)**n_hid`` linear segments — cannot approximate the worst such mapping
better than ``lipschitz * diameter / (4 * (2m)**n_hid)`` in the sup norm.
These are worst-case planning numbers over a whole function class, not
guarantees (in either direction) about any particular trained model; use them
to size a network before training, not to certify one after.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CapacityQuery:
    lipschitz: float
    diameter: float
    epsilon: float
    max_depth: int = 6

    def __post_init__(self):
        if self.lipschitz <= 0 or self.diameter <= 0 or self.epsilon <= 0:
            raise ValueError("lipschitz, diameter, and epsilon must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")


def worst_case_bound(lipschitz: float, diameter: float, width: int, depth: int) -> float:
    """Lower bound on the worst-case sup-norm approximation error.

    Evaluated in log space so deep networks underflow gracefully to 0.0
    instead of overflowing the denominator.
    """
    if lipschitz <= 0 or diameter <= 0:
        raise ValueError("lipschitz and diameter must be positive")
    if width < 1 or depth < 1:
        raise ValueError("width and depth must be at least 1")
    log_bound = (
        math.log(lipschitz) + math.log(diameter) - math.log(4.0)
        - depth * math.log(2.0 * width)
    )
    try:
        return math.exp(log_bound)
    except OverflowError:  # pragma: no cover - needs absurd inputs
        return math.inf


def max_segments(width: int, depth: int) -> int:
    """Maximum number of linear segments a ReLU network of this size realizes."""
    if width < 1 or depth < 1:
        raise ValueError("width and depth must be at least 1")
    return (2 * width) ** depth  # exact integer; Python ints cannot overflow


def min_capacity(
    lipschitz: float, diameter: float, epsilon: float, max_depth: int = 6
) -> list[tuple[int, int]]:
    """Minimal width per depth so the size condition holds.

    For each depth 1..max_depth, returns (depth, width) with the smallest
    width satisfying (2 * width) ** depth >= lipschitz * diameter /
    (4 * epsilon). Narrower networks provably cannot reach error epsilon on
    the hardest mapping of that Lipschitz class.
    """
    query = CapacityQuery(lipschitz, diameter, epsilon, max_depth)
    threshold = query.lipschitz * query.diameter / (4.0 * query.epsilon)
    rows: list[tuple[int, int]] = []
    for depth in range(1, max_depth + 1):
        width = max(1, math.ceil(threshold ** (1.0 / depth) / 2.0))
        # Float roots can land one off; settle by the exact integer inequality.
        while max_segments(width, depth) < threshold:
            width += 1
        while width > 1 and max_segments(width - 1, depth) >= threshold:
            width -= 1
        rows.append((depth, width))
    return rows


def op_count(layer_sizes: list[int]) -> int:
    """Arithmetic-operation count of one inference pass, as the accounting
    T = k_in * k_1 + sum_i k_i * k_{i+1} + k_out * n_hid over hidden widths."""
    if len(layer_sizes) < 3:
        raise ValueError("need at least input, one hidden, and output sizes")
    if any(k < 1 for k in layer_sizes):
        raise ValueError(f"layer sizes must be positive, got {layer_sizes}")
    k_in, *hidden, k_out = layer_sizes
    n_hid = len(hidden)
    between = sum(hidden[i] * hidden[i + 1] for i in range(n_hid - 1))
    return k_in * hidden[0] + between + k_out * n_hid


def estimate_lipschitz(
    loads: np.ndarray,
    targets: np.ndarray,
    pair_budget: int = 1_000_000,
    seed: int = 0,
) -> float:
    """Empirical lower estimate of the mapping's Lipschitz constant.

    Maximizes ||y_i - y_j|| / ||x_i - x_j|| over sampled index pairs; all
    pairs are used when they fit the budget, otherwise a seeded subsample.
    Duplicate-load pairs are skipped. The estimate never exceeds the true
    constant and is non-decreasing in the pair budget.
    """
    x = np.asarray(loads, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("loads and targets must be 2-D with matching row counts")
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")

    total_pairs = n * (n - 1) // 2
    if total_pairs <= pair_budget:
        ii, jj = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        ii = rng.integers(0, n, size=pair_budget)
        jj = rng.integers(0, n, size=pair_budget)
        keep = ii != jj
        ii, jj = ii[keep], jj[keep]

    best = 0.0
    chunk = 262_144
    for start in range(0, ii.size, chunk):
        a, b = ii[start:start + chunk], jj[start:start + chunk]
        dx = np.linalg.norm(x[a] - x[b], axis=1)
        dy = np.linalg.norm(y[a] - y[b], axis=1)
        mask = dx > 0.0
        if np.any(mask):
            best = max(best, float(np.max(dy[mask] / dx[mask])))
    return best


def box_diameter(low: np.ndarray, high: np.ndarray) -> float:
    """Diagonal length of an axis-aligned box (our convention for the load domain)."""
    return float(np.linalg.norm(np.asarray(high, dtype=float) - np.asarray(low, dtype=float)))
