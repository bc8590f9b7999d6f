"""Canonical quadratic program for security-constrained DC optimal power flow.

The decision vector stacks generator outputs first, then one phase-angle block
per contingency case:

    x = [P_G (n_gen), theta_0 (n_bus), ..., theta_{C-1} (n_bus)]

with generations in per-unit and angles in radians. The objective is the total
quadratic generation cost, equalities are the per-contingency power-balance
equations plus one slack-angle pin per contingency, and inequalities are the
generator bounds and the two-sided line-flow limits rewritten one-sided.
This ordering is fixed; decode maps rely on it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO

import numpy as np

from .cases import GridCase
from .network import ContingencyMatrices, ContingencySet, build_all_matrices

#: Default tolerance on normalized constraint residuals for feasibility checks;
#: matches the interior-point termination tolerance with two orders of margin.
FEASIBILITY_TOL = 1e-6


@dataclass(frozen=True)
class VariableLayout:
    n_gen: int
    n_bus: int
    n_cases: int

    @property
    def n_vars(self) -> int:
        return self.n_gen + self.n_cases * self.n_bus

    def theta_offset(self, c: int) -> int:
        return self.n_gen + c * self.n_bus

    def theta_slice(self, c: int) -> slice:
        start = self.theta_offset(c)
        return slice(start, start + self.n_bus)


@dataclass(frozen=True)
class ScopfProblem:
    """SC-DCOPF in canonical form: min 1/2 x'Qx + q'x + const, A_eq x = b_eq, A_ineq x <= b_ineq."""

    layout: VariableLayout
    quadratic: np.ndarray  # (n_vars, n_vars) diagonal
    linear: np.ndarray  # (n_vars,)
    const_term: float
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_ineq: np.ndarray
    b_ineq: np.ndarray
    eq_rows: tuple[tuple[str, int, int], ...]  # (kind, contingency, bus)
    ineq_rows: tuple[tuple[str, int | None, int], ...]  # (kind, contingency, element)

    @property
    def n_vars(self) -> int:
        return self.layout.n_vars

    def objective_value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.quadratic @ x + self.linear @ x + self.const_term)


@dataclass(frozen=True)
class Dispatch:
    """A full operating point: generations in MW, angles in radians per contingency."""

    p_g: np.ndarray  # (n_gen,) MW
    theta: np.ndarray  # (n_cases, n_bus) radians
    objective: float  # $/hr


def assemble(
    case: GridCase,
    cont: ContingencySet,
    matrices: list[ContingencyMatrices] | None = None,
    slack_angle: float = 0.0,
) -> ScopfProblem:
    """Build the canonical QP for a case and its contingency set.

    Identical inputs produce bitwise-identical matrices. ``slack_angle`` is the
    pinned phase angle of the slack bus (radians).
    """
    if matrices is None:
        matrices = build_all_matrices(case, cont)
    n_gen, n_bus, n_cases = case.n_gen, case.n_bus, cont.n_cases
    layout = VariableLayout(n_gen=n_gen, n_bus=n_bus, n_cases=n_cases)
    n = layout.n_vars
    base = case.base_mva

    quad = np.zeros((n, n))
    lin = np.zeros(n)
    const = 0.0
    for g in case.generators:
        c2, c1, c0 = g.cost
        quad[g.index, g.index] = 2.0 * c2 * base * base
        lin[g.index] = c1 * base
        const += c0

    p_d = np.array(case.default_loads_mw()) / base

    n_eq = n_cases * (n_bus + 1)
    a_eq = np.zeros((n_eq, n))
    b_eq = np.zeros(n_eq)
    eq_rows: list[tuple[str, int, int]] = []
    row = 0
    for c in range(n_cases):
        ts = layout.theta_slice(c)
        a_eq[row:row + n_bus, ts] = matrices[c].b_full
        for g in case.generators:
            a_eq[row + g.bus, g.index] = -1.0
        b_eq[row:row + n_bus] = -p_d
        eq_rows.extend(("power_balance", c, i) for i in range(n_bus))
        row += n_bus
        a_eq[row, layout.theta_offset(c) + case.slack_bus] = 1.0
        b_eq[row] = slack_angle
        eq_rows.append(("slack_pin", c, case.slack_bus))
        row += 1

    n_line_rows = sum(2 * len(cont.cases[c]) for c in range(n_cases))
    a_ineq = np.zeros((2 * n_gen + n_line_rows, n))
    b_ineq = np.zeros(2 * n_gen + n_line_rows)
    ineq_rows: list[tuple[str, int | None, int]] = []
    row = 0
    for g in case.generators:
        a_ineq[row, g.index] = 1.0
        b_ineq[row] = g.p_max_mw / base
        ineq_rows.append(("gen_upper", None, g.index))
        row += 1
    for g in case.generators:
        a_ineq[row, g.index] = -1.0
        b_ineq[row] = -g.p_min_mw / base
        ineq_rows.append(("gen_lower", None, g.index))
        row += 1
    for c in range(n_cases):
        ts = layout.theta_slice(c)
        for k, branch_id in enumerate(matrices[c].branch_ids):
            br = case.branches[branch_id]
            limit = br.limit_mw / base
            coeff = 1.0 / br.reactance_pu
            a_ineq[row, ts.start + br.from_bus] = coeff
            a_ineq[row, ts.start + br.to_bus] = -coeff
            b_ineq[row] = limit
            ineq_rows.append(("line_upper", c, branch_id))
            row += 1
            a_ineq[row, ts.start + br.from_bus] = -coeff
            a_ineq[row, ts.start + br.to_bus] = coeff
            b_ineq[row] = limit
            ineq_rows.append(("line_lower", c, branch_id))
            row += 1

    return ScopfProblem(
        layout=layout,
        quadratic=quad,
        linear=lin,
        const_term=const,
        a_eq=a_eq,
        b_eq=b_eq,
        a_ineq=a_ineq,
        b_ineq=b_ineq,
        eq_rows=tuple(eq_rows),
        ineq_rows=tuple(ineq_rows),
    )


def decode_solution(case: GridCase, problem: ScopfProblem, x: np.ndarray) -> Dispatch:
    """Split a solver vector into a Dispatch (MW / radians)."""
    layout = problem.layout
    p_g = np.asarray(x[: layout.n_gen]) * case.base_mva
    theta = np.asarray(x[layout.n_gen:]).reshape(layout.n_cases, layout.n_bus)
    return Dispatch(p_g=p_g, theta=theta.copy(), objective=problem.objective_value(x))


def evaluate_cost(case: GridCase, p_g_mw: np.ndarray) -> float:
    """Total generation cost in $/hr for generator outputs in MW."""
    p = np.asarray(p_g_mw, dtype=float)
    if p.shape != (case.n_gen,):
        raise ValueError(f"expected {case.n_gen} generator outputs, got shape {p.shape}")
    total = 0.0
    for g in case.generators:
        c2, c1, c0 = g.cost
        total += c2 * p[g.index] ** 2 + c1 * p[g.index] + c0
    return total


@dataclass(frozen=True)
class Violation:
    kind: str  # gen_lower | gen_upper | line_limit | power_balance
    contingency: int | None
    element: int  # generator, branch, or bus index depending on kind
    magnitude: float  # normalized residual


@dataclass(frozen=True)
class FeasibilityReport:
    violations: tuple[Violation, ...]
    tol: float

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def max_violation(self) -> float:
        return max((v.magnitude for v in self.violations), default=0.0)


def check_feasibility(
    case: GridCase,
    cont: ContingencySet,
    dispatch: Dispatch,
    tol: float = FEASIBILITY_TOL,
    matrices: list[ContingencyMatrices] | None = None,
    check_balance: bool = True,
) -> FeasibilityReport:
    """List every constraint of the SC-DCOPF violated by ``dispatch``.

    Residuals are normalized: line flows by their limit, generator bounds and
    balance mismatches by max(1, p.u. scale of the bound / total load). The
    dispatch is feasible iff no normalized residual exceeds ``tol``.
    """
    if matrices is None:
        matrices = build_all_matrices(case, cont)
    base = case.base_mva
    p_g = np.asarray(dispatch.p_g, dtype=float) / base
    theta = np.asarray(dispatch.theta, dtype=float)
    if theta.shape != (cont.n_cases, case.n_bus):
        raise ValueError(
            f"theta shape {theta.shape} != ({cont.n_cases}, {case.n_bus})"
        )
    if p_g.shape != (case.n_gen,):
        raise ValueError(f"p_g length {p_g.shape} != {case.n_gen}")

    violations: list[Violation] = []
    for g in case.generators:
        lo, hi = g.p_min_mw / base, g.p_max_mw / base
        scale = max(1.0, abs(lo), abs(hi))
        if (lo - p_g[g.index]) / scale > tol:
            violations.append(
                Violation("gen_lower", None, g.index, (lo - p_g[g.index]) / scale)
            )
        if (p_g[g.index] - hi) / scale > tol:
            violations.append(
                Violation("gen_upper", None, g.index, (p_g[g.index] - hi) / scale)
            )

    p_d = np.array(case.default_loads_mw()) / base
    injection = -p_d.copy()
    for g in case.generators:
        injection[g.bus] += p_g[g.index]
    balance_scale = max(1.0, float(np.max(np.abs(p_d), initial=0.0)))

    for c in range(cont.n_cases):
        flows = matrices[c].monitor @ theta[c]
        for k, branch_id in enumerate(matrices[c].branch_ids):
            excess = abs(flows[k]) - 1.0
            if excess > tol:
                violations.append(Violation("line_limit", c, branch_id, excess))
        if check_balance:
            mismatch = matrices[c].b_full @ theta[c] - injection
            for i in np.flatnonzero(np.abs(mismatch) / balance_scale > tol):
                violations.append(
                    Violation("power_balance", c, int(i), abs(mismatch[i]) / balance_scale)
                )

    return FeasibilityReport(violations=tuple(violations), tol=tol)


def dump_problem(problem: ScopfProblem, fh: IO[str]) -> None:
    """Write dimensions and nonzero triplets of the canonical QP (debug aid)."""
    fh.write(
        f"n_vars {problem.n_vars} n_eq {problem.a_eq.shape[0]} "
        f"n_ineq {problem.a_ineq.shape[0]} const {problem.const_term!r}\n"
    )
    diag = np.diag(problem.quadratic)
    for i in np.flatnonzero(diag):
        fh.write(f"Q {i} {i} {diag[i]!r}\n")
    for i in np.flatnonzero(problem.linear):
        fh.write(f"q {i} {problem.linear[i]!r}\n")
    for name, mat, rhs in (
        ("A_eq", problem.a_eq, problem.b_eq),
        ("A_ineq", problem.a_ineq, problem.b_ineq),
    ):
        rows, cols = np.nonzero(mat)
        for r, cc in zip(rows, cols):
            fh.write(f"{name} {r} {cc} {mat[r, cc]!r}\n")
        for r in np.flatnonzero(rhs):
            fh.write(f"{name}_rhs {r} {rhs[r]!r}\n")
