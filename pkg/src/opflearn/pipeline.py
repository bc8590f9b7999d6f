"""Inference: predict generations, reconstruct angles, restore feasibility.

The pipeline takes a load vector, predicts a full dispatch (model or KNN
baseline, slack generator recovered by power balance), reconstructs the
per-contingency phase angles from the cached reduced-susceptance
factorizations — so the power-balance equalities hold by construction — and
checks the generator and line limits. If the prediction is infeasible, the
nearest feasible dispatch in L1 distance is found by linear programming and
the angles are reconstructed for it.

Stage timings use a monotonic clock; the projection stage is timed only when
it actually runs, matching the per-instance accounting of the benchmark.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from . import scopf
from .cases import GridCase, case_hash
from .dataset import LoadNormalizer
from .ipm import STATUS_INFEASIBLE, STATUS_OPTIMAL, SolverOptions, solve_lp
from .mlp import DispatchModel
from .network import (
    ContingencyMatrices,
    ContingencySet,
    build_all_matrices,
    enumerate_contingencies,
    nonslack_indices,
)
from .validation import as_load_matrix, as_load_vector, as_target_matrix


class InfeasibleLoadError(RuntimeError):
    """No feasible dispatch exists for the requested load."""


class ProjectionFailedError(RuntimeError):
    """The projection LP did not reach an optimal, feasible point."""


class ModelMismatchError(ValueError):
    """Model was trained for a different case (hash mismatch)."""


@dataclass(frozen=True)
class StageTimings:
    predict: float
    reconstruct_check: float
    projection: float  # 0.0 when the projection was not invoked

    @property
    def total(self) -> float:
        return self.predict + self.reconstruct_check + self.projection


@dataclass
class DispatchResult:
    p_g_pred: np.ndarray  # predicted generations incl. slack (MW)
    theta: np.ndarray  # (n_cases, n_bus) angles of the final dispatch (radians)
    feasible_before_projection: bool
    violations: scopf.FeasibilityReport  # of the raw prediction
    p_g_final: np.ndarray  # equals p_g_pred, or the projected dispatch
    projected: bool
    objective: float  # cost of p_g_final, $/hr
    timings: StageTimings

    def to_dict(self) -> dict:
        return {
            "p_g_pred": list(self.p_g_pred),
            "p_g_final": list(self.p_g_final),
            "theta": [list(row) for row in self.theta],
            "feasible_before_projection": self.feasible_before_projection,
            "projected": self.projected,
            "objective": self.objective,
            "violations": [
                {
                    "kind": v.kind,
                    "contingency": v.contingency,
                    "element": v.element,
                    "magnitude": v.magnitude,
                }
                for v in self.violations.violations
            ],
            "timings": {
                "predict": self.timings.predict,
                "reconstruct_check": self.timings.reconstruct_check,
                "projection": self.timings.projection,
            },
        }


def reconstruct_angles(
    case: GridCase,
    matrices: list[ContingencyMatrices],
    p_g_mw: np.ndarray,
    p_d_mw: np.ndarray,
    slack_angle: float = 0.0,
) -> np.ndarray:
    """Phase angles per contingency from generations and loads.

    Solves the reduced power-flow equations with the cached factorizations and
    shifts all angles by ``slack_angle`` (the susceptance matrix annihilates
    constant shifts, so the balance equations still hold exactly).
    """
    base = case.base_mva
    injection = -np.asarray(p_d_mw, dtype=float) / base
    for g in case.generators:
        injection[g.bus] += p_g_mw[g.index] / base
    keep = nonslack_indices(case)
    u = injection[keep]
    theta = np.full((len(matrices), case.n_bus), slack_angle)
    for c, m in enumerate(matrices):
        theta[c, keep] += m.solve_reduced(u)
    return theta


def project_l1(
    case: GridCase,
    cont: ContingencySet,
    p_g_pred_mw: np.ndarray,
    p_d_mw: np.ndarray,
    matrices: list[ContingencyMatrices] | None = None,
    problem: scopf.ScopfProblem | None = None,
    solver_options: SolverOptions | None = None,
) -> tuple[np.ndarray, float]:
    """Nearest feasible dispatch in L1 distance, by linear programming.

    Decision variables are the dispatch, all per-contingency angle blocks, and
    split variables t >= |predicted - dispatch|; the constraint set is exactly
    the SC-DCOPF one. Returns (dispatch MW, L1 distance MW). Raises
    InfeasibleLoadError when the feasible set is empty.
    """
    if matrices is None:
        matrices = build_all_matrices(case, cont)
    from .dataset import rhs_for_loads  # local import to avoid a module cycle

    n_gen = case.n_gen
    p_hat = np.asarray(p_g_pred_mw, dtype=float) / case.base_mva
    if p_hat.shape != (n_gen,):
        raise ValueError(f"predicted dispatch must have length {n_gen}")

    # A feasible prediction is its own projection; skip the LP entirely.
    # Membership needs the power balance to close (sum of dispatch = sum of
    # load) in addition to the reconstructed-flow and bound checks.
    prediction = np.asarray(p_g_pred_mw, dtype=float)
    imbalance = abs(float(np.sum(prediction)) - float(np.sum(p_d_mw)))
    if imbalance <= scopf.FEASIBILITY_TOL * case.base_mva:
        theta = reconstruct_angles(case, matrices, prediction, p_d_mw)
        before = scopf.check_feasibility(
            case, cont, scopf.Dispatch(p_g=prediction, theta=theta, objective=0.0),
            matrices=matrices, check_balance=False,
        )
        if before.feasible:
            return prediction.copy(), 0.0

    if problem is None:
        problem = scopf.assemble(case, cont, matrices)
    n0 = problem.n_vars

    cost = np.concatenate([np.zeros(n0), np.ones(n_gen)])
    a_eq = np.hstack([problem.a_eq, np.zeros((problem.a_eq.shape[0], n_gen))])
    b_eq = rhs_for_loads(problem, case, p_d_mw)

    m0 = problem.a_ineq.shape[0]
    a_ineq = np.zeros((m0 + 2 * n_gen, n0 + n_gen))
    a_ineq[:m0, :n0] = problem.a_ineq
    b_ineq = np.concatenate([problem.b_ineq, p_hat, -p_hat])
    for g in range(n_gen):
        a_ineq[m0 + g, g] = 1.0  # U - t <= p_hat
        a_ineq[m0 + g, n0 + g] = -1.0
        a_ineq[m0 + n_gen + g, g] = -1.0  # -U - t <= -p_hat
        a_ineq[m0 + n_gen + g, n0 + g] = -1.0

    sol = solve_lp(cost, a_eq, b_eq, a_ineq, b_ineq, solver_options)
    if sol.status == STATUS_INFEASIBLE:
        raise InfeasibleLoadError(
            "no dispatch satisfies the operating constraints for this load"
        )
    if sol.status != STATUS_OPTIMAL:
        raise ProjectionFailedError(f"projection LP ended with status {sol.status}")
    p_final = sol.x[:n_gen] * case.base_mva
    distance = float(sol.objective) * case.base_mva
    return p_final, distance


class KnnDispatchRegressor(BaseEstimator, RegressorMixin):
    """K-nearest-neighbor baseline: average the stored generation labels.

    Distances are Euclidean on raw load vectors by default (set
    ``normalize=True`` to measure in standardized space). Distance ties are
    broken by sample index, so predictions are deterministic.
    """

    def __init__(self, n_neighbors: int = 50, normalize: bool = False):
        self.n_neighbors = n_neighbors
        self.normalize = normalize

    def fit(self, X, y):
        X = as_load_matrix(X)
        y = as_target_matrix(y, X.shape[0])
        if not 1 <= self.n_neighbors <= X.shape[0]:
            raise ValueError(
                f"n_neighbors must be in [1, {X.shape[0]}], got {self.n_neighbors}"
            )
        self.scaler_ = LoadNormalizer().fit(X) if self.normalize else None
        self.X_ = self.scaler_.transform(X) if self.scaler_ else X.copy()
        self.y_ = y.copy()
        return self

    def kneighbors_indices(self, x: np.ndarray) -> np.ndarray:
        q = np.asarray(x, dtype=float).ravel()
        if self.scaler_:
            q = self.scaler_.transform(q[None, :])[0]
        d2 = np.einsum("ij,ij->i", self.X_ - q, self.X_ - q)
        order = np.argsort(d2, kind="stable")
        return order[: self.n_neighbors]

    def predict(self, X):
        X = as_load_matrix(X, self.X_.shape[1])
        out = np.empty((X.shape[0], self.y_.shape[1]))
        for i, row in enumerate(X):
            out[i] = self.y_[self.kneighbors_indices(row)].mean(axis=0)
        return out


class DispatchPipeline:
    """Cached end-to-end inference for one case.

    Construction precomputes the contingency matrices and, when projection is
    enabled, the canonical constraint blocks, so per-load inference touches
    only small dense products and triangular solves. Instances are safe for
    concurrent reads once built.
    """

    def __init__(
        self,
        case: GridCase,
        predict_fn: Callable[[np.ndarray], np.ndarray],
        cont: ContingencySet | None = None,
        matrices: list[ContingencyMatrices] | None = None,
        tol: float = scopf.FEASIBILITY_TOL,
        project: bool = True,
        solver_options: SolverOptions | None = None,
        slack_angle: float = 0.0,
    ):
        self.case = case
        self.cont = cont or enumerate_contingencies(case)
        self.matrices = matrices or build_all_matrices(case, self.cont)
        self.predict_fn = predict_fn
        self.tol = tol
        self.project = project
        self.solver_options = solver_options
        self.slack_angle = slack_angle
        self._problem = scopf.assemble(case, self.cont, self.matrices) if project else None

        # Hot-path caches: stacked reduced-inverse and flow maps give one dense
        # product per inference instead of one triangular solve per contingency.
        self._keep = nonslack_indices(case)
        self._gen_buses = np.array([g.bus for g in case.generators])
        self._base = case.base_mva
        self._p_min_pu = np.array([g.p_min_mw for g in case.generators]) / self._base
        self._p_max_pu = np.array([g.p_max_mw for g in case.generators]) / self._base
        self._gen_scale = np.maximum(
            1.0, np.maximum(np.abs(self._p_min_pu), np.abs(self._p_max_pu))
        )
        n_red = self._keep.size
        eye = np.eye(n_red)
        self._angle_maps = np.vstack([m.solve_reduced(eye) for m in self.matrices])
        self._flow_maps = np.vstack([
            m.solve_reduced(m.monitor[:, self._keep].T).T for m in self.matrices
        ])

    @classmethod
    def from_model(cls, case: GridCase, model: DispatchModel, **kwargs) -> "DispatchPipeline":
        if model.case_hash != case_hash(case):
            raise ModelMismatchError(
                "model was trained for a different case (hash mismatch)"
            )
        pipeline = cls(case, model.predict_generation, **kwargs)
        pipeline.slack_angle = model.slack_angle
        return pipeline

    @classmethod
    def from_knn(cls, case: GridCase, knn: KnnDispatchRegressor, **kwargs) -> "DispatchPipeline":
        """Baseline path: KNN predicts non-slack generations, slack balances."""
        slack = case.slack_gen_index
        others = [g.index for g in case.generators if g.index != slack]

        def predict(p_d_mw: np.ndarray) -> np.ndarray:
            labels = knn.predict(p_d_mw[None, :])[0]
            p_g = np.empty(case.n_gen)
            p_g[others] = labels
            p_g[slack] = float(np.sum(p_d_mw)) - float(np.sum(labels))
            return p_g

        return cls(case, predict, **kwargs)

    def run(self, p_d_mw: np.ndarray) -> DispatchResult:
        p_d = as_load_vector(p_d_mw, self.case.n_bus, non_negative=True)

        t0 = time.perf_counter()
        p_g_pred = self.predict_fn(p_d)
        t1 = time.perf_counter()

        theta, feasible = self._reconstruct_and_screen(p_g_pred, p_d)
        # The detailed report is only materialized when something violated.
        report = (
            scopf.FeasibilityReport(violations=(), tol=self.tol)
            if feasible
            else self._check(p_g_pred, theta, p_d)
        )
        t2 = time.perf_counter()

        p_g_final = p_g_pred
        projected = False
        t_projection = 0.0
        if not report.feasible and self.project:
            t3 = time.perf_counter()
            p_g_final, _ = project_l1(
                self.case, self.cont, p_g_pred, p_d,
                self.matrices, self._problem, self.solver_options,
            )
            theta = reconstruct_angles(
                self.case, self.matrices, p_g_final, p_d, self.slack_angle
            )
            final_report = self._check(p_g_final, theta, p_d)
            if not final_report.feasible:
                raise ProjectionFailedError(
                    f"projected dispatch still violates {len(final_report.violations)} "
                    f"constraints (max {final_report.max_violation:.3e})"
                )
            projected = True
            t_projection = time.perf_counter() - t3

        return DispatchResult(
            p_g_pred=p_g_pred,
            theta=theta,
            feasible_before_projection=report.feasible,
            violations=report,
            p_g_final=p_g_final,
            projected=projected,
            objective=scopf.evaluate_cost(self.case, p_g_final),
            timings=StageTimings(
                predict=t1 - t0, reconstruct_check=t2 - t1, projection=t_projection
            ),
        )

    def _reconstruct_and_screen(self, p_g: np.ndarray, p_d: np.ndarray) -> tuple[np.ndarray, bool]:
        """Angles for all contingencies plus a vectorized limits screen."""
        injection = -p_d / self._base
        injection[self._gen_buses] += p_g / self._base  # one generator per bus
        u = injection[self._keep]

        n_red = self._keep.size
        theta_red = (self._angle_maps @ u).reshape(len(self.matrices), n_red)
        theta = np.full((len(self.matrices), self.case.n_bus), self.slack_angle)
        theta[:, self._keep] += theta_red

        p_g_pu = p_g / self._base
        gen_ok = bool(
            np.all((self._p_min_pu - p_g_pu) / self._gen_scale <= self.tol)
            and np.all((p_g_pu - self._p_max_pu) / self._gen_scale <= self.tol)
        )
        flows = self._flow_maps @ u
        return theta, gen_ok and bool(np.all(np.abs(flows) - 1.0 <= self.tol))

    def _check(self, p_g: np.ndarray, theta: np.ndarray, p_d: np.ndarray) -> scopf.FeasibilityReport:
        # Balance holds exactly by reconstruction; skip re-verifying it per call.
        dispatch = scopf.Dispatch(p_g=p_g, theta=theta, objective=0.0)
        return scopf.check_feasibility(
            self.case, self.cont, dispatch, self.tol, self.matrices, check_balance=False
        )


def infer(
    model: DispatchModel,
    case: GridCase,
    cont: ContingencySet,
    p_d_mw: np.ndarray,
    matrices: list[ContingencyMatrices] | None = None,
    **kwargs,
) -> DispatchResult:
    """One-shot inference; build a DispatchPipeline for repeated loads."""
    pipeline = DispatchPipeline.from_model(case, model, cont=cont, matrices=matrices, **kwargs)
    return pipeline.run(p_d_mw)


def knn_predict(
    knn: KnnDispatchRegressor,
    case: GridCase,
    cont: ContingencySet,
    p_d_mw: np.ndarray,
    matrices: list[ContingencyMatrices] | None = None,
    **kwargs,
) -> DispatchResult:
    """One-shot KNN-baseline inference with the same reconstruct/check/project path."""
    pipeline = DispatchPipeline.from_knn(case, knn, cont=cont, matrices=matrices, **kwargs)
    return pipeline.run(p_d_mw)
