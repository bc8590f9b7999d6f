"""Benchmark harness: model pipeline vs. the interior-point oracle.

For every test load the harness times the full model pipeline (prediction,
reconstruction and checking, plus projection when invoked) and an oracle
solve, then aggregates feasibility, optimality loss, and speedup. The speedup
is the mean of per-instance time ratios — never the ratio of mean times; the
two differ and only the former is reported.

Per-instance rows and aggregates serialize to CSV and JSON with a stable,
documented column set. All fields except the timing-derived ones (t_model,
t_oracle, ratio) are deterministic for fixed seeds.
"""

from __future__ import annotations

import io
import json
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import scopf
from .cases import GridCase
from .dataset import rhs_for_loads
from .ipm import STATUS_OPTIMAL, SolverOptions, solve_qp
from .network import ContingencyMatrices, ContingencySet, build_all_matrices
from .pipeline import DispatchPipeline

logger = logging.getLogger(__name__)

CSV_COLUMNS = (
    "index",
    "feasible_before_projection",
    "projected",
    "cost_model",
    "cost_oracle",
    "optimality_loss_pct",
    "t_model",
    "t_oracle",
    "ratio",
)
#: Columns whose values depend on wall-clock measurements.
TIMING_COLUMNS = ("t_model", "t_oracle", "ratio")


@dataclass(frozen=True)
class InstanceRecord:
    index: int
    feasible_before_projection: bool
    projected: bool
    cost_model: float
    cost_oracle: float
    optimality_loss_pct: float
    t_model: float
    t_oracle: float
    ratio: float


@dataclass(frozen=True)
class BenchAggregates:
    n_instances: int
    feasibility_rate_pct: float
    mean_loss_pct: float
    max_loss_pct: float
    mean_speedup: float  # average of per-instance ratios
    mean_t_model: float
    mean_t_oracle: float
    oracle_failures: int


@dataclass(frozen=True)
class BenchReport:
    records: tuple[InstanceRecord, ...]
    aggregates: BenchAggregates


def aggregate(records: list[InstanceRecord], oracle_failures: int = 0) -> BenchAggregates:
    if not records:
        return BenchAggregates(0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, oracle_failures)
    losses = np.array([r.optimality_loss_pct for r in records])
    return BenchAggregates(
        n_instances=len(records),
        feasibility_rate_pct=100.0
        * sum(r.feasible_before_projection for r in records) / len(records),
        mean_loss_pct=float(losses.mean()),
        max_loss_pct=float(losses.max()),
        mean_speedup=float(np.mean([r.ratio for r in records])),
        mean_t_model=float(np.mean([r.t_model for r in records])),
        mean_t_oracle=float(np.mean([r.t_oracle for r in records])),
        oracle_failures=oracle_failures,
    )


def run_bench(
    case: GridCase,
    cont: ContingencySet,
    pipeline: DispatchPipeline,
    loads_mw: np.ndarray,
    matrices: list[ContingencyMatrices] | None = None,
    solver_options: SolverOptions | None = None,
) -> BenchReport:
    """Evaluate the pipeline against the oracle on each load vector.

    Loads whose oracle solve fails are skipped (counted in the aggregates);
    they carry no reference cost to compare against.
    """
    if matrices is None:
        matrices = build_all_matrices(case, cont)
    problem = scopf.assemble(case, cont, matrices)
    opts = solver_options or SolverOptions()

    records: list[InstanceRecord] = []
    oracle_failures = 0
    for i, p_d in enumerate(np.atleast_2d(loads_mw)):
        b_eq = rhs_for_loads(problem, case, p_d)
        t0 = time.perf_counter()
        sol = solve_qp(
            problem.quadratic, problem.linear, problem.a_eq, b_eq,
            problem.a_ineq, problem.b_ineq, opts,
        )
        t_oracle = time.perf_counter() - t0
        if sol.status != STATUS_OPTIMAL:
            oracle_failures += 1
            logger.warning("skipping instance %d: oracle status %s", i, sol.status)
            continue
        cost_oracle = problem.objective_value(sol.x)

        result = pipeline.run(p_d)
        t_model = result.timings.total
        loss_pct = 100.0 * (result.objective - cost_oracle) / max(abs(cost_oracle), 1e-12)
        records.append(
            InstanceRecord(
                index=i,
                feasible_before_projection=result.feasible_before_projection,
                projected=result.projected,
                cost_model=result.objective,
                cost_oracle=cost_oracle,
                optimality_loss_pct=loss_pct,
                t_model=t_model,
                t_oracle=t_oracle,
                ratio=t_oracle / t_model,
            )
        )
    return BenchReport(records=tuple(records), aggregates=aggregate(records, oracle_failures))


def report_to_dict(report: BenchReport) -> dict:
    return {
        "aggregates": {
            "n_instances": report.aggregates.n_instances,
            "feasibility_rate_pct": report.aggregates.feasibility_rate_pct,
            "mean_loss_pct": report.aggregates.mean_loss_pct,
            "max_loss_pct": report.aggregates.max_loss_pct,
            "mean_speedup": report.aggregates.mean_speedup,
            "mean_t_model": report.aggregates.mean_t_model,
            "mean_t_oracle": report.aggregates.mean_t_oracle,
            "oracle_failures": report.aggregates.oracle_failures,
        },
        "records": [
            {col: getattr(r, col) for col in CSV_COLUMNS} for r in report.records
        ],
    }


def report_to_json(report: BenchReport) -> str:
    return json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n"


def report_to_csv(report: BenchReport) -> str:
    out = io.StringIO()
    out.write(",".join(CSV_COLUMNS) + "\n")
    for r in report.records:
        values = []
        for col in CSV_COLUMNS:
            v = getattr(r, col)
            values.append(str(int(v)) if isinstance(v, bool) else repr(v) if isinstance(v, float) else str(v))
        out.write(",".join(values) + "\n")
    return out.getvalue()
