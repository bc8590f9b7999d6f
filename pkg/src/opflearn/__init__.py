"""Learned security-constrained DC optimal power flow.

A convex-QP interior-point solver provides ground-truth dispatches, a small
feed-forward network learns the load-to-generation mapping, phase angles are
reconstructed exactly from the linearized power-flow equations, and an
L1-projection restores feasibility when a prediction violates limits.
"""

from .analysis import (
    estimate_lipschitz,
    max_segments,
    min_capacity,
    op_count,
    worst_case_bound,
)
from .cases import (
    CaseError,
    CaseSyntaxError,
    CaseValidationError,
    DisconnectedNetworkError,
    GridCase,
    Overlay,
    apply_overlay,
    case_hash,
    load_case,
    parse_case,
    serialize_case,
)
from .dataset import (
    Dataset,
    LoadNormalizer,
    Sample,
    SamplerConfig,
    build_dataset,
    load_dataset,
    sample_loads,
    save_dataset,
)
from .ipm import QpSolution, SolverOptions, solve_lp, solve_qp
from .mlp import (
    DispatchModel,
    MlpDispatchRegressor,
    MlpParameters,
    PenaltyContext,
    TrainingConfig,
    train_model,
)
from .network import ContingencySet, build_all_matrices, build_matrices, enumerate_contingencies
from .pipeline import (
    DispatchPipeline,
    DispatchResult,
    InfeasibleLoadError,
    KnnDispatchRegressor,
    infer,
    knn_predict,
    project_l1,
    reconstruct_angles,
)
from .scopf import Dispatch, ScopfProblem, assemble, check_feasibility, evaluate_cost

__version__ = "0.1.0"

__all__ = [
    "CaseError",
    "CaseSyntaxError",
    "CaseValidationError",
    "ContingencySet",
    "Dataset",
    "DisconnectedNetworkError",
    "Dispatch",
    "DispatchModel",
    "DispatchPipeline",
    "DispatchResult",
    "GridCase",
    "InfeasibleLoadError",
    "KnnDispatchRegressor",
    "LoadNormalizer",
    "MlpDispatchRegressor",
    "MlpParameters",
    "Overlay",
    "PenaltyContext",
    "QpSolution",
    "Sample",
    "SamplerConfig",
    "ScopfProblem",
    "SolverOptions",
    "TrainingConfig",
    "apply_overlay",
    "assemble",
    "build_all_matrices",
    "build_dataset",
    "build_matrices",
    "case_hash",
    "check_feasibility",
    "enumerate_contingencies",
    "estimate_lipschitz",
    "evaluate_cost",
    "infer",
    "knn_predict",
    "load_case",
    "load_dataset",
    "max_segments",
    "min_capacity",
    "op_count",
    "parse_case",
    "project_l1",
    "reconstruct_angles",
    "sample_loads",
    "save_dataset",
    "serialize_case",
    "solve_lp",
    "solve_qp",
    "train_model",
    "worst_case_bound",
]
