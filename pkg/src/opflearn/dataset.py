"""Training-data generation: load sampling, oracle labeling, and normalization.

Loads are drawn per bus, independently and uniformly, inside a configured
fraction band around the default load. Each load vector is labeled by the
interior-point oracle; the optimal generations are converted to scaling
factors in [0, 1] over each generator's operating range (the slack generator
is recovered by power balance, so it carries no scaling factor). Input
normalization statistics are computed from the training split only.

The canonical on-disk form is JSON lines: one header record followed by one
record per sample. An ``.npz`` matrix blob is offered for bulk interchange but
the JSON-lines file is the format of record.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import scopf
from .cases import GridCase, case_hash
from .ipm import STATUS_OPTIMAL, SolverOptions, solve_qp
from .network import ContingencyMatrices, ContingencySet, build_all_matrices

logger = logging.getLogger(__name__)

DATASET_VERSION = 1
DEFAULT_TRAIN_FRACTION = 10.0 / 11.0  # 10:1 train/test split


@dataclass(frozen=True)
class SamplerConfig:
    """Uniform per-bus load sampling band, as fractions of the default load."""

    n_samples: int
    range_low: float = 0.9
    range_high: float = 1.1
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.range_low <= self.range_high:
            raise ValueError(
                f"need 0 <= range_low <= range_high, got [{self.range_low}, {self.range_high}]"
            )
        if self.n_samples < 0:
            raise ValueError(f"n_samples must be non-negative, got {self.n_samples}")


@dataclass(frozen=True)
class Sample:
    index: int
    p_d: np.ndarray  # (n_bus,) MW
    alpha: np.ndarray  # (n_gen - 1,) scaling factors of non-slack generators
    p_g: np.ndarray  # (n_gen,) optimal generations, MW
    objective: float  # oracle cost, $/hr


@dataclass
class Dataset:
    case_hash: str
    sampler: SamplerConfig
    samples: list[Sample]
    n_train: int
    dropped: int = 0  # loads whose oracle solve failed
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def train_samples(self) -> list[Sample]:
        return self.samples[: self.n_train]

    @property
    def test_samples(self) -> list[Sample]:
        return self.samples[self.n_train:]

    def loads(self, split: str = "all") -> np.ndarray:
        return np.array([s.p_d for s in self._split(split)])

    def alphas(self, split: str = "all") -> np.ndarray:
        return np.array([s.alpha for s in self._split(split)])

    def generations(self, split: str = "all") -> np.ndarray:
        return np.array([s.p_g for s in self._split(split)])

    def objectives(self, split: str = "all") -> np.ndarray:
        return np.array([s.objective for s in self._split(split)])

    def _split(self, split: str) -> list[Sample]:
        if split == "all":
            return self.samples
        if split == "train":
            return self.train_samples
        if split == "test":
            return self.test_samples
        raise ValueError(f"unknown split {split!r}")


class LoadNormalizer(BaseEstimator, TransformerMixin):
    """Per-coordinate standardization with population statistics.

    Coordinates with (near-)zero variance keep std 1 so the transform stays
    invertible; their output is a harmless constant.
    """

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)  # population convention (ddof=0)
        self.std_ = np.where(std > 1e-12, std, 1.0)
        return self

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean_) / self.std_

    def inverse_transform(self, X):
        return np.asarray(X, dtype=float) * self.std_ + self.mean_


def sample_loads(case: GridCase, cfg: SamplerConfig) -> np.ndarray:
    """Draw load vectors (MW), shape (n_samples, n_bus).

    Each sample uses an independent child seed derived from (master seed,
    sample index), so regeneration of any subset is order-independent.
    Zero-default-load buses stay at zero.
    """
    defaults = np.array(case.default_loads_mw())
    lo = np.minimum(cfg.range_low * defaults, cfg.range_high * defaults)
    hi = np.maximum(cfg.range_low * defaults, cfg.range_high * defaults)
    out = np.empty((cfg.n_samples, case.n_bus))
    for i in range(cfg.n_samples):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, i]))
        out[i] = rng.uniform(lo, hi)
    return out


def scaling_factors(case: GridCase, p_g_mw: np.ndarray) -> np.ndarray:
    """Invert the range parameterization: alpha for non-slack generators.

    A degenerate range (p_min == p_max) yields alpha 0; tiny solver drift past
    a bound is clipped into [0, 1].
    """
    slack = case.slack_gen_index
    alphas = []
    for g in case.generators:
        if g.index == slack:
            continue
        span = g.p_max_mw - g.p_min_mw
        a = (p_g_mw[g.index] - g.p_min_mw) / span if span > 0 else 0.0
        alphas.append(min(1.0, max(0.0, a)))
    return np.array(alphas)


def generation_from_factors(case: GridCase, alpha: np.ndarray, p_d_mw: np.ndarray) -> np.ndarray:
    """De-scale non-slack factors and recover slack generation by power balance."""
    slack = case.slack_gen_index
    p_g = np.zeros(case.n_gen)
    k = 0
    for g in case.generators:
        if g.index == slack:
            continue
        p_g[g.index] = alpha[k] * (g.p_max_mw - g.p_min_mw) + g.p_min_mw
        k += 1
    p_g[slack] = float(np.sum(p_d_mw)) - float(np.sum(p_g))
    return p_g


def label_loads(
    case: GridCase,
    cont: ContingencySet,
    loads_mw: np.ndarray,
    matrices: list[ContingencyMatrices] | None = None,
    problem: scopf.ScopfProblem | None = None,
    solver_options: SolverOptions | None = None,
) -> tuple[list[Sample], int]:
    """Solve the oracle for each load vector and build labeled samples.

    Loads whose solve does not reach "optimal" are dropped with a warning and
    counted (second return value); a failed sample never aborts the batch.
    Output order follows the input load order.
    """
    if matrices is None:
        matrices = build_all_matrices(case, cont)
    if problem is None:
        problem = scopf.assemble(case, cont, matrices)
    opts = solver_options or SolverOptions()

    samples: list[Sample] = []
    dropped = 0
    for i, p_d in enumerate(np.atleast_2d(loads_mw)):
        b_eq = rhs_for_loads(problem, case, p_d)
        sol = solve_qp(
            problem.quadratic, problem.linear, problem.a_eq, b_eq,
            problem.a_ineq, problem.b_ineq, opts,
        )
        if sol.status != STATUS_OPTIMAL:
            dropped += 1
            logger.warning("dropping sample %d: oracle status %s", i, sol.status)
            continue
        dispatch = scopf.decode_solution(case, problem, sol.x)
        samples.append(
            Sample(
                index=len(samples),
                p_d=np.asarray(p_d, dtype=float).copy(),
                alpha=scaling_factors(case, dispatch.p_g),
                p_g=dispatch.p_g,
                objective=dispatch.objective,
            )
        )
    return samples, dropped


def rhs_for_loads(problem: scopf.ScopfProblem, case: GridCase, p_d_mw: np.ndarray) -> np.ndarray:
    """Equality right-hand side for a different load vector (balance rows only)."""
    p_d = np.asarray(p_d_mw, dtype=float) / case.base_mva
    if p_d.shape != (case.n_bus,):
        raise ValueError(f"load vector must have length {case.n_bus}, got {p_d.shape}")
    layout = problem.layout
    b_eq = problem.b_eq.copy()
    block = layout.n_bus + 1  # balance rows plus the slack pin
    for c in range(layout.n_cases):
        b_eq[c * block: c * block + layout.n_bus] = -p_d
    return b_eq


def build_dataset(
    case: GridCase,
    cont: ContingencySet,
    cfg: SamplerConfig,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
    matrices: list[ContingencyMatrices] | None = None,
    solver_options: SolverOptions | None = None,
) -> Dataset:
    """Sample, label, split, and normalize in one step."""
    loads = sample_loads(case, cfg)
    samples, dropped = label_loads(case, cont, loads, matrices, None, solver_options)
    n_train = int(round(len(samples) * train_fraction))
    n_train = min(max(n_train, 0), len(samples))
    ds = Dataset(
        case_hash=case_hash(case), sampler=cfg, samples=samples,
        n_train=n_train, dropped=dropped,
    )
    return normalize(ds) if n_train else ds


def normalize(dataset: Dataset) -> Dataset:
    """Attach input normalization statistics computed on the training split."""
    if not dataset.train_samples:
        raise ValueError("cannot normalize: training split is empty")
    norm = LoadNormalizer().fit(dataset.loads("train"))
    dataset.norm_mean = norm.mean_
    dataset.norm_std = norm.std_
    return dataset


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def dataset_header(dataset: Dataset) -> dict:
    return {
        "kind": "header",
        "version": DATASET_VERSION,
        "case_hash": dataset.case_hash,
        "sampler": {
            "n_samples": dataset.sampler.n_samples,
            "range_low": dataset.sampler.range_low,
            "range_high": dataset.sampler.range_high,
            "seed": dataset.sampler.seed,
        },
        "n_samples": dataset.n_samples,
        "n_train": dataset.n_train,
        "dropped": dataset.dropped,
        "norm_mean": None if dataset.norm_mean is None else list(dataset.norm_mean),
        "norm_std": None if dataset.norm_std is None else list(dataset.norm_std),
    }


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write the canonical JSON-lines form (deterministic bytes)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps(dataset_header(dataset)) + "\n")
        for s in dataset.samples:
            fh.write(
                _dumps(
                    {
                        "kind": "sample",
                        "index": s.index,
                        "p_d": list(s.p_d),
                        "alpha": list(s.alpha),
                        "p_g": list(s.p_g),
                        "objective": s.objective,
                    }
                )
                + "\n"
            )


def load_dataset(path: str) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line:
            raise ValueError(f"{path}: empty dataset file")
        header = json.loads(header_line)
        if header.get("kind") != "header":
            raise ValueError(f"{path}: first record must be the header")
        if header.get("version") != DATASET_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {header.get('version')}")
        samples = []
        for line in fh:
            rec = json.loads(line)
            if rec.get("kind") != "sample":
                raise ValueError(f"{path}: unexpected record kind {rec.get('kind')!r}")
            samples.append(
                Sample(
                    index=int(rec["index"]),
                    p_d=np.array(rec["p_d"], dtype=float),
                    alpha=np.array(rec["alpha"], dtype=float),
                    p_g=np.array(rec["p_g"], dtype=float),
                    objective=float(rec["objective"]),
                )
            )
    sampler = SamplerConfig(
        n_samples=int(header["sampler"]["n_samples"]),
        range_low=float(header["sampler"]["range_low"]),
        range_high=float(header["sampler"]["range_high"]),
        seed=int(header["sampler"]["seed"]),
    )
    mean = header.get("norm_mean")
    std = header.get("norm_std")
    return Dataset(
        case_hash=header["case_hash"],
        sampler=sampler,
        samples=samples,
        n_train=int(header["n_train"]),
        dropped=int(header.get("dropped", 0)),
        norm_mean=None if mean is None else np.array(mean, dtype=float),
        norm_std=None if std is None else np.array(std, dtype=float),
    )


def save_dataset_npz(dataset: Dataset, path: str) -> None:
    """Binary matrix blob variant (bulk interchange; JSON lines stays canonical)."""
    np.savez(
        path,
        header=_dumps(dataset_header(dataset)),
        p_d=dataset.loads(),
        alpha=dataset.alphas(),
        p_g=dataset.generations(),
        objective=dataset.objectives(),
    )


def load_dataset_npz(path: str) -> Dataset:
    blob = np.load(path, allow_pickle=False)
    header = json.loads(str(blob["header"]))
    sampler = SamplerConfig(**header["sampler"])
    samples = [
        Sample(
            index=i,
            p_d=blob["p_d"][i],
            alpha=blob["alpha"][i],
            p_g=blob["p_g"][i],
            objective=float(blob["objective"][i]),
        )
        for i in range(header["n_samples"])
    ]
    mean = header.get("norm_mean")
    std = header.get("norm_std")
    return Dataset(
        case_hash=header["case_hash"], sampler=sampler, samples=samples,
        n_train=int(header["n_train"]), dropped=int(header.get("dropped", 0)),
        norm_mean=None if mean is None else np.array(mean, dtype=float),
        norm_std=None if std is None else np.array(std, dtype=float),
    )
