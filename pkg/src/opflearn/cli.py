"""Command-line surface: validate, gendata, train, bench, infer, capacity.

Every command is deterministic given --seed and identical inputs, except for
wall-clock timing fields. A --config file (TOML or JSON) can supply defaults
for any flag, keyed by subcommand. Exit codes: 0 success, 2 input error
(parse/validation/hash mismatch), 3 runtime failure.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import analysis, bench, scopf
from .cases import CaseError, GridCase, apply_overlay, case_hash, load_case, load_overlay
from .dataset import (
    Dataset,
    SamplerConfig,
    build_dataset,
    load_dataset,
    save_dataset,
)
from .ipm import SolverOptions
from .mlp import DispatchModel, TrainingConfig, TrainingDivergedError, train_model
from .network import build_all_matrices, enumerate_contingencies
from .pipeline import (
    DispatchPipeline,
    InfeasibleLoadError,
    KnnDispatchRegressor,
    ModelMismatchError,
    ProjectionFailedError,
)

EXIT_INPUT_ERROR = 2
EXIT_RUNTIME_ERROR = 3

_INPUT_ERRORS = (CaseError, ModelMismatchError, ValueError, OSError, json.JSONDecodeError)
_RUNTIME_ERRORS = (
    InfeasibleLoadError,
    ProjectionFailedError,
    TrainingDivergedError,
    np.linalg.LinAlgError,
)


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(fn):
    """Map exception classes onto the documented exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _RUNTIME_ERRORS as exc:
            _fail(EXIT_RUNTIME_ERROR, str(exc))
        except _INPUT_ERRORS as exc:
            _fail(EXIT_INPUT_ERROR, str(exc))

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _load_config(path: str) -> dict:
    text = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text.decode("utf-8"))
    return json.loads(text)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="TOML/JSON file with per-subcommand flag defaults.")
@click.pass_context
def main(ctx, config_path):
    """Learned security-constrained DC-OPF toolkit."""
    if config_path:
        try:
            ctx.default_map = _load_config(config_path)
        except Exception as exc:
            _fail(EXIT_INPUT_ERROR, f"bad config {config_path}: {exc}")


def _read_case(case_path: str, overlay_path: str | None) -> GridCase:
    case = load_case(case_path)
    if overlay_path:
        case = apply_overlay(case, load_overlay(overlay_path))
    return case


@main.command()
@click.argument("case_path", type=click.Path(exists=True))
@click.option("--overlay", "overlay_path", type=click.Path(exists=True), default=None)
@_guard
def validate(case_path, overlay_path):
    """Parse and validate a case file; print its dimensions."""
    case = _read_case(case_path, overlay_path)
    cont = enumerate_contingencies(case)
    click.echo(f"buses               {case.n_bus}")
    click.echo(f"generators          {case.n_gen}")
    click.echo(f"load buses          {case.load_bus_count()}")
    click.echo(f"branches            {case.n_branch}")
    click.echo(f"contingency cases   {cont.n_cases}  (intact network plus outages)")
    click.echo(f"single-line outages {cont.n_cases - 1}")
    click.echo(f"skipped bridges     {len(cont.skipped)}")
    for branch_id, reason in cont.skipped:
        click.echo(f"  branch {branch_id}: {reason}")
    click.echo(f"case hash           {case_hash(case)}")


@main.command()
@click.argument("case_path", type=click.Path(exists=True))
@click.option("--samples", type=int, required=True, help="Total sample count.")
@click.option("--range", "band", nargs=2, type=float, default=(0.9, 1.1),
              show_default=True, help="Load band as fractions of the default load.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--train-fraction", type=float, default=10.0 / 11.0,
              help="Fraction of samples in the training split (default 10:1).")
@click.option("--tolerance", type=float, default=1e-8, show_default=True)
@click.option("--overlay", "overlay_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_guard
def gendata(case_path, samples, band, seed, train_fraction, tolerance, overlay_path, out_path):
    """Sample loads, label them with the oracle, and write a dataset file."""
    case = _read_case(case_path, overlay_path)
    if overlay_path:
        overlay = load_overlay(overlay_path)
        if overlay.sampler_range is not None and band == (0.9, 1.1):
            band = overlay.sampler_range
    cont = enumerate_contingencies(case)
    cfg = SamplerConfig(n_samples=samples, range_low=band[0], range_high=band[1], seed=seed)
    t0 = time.perf_counter()
    ds = build_dataset(case, cont, cfg, train_fraction,
                       solver_options=SolverOptions(tolerance=tolerance))
    save_dataset(ds, out_path)
    click.echo(
        f"wrote {ds.n_samples} samples ({ds.n_train} train / "
        f"{ds.n_samples - ds.n_train} test, {ds.dropped} dropped) "
        f"to {out_path} in {time.perf_counter() - t0:.1f}s"
    )


def _parse_arch(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(part) for part in text.split("/"))
    except ValueError:
        raise ValueError(f"bad --arch {text!r}; expected widths like 32/16/8")
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError(f"bad --arch {text!r}; widths must be positive")
    return sizes


def _check_dataset_case(ds: Dataset, case: GridCase):
    if ds.case_hash != case_hash(case):
        raise ModelMismatchError("dataset was generated for a different case (hash mismatch)")


@main.command()
@click.argument("dataset_path", type=click.Path(exists=True))
@click.option("--case", "case_path", type=click.Path(exists=True), required=True)
@click.option("--arch", default="32/16/8", show_default=True,
              help="Hidden-layer widths, e.g. 32/16/8.")
@click.option("--epochs", type=int, default=300, show_default=True)
@click.option("--batch", type=int, default=64, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--momentum", type=float, default=0.9, show_default=True)
@click.option("--w1", type=float, default=1.0, show_default=True)
@click.option("--w2", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--overlay", "overlay_path", type=click.Path(exists=True), default=None,
              help="Apply the same overlay the dataset was generated with.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--log", "log_path", type=click.Path(), default=None,
              help="Training-loss CSV (default: <out>.log.csv).")
@_guard
def train(dataset_path, case_path, arch, epochs, batch, lr, momentum, w1, w2, seed,
          overlay_path, out_path, log_path):
    """Train a dispatch model on a dataset's training split."""
    case = _read_case(case_path, overlay_path)
    ds = load_dataset(dataset_path)
    _check_dataset_case(ds, case)
    cont = enumerate_contingencies(case)
    cfg = TrainingConfig(w1=w1, w2=w2, epochs=epochs, batch_size=batch,
                         learning_rate=lr, momentum=momentum, seed=seed)
    t0 = time.perf_counter()
    model, history = train_model(case, cont, ds, _parse_arch(arch), cfg)
    model.save(out_path)
    log_path = log_path or out_path + ".log.csv"
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,loss_prediction,loss_penalty,loss_total\n")
        for epoch, (total, l_pg, l_pen) in enumerate(history):
            fh.write(f"{epoch},{l_pg!r},{l_pen!r},{total!r}\n")
    final = history[-1] if history else (float("nan"),) * 3
    click.echo(
        f"trained {'/'.join(str(s) for s in model.layer_sizes[1:-1])} model "
        f"in {time.perf_counter() - t0:.1f}s; final losses "
        f"total={final[0]:.3e} prediction={final[1]:.3e} penalty={final[2]:.3e}"
    )
    click.echo(f"model -> {out_path}")
    click.echo(f"log   -> {log_path}")


def _parse_baseline(text: str) -> int:
    if not text.startswith("knn:"):
        raise ValueError(f"unknown baseline {text!r}; expected knn:<K>")
    try:
        k = int(text.split(":", 1)[1])
    except ValueError:
        raise ValueError(f"bad baseline {text!r}; expected knn:<K>")
    if k < 1:
        raise ValueError("baseline K must be at least 1")
    return k


def _echo_aggregates(label: str, agg: bench.BenchAggregates):
    click.echo(
        f"{label}: n={agg.n_instances} feasibility={agg.feasibility_rate_pct:.1f}% "
        f"mean_loss={agg.mean_loss_pct:.4f}% max_loss={agg.max_loss_pct:.4f}% "
        f"speedup=x{agg.mean_speedup:.1f} "
        f"t_model={agg.mean_t_model * 1e3:.3f}ms t_oracle={agg.mean_t_oracle * 1e3:.3f}ms"
    )


@main.command(name="bench")
@click.argument("case_path", type=click.Path(exists=True))
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--data", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--split", type=click.Choice(["test", "train", "all"]), default="test",
              show_default=True, help="Dataset split supplying the evaluation loads.")
@click.option("--baseline", default=None, help="Also run a baseline, e.g. knn:50.")
@click.option("--no-projection", is_flag=True,
              help="Report raw-prediction feasibility; never project.")
@click.option("--tolerance", type=float, default=scopf.FEASIBILITY_TOL, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Reserved for parity.")
@click.option("--overlay", "overlay_path", type=click.Path(exists=True), default=None,
              help="Apply the same overlay the dataset was generated with.")
@click.option("--out", "out_prefix", type=click.Path(), required=True,
              help="Writes <out>.json and <out>.csv (plus _knn variants).")
@_guard
def bench_cmd(case_path, model_path, dataset_path, split, baseline, no_projection,
              tolerance, seed, overlay_path, out_prefix):
    """Benchmark a model (and optional KNN baseline) against the oracle."""
    case = _read_case(case_path, overlay_path)
    model = DispatchModel.load(model_path)
    ds = load_dataset(dataset_path)
    _check_dataset_case(ds, case)
    cont = enumerate_contingencies(case)
    matrices = build_all_matrices(case, cont)
    loads = ds.loads(split)
    if loads.size == 0:
        raise ValueError(f"dataset split {split!r} is empty")

    pipeline = DispatchPipeline.from_model(
        case, model, cont=cont, matrices=matrices,
        tol=tolerance, project=not no_projection,
    )
    report = bench.run_bench(case, cont, pipeline, loads, matrices)
    Path(out_prefix + ".json").write_text(bench.report_to_json(report), encoding="utf-8")
    Path(out_prefix + ".csv").write_text(bench.report_to_csv(report), encoding="utf-8")
    _echo_aggregates("model", report.aggregates)

    if baseline:
        k = _parse_baseline(baseline)
        slack = case.slack_gen_index
        others = [g.index for g in case.generators if g.index != slack]
        knn = KnnDispatchRegressor(n_neighbors=k).fit(
            ds.loads("train"), ds.generations("train")[:, others]
        )
        knn_pipeline = DispatchPipeline.from_knn(
            case, knn, cont=cont, matrices=matrices,
            tol=tolerance, project=not no_projection,
        )
        knn_report = bench.run_bench(case, cont, knn_pipeline, loads, matrices)
        Path(out_prefix + "_knn.json").write_text(
            bench.report_to_json(knn_report), encoding="utf-8"
        )
        Path(out_prefix + "_knn.csv").write_text(
            bench.report_to_csv(knn_report), encoding="utf-8"
        )
        _echo_aggregates(f"knn-{k}", knn_report.aggregates)


@main.command()
@click.argument("case_path", type=click.Path(exists=True))
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--loads", "loads_path", type=click.Path(exists=True), required=True,
              help='JSON-lines input; each record {"p_d": [MW per bus]}.')
@click.option("--no-projection", is_flag=True)
@click.option("--overlay", "overlay_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_guard
def infer(case_path, model_path, loads_path, no_projection, overlay_path, out_path):
    """Run inference on a batch of load records (JSON lines in and out)."""
    case = _read_case(case_path, overlay_path)
    model = DispatchModel.load(model_path)
    pipeline = DispatchPipeline.from_model(case, model, project=not no_projection)
    n = 0
    with open(loads_path, "r", encoding="utf-8") as src, \
            open(out_path, "w", encoding="utf-8", newline="\n") as dst:
        for line in src:
            if not line.strip():
                continue
            record = json.loads(line)
            result = pipeline.run(np.array(record["p_d"], dtype=float))
            dst.write(json.dumps(result.to_dict(), sort_keys=True) + "\n")
            n += 1
    click.echo(f"wrote {n} dispatch records to {out_path}")


@main.command()
@click.option("--lipschitz", type=float, default=None)
@click.option("--diameter", type=float, default=None)
@click.option("--epsilon", type=float, required=True)
@click.option("--max-depth", type=int, default=6, show_default=True)
@click.option("--from-dataset", "dataset_path", type=click.Path(exists=True), default=None,
              help="Estimate the Lipschitz constant and domain diameter from a dataset.")
@click.option("--pair-budget", type=int, default=1_000_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@_guard
def capacity(lipschitz, diameter, epsilon, max_depth, dataset_path, pair_budget, seed, as_json):
    """Minimal network sizes meeting the worst-case approximation condition."""
    if dataset_path:
        ds = load_dataset(dataset_path)
        loads = ds.loads()
        if loads.shape[0] < 2:
            raise ValueError("dataset has fewer than two samples")
        lipschitz = analysis.estimate_lipschitz(loads, ds.alphas(), pair_budget, seed)
        diameter = analysis.box_diameter(loads.min(axis=0), loads.max(axis=0))
        if lipschitz <= 0:
            raise ValueError("estimated Lipschitz constant is zero; mapping looks constant")
    if lipschitz is None or diameter is None:
        raise ValueError("provide --lipschitz and --diameter, or --from-dataset")

    rows = analysis.min_capacity(lipschitz, diameter, epsilon, max_depth)
    table = [
        {
            "depth": depth,
            "min_width": width,
            "worst_case_bound": analysis.worst_case_bound(lipschitz, diameter, width, depth),
        }
        for depth, width in rows
    ]
    if as_json:
        click.echo(json.dumps(
            {"lipschitz": lipschitz, "diameter": diameter, "epsilon": epsilon, "table": table},
            sort_keys=True, indent=2,
        ))
        return
    click.echo(f"lipschitz {lipschitz:.6g}  diameter {diameter:.6g}  epsilon {epsilon:.6g}")
    click.echo("depth  min_width  worst_case_bound")
    for row in table:
        click.echo(f"{row['depth']:>5}  {row['min_width']:>9}  {row['worst_case_bound']:.6g}")


if __name__ == "__main__":
    main()
