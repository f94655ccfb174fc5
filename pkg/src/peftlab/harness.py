"""Experiment grid driver.

Runs method x rank x seed cells, each fully self-contained: the task is
derived from (master_seed, seed) so every method sees the same task at
the same seed, and tuner initialization is derived from
(master_seed, cell_index) so cells never share random state.  Results
are therefore independent of worker count and collection order.

The CSV is byte-deterministic; wall-clock numbers are real in the
returned records but written as 0 in the CSV and JSON so reruns
byte-match (timings go to stderr in the CLI).
"""

import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import task_layer_dims
from .counting import backbone_count, count_params, permille
from .engine import (
    Layer,
    Model,
    TrainConfig,
    accuracy,
    build_mlp,
    forward,
    mse_loss,
    train,
)
from .errors import DivergenceError, ShapeError
from .methods import FULL_FT, IMPLIED_REGULARIZER, make_state
from .regularizers import RegularizerSpec, mpc_n_wrap
from .tasks import gen_recovery_task, gen_toy_classification

CSV_COLUMNS = ("method", "rank", "seed", "params", "permille", "final_metric", "wallclock_ms")

PRETRAIN_STEPS = 400
PRETRAIN_LR = 1e-2
PRETRAIN_BATCH = 256


@dataclass
class CellResult:
    method: str
    rank: int
    seed: int
    params: int
    permille: float
    final_metric: float  # nan when the cell failed
    wall_ms: int
    error: str = ""


@dataclass
class ExperimentReport:
    config: object
    rows: list
    higher_is_better: bool

    @property
    def failures(self):
        return [row for row in self.rows if row.error]


def _regularizer_for(config, method):
    kind = config.mpc
    if kind in ("none", "n"):
        kind = IMPLIED_REGULARIZER.get(method, "none")
    return RegularizerSpec(kind=kind, weight=config.lam)


def _attach(method, layer, rank, rng, config):
    state = make_state(
        method,
        layer.weight,
        rank=rank,
        rng=rng,
        scale=config.scale,
        frozen_bias=layer.bias,
    )
    if config.mpc == "n" and method == "lora":
        state = mpc_n_wrap(state)
    layer.tuner = state


def _run_recovery_cell(config, method, rank, seed, cell_index):
    task = gen_recovery_task(
        (config.master_seed, seed),
        n=config.task_n,
        m=config.task_m,
        planted_rank=config.task_planted_rank,
        noise_std=config.task_noise_std,
    )
    layer = Layer(weight=task.w, bias=np.zeros(config.task_m))
    _attach(method, layer, rank, np.random.default_rng((config.master_seed, cell_index)), config)
    model = Model([layer])
    cfg = TrainConfig(
        steps=config.steps,
        learning_rate=config.lr,
        optimizer=config.optimizer,
        batch_size=config.batch_size,
        regularizer=_regularizer_for(config, method),
        seed=(config.master_seed, cell_index, 1),
    )
    trace = train(model, task.probe_inputs, task.targets, cfg, loss="mse")
    # final metric is the full-probe loss of the trained parameters, not
    # whatever minibatch happened to come last
    pred, _ = forward(model, task.probe_inputs)
    return mse_loss(pred, task.targets)[0], trace.wall_clock_ms


def pretrain_classifier(master_seed, seed, data):
    """Full-tune a fresh MLP on task A, then bake the weights in."""
    model = build_mlp((2, 256, 256, 2), seed=(master_seed, seed, 1))
    for layer in model.layers:
        layer.tuner = make_state(FULL_FT, layer.weight, frozen_bias=layer.bias)
    cfg = TrainConfig(
        steps=PRETRAIN_STEPS,
        learning_rate=PRETRAIN_LR,
        batch_size=PRETRAIN_BATCH,
        seed=(master_seed, seed, 2),
    )
    train(model, data.x_train_a, data.y_train_a, cfg, loss="cross_entropy")
    for layer in model.layers:
        layer.weight = layer.tuner.weight
        layer.bias = layer.tuner.bias
        layer.tuner = None
    return model


def _run_classification_cell(config, method, rank, seed, cell_index):
    data = gen_toy_classification((config.master_seed, seed))
    model = pretrain_classifier(config.master_seed, seed, data)
    rng = np.random.default_rng((config.master_seed, cell_index))
    for layer in model.layers:
        _attach(method, layer, rank, rng, config)
    cfg = TrainConfig(
        steps=config.steps,
        learning_rate=config.lr,
        optimizer=config.optimizer,
        batch_size=config.batch_size,
        regularizer=_regularizer_for(config, method),
        seed=(config.master_seed, cell_index, 1),
    )
    trace = train(model, data.x_train_b, data.y_train_b, cfg, loss="cross_entropy")
    logits, _ = forward(model, data.x_test_b)
    return accuracy(logits, data.y_test_b), trace.wall_clock_ms


def run_cell(config, method, rank, seed, cell_index):
    dims = task_layer_dims(config)
    params = count_params(method, dims, rank=rank)
    pm = permille(params, backbone_count(dims))
    runner = (
        _run_recovery_cell
        if config.task_kind == "recovery"
        else _run_classification_cell
    )
    try:
        metric, wall_ms = runner(config, method, rank, seed, cell_index)
        error = ""
    except DivergenceError as err:
        metric, wall_ms, error = float("nan"), 0, str(err)
    return CellResult(
        method=method,
        rank=rank,
        seed=seed,
        params=params,
        permille=pm,
        final_metric=metric,
        wall_ms=wall_ms,
        error=error,
    )


def run_experiment(config, threads=1):
    """Execute the full grid; row order is the grid order regardless of threads."""
    cells = [
        (method, rank, seed)
        for method in config.methods
        for rank in config.ranks
        for seed in config.seeds
    ]
    if threads <= 1:
        rows = [run_cell(config, *cell, index) for index, cell in enumerate(cells)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(run_cell, config, *cell, index)
                for index, cell in enumerate(cells)
            ]
            rows = [future.result() for future in futures]
    return ExperimentReport(
        config=config,
        rows=rows,
        higher_is_better=config.task_kind == "classification",
    )


# ------------------------------------------------------------------ reports


def _metric_repr(value):
    return repr(float(value))


def write_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in report.rows:
            writer.writerow(
                [
                    row.method,
                    row.rank,
                    row.seed,
                    row.params,
                    _metric_repr(row.permille),
                    _metric_repr(row.final_metric),
                    0,  # placeholder: real timings would break byte determinism
                ]
            )


def aggregate(rows):
    """Per (method, rank): mean and standard error over clean seeds."""
    groups = {}
    for row in rows:
        if row.error:
            continue
        groups.setdefault((row.method, row.rank), []).append(row.final_metric)
    out = {}
    for key, values in sorted(groups.items()):
        arr = np.asarray(values)
        stderr = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size >= 2 else None
        out[key] = {"mean": float(arr.mean()), "stderr": stderr, "seeds": arr.size}
    return out


def write_json(report, path):
    from .config import config_as_dict

    payload = {
        "config": config_as_dict(report.config),
        "rows": [
            {
                "method": row.method,
                "rank": row.rank,
                "seed": row.seed,
                "params": row.params,
                "permille": row.permille,
                "final_metric": None if row.error else row.final_metric,
                "wallclock_ms": 0,
                "error": row.error,
            }
            for row in report.rows
        ],
        "aggregates": [
            {"method": method, "rank": rank, **stats}
            for (method, rank), stats in aggregate(report.rows).items()
        ],
        "failures": [
            {"method": row.method, "rank": row.rank, "seed": row.seed, "error": row.error}
            for row in report.failures
        ],
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def read_csv_rows(path):
    """Rows back from a results CSV, typed like CellResult."""
    rows = []
    with open(path, "r", newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ShapeError(f"unexpected CSV columns {reader.fieldnames}")
        for record in reader:
            metric = float(record["final_metric"])
            rows.append(
                CellResult(
                    method=record["method"],
                    rank=int(record["rank"]),
                    seed=int(record["seed"]),
                    params=int(record["params"]),
                    permille=float(record["permille"]),
                    final_metric=metric,
                    wall_ms=int(record["wallclock_ms"]),
                    error="" if np.isfinite(metric) else "non-finite metric",
                )
            )
    return rows


def win_fraction(metrics_a, metrics_b, higher_is_better=False):
    """Fraction of paired seeds where A beats B; ties count half."""
    a = np.asarray(metrics_a, dtype=float)
    b = np.asarray(metrics_b, dtype=float)
    if a.shape != b.shape or a.size == 0:
        raise ShapeError("win fraction needs equal nonempty metric lists")
    if higher_is_better:
        a, b = -a, -b
    wins = (a < b).sum() + 0.5 * (a == b).sum()
    return float(wins / a.size)


def compare_methods(rows, higher_is_better=False):
    """Per rank: methods ranked by mean metric plus pairwise win fractions.

    Every method must cover the same clean (rank, seed) cells, otherwise
    the per-seed pairing would be meaningless.
    """
    clean = [row for row in rows if not row.error]
    ranks = sorted({row.rank for row in clean})
    methods = sorted({row.method for row in clean})
    if len(methods) < 1:
        raise ShapeError("no clean rows to compare")
    out = {}
    for rank in ranks:
        per_method = {}
        for method in methods:
            cells = {
                row.seed: row.final_metric
                for row in clean
                if row.rank == rank and row.method == method
            }
            per_method[method] = cells
        seed_sets = {frozenset(cells) for cells in per_method.values()}
        if len(seed_sets) != 1:
            raise ShapeError(f"mismatched cells at rank {rank}")
        seeds = sorted(seed_sets.pop())
        ranking = sorted(
            (
                (float(np.mean([per_method[m][s] for s in seeds])), m)
                for m in methods
            ),
            reverse=higher_is_better,
        )
        wins = []
        for i, (_, better) in enumerate(ranking):
            for _, worse in ranking[i + 1 :]:
                frac = win_fraction(
                    [per_method[better][s] for s in seeds],
                    [per_method[worse][s] for s in seeds],
                    higher_is_better,
                )
                wins.append({"pair": (better, worse), "fraction": frac})
        out[rank] = {
            "ranking": [
                {"method": m, "mean": mean, "seeds": len(seeds)} for mean, m in ranking
            ],
            "wins": wins,
        }
    return out


def format_comparison(comparison, higher_is_better=False):
    direction = "accuracy" if higher_is_better else "final loss"
    lines = []
    for rank, block in sorted(comparison.items()):
        lines.append(f"rank {rank} (mean {direction}, best first):")
        for entry in block["ranking"]:
            lines.append(
                f"  {entry['method']:18s} {entry['mean']:.6g}  ({entry['seeds']} seeds)"
            )
        for win in block["wins"]:
            a, b = win["pair"]
            lines.append(f"  win {a} over {b}: {win['fraction']:.2f}")
    return "\n".join(lines)


def log_timings(report, stream=None):
    stream = stream if stream is not None else sys.stderr
    total = sum(row.wall_ms for row in report.rows)
    print(f"[timing] {len(report.rows)} cells, {total} ms total", file=stream)
    for row in report.rows:
        status = row.error or "ok"
        print(
            f"[timing] {row.method} r={row.rank} seed={row.seed}: {row.wall_ms} ms ({status})",
            file=stream,
        )
