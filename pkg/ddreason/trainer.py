"""
DDReason Trainer
Training loop, evaluation (overall and per-subproblem L1) and curve reports
for the DDRstack model and the LSTM baseline.

Run directory layout:
    config.json   the TrainConfig of the run
    metrics.csv   epoch, model, train_l1, val_l1 (append-only)
    best.ddrc     checkpoint with the lowest validation L1 so far
    last.ddrc     checkpoint after the latest epoch (resume point)
"""

import json
import math
import os
import shutil
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

import baseline
import ddrstack
from autodiff import Tape, Tensor, backward
from config import CONFIG
from errors import ConfigError, ContractError, DataError, VocabularyMismatchError
from logger import log
from metrics import MetricLog, column, read_rows, write_table
from nn import (
    NUM_VOCAB,
    TOKEN_VOCAB,
    AdamState,
    adam_step,
    baseline_param_spec,
    clip_gradients,
    count_parameters,
    count_state_parameters,
    ddrstack_param_spec,
    load_checkpoint,
    save_checkpoint,
    spec_parameter_count,
    zero_grads,
)
from rpn import Expression, answer_statistics, group_by_n, read_dataset
from watchdog import Watchdog


# ── Model registry ──────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ModelKind:
    name: str
    init: Callable           # (seed, hidden, layers) -> params
    forward: Callable        # (params, expressions) -> Tensor [B, n]
    loss: Callable           # (predictions, answers) -> scalar Tensor
    from_named: Callable     # (tensors, hidden, layers) -> params
    param_spec: Callable     # (hidden, layers) -> List[ParamSpec]
    vocab: int               # rows of the input embedding table
    embedding: str           # tensor name of that table


MODELS: Dict[str, ModelKind] = {
    "ddrstack": ModelKind(
        name="ddrstack",
        init=ddrstack.init_ddrstack,
        forward=ddrstack.forward,
        loss=ddrstack.loss,
        from_named=ddrstack.DDRStackParams.from_named,
        param_spec=lambda hidden, layers=1: ddrstack_param_spec(hidden),
        vocab=NUM_VOCAB,
        embedding="num_embedding.E",
    ),
    "baseline": ModelKind(
        name="baseline",
        init=baseline.init_baseline,
        forward=baseline.forward,
        loss=baseline.loss,
        from_named=baseline.BaselineParams.from_named,
        param_spec=baseline_param_spec,
        vocab=TOKEN_VOCAB,
        embedding="token_embedding.E",
    ),
}


def get_model(name: str) -> ModelKind:
    if name not in MODELS:
        raise ConfigError(f"Unknown model kind: {name}. Available: {list(MODELS)}")
    return MODELS[name]


# ── Config ──────────────────────────────────────────────────────────────────

@dataclass
class TrainConfig:
    model: str = "ddrstack"
    hidden: int = CONFIG.HIDDEN
    layers: int = CONFIG.BASELINE_LAYERS
    lr: float = CONFIG.LR
    epochs: int = CONFIG.EPOCHS
    batch: int = CONFIG.BATCH_SIZE
    seed: int = CONFIG.SEED
    data: str = "data"
    out: str = "run"
    clip: float = CONFIG.GRAD_CLIP
    train_limit: Optional[int] = None
    resume: Optional[str] = None
    eval_batch: int = CONFIG.EVAL_BATCH_SIZE
    eval_every: int = CONFIG.EVAL_EVERY

    def validate(self) -> "TrainConfig":
        get_model(self.model)
        # lr = 0 freezes the weights
        if not self.lr >= 0 or not math.isfinite(self.lr):
            raise ConfigError(f"lr must be a finite value >= 0, got {self.lr}")
        checks = {
            "epochs": self.epochs >= 1,
            "hidden": self.hidden >= 1,
            "layers": self.layers >= 1,
            "batch": self.batch >= 1,
            "eval_batch": self.eval_batch >= 1,
            "eval_every": self.eval_every >= 1,
            "clip": self.clip >= 0,
            "train_limit": self.train_limit is None or self.train_limit >= 1,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise ConfigError(f"Invalid training config values: {', '.join(f'{b}={getattr(self, b)}' for b in bad)}")
        return self


# ── Evaluation ──────────────────────────────────────────────────────────────

@dataclass
class EvalReport:
    overall_l1: float
    per_subproblem_l1: List[float]
    n: int
    model_id: str = ""
    epoch: int = -1


def predict(kind: ModelKind, params, expressions: Sequence[Expression],
            batch_size: int = CONFIG.EVAL_BATCH_SIZE) -> List[np.ndarray]:
    """Predictions per expression (in input order), computed in same-n chunks."""
    out: List[Optional[np.ndarray]] = [None] * len(expressions)
    for positions in group_by_n(expressions).values():
        for start in range(0, len(positions), batch_size):
            chunk = positions[start:start + batch_size]
            with Tape():
                values = kind.forward(params, [expressions[i] for i in chunk]).numpy()
            for row, i in enumerate(chunk):
                out[i] = values[row]
    return out


def evaluate_predictor(predict_fn: Callable[[Sequence[Expression]], Sequence[Sequence[float]]],
                       expressions: Sequence[Expression], model_id: str = "", epoch: int = -1) -> EvalReport:
    """L1 report for any predictor mapping expressions to per-subproblem predictions."""
    if not expressions:
        raise DataError("Cannot evaluate on an empty dataset")
    n = expressions[0].n
    if any(e.n != n for e in expressions):
        raise DataError("Evaluation set mixes expressions of different n")
    predictions = np.asarray(predict_fn(expressions), dtype=np.float64)
    answers = np.array([e.answers for e in expressions], dtype=np.float64)
    if predictions.shape != answers.shape:
        raise ContractError(f"predictor returned {predictions.shape}, expected {answers.shape}")
    errors = np.abs(predictions - answers)
    return EvalReport(
        overall_l1=float(errors.mean(axis=1).mean()),
        per_subproblem_l1=[float(v) for v in errors.mean(axis=0)],
        n=n,
        model_id=model_id,
        epoch=epoch,
    )


def load_model(checkpoint_path: str):
    """(ModelKind, params, meta) from a DDRC checkpoint."""
    ckpt = load_checkpoint(checkpoint_path)
    meta = ckpt.meta
    try:
        kind = get_model(meta["model"])
        hidden, layers = int(meta["hidden"]), int(meta.get("layers", 1))
    except (KeyError, ValueError, ConfigError) as e:
        raise DataError(f"Checkpoint {checkpoint_path} has unusable metadata: {e}") from None
    tensors = {k: v for k, v in ckpt.tensors.items() if not k.startswith("adam.")}
    params = kind.from_named(tensors, hidden, layers)
    rows = params.named_parameters()[kind.embedding].shape[0]
    if rows != kind.vocab or meta.get("vocab", rows) != rows:
        raise VocabularyMismatchError(
            f"Checkpoint {checkpoint_path}: {kind.name} embedding has {rows} rows, "
            f"meta says {meta.get('vocab')}, expected {kind.vocab}"
        )
    return kind, params, meta


def _check_vocabulary(kind: ModelKind, expressions: Sequence[Expression], source: str):
    if kind.vocab == NUM_VOCAB:
        largest = max(i for e in expressions for i in e.num_indices)
    else:
        largest = max(t.vocab_index for e in expressions for t in e.tokens)
    if largest >= kind.vocab:
        raise VocabularyMismatchError(f"{source} uses token index {largest}, outside the {kind.vocab}-token model vocabulary")


def evaluate(checkpoint_path: str, dataset_path: str, batch_size: Optional[int] = None) -> EvalReport:
    kind, params, meta = load_model(checkpoint_path)
    expressions = read_dataset(dataset_path)
    if not expressions:
        raise DataError(f"Dataset {dataset_path} is empty")
    _check_vocabulary(kind, expressions, dataset_path)
    batch_size = batch_size or int(meta.get("eval_batch", CONFIG.EVAL_BATCH_SIZE))
    model_id = f"{kind.name}-h{meta['hidden']}" + (f"x{meta['layers']}" if kind.name == "baseline" else "")
    report = evaluate_predictor(
        lambda exprs: predict(kind, params, exprs, batch_size),
        expressions,
        model_id=model_id,
        epoch=int(meta.get("epoch", -1)),
    )
    log.info(f"Evaluated {checkpoint_path} on {dataset_path}: overall L1 {report.overall_l1:.4f} (n={report.n})")
    return report


def write_eval_csv(report: EvalReport, path: str) -> str:
    rows = [(k + 1, v) for k, v in enumerate(report.per_subproblem_l1)]
    rows.append(("overall", report.overall_l1))
    return write_table(path, ["subproblem", "l1"], rows)


# ── Training ────────────────────────────────────────────────────────────────

METRIC_FIELDS = ["epoch", "model", "train_l1", "val_l1"]


@dataclass
class TrainResult:
    out_dir: str
    epochs_run: int
    best_val_l1: float
    best_epoch: int
    last_checkpoint: str
    best_checkpoint: str
    history: List[dict] = field(default_factory=list)


def _load_split(data_dir: str, name: str) -> List[Expression]:
    path = os.path.join(data_dir, name)
    if not os.path.exists(path):
        raise DataError(f"Dataset split not found: {path}")
    expressions = read_dataset(path)
    if not expressions:
        raise DataError(f"Dataset split is empty: {path}")
    return expressions


def _epoch_batches(size: int, batch: int, seed: int, epoch: int,
                   expressions: Sequence[Expression]) -> List[List[int]]:
    order = np.random.default_rng([seed, epoch]).permutation(size)
    batches = []
    for start in range(0, size, batch):
        chunk = [int(i) for i in order[start:start + batch]]
        chunk_exprs = [expressions[i] for i in chunk]
        # A forward pass needs one n per batch.
        for positions in group_by_n(chunk_exprs).values():
            batches.append([chunk[p] for p in positions])
    return batches


def _checkpoint_meta(config: TrainConfig, kind: ModelKind, epoch: int, val_l1: float,
                     best_val_l1: float, best_epoch: int, opt: AdamState, params) -> dict:
    return {
        "model": kind.name,
        "hidden": config.hidden,
        "layers": config.layers if kind.name == "baseline" else 1,
        "vocab": kind.vocab,
        "epoch": epoch,
        "val_l1": val_l1,
        "best_val_l1": best_val_l1,
        "best_epoch": best_epoch,
        "adam_t": opt.t,
        "lr": config.lr,
        "seed": config.seed,
        "eval_batch": config.eval_batch,
        "parameters": count_parameters(params),
    }


def _checkpoint_tensors(params: Dict[str, Tensor], opt: AdamState) -> Dict[str, np.ndarray]:
    tensors = {name: p.data for name, p in params.items()}
    for name in params:
        if name in opt.m:
            tensors[f"adam.m.{name}"] = opt.m[name]
            tensors[f"adam.v.{name}"] = opt.v[name]
    return tensors


def _restore(path: str, kind: ModelKind, config: TrainConfig, named: Dict[str, Tensor], opt: AdamState) -> dict:
    ckpt = load_checkpoint(path)
    meta = ckpt.meta
    if meta.get("model") != kind.name or int(meta.get("hidden", -1)) != config.hidden:
        raise ConfigError(
            f"Cannot resume {config.model} h={config.hidden} from {path} "
            f"({meta.get('model')} h={meta.get('hidden')})"
        )
    for name, p in named.items():
        if name not in ckpt.tensors:
            raise DataError(f"Checkpoint {path} is missing tensor {name}")
        if ckpt.tensors[name].shape != p.shape:
            raise DataError(f"Checkpoint {path}: tensor {name} has shape {ckpt.tensors[name].shape}, expected {p.shape}")
        p.data[...] = ckpt.tensors[name]
        if f"adam.m.{name}" in ckpt.tensors:
            opt.m[name] = ckpt.tensors[f"adam.m.{name}"].copy()
            opt.v[name] = ckpt.tensors[f"adam.v.{name}"].copy()
    opt.t = int(meta.get("adam_t", 0))
    return meta


def train(config: TrainConfig) -> TrainResult:
    """Train one model; returns where the checkpoints and metrics went."""
    config.validate()
    kind = get_model(config.model)
    out = config.out
    os.makedirs(out, exist_ok=True)

    log.info(f"[1/4] Loading data from {config.data}...")
    train_set = _load_split(config.data, "train.rpn")
    if config.train_limit:
        train_set = train_set[: config.train_limit]
    val_set = _load_split(config.data, "val.rpn")
    _check_vocabulary(kind, train_set, "train.rpn")
    log.info(f"  {len(train_set)} training and {len(val_set)} validation expressions.")

    log.info(f"[2/4] Building {kind.name} (h={config.hidden}, layers={config.layers})...")
    params = kind.init(config.seed, config.hidden, config.layers)
    named = params.named_parameters()
    opt = AdamState(lr=config.lr)
    log.info(f"  {count_parameters(named)} parameters (+{count_state_parameters(named)} learned initial state).")

    start_epoch, best_val, best_epoch = 1, math.inf, 0
    metrics_path = os.path.join(out, "metrics.csv")
    if config.resume:
        meta = _restore(config.resume, kind, config, named, opt)
        start_epoch = int(meta["epoch"]) + 1
        best_val = float(meta.get("best_val_l1", math.inf))
        best_epoch = int(meta.get("best_epoch", 0))
        log.info(f"  Resumed from {config.resume} at epoch {meta['epoch']} (best val L1 {best_val:.4f}).")
    elif os.path.exists(metrics_path):
        os.remove(metrics_path)
    metrics = MetricLog(metrics_path, METRIC_FIELDS)
    if config.resume:
        metrics.truncate_after(start_epoch - 1)

    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as f:
        json.dump(asdict(config), f, indent=2, sort_keys=True)

    def row_losses(indices):
        values = []
        for i in indices:
            with Tape():
                expr = train_set[i]
                values.append(kind.loss(kind.forward(params, [expr]), [expr.answers]).item())
        return values

    watchdog = Watchdog(row_losses)
    last_path = os.path.join(out, "last.ddrc")
    best_path = os.path.join(out, "best.ddrc")
    history = []

    log.info(f"[3/4] Training epochs {start_epoch}..{config.epochs} (batch {config.batch}, lr {config.lr})...")
    for epoch in range(start_epoch, config.epochs + 1):
        started = time.time()
        total, seen = 0.0, 0
        batches = _epoch_batches(len(train_set), config.batch, config.seed, epoch, train_set)
        bar = tqdm(batches, desc=f"{kind.name} epoch {epoch}", unit="batch",
                   disable=not CONFIG.PROGRESS_BAR, leave=False)
        for b, indices in enumerate(bar):
            exprs = [train_set[i] for i in indices]
            with Tape():
                predictions = kind.forward(params, exprs)
                batch_loss = kind.loss(predictions, [e.answers for e in exprs])
                value = batch_loss.item()
                watchdog.check(value, epoch, b, indices)
                zero_grads(named)
                backward(batch_loss)
            if config.clip:
                clip_gradients(named, config.clip)
            adam_step(opt, named)
            total += value * len(indices)
            seen += len(indices)
            bar.set_postfix(l1=f"{total / seen:.4f}")
        train_l1 = total / seen

        val_l1 = math.nan
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            val_l1 = evaluate_predictor(
                lambda e: predict(kind, params, e, config.eval_batch), val_set, kind.name, epoch
            ).overall_l1
        metrics.append(epoch=epoch, model=kind.name, train_l1=train_l1, val_l1=val_l1)
        history.append({"epoch": epoch, "train_l1": train_l1, "val_l1": val_l1})

        improved = not math.isnan(val_l1) and val_l1 < best_val
        if improved:
            best_val, best_epoch = val_l1, epoch
        meta = _checkpoint_meta(config, kind, epoch, val_l1, best_val, best_epoch, opt, named)
        tensors = _checkpoint_tensors(named, opt)
        save_checkpoint(last_path, tensors, meta)
        if improved:
            save_checkpoint(best_path, tensors, meta)
        log.info(
            f"  Epoch {epoch}: train L1 {train_l1:.4f}, val L1 {val_l1:.4f}"
            f"{' (best)' if improved else ''} [{time.time() - started:.1f}s]"
        )

    if not os.path.exists(best_path) and os.path.exists(last_path):
        shutil.copyfile(last_path, best_path)
    log.info(f"[4/4] Done. Best val L1 {best_val:.4f} at epoch {best_epoch}; checkpoints in {out}.")
    return TrainResult(out, len(history), best_val, best_epoch, last_path, best_path, history)


# ── Reports ─────────────────────────────────────────────────────────────────

def smooth_curve(values: Sequence[float], window: int = 5) -> List[float]:
    """Moving average over full windows (length len(values) - window + 1)."""
    values = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ContractError(f"window must be >= 1, got {window}")
    if values.size < window:
        return []
    return [float(v) for v in np.convolve(values, np.ones(window) / window, mode="valid")]


def is_non_decreasing(values: Sequence[float], tolerance: float = 0.0) -> bool:
    return all(b >= a - tolerance for a, b in zip(values, values[1:]))


PARAMETER_COUNT_ROWS = [("ddrstack", 32, 1), ("baseline", 32, 1), ("baseline", 128, 1), ("baseline", 128, 2)]


def parameter_count_rows() -> List[tuple]:
    rows = []
    for model, hidden, layers in PARAMETER_COUNT_ROWS:
        spec = get_model(model).param_spec(hidden, layers)
        state = sum(int(np.prod(s.shape)) for s in spec if not s.counted)
        rows.append((model, hidden, layers, spec_parameter_count(spec), state))
    return rows


def _run_labels(runs: Sequence[str]) -> List[str]:
    """Basename per run; colliding basenames fall back to the path below the
    runs' common parent, and exact repeats get a #k suffix."""
    paths = [os.path.normpath(os.path.abspath(run)) for run in runs]
    labels = [os.path.basename(p) for p in paths]
    if len(set(labels)) != len(labels):
        common = os.path.commonpath(paths)
        parent = os.path.dirname(common) if common in paths else common
        labels = [
            os.path.relpath(p, parent).replace(os.sep, "/") if labels.count(label) > 1 else label
            for p, label in zip(paths, labels)
        ]
    seen: Dict[str, int] = {}
    unique = []
    for label in labels:
        seen[label] = seen.get(label, 0) + 1
        unique.append(label if seen[label] == 1 else f"{label}#{seen[label]}")
    return unique


def report(runs: Sequence[str], out: str, data: Optional[str] = None) -> Dict[str, str]:
    """Curve CSVs from run directories: one column group per run."""
    os.makedirs(out, exist_ok=True)
    written = {}

    train_columns, by_epoch = [], {}
    subproblem_columns, by_subproblem = [], {}
    for run, label in zip(runs, _run_labels(runs)):
        rows = read_rows(os.path.join(run, "metrics.csv"))
        if not rows and not os.path.isdir(run):
            log.warning(f"Run directory not found: {run}")
        train_columns += [f"{label}:train_l1", f"{label}:val_l1"]
        for row in rows:
            entry = by_epoch.setdefault(int(row["epoch"]), {})
            entry[f"{label}:train_l1"] = float(row["train_l1"])
            entry[f"{label}:val_l1"] = float(row["val_l1"])

        eval_files = sorted(f for f in os.listdir(run) if f.startswith("eval_") and f.endswith(".csv")) \
            if os.path.isdir(run) else []
        for filename in eval_files:
            name = f"{label}:{filename[len('eval_'):-len('.csv')]}"
            subproblem_columns.append(name)
            for row in read_rows(os.path.join(run, filename)):
                if row["subproblem"] != "overall":
                    by_subproblem.setdefault(int(row["subproblem"]), {})[name] = float(row["l1"])

    written["curves_train"] = write_table(
        os.path.join(out, "curves_train.csv"),
        ["epoch"] + train_columns,
        ([epoch] + [by_epoch[epoch].get(c) for c in train_columns] for epoch in sorted(by_epoch)),
    )
    written["curves_subproblem"] = write_table(
        os.path.join(out, "curves_subproblem.csv"),
        ["subproblem"] + subproblem_columns,
        ([k] + [by_subproblem[k].get(c) for c in subproblem_columns] for k in sorted(by_subproblem)),
    )
    written["parameter_counts"] = write_table(
        os.path.join(out, "parameter_counts.csv"),
        ["model", "hidden", "layers", "parameters", "state_parameters"],
        parameter_count_rows(),
    )

    if data:
        stats_rows = []
        for filename in sorted(f for f in os.listdir(data) if f.endswith(".rpn")):
            expressions = read_dataset(os.path.join(data, filename))
            stats = answer_statistics(expressions)
            skipped = answer_statistics(expressions, skip=3)
            stats_rows.append((filename, stats["count"], stats["mean"], stats["std"], skipped["std"]))
        written["answer_stats"] = write_table(
            os.path.join(out, "answer_stats.csv"),
            ["split", "count", "mean", "std", "std_skip3"],
            stats_rows,
        )

    for name, path in written.items():
        log.info(f"  Wrote {name} to {path}")
    return written


def curve_from_eval_csv(path: str) -> List[float]:
    """Per-subproblem L1 values of an eval CSV, in subproblem order."""
    rows = [r for r in read_rows(path) if r["subproblem"] != "overall"]
    return column(sorted(rows, key=lambda r: int(r["subproblem"])), "l1")
