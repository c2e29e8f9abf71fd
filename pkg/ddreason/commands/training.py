"""
Command: Training
Train a model into a run directory; print parameter counts.
"""

import math

from commands import CommandResult
from config import CONFIG
from nn import spec_parameter_count
from trainer import TrainConfig, get_model, train as run_training


COMMAND_DEFINITIONS = [
    {
        "name": "train",
        "description": "Train a DDRstack or baseline model; writes metrics.csv, best.ddrc, last.ddrc.",
        "parameters": {
            "data": {"type": "string", "description": "Dataset directory with train.rpn and val.rpn.", "required": True},
            "out": {"type": "string", "description": "Run directory.", "required": True},
            "model": {"type": "string", "description": "ddrstack or baseline.", "default": "ddrstack"},
            "hidden": {"type": "integer", "description": "Hidden size.", "default": CONFIG.HIDDEN},
            "layers": {"type": "integer", "description": "Baseline LSTM layers.", "default": CONFIG.BASELINE_LAYERS},
            "lr": {"type": "number", "description": "Adam learning rate.", "default": CONFIG.LR},
            "epochs": {"type": "integer", "description": "Last epoch to train.", "default": CONFIG.EPOCHS},
            "batch": {"type": "integer", "description": "Batch size.", "default": CONFIG.BATCH_SIZE},
            "seed": {"type": "integer", "description": "Initialization and shuffle seed.", "default": CONFIG.SEED},
            "clip": {"type": "number", "description": "Global gradient-norm clip (0 = off).", "default": CONFIG.GRAD_CLIP},
            "train_limit": {"type": "integer", "description": "Use only the first K training expressions."},
            "resume": {"type": "string", "description": "Checkpoint to resume from (usually RUN/last.ddrc)."},
            "eval_batch": {"type": "integer", "description": "Validation batch size.", "default": CONFIG.EVAL_BATCH_SIZE},
            "eval_every": {"type": "integer", "description": "Epochs between validation passes.", "default": CONFIG.EVAL_EVERY},
        },
    },
    {
        "name": "params",
        "description": "Print the parameter count of a model configuration.",
        "parameters": {
            "model": {"type": "string", "description": "ddrstack or baseline.", "default": "ddrstack"},
            "hidden": {"type": "integer", "description": "Hidden size.", "default": CONFIG.HIDDEN},
            "layers": {"type": "integer", "description": "Baseline LSTM layers.", "default": CONFIG.BASELINE_LAYERS},
        },
    },
]


def train(data: str, out: str, **options) -> CommandResult:
    result = run_training(TrainConfig(data=data, out=out, **options))
    stdout = (
        f"epochs run: {result.epochs_run}\n"
        f"best val L1: {result.best_val_l1:.6f} (epoch {result.best_epoch})\n"
        f"best checkpoint: {result.best_checkpoint}"
    )
    return CommandResult(success=True, stdout=stdout, stderr="", return_code=0, file_path=result.best_checkpoint)


def params(model: str = "ddrstack", hidden: int = CONFIG.HIDDEN, layers: int = CONFIG.BASELINE_LAYERS) -> CommandResult:
    TrainConfig(model=model, hidden=hidden, layers=layers).validate()
    spec = get_model(model).param_spec(hidden, layers)
    counted = spec_parameter_count(spec)
    state = sum(math.prod(s.shape) for s in spec if not s.counted)
    return CommandResult(
        success=True,
        stdout=f"{model} h={hidden} layers={layers}: {counted} parameters (+{state} learned initial state)",
        stderr="",
        return_code=0,
    )


COMMAND_MAP = {
    "train": train,
    "params": params,
}
