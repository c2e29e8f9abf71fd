"""
Command: Evaluation
Overall and per-subproblem L1 of a checkpoint on one dataset file.
"""

from commands import CommandResult
from trainer import evaluate, write_eval_csv


COMMAND_DEFINITIONS = [
    {
        "name": "eval",
        "description": "Evaluate a checkpoint on a .rpn file; optionally write subproblem,l1 rows to a CSV.",
        "parameters": {
            "ckpt": {"type": "string", "description": "Checkpoint path (e.g. RUN/best.ddrc).", "required": True},
            "data": {"type": "string", "description": "Dataset file (e.g. DATA/test.rpn).", "required": True},
            "out": {"type": "string", "description": "CSV output path (e.g. RUN/eval_test.csv)."},
            "batch": {"type": "integer", "description": "Evaluation batch size (defaults to the run's)."},
        },
    },
]


def eval_command(ckpt: str, data: str, out: str = "", batch: int = None) -> CommandResult:
    report = evaluate(ckpt, data, batch_size=batch)
    if out:
        write_eval_csv(report, out)
    lines = [f"model: {report.model_id} (epoch {report.epoch})", f"n: {report.n}",
             f"overall L1: {report.overall_l1:.6f}"]
    lines += [f"  subproblem {k + 1}: {v:.6f}" for k, v in enumerate(report.per_subproblem_l1)]
    return CommandResult(success=True, stdout="\n".join(lines), stderr="", return_code=0, file_path=out)


COMMAND_MAP = {
    "eval": eval_command,
}
