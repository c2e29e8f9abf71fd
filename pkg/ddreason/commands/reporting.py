"""
Command: Reporting
Training and per-subproblem curve CSVs from one or more run directories.
"""

from commands import CommandResult
from trainer import report as build_report


COMMAND_DEFINITIONS = [
    {
        "name": "report",
        "description": "Write curves_train.csv, curves_subproblem.csv, parameter_counts.csv (and answer_stats.csv).",
        "parameters": {
            "runs": {"type": "string", "description": "Comma-separated run directories.", "required": True},
            "out": {"type": "string", "description": "Report output directory.", "required": True},
            "data": {"type": "string", "description": "Dataset directory for answer statistics."},
        },
    },
]


def report(runs: str, out: str, data: str = None) -> CommandResult:
    run_dirs = [r.strip() for r in runs.split(",") if r.strip()]
    written = build_report(run_dirs, out, data)
    stdout = "\n".join(f"{name}: {path}" for name, path in written.items())
    return CommandResult(success=True, stdout=stdout, stderr="", return_code=0, file_path=out)


COMMAND_MAP = {
    "report": report,
}
