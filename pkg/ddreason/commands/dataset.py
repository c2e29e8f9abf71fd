"""
Command: Dataset
Generate the RPN train/val/test/generalization splits.
"""

from commands import CommandResult
from config import CONFIG
from errors import ConfigError
from logger import log
from rpn import DatasetSpec, write_dataset


COMMAND_DEFINITIONS = [
    {
        "name": "gen",
        "description": "Generate train.rpn, val.rpn, test.rpn and gen<N>.rpn into a directory.",
        "parameters": {
            "out_dir": {"type": "string", "description": "Output directory.", "required": True},
            "n": {"type": "integer", "description": "Operator count of train/val/test expressions.",
                  "default": CONFIG.RPN_N},
            "seed": {"type": "integer", "description": "64-bit dataset seed.", "default": CONFIG.SEED},
            "counts": {"type": "string", "description": "train,val,test counts (a fourth value sets the generalization count).",
                       "default": ",".join(str(c) for c in CONFIG.SPLIT_COUNTS)},
            "gen_n": {"type": "integer", "description": "Operator count of the generalization split.",
                      "default": CONFIG.GEN_N},
            "gen_count": {"type": "integer", "description": "Generalization split size.",
                          "default": CONFIG.GEN_COUNT},
            "bound": {"type": "number", "description": "Largest allowed |intermediate answer|.",
                      "default": CONFIG.ANSWER_BOUND},
            "workers": {"type": "integer", "description": "Generation processes (output is identical for any value).",
                        "default": CONFIG.GEN_WORKERS},
        },
    },
]


def parse_counts(counts: str, gen_count: int) -> tuple:
    try:
        values = [int(c) for c in str(counts).split(",") if c.strip()]
    except ValueError:
        raise ConfigError(f"--counts must be comma-separated integers, got {counts!r}") from None
    if len(values) == 3:
        values.append(gen_count)
    if len(values) != 4:
        raise ConfigError(f"--counts needs 3 or 4 values, got {len(values)}")
    return tuple(values)


def gen(out_dir: str, n: int = CONFIG.RPN_N, seed: int = CONFIG.SEED,
        counts: str = ",".join(str(c) for c in CONFIG.SPLIT_COUNTS), gen_n: int = CONFIG.GEN_N,
        gen_count: int = CONFIG.GEN_COUNT, bound: float = CONFIG.ANSWER_BOUND,
        workers: int = CONFIG.GEN_WORKERS) -> CommandResult:
    if bound <= 0:
        raise ConfigError(f"--bound must be positive, got {bound}")
    if workers < 1:
        raise ConfigError(f"--workers must be >= 1, got {workers}")
    spec = DatasetSpec(n=n, counts=parse_counts(counts, gen_count), seed=seed, answer_bound=bound, gen_n=gen_n)
    log.info(f"Generating RPN dataset (n={n}, gen_n={gen_n}, seed={seed}, counts={spec.counts})...")
    written = write_dataset(spec, out_dir, workers=workers)
    lines = [f"{name}\t{count}\tn={split_n}" for name, count, split_n in spec.splits]
    return CommandResult(success=True, stdout="\n".join(lines), stderr="", return_code=0, file_path=out_dir)


COMMAND_MAP = {
    "gen": gen,
}
