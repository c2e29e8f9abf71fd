"""
DDReason Configuration
Defaults for dataset generation, model shapes, training and logging.
"""

import os
from dataclasses import dataclass


@dataclass
class Config:
    """Central configuration for DDReason."""

    # Logging
    LOG_FILE: str = None  # Will be set in __post_init__
    LOG_LEVEL: str = None
    LOG_MAX_BYTES: int = 5 * 1024 * 1024
    LOG_BACKUPS: int = 5
    PROGRESS_BAR: bool = True

    # RPN dataset
    RPN_N: int = 10
    SPLIT_COUNTS: tuple = (100_000, 5_000, 20_000)  # train, val, test
    GEN_N: int = 30
    GEN_COUNT: int = 20_000
    ANSWER_BOUND: float = 100.0
    GEN_BLOCK_SIZE: int = 1_000
    MAX_RESAMPLES: int = 1_000_000
    GEN_WORKERS: int = 1

    # Models
    HIDDEN: int = 32
    BASELINE_LAYERS: int = 1

    # Optimizer (Adam)
    LR: float = 1e-3
    BETA1: float = 0.9
    BETA2: float = 0.999
    EPS: float = 1e-8
    GRAD_CLIP: float = 0.0  # 0 = off

    # Training
    SEED: int = 42
    EPOCHS: int = 70
    BATCH_SIZE: int = 32
    EVAL_BATCH_SIZE: int = 500
    EVAL_EVERY: int = 1  # epochs between validation passes

    # Checkpoints
    CHECKPOINT_MAGIC: bytes = b"DDRC"
    CHECKPOINT_VERSION: int = 1

    def __post_init__(self):
        if self.LOG_FILE is None:
            self.LOG_FILE = os.environ.get(
                "DDR_LOG_FILE",
                os.path.join(os.path.dirname(__file__), "ddreason.log"),
            )
        if self.LOG_LEVEL is None:
            self.LOG_LEVEL = os.environ.get("DDR_LOG_LEVEL", "INFO").upper()


CONFIG = Config()
