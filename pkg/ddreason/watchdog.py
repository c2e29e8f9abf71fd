"""
DDReason Watchdog
Guards the training loop against non-finite losses.
"""

import math
from typing import Callable, Optional, Sequence

import numpy as np

from errors import NumericAbort
from logger import log


class Watchdog:
    """Checks each batch loss; on a non-finite value, finds the first offending
    expression in the batch and aborts the run."""

    def __init__(self, per_row_loss: Optional[Callable[[Sequence[int]], np.ndarray]] = None):
        self.per_row_loss = per_row_loss

    def check(self, loss_value: float, epoch: int, batch: int, indices: Sequence[int]):
        if math.isfinite(loss_value):
            return
        index = self.locate(indices)
        log.critical(
            f"Non-finite loss {loss_value!r} at epoch {epoch}, batch {batch}, expression {index}. Aborting."
        )
        raise NumericAbort(epoch, batch, index, loss_value)

    def locate(self, indices: Sequence[int]) -> int:
        """Dataset index of the first expression whose own loss is non-finite."""
        if not indices:
            return -1
        if self.per_row_loss is None:
            return int(indices[0])
        try:
            row_losses = np.asarray(self.per_row_loss(indices), dtype=np.float64)
        except Exception as e:
            log.error(f"Could not isolate non-finite row: {e}")
            return int(indices[0])
        bad = np.flatnonzero(~np.isfinite(row_losses))
        return int(indices[int(bad[0])]) if bad.size else int(indices[0])
