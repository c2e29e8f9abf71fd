"""
DDReason Errors
Exception hierarchy shared by every module. Each error carries the process
exit code the CLI reports for it.
"""

from typing import Optional


class DDRError(Exception):
    """Base class for all DDReason failures."""

    exit_code: int = 1


# ── Configuration / data / numeric aborts (CLI exit codes 2-4) ─────────────

class ConfigError(DDRError):
    exit_code = 2


class DataError(DDRError):
    exit_code = 3


class ParseError(DataError):
    """A dataset or scene file line could not be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None, path: str = ""):
        self.line_number = line_number
        self.path = path
        where = f"{path}:{line_number}: " if line_number is not None else ""
        super().__init__(f"{where}{message}")


class MalformedExpressionError(DataError):
    """Stack underflow or leftover values while evaluating RPN tokens."""


class GeneratorStuckError(DataError):
    """Rejection sampling exceeded its resample cap."""


class NumericAbort(DDRError):
    """Training produced a non-finite loss."""

    exit_code = 4

    def __init__(self, epoch: int, batch: int, index: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.index = index
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}, expression index {index}"
        )


# ── Autodiff / layer contracts ──────────────────────────────────────────────

class DimensionError(DDRError, ValueError):
    """Input shapes do not conform to a primitive's signature."""


class ContractError(DDRError, ValueError):
    """A documented precondition was violated."""


class VocabularyMismatchError(DataError, ContractError):
    """Checkpoint, model and dataset disagree on the token vocabulary. Exits 3."""


class NumericError(DDRError, ArithmeticError):
    """A function evaluated to a non-finite value."""


class EmbeddingIndexError(DDRError, IndexError):
    """Row lookup outside the embedding table."""


class DivisionByZeroSignal(ArithmeticError):
    """Exact-zero denominator during RPN evaluation (generator rejection signal)."""


# ── Program execution ───────────────────────────────────────────────────────

class ProgramError(DDRError):
    exit_code = 3


class CardinalityError(ProgramError):
    """unique applied to a set that is not a singleton."""


class ProgramTypeError(ProgramError):
    """A token received a value of the wrong tag."""


class StructureError(ProgramError):
    """fork / binary tokens are unbalanced."""


class StackUnderflowError(ContractError):
    """pop on an empty activation stack."""
