"""
DDReason DDRstack Model
LSTM controller + one binary cell per operator + an explicit activation stack.

Per token:
  NUM: out = embed(token)
  OP:  arg2 = pop, arg1 = pop, out = cells[op](concat(arg1, arg2))
then out, state = lstm_step(out, state); push out. After every OP step the
projection of out is that subproblem's prediction.

The binary cell is a single fully connected layer with no nonlinearity.
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Union

import numpy as np

from autodiff import Tensor, apply
from errors import ContractError, StackUnderflowError
from nn import (
    NUM_CELLS,
    EmbeddingTable,
    LinearLayer,
    LSTMCellParams,
    broadcast_rows,
    ddrstack_param_spec,
    embed,
    init_params,
    linear_forward,
    lstm_step,
    subproblem_loss,
)
from rpn import Expression, make_batch


MODEL_KIND = "ddrstack"


@dataclass
class DDRStackParams:
    hidden: int
    num_embedding: EmbeddingTable
    cells: List[LinearLayer]
    lstm: LSTMCellParams
    projection: LinearLayer
    h0: Tensor
    c0: Tensor

    def __post_init__(self):
        if len(self.cells) != NUM_CELLS:
            raise ContractError(f"DDRstack needs exactly {NUM_CELLS} cells, got {len(self.cells)}")

    def named_parameters(self) -> Dict[str, Tensor]:
        named = {"num_embedding.E": self.num_embedding.E}
        for op, cell in enumerate(self.cells):
            named[f"cells.{op}.W"] = cell.W
            named[f"cells.{op}.b"] = cell.b
        named.update({
            "lstm.W_ih": self.lstm.W_ih,
            "lstm.W_hh": self.lstm.W_hh,
            "lstm.b": self.lstm.b,
            "projection.W": self.projection.W,
            "projection.b": self.projection.b,
            "initial.h0": self.h0,
            "initial.c0": self.c0,
        })
        return named

    @classmethod
    def from_named(cls, tensors: Mapping[str, object], hidden: int, layers: int = 1) -> "DDRStackParams":
        t = {k: v if isinstance(v, Tensor) else Tensor(v, name=k) for k, v in tensors.items()}
        try:
            return cls(
                hidden=hidden,
                num_embedding=EmbeddingTable(t["num_embedding.E"]),
                cells=[LinearLayer(t[f"cells.{op}.W"], t[f"cells.{op}.b"]) for op in range(NUM_CELLS)],
                lstm=LSTMCellParams(t["lstm.W_ih"], t["lstm.W_hh"], t["lstm.b"]),
                projection=LinearLayer(t["projection.W"], t["projection.b"]),
                h0=t["initial.h0"],
                c0=t["initial.c0"],
            )
        except KeyError as e:
            raise ContractError(f"DDRstack parameters missing tensor {e}") from None


def init_ddrstack(seed: int, hidden: int = 32, layers: int = 1) -> DDRStackParams:
    return DDRStackParams.from_named(init_params(seed, ddrstack_param_spec(hidden)), hidden)


# ── Activation stack ────────────────────────────────────────────────────────

class ActivationStack:
    """Hard (non-differentiable) stack of activations; records its depth after every push."""

    def __init__(self):
        self.entries: List[Tensor] = []
        self.trace: List[int] = []

    def push(self, value: Tensor):
        self.entries.append(value)
        self.trace.append(len(self.entries))

    def pop(self) -> Tensor:
        if not self.entries:
            raise StackUnderflowError("pop on empty activation stack")
        return self.entries.pop()

    @property
    def depth(self) -> int:
        return len(self.entries)


def expected_depth_trace(n: int) -> List[int]:
    return list(range(1, n + 2)) + list(range(n, 0, -1))


# ── Forward / loss ──────────────────────────────────────────────────────────

def _apply_cell(cells: Sequence[LinearLayer], arg1: Tensor, arg2: Tensor, ops: np.ndarray) -> Tensor:
    x = apply("concat", [arg1, arg2], axis=1)
    present = np.unique(ops)
    if present.size == 1:
        return linear_forward(cells[int(present[0])], x)
    # Rows use different operators: run each present cell, keep its rows by mask.
    hidden = arg1.shape[1]
    total = None
    for op in present:
        mask = Tensor(np.repeat((ops == op).astype(np.float64)[:, None], hidden, axis=1))
        term = apply("mul", [linear_forward(cells[int(op)], x), mask])
        total = term if total is None else apply("add", [total, term])
    return total


def forward(params: DDRStackParams, batch: Union[Expression, Sequence[Expression]]) -> Tensor:
    """Predictions of shape [B, n], one row per expression (B = 1 for a single Expression)."""
    expressions = [batch] if isinstance(batch, Expression) else list(batch)
    arrays = make_batch(expressions)
    n, size = arrays.n, arrays.size

    state = (broadcast_rows(params.h0, size), broadcast_rows(params.c0, size))
    stack = ActivationStack()
    predictions = []
    for position in range(2 * n + 1):
        if position <= n:
            out = embed(params.num_embedding, arrays.nums[:, position])
        else:
            arg2 = stack.pop()
            arg1 = stack.pop()
            out = _apply_cell(params.cells, arg1, arg2, arrays.ops[:, position - n - 1])
        out, state = lstm_step(params.lstm, out, state)
        stack.push(out)
        if position > n:
            predictions.append(linear_forward(params.projection, out))

    if stack.trace != expected_depth_trace(n):
        raise ContractError(f"stack depth trace {stack.trace} != {expected_depth_trace(n)}")
    return apply("concat", predictions, axis=1)


loss = subproblem_loss
