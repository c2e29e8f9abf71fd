"""
DDReason Baseline Model
Stacked LSTM over the flat 14-token stream (NUM and OP share one table),
with a projection at each of the last n timesteps. Same supervision and
output shape as the DDRstack model, no activation stack.
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Union

from autodiff import Tensor, apply
from errors import ContractError
from nn import (
    TOKEN_VOCAB,
    EmbeddingTable,
    LinearLayer,
    LSTMCellParams,
    baseline_param_spec,
    broadcast_rows,
    embed,
    init_params,
    linear_forward,
    lstm_step,
    subproblem_loss,
)
from rpn import Expression, make_batch

MODEL_KIND = "baseline"


@dataclass
class BaselineParams:
    hidden: int
    layers: int
    token_embedding: EmbeddingTable
    lstm: List[LSTMCellParams]
    projection: LinearLayer
    initial: List[tuple]  # one learned (h0, c0) per layer

    def __post_init__(self):
        if self.token_embedding.vocab != TOKEN_VOCAB:
            raise ContractError(f"baseline vocabulary must be {TOKEN_VOCAB}, got {self.token_embedding.vocab}")
        if len(self.lstm) != self.layers or len(self.initial) != self.layers:
            raise ContractError(f"baseline expects {self.layers} LSTM layers and initial states")

    def named_parameters(self) -> Dict[str, Tensor]:
        named = {"token_embedding.E": self.token_embedding.E}
        for layer, cell in enumerate(self.lstm):
            named[f"lstm.{layer}.W_ih"] = cell.W_ih
            named[f"lstm.{layer}.W_hh"] = cell.W_hh
            named[f"lstm.{layer}.b"] = cell.b
        named["projection.W"] = self.projection.W
        named["projection.b"] = self.projection.b
        for layer, (h0, c0) in enumerate(self.initial):
            named[f"initial.{layer}.h0"] = h0
            named[f"initial.{layer}.c0"] = c0
        return named

    @classmethod
    def from_named(cls, tensors: Mapping[str, object], hidden: int, layers: int = 1) -> "BaselineParams":
        t = {k: v if isinstance(v, Tensor) else Tensor(v, name=k) for k, v in tensors.items()}
        try:
            return cls(
                hidden=hidden,
                layers=layers,
                token_embedding=EmbeddingTable(t["token_embedding.E"]),
                lstm=[
                    LSTMCellParams(t[f"lstm.{l}.W_ih"], t[f"lstm.{l}.W_hh"], t[f"lstm.{l}.b"])
                    for l in range(layers)
                ],
                projection=LinearLayer(t["projection.W"], t["projection.b"]),
                initial=[(t[f"initial.{l}.h0"], t[f"initial.{l}.c0"]) for l in range(layers)],
            )
        except KeyError as e:
            raise ContractError(f"baseline parameters missing tensor {e}") from None


def init_baseline(seed: int, hidden: int = 32, layers: int = 1) -> BaselineParams:
    return BaselineParams.from_named(init_params(seed, baseline_param_spec(hidden, layers)), hidden, layers)


def forward(params: BaselineParams, batch: Union[Expression, Sequence[Expression]]) -> Tensor:
    """Predictions of shape [B, n] from the last n timesteps of the top layer."""
    expressions = [batch] if isinstance(batch, Expression) else list(batch)
    arrays = make_batch(expressions)
    n, size = arrays.n, arrays.size

    states = [(broadcast_rows(h0, size), broadcast_rows(c0, size)) for h0, c0 in params.initial]
    predictions = []
    for position in range(2 * n + 1):
        out = embed(params.token_embedding, arrays.vocab[:, position])
        for layer, cell in enumerate(params.lstm):
            out, states[layer] = lstm_step(cell, out, states[layer])
        if position > n:
            predictions.append(linear_forward(params.projection, out))
    return apply("concat", predictions, axis=1)


loss = subproblem_loss
