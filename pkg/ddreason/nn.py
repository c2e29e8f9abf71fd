"""
DDReason NN Kit
Linear / embedding / LSTM-cell layers and the Adam optimizer, built on autodiff.
Also owns parameter specs, seeded initialization, parameter counting and the
DDRC checkpoint file format.

LSTM gate order is fixed as (input, forget, cell, output) along the 4h axis of
W_ih, W_hh and b, so checkpoints stay portable.
"""

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from autodiff import Tensor, apply
from config import CONFIG
from errors import ContractError, DataError, DimensionError
from logger import log


# ── Layers ──────────────────────────────────────────────────────────────────

@dataclass
class LinearLayer:
    W: Tensor  # [out, in]
    b: Tensor  # [out]

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimensionError(f"LinearLayer: W {self.W.shape} and b {self.b.shape} disagree")


@dataclass
class EmbeddingTable:
    E: Tensor  # [vocab, dim]

    @property
    def vocab(self) -> int:
        return self.E.shape[0]


@dataclass
class LSTMCellParams:
    W_ih: Tensor  # [4h, in]
    W_hh: Tensor  # [4h, h]
    b: Tensor     # [4h]

    def __post_init__(self):
        h = self.hidden
        if self.W_ih.shape[0] != 4 * h or self.W_hh.shape != (4 * h, h) or self.b.shape != (4 * h,):
            raise DimensionError(
                f"LSTMCellParams: W_ih {self.W_ih.shape}, W_hh {self.W_hh.shape}, b {self.b.shape}"
            )

    @property
    def hidden(self) -> int:
        return self.W_hh.shape[1]


def _affine(W: Tensor, x: Tensor) -> Tensor:
    # [out, in] · [in] for one example, [B, in] · [out, in]^T for a batch
    if x.ndim == 1:
        return apply("matmul", [W, x])
    return apply("matmul", [x, W], trans_b=True)


def linear_forward(layer: LinearLayer, x: Tensor) -> Tensor:
    """W·x + b for x of shape [in] or [B, in]."""
    return apply("add", [_affine(layer.W, x), layer.b])


def embed(table: EmbeddingTable, token_index) -> Tensor:
    """Row lookup; token_index is an int or an integer vector (one row per batch entry)."""
    return apply("embedding_row", [table.E], index=token_index)


def lstm_step(params: LSTMCellParams, x: Tensor, state: Tuple[Tensor, Tensor]):
    """One LSTM step. Returns (out, (h', c')) with out = h'."""
    h, c = state
    hidden = params.hidden
    if h.shape != c.shape or h.shape[-1] != hidden:
        raise DimensionError(f"lstm_step: state shapes {h.shape}, {c.shape} for hidden {hidden}")
    gates = apply("add", [apply("add", [_affine(params.W_ih, x), _affine(params.W_hh, h)]), params.b])
    axis = gates.ndim - 1

    def gate(k: int) -> Tensor:
        return apply("slice", [gates], axis=axis, start=k * hidden, stop=(k + 1) * hidden)

    i = apply("sigmoid", [gate(0)])
    f = apply("sigmoid", [gate(1)])
    g = apply("tanh", [gate(2)])
    o = apply("sigmoid", [gate(3)])
    c_next = apply("add", [apply("mul", [f, c]), apply("mul", [i, g])])
    h_next = apply("mul", [o, apply("tanh", [c_next])])
    return h_next, (h_next, c_next)


def broadcast_rows(row: Tensor, batch: int) -> Tensor:
    """[h] -> [batch, h] on the tape (gradient sums back over the batch)."""
    return apply("add", [Tensor(np.zeros((batch,) + row.shape)), row])


def mean_l1(predictions: Tensor, targets) -> Tensor:
    """mean |predictions - targets| over every entry."""
    targets = targets if isinstance(targets, Tensor) else Tensor(targets)
    if targets.shape != predictions.shape:
        raise ContractError(f"loss: predictions {predictions.shape} vs answers {targets.shape}")
    return apply("mean", [apply("abs", [apply("sub", [predictions, targets])])])


def subproblem_loss(predictions: Tensor, answers) -> Tensor:
    """Mean L1 over subproblems (and over the batch). A flat answer list is accepted for B = 1."""
    targets = np.asarray(answers, dtype=np.float64)
    if targets.ndim == 1 and predictions.shape[0] == 1:
        targets = targets.reshape(1, -1)
    return mean_l1(predictions, targets)


# ── Parameter specs ─────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ParamSpec:
    """Shape and init rule for one parameter tensor."""
    name: str
    shape: tuple
    fan_in: int
    forget_bias: int = 0   # hidden size when this is an LSTM bias (slice [h:2h] starts at +1)
    counted: bool = True   # False for learned initial states


def linear_spec(prefix: str, out_dim: int, in_dim: int) -> List[ParamSpec]:
    return [
        ParamSpec(f"{prefix}.W", (out_dim, in_dim), in_dim),
        ParamSpec(f"{prefix}.b", (out_dim,), in_dim),
    ]


def embedding_spec(prefix: str, vocab: int, dim: int) -> List[ParamSpec]:
    return [ParamSpec(f"{prefix}.E", (vocab, dim), dim)]


def lstm_spec(prefix: str, in_dim: int, hidden: int) -> List[ParamSpec]:
    return [
        ParamSpec(f"{prefix}.W_ih", (4 * hidden, in_dim), hidden),
        ParamSpec(f"{prefix}.W_hh", (4 * hidden, hidden), hidden),
        ParamSpec(f"{prefix}.b", (4 * hidden,), hidden, forget_bias=hidden),
    ]


def initial_state_spec(prefix: str, hidden: int) -> List[ParamSpec]:
    return [
        ParamSpec(f"{prefix}.h0", (hidden,), hidden, counted=False),
        ParamSpec(f"{prefix}.c0", (hidden,), hidden, counted=False),
    ]


NUM_VOCAB = 10
TOKEN_VOCAB = 14  # 10 NUM + 4 OP
NUM_CELLS = 4


def ddrstack_param_spec(hidden: int) -> List[ParamSpec]:
    spec = embedding_spec("num_embedding", NUM_VOCAB, hidden)
    for op in range(NUM_CELLS):
        spec += linear_spec(f"cells.{op}", hidden, 2 * hidden)
    spec += lstm_spec("lstm", hidden, hidden)
    spec += linear_spec("projection", 1, hidden)
    spec += initial_state_spec("initial", hidden)
    return spec


def baseline_param_spec(hidden: int, layers: int = 1) -> List[ParamSpec]:
    if layers < 1:
        raise ContractError(f"baseline needs at least one LSTM layer, got {layers}")
    spec = embedding_spec("token_embedding", TOKEN_VOCAB, hidden)
    for layer in range(layers):
        spec += lstm_spec(f"lstm.{layer}", hidden, hidden)
    spec += linear_spec("projection", 1, hidden)
    for layer in range(layers):
        spec += initial_state_spec(f"initial.{layer}", hidden)
    return spec


def init_params(seed: int, spec: Iterable[ParamSpec]) -> Dict[str, Tensor]:
    """uniform(-k, k), k = 1/sqrt(fan_in); LSTM forget-gate bias slice set to +1."""
    rng = np.random.default_rng(seed)
    params: Dict[str, Tensor] = {}
    for entry in spec:
        k = 1.0 / np.sqrt(entry.fan_in)
        data = rng.uniform(-k, k, size=entry.shape)
        if entry.forget_bias:
            h = entry.forget_bias
            data[h:2 * h] = 1.0
        params[entry.name] = Tensor(data, name=entry.name)
    return params


def spec_parameter_count(spec: Iterable[ParamSpec]) -> int:
    return sum(int(np.prod(entry.shape)) for entry in spec if entry.counted)


def count_parameters(params: Mapping[str, Tensor], spec: Optional[Iterable[ParamSpec]] = None) -> int:
    """Weight count; learned initial states (`initial.*`) are excluded."""
    if spec is not None:
        return spec_parameter_count(spec)
    return sum(t.data.size for name, t in params.items() if not name.startswith("initial."))


def count_state_parameters(params: Mapping[str, Tensor]) -> int:
    return sum(t.data.size for name, t in params.items() if name.startswith("initial."))


# ── Optimizer ───────────────────────────────────────────────────────────────

@dataclass
class AdamState:
    lr: float = CONFIG.LR
    beta1: float = CONFIG.BETA1
    beta2: float = CONFIG.BETA2
    eps: float = CONFIG.EPS
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def zero_grads(params: Mapping[str, Tensor]):
    for p in params.values():
        p.zero_grad()


def clip_gradients(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm (0 disables)."""
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params.values() if p.grad is not None)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return total


def adam_step(opt: AdamState, params: Mapping[str, Tensor],
              grads: Optional[Mapping[str, np.ndarray]] = None) -> Mapping[str, Tensor]:
    """Adam with bias correction, in place. Gradients default to each tensor's .grad."""
    resolved = {}
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            raise ContractError(f"adam_step: missing gradient for parameter {name!r}")
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: gradient {g.shape} for parameter {name!r} of shape {p.shape}")
        resolved[name] = g

    opt.t += 1
    c1 = 1.0 - opt.beta1 ** opt.t
    c2 = 1.0 - opt.beta2 ** opt.t
    for name, p in params.items():
        g = resolved[name]
        m = opt.m.setdefault(name, np.zeros_like(p.data))
        v = opt.v.setdefault(name, np.zeros_like(p.data))
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        p.data -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return params


# ── Checkpoints ─────────────────────────────────────────────────────────────
# Layout (little-endian):
#   magic "DDRC" | version u32 | meta length u32 | meta JSON (utf-8) | tensor count u32
#   per tensor: name length u32 | name utf-8 | rank u32 | dims u32*rank | data f64*prod(dims)

@dataclass
class Checkpoint:
    meta: dict
    tensors: Dict[str, np.ndarray]


def save_checkpoint(path: str, tensors: Mapping[str, object], meta: dict) -> str:
    """Write a checkpoint atomically (temp file + rename)."""
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    tmp_path = f"{path}.tmp"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(tmp_path, "wb") as f:
        f.write(CONFIG.CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CONFIG.CHECKPOINT_VERSION, len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype="<f8")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            f.write(arr.tobytes())
    os.replace(tmp_path, path)
    log.debug(f"Saved checkpoint {path} ({len(tensors)} tensors)")
    return path


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.blob):
            raise DataError(f"Truncated checkpoint: {self.path}")
        chunk = self.blob[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def dims(self, rank: int) -> tuple:
        return tuple(int(d) for d in struct.unpack(f"<{rank}I", self.take(4 * rank)))


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataError(f"Cannot read checkpoint {path}: {e}") from e

    reader = _Reader(blob, path)
    if reader.take(4) != CONFIG.CHECKPOINT_MAGIC:
        raise DataError(f"Not a DDRC checkpoint: {path}")
    version = reader.u32()
    if version != CONFIG.CHECKPOINT_VERSION:
        raise DataError(f"Unsupported checkpoint version {version} in {path}")
    try:
        meta = json.loads(reader.take(reader.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"Corrupt metadata header in {path}: {e}") from None
    if not isinstance(meta, dict):
        raise DataError(f"Checkpoint metadata in {path} is not an object")

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        try:
            name = reader.take(reader.u32()).decode("utf-8")
        except UnicodeDecodeError as e:
            raise DataError(f"Corrupt tensor name in {path}: {e}") from None
        rank = reader.u32()
        dims = reader.dims(rank)
        size = int(np.prod(dims))
        tensors[name] = np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64).reshape(dims)
    if reader.pos != len(blob):
        raise DataError(f"Trailing bytes in checkpoint {path}")
    return Checkpoint(meta, tensors)
