"""
DDReason Autodiff
Define-by-run reverse-mode differentiation over dense float64 tensors.

Every primitive lives in the PRIMITIVES registry as a (check, forward,
backward) triple. `apply` validates shapes, runs the forward pass and
records one node on the active tape, if any; `backward` walks that tape once in
reverse order and accumulates gradients into the leaves.

Shapes are tuples of positive integers; a scalar is shape (1,). The only
broadcast supported is a second operand of shape a.shape[1:] against a
batched first operand (bias / initial-state rows).
"""

import math
import threading
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from errors import ContractError, DimensionError, EmbeddingIndexError, NumericError


# ── Tensor ──────────────────────────────────────────────────────────────────

class Tensor:
    """n-dimensional float64 array that can take part in a gradient tape."""

    __slots__ = ("data", "grad", "node", "name", "untracked")

    def __init__(self, data, name: str = ""):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0 or any(d <= 0 for d in arr.shape):
            raise DimensionError(f"Tensor shape must be positive, got {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.node: Optional["Node"] = None
        self.name = name
        self.untracked = False

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr if arr.ndim > 0 else arr.reshape(1)
        t.grad = None
        t.node = None
        t.name = ""
        t.untracked = False
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def tape_id(self) -> Optional[int]:
        return self.node.index if self.node is not None else None

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, leaf={self.is_leaf})"

    # Operator sugar
    def __add__(self, other):
        return apply("add", [self, as_tensor(other)])

    def __sub__(self, other):
        return apply("sub", [self, as_tensor(other)])

    def __mul__(self, other):
        return apply("mul", [self, as_tensor(other)])

    def __truediv__(self, other):
        return apply("div", [self, as_tensor(other)])

    def __matmul__(self, other):
        return apply("matmul", [self, as_tensor(other)])


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ── Tape ────────────────────────────────────────────────────────────────────

@dataclass(eq=False)
class Node:
    """One recorded primitive application."""
    primitive: str
    inputs: tuple
    ctx: Any
    attrs: dict
    tape: "Tape"
    index: int = -1


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self):
        self.nodes: List[Node] = []

    def record(self, primitive: str, inputs: tuple, ctx, attrs: dict, out: Tensor):
        node = Node(primitive, inputs, ctx, attrs, self, len(self.nodes))
        self.nodes.append(node)
        out.node = node

    def __len__(self):
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False


_local = threading.local()


def _tape_stack() -> List[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional[Tape]:
    """The innermost `with Tape()` of this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


# ── Primitive helpers ───────────────────────────────────────────────────────

@dataclass
class Primitive:
    check: Callable
    forward: Callable
    backward: Callable
    arity: Optional[int] = None  # None = variadic


def _shape_error(name: str, arrays, detail: str = "") -> DimensionError:
    shapes = ", ".join(str(a.shape) for a in arrays)
    suffix = f" ({detail})" if detail else ""
    return DimensionError(f"{name}: incompatible shapes {shapes}{suffix}")


def _check_elementwise(name):
    def check(arrays, attrs):
        a, b = arrays
        if a.shape == b.shape:
            return
        if a.ndim == b.ndim + 1 and a.shape[1:] == b.shape:
            return
        raise _shape_error(name, arrays)
    return check


def _check_unary(name):
    def check(arrays, attrs):
        pass
    return check


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    # Undo the row broadcast: sum over the batch axis.
    return g if g.shape == shape else g.sum(axis=0)


# ── Elementwise arithmetic ──────────────────────────────────────────────────

def _add_fwd(arrays, attrs):
    a, b = arrays
    return a + b, None


def _add_bwd(g, node):
    a, b = (t.data for t in node.inputs)
    return [g, _reduce_to(g, b.shape)]


def _sub_fwd(arrays, attrs):
    a, b = arrays
    return a - b, None


def _sub_bwd(g, node):
    a, b = (t.data for t in node.inputs)
    return [g, _reduce_to(-g, b.shape)]


def _mul_fwd(arrays, attrs):
    a, b = arrays
    return a * b, None


def _mul_bwd(g, node):
    a, b = (t.data for t in node.inputs)
    return [g * b, _reduce_to(g * a, b.shape)]


def _div_fwd(arrays, attrs):
    a, b = arrays
    # No epsilon: a zero denominator must surface as inf/nan.
    with np.errstate(divide="ignore", invalid="ignore"):
        return a / b, None


def _div_bwd(g, node):
    a, b = (t.data for t in node.inputs)
    with np.errstate(divide="ignore", invalid="ignore"):
        return [g / b, _reduce_to(-g * a / (b * b), b.shape)]


# ── Linear algebra / structure ──────────────────────────────────────────────

def _matmul_check(arrays, attrs):
    a, b = arrays
    trans_b = attrs.get("trans_b", False)
    if a.ndim != 2 or b.ndim not in (1, 2) or (trans_b and b.ndim != 2):
        raise _shape_error("matmul", arrays, "expects [m,k] @ [k] or [m,k] @ [k,n]")
    inner = b.shape[1] if trans_b else b.shape[0]
    if a.shape[1] != inner:
        raise _shape_error("matmul", arrays, f"inner dims {a.shape[1]} != {inner}")


def _matmul_fwd(arrays, attrs):
    a, b = arrays
    bm = b.T if attrs.get("trans_b", False) else b
    return a @ bm, None


def _matmul_bwd(g, node):
    a, b = (t.data for t in node.inputs)
    if b.ndim == 1:
        return [np.outer(g, b), a.T @ g]
    trans_b = node.attrs.get("trans_b", False)
    bm = b.T if trans_b else b
    gb = a.T @ g
    return [g @ bm.T, gb.T if trans_b else gb]


def _concat_check(arrays, attrs):
    axis = attrs.get("axis", 0)
    first = arrays[0]
    if not -first.ndim <= axis < first.ndim:
        raise _shape_error("concat", arrays, f"axis {axis} out of range")
    axis %= first.ndim
    for a in arrays[1:]:
        if a.ndim != first.ndim:
            raise _shape_error("concat", arrays, "rank mismatch")
        if any(a.shape[d] != first.shape[d] for d in range(a.ndim) if d != axis):
            raise _shape_error("concat", arrays, f"non-concat dims differ on axis {axis}")


def _concat_fwd(arrays, attrs):
    axis = attrs.get("axis", 0) % arrays[0].ndim
    return np.concatenate(arrays, axis=axis), [a.shape[axis] for a in arrays]


def _concat_bwd(g, node):
    axis = node.attrs.get("axis", 0) % g.ndim
    cuts = np.cumsum(node.ctx)[:-1]
    return np.split(g, cuts, axis=axis)


def _slice_index(ndim: int, axis: int, start: int, stop: int) -> tuple:
    index = [slice(None)] * ndim
    index[axis] = slice(start, stop)
    return tuple(index)


def _slice_check(arrays, attrs):
    (a,) = arrays
    axis = attrs.get("axis", 0)
    if not -a.ndim <= axis < a.ndim:
        raise _shape_error("slice", arrays, f"axis {axis} out of range")
    start, stop = attrs["start"], attrs["stop"]
    if not 0 <= start < stop <= a.shape[axis % a.ndim]:
        raise _shape_error("slice", arrays, f"range [{start}:{stop}) on axis {axis}")


def _slice_fwd(arrays, attrs):
    (a,) = arrays
    axis = attrs.get("axis", 0) % a.ndim
    return a[_slice_index(a.ndim, axis, attrs["start"], attrs["stop"])].copy(), None


def _slice_bwd(g, node):
    a = node.inputs[0].data
    axis = node.attrs.get("axis", 0) % a.ndim
    ga = np.zeros_like(a)
    ga[_slice_index(a.ndim, axis, node.attrs["start"], node.attrs["stop"])] = g
    return [ga]


def _embedding_check(arrays, attrs):
    (table,) = arrays
    if table.ndim != 2:
        raise _shape_error("embedding_row", arrays, "table must be [vocab, dim]")
    index = np.asarray(attrs["index"])
    if index.dtype.kind not in "iu":
        raise EmbeddingIndexError(f"embedding_row: index must be integral, got {index.dtype}")
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise EmbeddingIndexError(
            f"embedding_row: index {attrs['index']!r} outside vocab of {table.shape[0]}"
        )


def _embedding_fwd(arrays, attrs):
    (table,) = arrays
    return table[np.asarray(attrs["index"])].copy(), None


def _embedding_bwd(g, node):
    table = node.inputs[0].data
    gt = np.zeros_like(table)
    np.add.at(gt, np.asarray(node.attrs["index"]), g)
    return [gt]


# ── Nonlinearities / reductions ─────────────────────────────────────────────

def _sigmoid_fwd(arrays, attrs):
    (a,) = arrays
    s = 0.5 * (1.0 + np.tanh(0.5 * a))
    return s, s


def _sigmoid_bwd(g, node):
    s = node.ctx
    return [g * s * (1.0 - s)]


def _tanh_fwd(arrays, attrs):
    (a,) = arrays
    t = np.tanh(a)
    return t, t


def _tanh_bwd(g, node):
    t = node.ctx
    return [g * (1.0 - t * t)]


def _sum_fwd(arrays, attrs):
    (a,) = arrays
    return np.array([a.sum()]), None


def _sum_bwd(g, node):
    a = node.inputs[0].data
    return [np.full_like(a, g[0])]


def _mean_fwd(arrays, attrs):
    (a,) = arrays
    return np.array([a.mean()]), None


def _mean_bwd(g, node):
    a = node.inputs[0].data
    return [np.full_like(a, g[0] / a.size)]


def _abs_fwd(arrays, attrs):
    (a,) = arrays
    return np.abs(a), None


def _abs_bwd(g, node):
    # np.sign(0) == 0: the L1 subgradient at zero is zero.
    return [g * np.sign(node.inputs[0].data)]


PRIMITIVES: Dict[str, Primitive] = {
    "add": Primitive(_check_elementwise("add"), _add_fwd, _add_bwd, 2),
    "sub": Primitive(_check_elementwise("sub"), _sub_fwd, _sub_bwd, 2),
    "mul": Primitive(_check_elementwise("mul"), _mul_fwd, _mul_bwd, 2),
    "div": Primitive(_check_elementwise("div"), _div_fwd, _div_bwd, 2),
    "matmul": Primitive(_matmul_check, _matmul_fwd, _matmul_bwd, 2),
    "concat": Primitive(_concat_check, _concat_fwd, _concat_bwd, None),
    "slice": Primitive(_slice_check, _slice_fwd, _slice_bwd, 1),
    "sigmoid": Primitive(_check_unary("sigmoid"), _sigmoid_fwd, _sigmoid_bwd, 1),
    "tanh": Primitive(_check_unary("tanh"), _tanh_fwd, _tanh_bwd, 1),
    "embedding_row": Primitive(_embedding_check, _embedding_fwd, _embedding_bwd, 1),
    "sum": Primitive(_check_unary("sum"), _sum_fwd, _sum_bwd, 1),
    "mean": Primitive(_check_unary("mean"), _mean_fwd, _mean_bwd, 1),
    "abs": Primitive(_check_unary("abs"), _abs_fwd, _abs_bwd, 1),
}


# ── Public API ──────────────────────────────────────────────────────────────

def apply(primitive: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Run one primitive and record it on the active tape. Outside any
    `with Tape()` the result is computed but not recorded."""
    prim = PRIMITIVES.get(primitive)
    if prim is None:
        raise ContractError(f"Unknown primitive: {primitive}. Available: {list(PRIMITIVES)}")
    inputs = tuple(as_tensor(t) for t in inputs)
    if not inputs or (prim.arity is not None and len(inputs) != prim.arity):
        raise ContractError(f"{primitive} takes {prim.arity or 'at least 1'} inputs, got {len(inputs)}")
    arrays = [t.data for t in inputs]
    prim.check(arrays, attrs)
    out_data, ctx = prim.forward(arrays, attrs)
    out = Tensor._wrap(np.asarray(out_data, dtype=np.float64))
    tape = active_tape()
    if tape is None:
        out.untracked = True
    else:
        tape.record(primitive, inputs, ctx, attrs, out)
    return out


def backward(loss: Tensor):
    """Accumulate dLoss/dLeaf into every leaf recorded before `loss` on its tape."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.untracked:
        raise ContractError("backward on a value computed outside any Tape")
    seed = np.ones_like(loss.data)
    if loss.node is None:
        if loss.grad is None:
            loss.zero_grad()
        loss.grad += seed
        return

    last = loss.node.index
    nodes = loss.node.tape.nodes[: last + 1]
    for node in nodes:
        for t in node.inputs:
            if t.node is None and t.grad is None:
                t.zero_grad()

    adjoints: Dict[int, np.ndarray] = {last: seed}
    for node in reversed(nodes):
        g = adjoints.pop(node.index, None)
        if g is None:
            continue
        grads = PRIMITIVES[node.primitive].backward(g, node)
        for t, gi in zip(node.inputs, grads):
            if t.node is None:
                t.grad += gi
            elif t.node.index in adjoints:
                adjoints[t.node.index] = adjoints[t.node.index] + gi
            else:
                adjoints[t.node.index] = gi


# ── Gradient checking ───────────────────────────────────────────────────────

def _scalar_value(y: Tensor) -> float:
    if y.data.size != 1:
        raise ContractError(f"gradient check needs a scalar function, got shape {y.shape}")
    value = float(y.data.reshape(-1)[0])
    if not math.isfinite(value):
        raise NumericError(f"function evaluated to non-finite value {value!r}")
    return value


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(numeric))


def grad_check(function: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |central difference|)."""
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    with Tape():
        x = Tensor(base)
        y = function(x)
        _scalar_value(y)
        backward(y)
    analytic = x.grad

    worst = 0.0
    for i in range(base.size):
        shifted = base.copy()
        shifted.flat[i] = base.flat[i] + step
        with Tape():
            fp = _scalar_value(function(Tensor(shifted)))
        shifted.flat[i] = base.flat[i] - step
        with Tape():
            fm = _scalar_value(function(Tensor(shifted)))
        worst = max(worst, _relative_error(analytic.flat[i], (fp - fm) / (2 * step)))
    return worst


def grad_check_parameters(loss_fn: Callable[[], Tensor], parameters: Sequence[Tensor],
                          step: float = 1e-5) -> float:
    """grad_check over tensors perturbed in place; every tensor is restored afterwards."""
    for p in parameters:
        p.zero_grad()
    with Tape():
        loss = loss_fn()
        _scalar_value(loss)
        backward(loss)
    analytic = [p.grad.copy() for p in parameters]

    worst = 0.0
    for p, grad in zip(parameters, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            try:
                flat[i] = original + step
                with Tape():
                    fp = _scalar_value(loss_fn())
                flat[i] = original - step
                with Tape():
                    fm = _scalar_value(loss_fn())
            finally:
                flat[i] = original
            worst = max(worst, _relative_error(grad.flat[i], (fp - fm) / (2 * step)))
    return worst
