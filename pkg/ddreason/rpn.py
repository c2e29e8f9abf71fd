"""
DDReason RPN Dataset
Bit-reproducible generation, evaluation and serialization of reverse Polish
notation expressions of the form [NUM]*(n+1) [OP]*n.

Line format (one expression per line):
    0.4 0.8 / | 0.5
tokens space-separated, " | ", then the intermediate answers in application
order, each written as the shortest decimal that round-trips the float.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import CONFIG
from errors import (
    ConfigError,
    DivisionByZeroSignal,
    GeneratorStuckError,
    MalformedExpressionError,
    ParseError,
)
from logger import log


# ── PRNG ────────────────────────────────────────────────────────────────────

MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class Rng:
    """splitmix64: identical stream on every platform for a given 64-bit seed."""

    algorithm = "splitmix64"

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & MASK64
        return z ^ (z >> 31)

    def next_below(self, bound: int) -> int:
        """Uniform integer in [0, bound); rejects the biased top of the 64-bit range."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % bound

    def next_float(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


# ── Tokens / expressions ────────────────────────────────────────────────────

OP_SYMBOLS = ("+", "-", "*", "/")
NUM_SYMBOLS = tuple(f"{i / 10:.1f}" for i in range(10))
NUM_COUNT = len(NUM_SYMBOLS)
OP_COUNT = len(OP_SYMBOLS)


@dataclass(frozen=True)
class Token:
    kind: str                        # "NUM" | "OP"
    num_index: Optional[int] = None  # 0..9, value = index / 10
    op_index: Optional[int] = None   # 0..3 for + - * /

    def __post_init__(self):
        if self.kind == "NUM":
            ok = self.op_index is None and self.num_index is not None and 0 <= self.num_index < NUM_COUNT
        elif self.kind == "OP":
            ok = self.num_index is None and self.op_index is not None and 0 <= self.op_index < OP_COUNT
        else:
            ok = False
        if not ok:
            raise MalformedExpressionError(f"Invalid token {self.kind} num={self.num_index} op={self.op_index}")

    @classmethod
    def num(cls, index: int) -> "Token":
        return cls("NUM", num_index=index)

    @classmethod
    def op(cls, index: int) -> "Token":
        return cls("OP", op_index=index)

    @classmethod
    def parse(cls, symbol: str) -> "Token":
        if symbol in OP_SYMBOLS:
            return cls.op(OP_SYMBOLS.index(symbol))
        if symbol in NUM_SYMBOLS:
            return cls.num(NUM_SYMBOLS.index(symbol))
        raise MalformedExpressionError(f"Unknown token symbol {symbol!r}")

    @property
    def is_num(self) -> bool:
        return self.kind == "NUM"

    @property
    def value(self) -> float:
        return self.num_index / 10

    @property
    def symbol(self) -> str:
        return NUM_SYMBOLS[self.num_index] if self.is_num else OP_SYMBOLS[self.op_index]

    @property
    def vocab_index(self) -> int:
        """Flat 14-way index: NUMs 0..9, OPs 10..13."""
        return self.num_index if self.is_num else NUM_COUNT + self.op_index


@dataclass(frozen=True)
class Expression:
    n: int
    tokens: Tuple[Token, ...]
    answers: Tuple[float, ...]

    def __post_init__(self):
        if self.n < 1 or len(self.tokens) != 2 * self.n + 1 or len(self.answers) != self.n:
            raise MalformedExpressionError(
                f"n={self.n} needs {2 * self.n + 1} tokens and {self.n} answers, "
                f"got {len(self.tokens)} and {len(self.answers)}"
            )
        if not all(t.is_num for t in self.tokens[: self.n + 1]) or any(t.is_num for t in self.tokens[self.n + 1:]):
            raise MalformedExpressionError(f"tokens are not [NUM]*{self.n + 1} [OP]*{self.n}: {self.text}")

    @classmethod
    def from_tokens(cls, tokens: Sequence[Token]) -> "Expression":
        tokens = tuple(tokens)
        return cls((len(tokens) - 1) // 2, tokens, tuple(evaluate(tokens)))

    @classmethod
    def parse(cls, text: str) -> "Expression":
        return cls.from_tokens(Token.parse(s) for s in text.split())

    @property
    def text(self) -> str:
        return " ".join(t.symbol for t in self.tokens)

    @property
    def num_indices(self) -> List[int]:
        return [t.num_index for t in self.tokens[: self.n + 1]]

    @property
    def op_indices(self) -> List[int]:
        return [t.op_index for t in self.tokens[self.n + 1:]]


# ── Evaluation ──────────────────────────────────────────────────────────────

def _combine(op_index: int, a: float, b: float) -> float:
    if op_index == 0:
        return a + b
    if op_index == 1:
        return a - b
    if op_index == 2:
        return a * b
    if b == 0.0:
        raise DivisionByZeroSignal(f"division by zero: {a!r} / {b!r}")
    return a / b


Operand = Union[Token, float, int, str]


def _stream(tokens: Union[str, Iterable[Operand]]) -> Iterator[Tuple[bool, float, int]]:
    """Normalize tokens to (is_num, value, op_index). Accepts Token objects,
    plain numbers, operator symbols, or one whitespace-separated string."""
    if isinstance(tokens, str):
        tokens = tokens.split()
    for tok in tokens:
        if isinstance(tok, Token):
            yield (True, tok.value, -1) if tok.is_num else (False, 0.0, tok.op_index)
        elif isinstance(tok, str) and tok in OP_SYMBOLS:
            yield False, 0.0, OP_SYMBOLS.index(tok)
        else:
            try:
                yield True, float(tok), -1
            except (TypeError, ValueError):
                raise MalformedExpressionError(f"Unknown token {tok!r}") from None


def evaluate(tokens: Union[str, Iterable[Operand]]) -> List[float]:
    """Stack evaluation; returns every OP result in application order.
    On an OP, b is popped first, then a (the deeper element); a∘b is pushed."""
    stack: List[float] = []
    answers: List[float] = []
    for is_num, value, op_index in _stream(tokens):
        if is_num:
            stack.append(value)
            continue
        if len(stack) < 2:
            raise MalformedExpressionError("stack underflow")
        b = stack.pop()
        a = stack.pop()
        result = _combine(op_index, a, b)
        stack.append(result)
        answers.append(result)
    if len(stack) != 1:
        raise MalformedExpressionError(f"expression leaves {len(stack)} values on the stack")
    return answers


@dataclass
class _TreeNode:
    position: int
    op_index: int = -1
    value: float = 0.0
    left: Optional["_TreeNode"] = None
    right: Optional["_TreeNode"] = None


def parse_tree(tokens: Union[str, Iterable[Operand]]) -> _TreeNode:
    """Binary parse tree of an RPN token sequence, built from the last token backwards."""
    items = list(_stream(tokens))
    cursor = len(items)

    def build() -> _TreeNode:
        nonlocal cursor
        if cursor == 0:
            raise MalformedExpressionError("stack underflow")
        cursor -= 1
        is_num, value, op_index = items[cursor]
        node = _TreeNode(cursor, op_index=op_index, value=value)
        if not is_num:
            node.right = build()
            node.left = build()
        return node

    root = build()
    if cursor != 0:
        raise MalformedExpressionError(f"{cursor} leading tokens are not part of the expression")
    return root


def tree_evaluate(tokens: Union[str, Iterable[Operand]]) -> List[float]:
    """Recursive bottom-up evaluation; answers ordered by OP token position."""
    results: Dict[int, float] = {}

    def visit(node: _TreeNode) -> float:
        if node.left is None:
            return node.value
        value = _combine(node.op_index, visit(node.left), visit(node.right))
        results[node.position] = value
        return value

    visit(parse_tree(tokens))
    return [results[p] for p in sorted(results)]


def subexpression(expr: Expression, k: int) -> Tuple[Token, ...]:
    """Tokens of the k-th (0-based) subproblem: a central crop of the expression."""
    if not 0 <= k < expr.n:
        raise IndexError(f"subproblem {k} outside 0..{expr.n - 1}")
    nums = expr.tokens[: expr.n + 1]
    ops = expr.tokens[expr.n + 1:]
    return tuple(nums[expr.n - 1 - k:]) + tuple(ops[: k + 1])


# ── Generation ──────────────────────────────────────────────────────────────

def generate_expression(rng: Rng, n: int, bound: float = CONFIG.ANSWER_BOUND,
                        max_resamples: int = CONFIG.MAX_RESAMPLES) -> Expression:
    """Uniform tokens in the fixed layout, resampled until no division by zero
    occurs and every intermediate answer satisfies |answer| <= bound."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    for _ in range(max_resamples):
        tokens = [Token.num(rng.next_below(NUM_COUNT)) for _ in range(n + 1)]
        tokens += [Token.op(rng.next_below(OP_COUNT)) for _ in range(n)]
        try:
            answers = evaluate(tokens)
        except DivisionByZeroSignal:
            continue
        if all(abs(a) <= bound for a in answers):
            return Expression(n, tuple(tokens), tuple(answers))
    raise GeneratorStuckError(f"no valid expression with n={n}, bound={bound} after {max_resamples} resamples")


@dataclass(frozen=True)
class DatasetSpec:
    n: int = CONFIG.RPN_N
    counts: Tuple[int, int, int, int] = (*CONFIG.SPLIT_COUNTS, CONFIG.GEN_COUNT)  # train, val, test, generalization
    seed: int = CONFIG.SEED
    answer_bound: float = CONFIG.ANSWER_BOUND
    gen_n: int = CONFIG.GEN_N

    def __post_init__(self):
        if len(self.counts) != 4 or any(c <= 0 for c in self.counts):
            raise ConfigError(f"counts must be four positive integers, got {self.counts}")
        if self.n < 1 or self.gen_n < 1:
            raise ConfigError(f"n and gen_n must be >= 1, got {self.n}, {self.gen_n}")

    @property
    def splits(self) -> List[Tuple[str, int, int]]:
        """(file name, expression count, n) per split index."""
        train, val, test, gen = self.counts
        return [
            ("train.rpn", train, self.n),
            ("val.rpn", val, self.n),
            ("test.rpn", test, self.n),
            (f"gen{self.gen_n}.rpn", gen, self.gen_n),
        ]


def split_seed(seed: int, split_index: int) -> int:
    return Rng((seed ^ (split_index << 32)) & MASK64).next_u64()


def _generate_block(args) -> List[Expression]:
    block_seed, count, n, bound = args
    rng = Rng(block_seed)
    return [generate_expression(rng, n, bound) for _ in range(count)]


def generate_split(spec: DatasetSpec, split_index: int, count: Optional[int] = None,
                   n: Optional[int] = None, workers: int = 1) -> List[Expression]:
    """Deterministic given (seed, split index); blocks use seed XOR block index."""
    name, default_count, default_n = spec.splits[split_index]
    count = default_count if count is None else count
    n = default_n if n is None else n
    base = split_seed(spec.seed, split_index)
    size = CONFIG.GEN_BLOCK_SIZE
    jobs = [
        (base ^ block, min(size, count - block * size), n, spec.answer_bound)
        for block in range((count + size - 1) // size)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_generate_block, jobs))
    else:
        blocks = [_generate_block(job) for job in jobs]
    return [expr for block in blocks for expr in block]


# ── Serialization ───────────────────────────────────────────────────────────

def format_expression(expr: Expression) -> str:
    return f"{expr.text} | {' '.join(repr(float(a)) for a in expr.answers)}"


def parse_line(line: str, line_number: Optional[int] = None, path: str = "") -> Expression:
    left, sep, right = line.partition(" | ")
    if not sep:
        raise ParseError("missing ' | ' separator", line_number, path)
    try:
        tokens = tuple(Token.parse(s) for s in left.split())
        answers = tuple(float(s) for s in right.split())
        expr = Expression((len(tokens) - 1) // 2, tokens, answers)
        expected = tuple(evaluate(tokens))
    except (MalformedExpressionError, DivisionByZeroSignal, ValueError) as e:
        raise ParseError(str(e), line_number, path) from None
    if expected != answers:
        raise ParseError(f"answers {list(answers)} disagree with evaluation {expected}", line_number, path)
    return expr


def write_expressions(path: str, expressions: Iterable[Expression]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for expr in expressions:
            f.write(format_expression(expr) + "\n")
            count += 1
    return count


def read_dataset(path: str) -> List[Expression]:
    expressions = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            expressions.append(parse_line(line, line_number, path))
    return expressions


def write_dataset(spec: DatasetSpec, out_dir: str, workers: int = CONFIG.GEN_WORKERS) -> Dict[str, str]:
    """Generate all four splits into out_dir. Returns {file name: path}."""
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    for split_index, (name, count, n) in enumerate(spec.splits):
        expressions = generate_split(spec, split_index, workers=workers)
        path = os.path.join(out_dir, name)
        write_expressions(path, expressions)
        log.info(f"  Wrote {count} expressions (n={n}) to {path}")
        written[name] = path
    return written


# ── Statistics / batching ───────────────────────────────────────────────────

def answer_statistics(expressions: Sequence[Expression], skip: int = 0) -> dict:
    """count / mean / std of the labels, dropping the first `skip` subproblems of each expression."""
    values = np.array([a for e in expressions for a in e.answers[skip:]], dtype=np.float64)
    if values.size == 0:
        return {"count": 0, "mean": math.nan, "std": math.nan}
    return {"count": int(values.size), "mean": float(values.mean()), "std": float(values.std())}


@dataclass
class Batch:
    n: int
    nums: np.ndarray     # [B, n+1] NUM indices
    ops: np.ndarray      # [B, n] OP indices
    vocab: np.ndarray    # [B, 2n+1] flat 14-way token indices
    answers: np.ndarray  # [B, n]

    @property
    def size(self) -> int:
        return self.nums.shape[0]


def make_batch(expressions: Sequence[Expression]) -> Batch:
    if not expressions:
        raise MalformedExpressionError("empty batch")
    n = expressions[0].n
    if any(e.n != n for e in expressions):
        raise MalformedExpressionError("all expressions in a batch must share n")
    return Batch(
        n=n,
        nums=np.array([e.num_indices for e in expressions], dtype=np.int64),
        ops=np.array([e.op_indices for e in expressions], dtype=np.int64),
        vocab=np.array([[t.vocab_index for t in e.tokens] for e in expressions], dtype=np.int64),
        answers=np.array([e.answers for e in expressions], dtype=np.float64),
    )


def group_by_n(expressions: Sequence[Expression]) -> Dict[int, List[int]]:
    """Positions of the expressions, grouped by operator count."""
    groups: Dict[int, List[int]] = {}
    for i, e in enumerate(expressions):
        groups.setdefault(e.n, []).append(i)
    return groups
