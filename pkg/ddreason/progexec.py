"""
DDReason Program Executor
Symbolic execution of fork/stack programs over scene graphs.

Execution is left to right over a flat token list, starting from the full
object set:
  unary token   current = op(current)
  fork          push current, reset current to the full object set
  binary token  current = op(popped, current)   (left operand = popped)
The saved stack must be empty when the program ends.

Program text may use the arity-prefixed form of CLEVR program listings,
e.g. "1_filter_color_red 0_fork 1_filter_shape_sphere 2_union 1_count".
"""

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterator, List, Optional, Sequence, Tuple, Union

from errors import (
    CardinalityError,
    ParseError,
    ProgramError,
    ProgramTypeError,
    StructureError,
)
from logger import log
from rpn import Rng


# ── Scenes ──────────────────────────────────────────────────────────────────

SHAPES = ("cube", "sphere", "cylinder")
COLORS = ("gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow")
SIZES = ("small", "large")
MATERIALS = ("rubber", "metal")

ATTRIBUTES: Dict[str, Tuple[str, ...]] = {
    "shape": SHAPES,
    "color": COLORS,
    "size": SIZES,
    "material": MATERIALS,
}


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    size: str
    material: str
    x: float
    y: float

    def __post_init__(self):
        for attribute, values in ATTRIBUTES.items():
            if getattr(self, attribute) not in values:
                raise ValueError(f"{attribute} must be one of {values}, got {getattr(self, attribute)!r}")
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"object position must be finite, got ({self.x}, {self.y})")

    def attribute(self, name: str) -> str:
        return getattr(self, name)


@dataclass(frozen=True)
class SceneGraph:
    """Objects are identified by their index."""
    objects: Tuple[SceneObject, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    @property
    def all_ids(self) -> FrozenSet[int]:
        return frozenset(range(len(self.objects)))

    def __len__(self):
        return len(self.objects)

    def __getitem__(self, index: int) -> SceneObject:
        return self.objects[index]


def random_scene(rng: Rng, k: int) -> SceneGraph:
    """k objects, attributes uniform and independent, positions uniform in [0, 1)^2."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    objects = []
    for _ in range(k):
        values = {name: choices[rng.next_below(len(choices))] for name, choices in ATTRIBUTES.items()}
        objects.append(SceneObject(x=rng.next_float(), y=rng.next_float(), **values))
    return SceneGraph(tuple(objects))


def _object_from_fields(fields: Sequence[str], line_number: Optional[int], path: str) -> SceneObject:
    if len(fields) != 6:
        raise ParseError(f"expected 'shape color size material x y', got {len(fields)} fields", line_number, path)
    shape, color, size, material, x, y = fields
    try:
        return SceneObject(shape, color, size, material, float(x), float(y))
    except ValueError as e:
        raise ParseError(str(e), line_number, path) from None


def parse_scene(text: str, path: str = "") -> SceneGraph:
    """Line format (one `shape color size material x y` per line, '#' comments)
    or a JSON list of objects (optionally under an "objects" key)."""
    stripped = text.lstrip()
    if stripped.startswith("[") or stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON scene: {e.msg}", e.lineno, path) from None
        items = data.get("objects", []) if isinstance(data, dict) else data
        objects = []
        for i, item in enumerate(items):
            try:
                fields = [str(item[k]) for k in ("shape", "color", "size", "material", "x", "y")]
            except (KeyError, TypeError) as e:
                raise ParseError(f"object {i} is missing {e}", None, path) from None
            objects.append(_object_from_fields(fields, None, path))
        return SceneGraph(tuple(objects))

    objects = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if line:
            objects.append(_object_from_fields(line.split(), line_number, path))
    return SceneGraph(tuple(objects))


def load_scene(path: str) -> SceneGraph:
    with open(path, "r", encoding="utf-8") as f:
        scene = parse_scene(f.read(), path)
    log.debug(f"Loaded scene {path} with {len(scene)} objects")
    return scene


def format_scene(scene: SceneGraph) -> str:
    return "".join(
        f"{o.shape} {o.color} {o.size} {o.material} {o.x!r} {o.y!r}\n" for o in scene.objects
    )


# ── Values ──────────────────────────────────────────────────────────────────
# Static types: "objects", "object", "integer", "boolean", "value:<attribute>".

@dataclass(frozen=True)
class ObjectSet:
    ids: FrozenSet[int]

    @property
    def type(self) -> str:
        return "objects"

    def __str__(self):
        return "{" + ", ".join(str(i) for i in sorted(self.ids)) + "}"


@dataclass(frozen=True)
class SingleObject:
    id: int

    @property
    def type(self) -> str:
        return "object"

    def __str__(self):
        return f"object {self.id}"


@dataclass(frozen=True)
class Integer:
    value: int

    @property
    def type(self) -> str:
        return "integer"

    def __str__(self):
        return str(self.value)


@dataclass(frozen=True)
class Boolean:
    value: bool

    @property
    def type(self) -> str:
        return "boolean"

    def __str__(self):
        return "yes" if self.value else "no"


@dataclass(frozen=True)
class AttributeValue:
    attribute: str
    value: str

    @property
    def type(self) -> str:
        return f"value:{self.attribute}"

    def __str__(self):
        return self.value


ExecValue = Union[ObjectSet, SingleObject, Integer, Boolean, AttributeValue]

ANY = "*"


# ── Token registry ──────────────────────────────────────────────────────────

@dataclass(frozen=True)
class TokenSpec:
    name: str
    arity: int
    inputs: Tuple[str, ...]
    output: Optional[str]    # None for fork
    run: Optional[Callable] = field(default=None, compare=False)  # (scene, *values) -> ExecValue


def _unique(scene: SceneGraph, objects: ObjectSet) -> SingleObject:
    if len(objects.ids) != 1:
        raise CardinalityError(f"unique expects exactly one object, got {len(objects.ids)}")
    return SingleObject(next(iter(objects.ids)))


_RELATIONS = {
    "left": lambda o, ref: o.x < ref.x,
    "right": lambda o, ref: o.x > ref.x,
    "front": lambda o, ref: o.y < ref.y,
    "behind": lambda o, ref: o.y > ref.y,
}


def _relate(direction: str):
    test = _RELATIONS[direction]

    def run(scene: SceneGraph, anchor: SingleObject) -> ObjectSet:
        ref = scene[anchor.id]
        return ObjectSet(frozenset(i for i, o in enumerate(scene.objects) if test(o, ref)))
    return run


def _filter(attribute: str, value: str):
    def run(scene: SceneGraph, objects: ObjectSet) -> ObjectSet:
        return ObjectSet(frozenset(i for i in objects.ids if scene[i].attribute(attribute) == value))
    return run


def _same(attribute: str):
    def run(scene: SceneGraph, anchor: SingleObject) -> ObjectSet:
        value = scene[anchor.id].attribute(attribute)
        return ObjectSet(frozenset(
            i for i, o in enumerate(scene.objects) if i != anchor.id and o.attribute(attribute) == value
        ))
    return run


def _query(attribute: str):
    def run(scene: SceneGraph, anchor: SingleObject) -> AttributeValue:
        return AttributeValue(attribute, scene[anchor.id].attribute(attribute))
    return run


def _equal_attribute(scene: SceneGraph, left: AttributeValue, right: AttributeValue) -> Boolean:
    return Boolean(left.value == right.value)


def _build_registry() -> Dict[str, TokenSpec]:
    specs = [
        TokenSpec("scene", 1, (ANY,), "objects", lambda scene, _: ObjectSet(scene.all_ids)),
        TokenSpec("fork", 0, (), None),
        TokenSpec("unique", 1, ("objects",), "object", _unique),
        TokenSpec("count", 1, ("objects",), "integer", lambda scene, s: Integer(len(s.ids))),
        TokenSpec("exist", 1, ("objects",), "boolean", lambda scene, s: Boolean(bool(s.ids))),
        TokenSpec("union", 2, ("objects", "objects"), "objects",
                  lambda scene, a, b: ObjectSet(a.ids | b.ids)),
        TokenSpec("intersect", 2, ("objects", "objects"), "objects",
                  lambda scene, a, b: ObjectSet(a.ids & b.ids)),
        TokenSpec("equal_integer", 2, ("integer", "integer"), "boolean",
                  lambda scene, a, b: Boolean(a.value == b.value)),
        TokenSpec("less_than", 2, ("integer", "integer"), "boolean",
                  lambda scene, a, b: Boolean(a.value < b.value)),
        TokenSpec("greater_than", 2, ("integer", "integer"), "boolean",
                  lambda scene, a, b: Boolean(a.value > b.value)),
    ]
    for attribute, values in ATTRIBUTES.items():
        for value in values:
            specs.append(TokenSpec(f"filter_{attribute}_{value}", 1, ("objects",), "objects",
                                   _filter(attribute, value)))
        specs.append(TokenSpec(f"same_{attribute}", 1, ("object",), "objects", _same(attribute)))
        specs.append(TokenSpec(f"query_{attribute}", 1, ("object",), f"value:{attribute}", _query(attribute)))
        value_type = f"value:{attribute}"
        specs.append(TokenSpec(f"equal_{attribute}", 2, (value_type, value_type), "boolean", _equal_attribute))
    for direction in _RELATIONS:
        specs.append(TokenSpec(f"relate_{direction}", 1, ("object",), "objects", _relate(direction)))
    return {spec.name: spec for spec in specs}


TOKEN_SPECS: Dict[str, TokenSpec] = _build_registry()


# ── Programs ────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ProgramToken:
    name: str

    def __post_init__(self):
        if self.name not in TOKEN_SPECS:
            raise ProgramError(f"Unknown program token: {self.name}")

    @property
    def spec(self) -> TokenSpec:
        return TOKEN_SPECS[self.name]

    @property
    def arity(self) -> int:
        return self.spec.arity

    @property
    def label(self) -> str:
        return f"{self.arity}_{self.name}"

    @classmethod
    def parse(cls, text: str) -> "ProgramToken":
        prefix, sep, rest = text.partition("_")
        if sep and prefix.isdigit():
            token = cls(rest)
            if int(prefix) != token.arity:
                raise ProgramTypeError(f"{text}: token {rest} has arity {token.arity}, not {prefix}")
            return token
        return cls(text)


Program = List[ProgramToken]


def parse_program(program: Union[str, Sequence[Union[str, ProgramToken]]]) -> Program:
    items = program.split() if isinstance(program, str) else program
    return [item if isinstance(item, ProgramToken) else ProgramToken.parse(item) for item in items]


def format_program(program: Sequence[ProgramToken], labels: bool = False) -> str:
    return " ".join(t.label if labels else t.name for t in program)


# ── Execution ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ExecState:
    current: ExecValue
    saved: Tuple[ExecValue, ...]
    scene: SceneGraph

    @classmethod
    def initial(cls, scene: SceneGraph) -> "ExecState":
        return cls(ObjectSet(scene.all_ids), (), scene)


def _check_type(token: ProgramToken, expected: str, value: ExecValue, role: str):
    if expected != ANY and value.type != expected:
        raise ProgramTypeError(f"{token.name}: {role} operand must be {expected}, got {value.type}")


def step(state: ExecState, token: ProgramToken) -> ExecState:
    """One token transition; never mutates `state`."""
    spec = token.spec
    if spec.arity == 0:
        return ExecState(ObjectSet(state.scene.all_ids), state.saved + (state.current,), state.scene)
    if spec.arity == 1:
        _check_type(token, spec.inputs[0], state.current, "input")
        return ExecState(spec.run(state.scene, state.current), state.saved, state.scene)
    if not state.saved:
        raise StructureError(f"{token.name} without a matching fork")
    left = state.saved[-1]
    _check_type(token, spec.inputs[0], left, "left (saved)")
    _check_type(token, spec.inputs[1], state.current, "right (current)")
    return ExecState(spec.run(state.scene, left, state.current), state.saved[:-1], state.scene)


def execute(scene: SceneGraph, program: Union[str, Sequence]) -> ExecValue:
    state = ExecState.initial(scene)
    for token in parse_program(program):
        state = step(state, token)
    if state.saved:
        raise StructureError(f"program ends with {len(state.saved)} unmatched fork(s)")
    return state.current


# ── Program generation ──────────────────────────────────────────────────────

def applicable(token: ProgramToken, current: str, saved: Sequence[str]) -> bool:
    spec = token.spec
    if spec.arity == 0:
        return True
    if spec.arity == 1:
        return spec.inputs[0] in (ANY, current)
    return bool(saved) and spec.inputs == (saved[-1], current)


def _transition(token: ProgramToken, current: str, saved: Tuple[str, ...]) -> Tuple[str, Tuple[str, ...]]:
    spec = token.spec
    if spec.arity == 0:
        return "objects", saved + (current,)
    if spec.arity == 1:
        return spec.output, saved
    return spec.output, saved[:-1]


def default_vocabulary() -> Program:
    return [ProgramToken(name) for name in TOKEN_SPECS]


def enumerate_programs(vocabulary: Optional[Sequence[ProgramToken]] = None, max_len: int = 8) -> Iterator[Program]:
    """Every type-valid program with balanced forks, 1..max_len tokens, in depth-first order."""
    vocabulary = list(vocabulary) if vocabulary is not None else default_vocabulary()

    def walk(prefix: Program, current: str, saved: Tuple[str, ...]) -> Iterator[Program]:
        if prefix and not saved:
            yield list(prefix)
        remaining = max_len - len(prefix)
        for token in vocabulary:
            if not applicable(token, current, saved):
                continue
            next_current, next_saved = _transition(token, current, saved)
            # each open fork still needs a binary token
            if len(next_saved) > remaining - 1:
                continue
            prefix.append(token)
            yield from walk(prefix, next_current, next_saved)
            prefix.pop()

    yield from walk([], "objects", ())


def random_program(rng: Rng, max_len: int = 12, vocabulary: Optional[Sequence[ProgramToken]] = None,
                   max_tries: int = 10_000) -> Program:
    """Random type-valid, fork-balanced program of 1..max_len tokens (rejection sampled walk)."""
    vocabulary = list(vocabulary) if vocabulary is not None else default_vocabulary()
    for _ in range(max_tries):
        length = 1 + rng.next_below(max_len)
        program: Program = []
        current, saved = "objects", ()
        while len(program) < length:
            remaining = length - len(program)
            options = [
                t for t in vocabulary
                if applicable(t, current, saved) and len(_transition(t, current, saved)[1]) <= remaining - 1
            ]
            if not options:
                break
            token = options[rng.next_below(len(options))]
            current, saved = _transition(token, current, saved)
            program.append(token)
        if program and not saved:
            return program
    raise ProgramError(f"no balanced program found in {max_tries} tries (max_len={max_len})")
