"""Network Structure Code (NSC) search space.

A denoising block is a sequence of five-field codes ``(index, type, kernel,
pred1, pred2)``.  Predecessor ``0`` refers to the block input tensor; any
other predecessor points strictly backwards, so every block is a DAG by
construction.  The last code is always a terminal that projects features
back to image channels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Iterable, Sequence


class Op(IntEnum):
    CONV = 1
    DOWN = 2
    UP = 3
    IDENTITY = 4
    ADD = 5
    CONCAT = 6
    TERMINAL1 = 7
    TERMINAL2 = 8

    @property
    def is_terminal(self) -> bool:
        return self in (Op.TERMINAL1, Op.TERMINAL2)

    @property
    def is_binary(self) -> bool:
        return self in (Op.ADD, Op.CONCAT)


# kernel sizes allowed per op type
KERNELS = {
    Op.CONV: (1, 3),
    Op.DOWN: (2,),
    Op.UP: (2,),
    Op.IDENTITY: (0,),
    Op.ADD: (0,),
    Op.CONCAT: (0,),
    Op.TERMINAL1: (0,),
    Op.TERMINAL2: (0,),
}

JSON_FIELDS = ("index", "type", "kernel", "pred1", "pred2")


@dataclass(frozen=True, order=True)
class NscCode:
    index: int
    op: Op
    kernel: int = 0
    pred1: int = 0
    pred2: int = 0

    def __post_init__(self):
        object.__setattr__(self, "op", Op(self.op))

    @property
    def encoding(self) -> tuple[int, int, int, int]:
        """Index-free encoding used for Q-table keys and tie-breaking."""
        return (int(self.op), self.kernel, self.pred1, self.pred2)

    def inputs(self) -> tuple[int, ...]:
        """Indices of the tensors this layer reads (0 = block input)."""
        if self.op.is_terminal:
            return (self.index - 1,)
        if self.op.is_binary:
            return (self.pred1, self.pred2)
        return (self.pred1,)

    def to_dict(self) -> dict:
        return {"index": self.index, "type": int(self.op), "kernel": self.kernel,
                "pred1": self.pred1, "pred2": self.pred2}

    def __str__(self):
        return f"({self.index},{self.op.name},{self.kernel},{self.pred1},{self.pred2})"


@dataclass(frozen=True)
class Issue:
    kind: str
    layer: int
    message: str

    def __str__(self):
        return f"{self.kind} at layer {self.layer}: {self.message}"


class ValidationError(ValueError):
    """Raised by :func:`validate`; ``issues`` lists every violation found."""

    def __init__(self, issues: Sequence[Issue]):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))

    @property
    def kinds(self) -> set[str]:
        return {i.kind for i in self.issues}


class ParseError(ValueError):
    def __init__(self, message: str, location: str):
        self.location = location
        super().__init__(f"{location}: {message}")


@dataclass(frozen=True)
class BlockGraph:
    codes: tuple[NscCode, ...]
    active: tuple[bool, ...]
    terminal_kind: Op

    def __len__(self):
        return len(self.codes)

    @property
    def terminal(self) -> NscCode:
        return self.codes[-1]

    def code(self, index: int) -> NscCode:
        return self.codes[index - 1]

    def is_active(self, index: int) -> bool:
        return index == 0 or self.active[index - 1]

    def active_codes(self) -> list[NscCode]:
        return [c for c, a in zip(self.codes, self.active) if a]

    @property
    def n_inactive(self) -> int:
        return sum(1 for a in self.active if not a)


def _check_code(code: NscCode, issues: list[Issue]) -> None:
    i = code.index
    if code.kernel not in KERNELS[code.op]:
        issues.append(Issue("KernelOpMismatch", i,
                            f"kernel {code.kernel} not allowed for {code.op.name}"))
    if code.op.is_terminal:
        if code.pred1 != 0 or code.pred2 != 0:
            issues.append(Issue("PredOutOfRange", i, "terminal codes take pred1=pred2=0"))
        return
    for name, p in (("pred1", code.pred1), ("pred2", code.pred2)):
        if not 0 <= p < i:
            issues.append(Issue("PredOutOfRange", i, f"{name}={p} outside [0, {i - 1}]"))
    if not code.op.is_binary and code.pred2 != 0:
        issues.append(Issue("PredOutOfRange", i, f"{code.op.name} takes pred2=0, got {code.pred2}"))


def validate(codes: Sequence[NscCode], max_layers: int | None = None) -> BlockGraph:
    """Check a code sequence against the search-space rules.

    Returns an unpruned :class:`BlockGraph` (every layer marked active) or raises
    :class:`ValidationError` enumerating every violation.
    """
    if not codes:
        raise ValidationError([Issue("MissingTerminal", 0, "empty code sequence")])
    issues: list[Issue] = []
    seen: set[int] = set()
    for pos, code in enumerate(codes, start=1):
        if code.index in seen:
            issues.append(Issue("DuplicateIndex", code.index, "index appears more than once"))
        elif code.index != pos:
            issues.append(Issue("IndexOutOfOrder", code.index, f"expected index {pos}"))
        seen.add(code.index)
        _check_code(code, issues)
        if code.op.is_terminal and pos != len(codes):
            issues.append(Issue("TerminalNotLast", code.index, "terminal code followed by more layers"))
    if not codes[-1].op.is_terminal:
        if not any(c.op.is_terminal for c in codes):
            issues.append(Issue("MissingTerminal", codes[-1].index, "no terminal code"))
    if max_layers is not None and len(codes) > max_layers:
        issues.append(Issue("TooManyLayers", len(codes), f"more than {max_layers} layers"))
    if issues:
        raise ValidationError(issues)
    return BlockGraph(tuple(codes), (True,) * len(codes), codes[-1].op)


def prune_inactive(g: BlockGraph) -> BlockGraph:
    """Mark exactly the layers the terminal transitively reads from."""
    live = [False] * (len(g.codes) + 1)
    stack = [len(g.codes)]
    while stack:
        i = stack.pop()
        if i == 0 or live[i]:
            continue
        live[i] = True
        stack.extend(g.code(i).inputs())
    return replace(g, active=tuple(live[1:]))


def successors(g: BlockGraph, active_only: bool = True) -> dict[int, list[int]]:
    succ: dict[int, list[int]] = {i: [] for i in range(len(g.codes) + 1)}
    for c in g.codes:
        if active_only and not g.is_active(c.index):
            continue
        for p in c.inputs():
            succ[p].append(c.index)
    return succ


# ---------------------------------------------------------------------------
# legality of actions while an episode is being generated


@dataclass(frozen=True)
class SpaceConfig:
    """Limits that shape the action space."""

    base_width: int = 8
    image_channels: int = 1
    patch_size: int = 32
    max_layers: int = 8
    max_channels: int | None = None  # default 8 * base_width
    spatial_floor: int = 2
    max_upscale: int = 4
    conv_kernels: tuple[int, ...] = (1, 3)
    op_types: tuple[int, ...] = tuple(int(o) for o in Op)

    @property
    def channel_cap(self) -> int:
        return self.max_channels if self.max_channels is not None else 8 * self.base_width


def layer_shapes(codes: Sequence[NscCode], space: SpaceConfig) -> list[tuple[int, int]]:
    """(channels, spatial extent) of every tensor 0..len(codes), before terminal.

    Mirrors the compiler's shape rules on square inputs; used for action masking.
    """
    shapes = [(space.image_channels, space.patch_size)]
    for c in codes:
        if c.op.is_terminal:
            shapes.append((space.image_channels, space.patch_size))
            continue
        ch, s = shapes[c.pred1]
        if c.op == Op.CONV:
            shapes.append((space.base_width, s))
        elif c.op == Op.DOWN:
            shapes.append((ch, s // 2))
        elif c.op == Op.UP:
            shapes.append((ch, s * 2))
        elif c.op == Op.CONCAT:
            shapes.append((ch + shapes[c.pred2][0], s))
        else:
            shapes.append((ch, s))
    return shapes


def legal_actions(partial: Sequence[NscCode], space: SpaceConfig) -> list[NscCode]:
    """Every code that may be appended to ``partial``, sorted by encoding.

    Two-input ops need at least one operand that is a layer output (so none are
    offered at layer 1).  At ``max_layers`` only terminals are offered.
    """
    index = len(partial) + 1
    allowed = set(space.op_types)
    terminals = [NscCode(index, op) for op in (Op.TERMINAL1, Op.TERMINAL2) if op in allowed]
    if index >= space.max_layers:
        return terminals
    shapes = layer_shapes(partial, space)
    top = space.patch_size * space.max_upscale
    out: list[NscCode] = []
    for p in range(index):
        ch, s = shapes[p]
        if Op.CONV in allowed:
            out.extend(NscCode(index, Op.CONV, k, p) for k in space.conv_kernels)
        if Op.DOWN in allowed and s % 2 == 0 and s // 2 >= space.spatial_floor:
            out.append(NscCode(index, Op.DOWN, 2, p))
        if Op.UP in allowed and s * 2 <= top:
            out.append(NscCode(index, Op.UP, 2, p))
        if Op.IDENTITY in allowed:
            out.append(NscCode(index, Op.IDENTITY, 0, p))
    for p1 in range(index):
        for p2 in range(index):
            if p1 == 0 and p2 == 0:
                continue
            if Op.ADD in allowed:
                out.append(NscCode(index, Op.ADD, 0, p1, p2))
            if Op.CONCAT in allowed and shapes[p1][0] + shapes[p2][0] <= space.channel_cap:
                out.append(NscCode(index, Op.CONCAT, 0, p1, p2))
    out.extend(terminals)
    out.sort(key=lambda c: c.encoding)
    return out


# ---------------------------------------------------------------------------
# serialization


def codes_to_json(codes: Iterable[NscCode]) -> str:
    return json.dumps([c.to_dict() for c in codes])


def to_json(g: BlockGraph) -> str:
    return codes_to_json(g.codes)


def codes_from_obj(obj) -> list[NscCode]:
    if not isinstance(obj, list):
        raise ParseError("architecture must be a JSON array", "$")
    codes = []
    for n, item in enumerate(obj):
        where = f"$[{n}]"
        if not isinstance(item, dict):
            raise ParseError("layer must be an object", where)
        for key in item:
            if key not in JSON_FIELDS:
                raise ParseError(f"unknown field {key!r}", f"{where}.{key}")
        for key in JSON_FIELDS:
            if key not in item:
                raise ParseError(f"missing field {key!r}", f"{where}.{key}")
            if not isinstance(item[key], int) or isinstance(item[key], bool):
                raise ParseError(f"field {key!r} must be an integer", f"{where}.{key}")
        try:
            op = Op(item["type"])
        except ValueError:
            raise ParseError(f"unknown op type {item['type']}", f"{where}.type") from None
        codes.append(NscCode(item["index"], op, item["kernel"], item["pred1"], item["pred2"]))
    return codes


def from_json(text: str, max_layers: int | None = None) -> BlockGraph:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, f"line {e.lineno} column {e.colno}") from None
    return validate(codes_from_obj(obj), max_layers)


def parse_codes(items: Iterable[Sequence[int]]) -> list[NscCode]:
    """Build codes from plain ``(index, type, kernel, pred1, pred2)`` tuples."""
    return [NscCode(int(i), Op(t), int(k), int(p1), int(p2)) for i, t, k, p1, p2 in items]
