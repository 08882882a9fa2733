"""Shape inference and dimension-matching repair for NSC blocks.

Every layer's output shape is inferred from its operands.  Where a two-input
op or a terminal receives operands of disagreeing shape, a repair is recorded
on the second operand (or on the terminal's input):

* spatial matching - a 1x1 conv that scales channels by ``s**2`` followed by
  pixel shuffle for upscaling, or pixel unshuffle followed by a 1x1 conv that
  divides channels by ``s**2`` for downscaling; channel count is preserved;
* channel matching - a single 1x1 conv to the target channel count.

``mode="off"`` refuses to repair and ``mode="zero_pad"`` uses parameter-free
cropping/padding instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

from .nsc import BlockGraph, NscCode, Op

MODES = ("full", "off", "zero_pad")


class Shape(NamedTuple):
    c: int
    h: int
    w: int


class ShapeMismatch(ValueError):
    def __init__(self, layer: int, message: str):
        self.layer = layer
        super().__init__(f"layer {layer}: {message}")


class NonPowerOfTwoRatio(ValueError):
    pass


@dataclass(frozen=True)
class ShuffleUp:
    s: int


@dataclass(frozen=True)
class ShuffleDown:
    s: int


@dataclass(frozen=True)
class ChannelConv:
    c_in: int
    c_out: int


@dataclass(frozen=True)
class PadCrop:
    """Center crop or symmetric zero pad to ``(h, w)``."""

    h: int
    w: int


@dataclass(frozen=True)
class ChannelPad:
    """Zero-pad or truncate channels to ``c``."""

    c: int


Step = ShuffleUp | ShuffleDown | ChannelConv | PadCrop | ChannelPad


def apply_step(shape: Shape, step: Step) -> Shape:
    c, h, w = shape
    if isinstance(step, ShuffleUp):
        if c % (step.s * step.s):
            raise ValueError(f"cannot shuffle {c} channels by {step.s}")
        return Shape(c // (step.s * step.s), h * step.s, w * step.s)
    if isinstance(step, ShuffleDown):
        if h % step.s or w % step.s:
            raise ValueError(f"cannot unshuffle {h}x{w} by {step.s}")
        return Shape(c * step.s * step.s, h // step.s, w // step.s)
    if isinstance(step, ChannelConv):
        if c != step.c_in:
            raise ValueError(f"conv expects {step.c_in} channels, got {c}")
        return Shape(step.c_out, h, w)
    if isinstance(step, PadCrop):
        return Shape(c, step.h, step.w)
    if isinstance(step, ChannelPad):
        return Shape(step.c, h, w)
    raise TypeError(step)


def apply_steps(shape: Shape, steps) -> Shape:
    for st in steps:
        shape = apply_step(shape, st)
    return shape


def _log2_ratio(a: int, b: int) -> int:
    """k such that b == a * 2**k."""
    if b >= a:
        q, r = divmod(b, a)
        k = q.bit_length() - 1
        if r or q != 1 << k:
            raise NonPowerOfTwoRatio(f"{b}/{a} is not a power of two")
        return k
    q, r = divmod(a, b)
    k = q.bit_length() - 1
    if r or q != 1 << k:
        raise NonPowerOfTwoRatio(f"{b}/{a} is not a power of two")
    return -k


def spatial_match_steps(src: Shape, to_spatial: tuple[int, int]) -> list[Step]:
    kh = _log2_ratio(src.h, to_spatial[0])
    kw = _log2_ratio(src.w, to_spatial[1])
    if kh != kw:
        raise NonPowerOfTwoRatio(f"anisotropic ratio {src.h}x{src.w} -> {to_spatial}")
    if kh == 0:
        return []
    s = 1 << abs(kh)
    if kh > 0:
        return [ChannelConv(src.c, src.c * s * s), ShuffleUp(s)]
    return [ShuffleDown(s), ChannelConv(src.c * s * s, src.c)]


def channel_match_steps(src: Shape, to_channels: int) -> list[Step]:
    if src.c == to_channels:
        return []
    return [ChannelConv(src.c, to_channels)]


def dmm(src: Shape, to: Shape) -> list[Step]:
    steps = spatial_match_steps(src, (to.h, to.w))
    mid = apply_steps(src, steps)
    return steps + channel_match_steps(mid, to.c)


def zero_pad_steps(src: Shape, to: Shape, match_channels: bool) -> list[Step]:
    steps: list[Step] = []
    if (src.h, src.w) != (to.h, to.w):
        steps.append(PadCrop(to.h, to.w))
    if match_channels and src.c != to.c:
        steps.append(ChannelPad(to.c))
    return steps


@dataclass(frozen=True)
class Operand:
    src: int
    steps: tuple[Step, ...] = ()


@dataclass(frozen=True)
class NodePlan:
    index: int
    op: Op
    kernel: int
    operands: tuple[Operand, ...]
    out_shape: Shape


@dataclass(frozen=True)
class DmmRepair:
    site: tuple[int, int]  # (layer, operand slot)
    steps: tuple[Step, ...]


@dataclass
class ShapePlan:
    input_shape: Shape
    mode: str
    base_width: int = 8
    node_shapes: dict[int, Shape] = field(default_factory=dict)
    nodes: list[NodePlan] = field(default_factory=list)

    @property
    def order(self) -> list[int]:
        return [n.index for n in self.nodes]

    @property
    def repairs(self) -> list[DmmRepair]:
        return [DmmRepair((n.index, slot), o.steps)
                for n in self.nodes for slot, o in enumerate(n.operands, start=1) if o.steps]

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "mode": self.mode,
            "base_width": self.base_width,
            "order": self.order,
            "node_shapes": {str(k): list(v) for k, v in sorted(self.node_shapes.items())},
            "repairs": [{"layer": r.site[0], "slot": r.site[1],
                         "steps": [_step_dict(s) for s in r.steps]} for r in self.repairs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _step_dict(step: Step) -> dict:
    return {"kind": type(step).__name__, **step.__dict__}


def _repair(layer: int, src_shape: Shape, to: Shape, mode: str, match_channels: bool,
            what: str) -> tuple[Step, ...]:
    mismatch = (src_shape.h, src_shape.w) != (to.h, to.w) or (match_channels and src_shape.c != to.c)
    if not mismatch:
        return ()
    if mode == "off":
        raise ShapeMismatch(layer, f"{what}: {tuple(src_shape)} vs {tuple(to)}")
    if mode == "zero_pad":
        return tuple(zero_pad_steps(src_shape, to, match_channels))
    if match_channels:
        return tuple(dmm(src_shape, to))
    return tuple(spatial_match_steps(src_shape, (to.h, to.w)))


def infer_shapes(g: BlockGraph, input_shape: Shape | tuple, mode: str = "full",
                 base_width: int = 8) -> ShapePlan:
    """Infer every active layer's output shape and record required repairs."""
    if mode not in MODES:
        raise ValueError(f"unknown dmm mode {mode!r}")
    inp = Shape(*input_shape)
    plan = ShapePlan(inp, mode, base_width)
    shapes = plan.node_shapes
    shapes[0] = inp
    for code in g.codes:
        if not g.is_active(code.index):
            continue
        shape, operands = _infer_node(code, shapes, inp, mode, base_width)
        shapes[code.index] = shape
        plan.nodes.append(NodePlan(code.index, code.op, code.kernel, operands, shape))
    return plan


def _infer_node(code: NscCode, shapes: dict[int, Shape], inp: Shape, mode: str,
                base_width: int) -> tuple[Shape, tuple[Operand, ...]]:
    op = code.op
    if op.is_terminal:
        src = code.index - 1
        s = shapes[src]
        steps = _repair(code.index, s, Shape(s.c, inp.h, inp.w), mode, False, "terminal input")
        return Shape(inp.c, inp.h, inp.w), (Operand(src, steps),)
    a = shapes[code.pred1]
    if op == Op.CONV:
        return Shape(base_width, a.h, a.w), (Operand(code.pred1),)
    if op == Op.DOWN:
        if a.h % 2 or a.w % 2:
            raise NonPowerOfTwoRatio(f"layer {code.index}: cannot halve {a.h}x{a.w}")
        return Shape(a.c, a.h // 2, a.w // 2), (Operand(code.pred1),)
    if op == Op.UP:
        return Shape(a.c, a.h * 2, a.w * 2), (Operand(code.pred1),)
    if op == Op.IDENTITY:
        return a, (Operand(code.pred1),)
    b = shapes[code.pred2]
    if op == Op.ADD:
        steps = _repair(code.index, b, a, mode, True, "add operands")
        return a, (Operand(code.pred1), Operand(code.pred2, steps))
    # concat
    steps = _repair(code.index, b, Shape(b.c, a.h, a.w), mode, False, "concat operands")
    return Shape(a.c + b.c, a.h, a.w), (Operand(code.pred1), Operand(code.pred2, steps))


def plan_execution(g: BlockGraph, plan: ShapePlan) -> list[NodePlan]:
    """Nodes in an order where every operand is computed before its consumer."""
    return sorted(plan.nodes, key=lambda n: n.index)


# ---------------------------------------------------------------------------


def _conv_params(c_in: int, c_out: int, k: int) -> int:
    return c_in * c_out * k * k + c_out


def node_param_count(node: NodePlan, shapes: dict[int, Shape]) -> int:
    n = 0
    for o in node.operands:
        for st in o.steps:
            if isinstance(st, ChannelConv):
                n += _conv_params(st.c_in, st.c_out, 1)
    a = apply_steps(shapes[node.operands[0].src], node.operands[0].steps)
    if node.op == Op.CONV:
        n += _conv_params(a.c, node.out_shape.c, node.kernel) + node.out_shape.c
    elif node.op == Op.DOWN:
        n += _conv_params(4 * a.c, a.c, 1)
    elif node.op == Op.UP:
        n += _conv_params(a.c, 4 * a.c, 1)
    elif node.op.is_terminal:
        n += _conv_params(a.c, node.out_shape.c, 3)
    return n


def count_params(g: BlockGraph, plan: ShapePlan) -> int:
    """Trainable scalars of the block: convs, biases, PReLU slopes and repairs."""
    return sum(node_param_count(n, plan.node_shapes) for n in plan.nodes)


def to_dot(g: BlockGraph, plan: ShapePlan | None = None) -> str:
    lines = ["digraph block {", "  rankdir=TB;"]
    for code in g.active_codes():
        label = f"{code.index}: {code.op.name}"
        if code.kernel:
            label += f" k{code.kernel}"
        if plan is not None and code.index in plan.node_shapes:
            c, h, w = plan.node_shapes[code.index]
            label += f"\\n{c}x{h}x{w}"
        lines.append(f'  n{code.index} [label="{label}"];')
    for code in g.active_codes():
        for p in code.inputs():
            src = "input" if p == 0 else f"n{p}"
            lines.append(f"  {src} -> n{code.index};")
    lines.append("}")
    return "\n".join(lines) + "\n"
