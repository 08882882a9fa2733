"""Executable denoiser blocks, the denoising-prior model and their training.

With identity degradation the prior model runs ``K`` stages of

    v_k     = f_k(x_k)
    x_{k+1} = (1 - delta_k*eta_k - delta_k) * x_k + delta_k * y + delta_k*eta_k * v_k

starting from ``x_0 = y``, where every ``f_k`` is a separately parameterised
copy of the searched block.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from .compile import (
    ChannelConv,
    ChannelPad,
    PadCrop,
    ShapePlan,
    ShuffleDown,
    ShuffleUp,
    apply_steps,
    infer_shapes,
)
from .config import EarlyStop
from .engine.dump import load_tensors, save_tensors
from .nsc import BlockGraph, Op, from_json, prune_inactive, to_json

PRELU_INIT = 0.25


class NonFiniteLoss(FloatingPointError):
    pass


def _conv_param(shape, rng, dtype):
    co, ci, k, _ = shape
    return E.Parameter(E.kaiming_init(shape, ci * k * k, rng, dtype)), E.Parameter(np.zeros(co, dtype))


class DenoiserBlock:
    """One NSC block compiled into parameterised ops.

    Parameters are drawn from streams keyed by ``(seed..., layer, slot, step)``
    so a layer's initial weights do not depend on which other layers exist.
    """

    def __init__(self, graph: BlockGraph, plan: ShapePlan, params: dict[str, E.Parameter]):
        self.graph = graph
        self.plan = plan
        self.params = params

    @property
    def image_channels(self):
        return self.plan.input_shape.c

    @classmethod
    def build(cls, graph: BlockGraph, plan: ShapePlan, seed, dtype=np.float32):
        keys = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
        params: dict[str, E.Parameter] = {}
        shapes = plan.node_shapes
        for node in plan.nodes:
            i = node.index
            for slot, operand in enumerate(node.operands, start=1):
                for s, st in enumerate(operand.steps):
                    if isinstance(st, ChannelConv):
                        rng = E.seeded_rng(*keys, i, slot, s)
                        w, b = _conv_param((st.c_out, st.c_in, 1, 1), rng, dtype)
                        params[f"L{i}.in{slot}.s{s}.w"], params[f"L{i}.in{slot}.s{s}.b"] = w, b
            src = node.operands[0]
            c_in = apply_steps(shapes[src.src], src.steps).c
            rng = E.seeded_rng(*keys, i, 0, 0)
            if node.op == Op.CONV:
                co = node.out_shape.c
                params[f"L{i}.w"], params[f"L{i}.b"] = _conv_param((co, c_in, node.kernel, node.kernel), rng, dtype)
                params[f"L{i}.prelu"] = E.Parameter(np.full(co, PRELU_INIT, dtype))
            elif node.op == Op.DOWN:
                params[f"L{i}.w"], params[f"L{i}.b"] = _conv_param((c_in, 4 * c_in, 1, 1), rng, dtype)
            elif node.op == Op.UP:
                params[f"L{i}.w"], params[f"L{i}.b"] = _conv_param((4 * c_in, c_in, 1, 1), rng, dtype)
            elif node.op.is_terminal:
                co = node.out_shape.c
                params[f"L{i}.w"], params[f"L{i}.b"] = _conv_param((co, c_in, 3, 3), rng, dtype)
        return cls(graph, plan, params)

    def parameters(self) -> list[E.Parameter]:
        return list(self.params.values())

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def _repair(self, t, steps, layer, slot):
        for s, st in enumerate(steps):
            if isinstance(st, ChannelConv):
                p = f"L{layer}.in{slot}.s{s}"
                t = E.conv2d(t, self.params[p + ".w"], self.params[p + ".b"])
            elif isinstance(st, ShuffleUp):
                t = E.pixel_shuffle(t, st.s)
            elif isinstance(st, ShuffleDown):
                t = E.pixel_unshuffle(t, st.s)
            elif isinstance(st, PadCrop):
                t = E.pad_crop(t, st.h, st.w)
            elif isinstance(st, ChannelPad):
                t = E.channel_pad(t, st.c)
        return t

    def forward(self, x: E.Tensor, trace: dict | None = None) -> E.Tensor:
        vals = {0: x}
        out = x
        P = self.params
        for node in self.plan.nodes:
            i = node.index
            ins = [self._repair(vals[o.src], o.steps, i, slot)
                   for slot, o in enumerate(node.operands, start=1)]
            a = ins[0]
            op = node.op
            if op == Op.CONV:
                out = E.prelu(E.conv2d(a, P[f"L{i}.w"], P[f"L{i}.b"]), P[f"L{i}.prelu"])
            elif op == Op.DOWN:
                out = E.conv2d(E.pixel_unshuffle(a, 2), P[f"L{i}.w"], P[f"L{i}.b"])
            elif op == Op.UP:
                out = E.pixel_shuffle(E.conv2d(a, P[f"L{i}.w"], P[f"L{i}.b"]), 2)
            elif op == Op.IDENTITY:
                out = a
            elif op == Op.ADD:
                out = E.add(a, ins[1])
            elif op == Op.CONCAT:
                out = E.concat_channels(a, ins[1])
            else:
                out = E.conv2d(a, P[f"L{i}.w"], P[f"L{i}.b"])
                if op == Op.TERMINAL2:
                    out = E.add(out, x)
            vals[i] = out
        if trace is not None:
            trace.update(vals)
        return out

    def __call__(self, x):
        return self.forward(x if isinstance(x, E.Tensor) else E.Tensor(x))


def build_block(graph: BlockGraph, plan: ShapePlan | None = None, seed=0, *, base_width=8,
                input_shape=None, mode="full", dtype=np.float32) -> DenoiserBlock:
    if plan is None:
        plan = infer_shapes(graph, input_shape, mode, base_width)
    return DenoiserBlock.build(graph, plan, seed, dtype)


class PriorModel:
    def __init__(self, blocks, deltas, etas):
        if not blocks:
            raise ValueError("need at least one block")
        self.blocks = list(blocks)
        self.deltas = list(deltas)
        self.etas = list(etas)

    @property
    def K(self):
        return len(self.blocks)

    @classmethod
    def build(cls, graph, plan, K, seed, delta=0.1, eta=0.9, dtype=np.float32):
        blocks = [DenoiserBlock.build(graph, plan, (seed, k), dtype) for k in range(K)]
        deltas = [E.Parameter(np.array(delta, dtype)) for _ in range(K)]
        etas = [E.Parameter(np.array(eta, dtype)) for _ in range(K)]
        return cls(blocks, deltas, etas)

    def named_parameters(self) -> dict[str, E.Parameter]:
        out = {}
        for k, b in enumerate(self.blocks):
            for n, p in b.params.items():
                out[f"b{k}.{n}"] = p
            out[f"b{k}.delta"] = self.deltas[k]
            out[f"b{k}.eta"] = self.etas[k]
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def stage_coefficients(self, k):
        d, e = float(self.deltas[k].data), float(self.etas[k].data)
        return 1 - d * e - d, d, d * e

    def forward(self, y: E.Tensor, denoisers=None) -> E.Tensor:
        """``denoisers`` optionally replaces the learned blocks (for analysis)."""
        y = y if isinstance(y, E.Tensor) else E.Tensor(y)
        fs = denoisers if denoisers is not None else self.blocks
        x = y
        for k in range(self.K):
            v = fs[k](x)
            x = E.prior_mix(x, y, v, self.deltas[k], self.etas[k])
        return x

    __call__ = forward


def prior_forward(model: PriorModel, y) -> E.Tensor:
    return model.forward(y)


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model, noisy, clean, batch=32):
    """Mean and per-image PSNR of ``clamp(model(noisy), 0, 1)`` against ``clean``."""
    noisy = np.asarray(noisy)
    clean = np.asarray(clean)
    if len(noisy) == 0:
        raise ValueError("empty test set")
    if len(noisy) != len(clean):
        raise ValueError("noisy/clean size mismatch")
    dtype = _model_dtype(model)
    scores = []
    for s in range(0, len(noisy), batch):
        out = model(E.Tensor(noisy[s:s + batch].astype(dtype))).data
        out = np.clip(out.astype(np.float64), 0.0, 1.0)
        scores.extend(E.psnr(o, c) for o, c in zip(out, clean[s:s + batch]))
    return float(np.mean(scores)), scores


def _model_dtype(model):
    params = model.parameters()
    return params[0].data.dtype if params else np.float32


# ---------------------------------------------------------------------------
# candidate training


@dataclass
class CandidateResult:
    psnr_early_stop: float
    best_iteration: int
    iterations: int
    history: list = field(default_factory=list)  # (iteration, train loss, val psnr)


def _train_step(model, params, noisy, clean, lr):
    out = model(E.Tensor(noisy))
    loss = E.mse(out, clean)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NonFiniteLoss(f"loss became {value}")
    E.zero_grad(params)
    loss.backward()
    E.adam_step(params, lr)
    return value


def train_candidate(block: DenoiserBlock, data, budget=2000, early_stop: EarlyStop | None = None,
                    lr=1e-3, batch_size=16, seed=0) -> CandidateResult:
    """Train ``block`` alone on noisy->clean pairs with periodic validation.

    Validation runs at iteration 0 and every ``interval`` iterations; training
    stops after ``patience`` consecutive evaluations without improvement or when
    ``budget`` iterations are spent.  Returns the best validation PSNR seen.
    """
    es = early_stop or EarlyStop()
    rng = E.seeded_rng(*(seed if isinstance(seed, (tuple, list)) else (seed,)), 101)
    params = block.parameters()
    dtype = _model_dtype(block)
    best, best_it, bad, it, loss = -math.inf, 0, 0, 0, float("nan")
    history = []
    while True:
        if it % es.interval == 0:
            v, _ = evaluate(block, data.val_noisy, data.val_clean)
            history.append((it, loss, v))
            if v > best:
                best, best_it, bad = v, it, 0
            else:
                bad += 1
                if bad >= es.patience:
                    break
        if it >= budget:
            break
        noisy, clean = data.batch(rng, batch_size, dtype)
        loss = _train_step(block, params, noisy, clean, lr)
        it += 1
    return CandidateResult(best, best_it, it, history)


# ---------------------------------------------------------------------------
# full model training


class FullTrainer:
    """Joint training of all ``K`` stages; resumable at any iteration."""

    def __init__(self, model: PriorModel, data, batch_size=16, base_lr=1e-3, iters_per_epoch=20,
                 halve_every=50, eval_interval=100, seed=0):
        self.model = model
        self.data = data
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.iters_per_epoch = iters_per_epoch
        self.halve_every = halve_every
        self.eval_interval = eval_interval
        self.rng = E.seeded_rng(seed, 202)
        self.iteration = 0
        self.metrics: list[tuple] = []  # (iteration, loss, val psnr or nan)

    def lr_at(self, iteration):
        return E.step_lr(iteration // self.iters_per_epoch, self.base_lr, self.halve_every)

    def run(self, until):
        params = self.model.parameters()
        dtype = _model_dtype(self.model)
        while self.iteration < until:
            noisy, clean = self.data.batch(self.rng, self.batch_size, dtype)
            loss = _train_step(self.model, params, noisy, clean, self.lr_at(self.iteration))
            self.iteration += 1
            val = float("nan")
            if self.eval_interval and self.iteration % self.eval_interval == 0:
                val, _ = evaluate(self.model, self.data.val_noisy, self.data.val_clean)
            self.metrics.append((self.iteration, loss, val))
        return self.model

    def write_metrics(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iteration", "loss", "val_psnr"])
            for it, loss, val in self.metrics:
                w.writerow([it, repr(loss), "" if math.isnan(val) else repr(val)])

    def save(self, path):
        """Checkpoint model, optimiser moments, RNG stream and counters."""
        save_model(self.model, path, extra={
            "iteration": self.iteration,
            "rng": self.rng.bit_generator.state,
            "metrics": [[i, l, None if math.isnan(v) else v] for i, l, v in self.metrics],
        })

    def restore(self, path):
        self.model, extra = load_model(path)
        self.iteration = extra["iteration"]
        self.rng.bit_generator.state = extra["rng"]
        self.metrics = [(i, l, float("nan") if v is None else v) for i, l, v in extra["metrics"]]
        return self


def train_full(model: PriorModel, data, iterations, **kw) -> PriorModel:
    return FullTrainer(model, data, **kw).run(iterations)


# ---------------------------------------------------------------------------
# checkpoints: architecture JSON + raw parameter dump + scalar state

CHECKPOINT_VERSION = 1


def save_model(model: PriorModel, path, extra=None):
    os.makedirs(path, exist_ok=True)
    b0 = model.blocks[0]
    with open(os.path.join(path, "arch.json"), "w") as f:
        f.write(to_json(b0.graph))
    tensors = {}
    for name, p in model.named_parameters().items():
        tensors[name] = p.data
        tensors[name + "#m"] = p.m
        tensors[name + "#v"] = p.v
    save_tensors(os.path.join(path, "params.bin"), tensors)
    state = {
        "version": CHECKPOINT_VERSION,
        "K": model.K,
        "input_shape": list(b0.plan.input_shape),
        "mode": b0.plan.mode,
        "base_width": b0.plan.base_width,
        "dtype": str(b0.parameters()[0].data.dtype) if b0.parameters() else "float32",
        "steps": {name: p.t for name, p in model.named_parameters().items()},
        "extra": extra or {},
    }
    with open(os.path.join(path, "state.json"), "w") as f:
        json.dump(state, f, indent=1, sort_keys=True)


def load_model(path):
    with open(os.path.join(path, "state.json")) as f:
        state = json.load(f)
    if state.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {state.get('version')} != {CHECKPOINT_VERSION}")
    with open(os.path.join(path, "arch.json")) as f:
        graph = from_json(f.read())
    graph = prune_inactive(graph)
    plan = infer_shapes(graph, tuple(state["input_shape"]), state["mode"], state["base_width"])
    dtype = np.dtype(state["dtype"])
    model = PriorModel.build(graph, plan, state["K"], 0, dtype=dtype)
    tensors = load_tensors(os.path.join(path, "params.bin"))
    for name, p in model.named_parameters().items():
        p.data = tensors[name].astype(dtype).reshape(p.data.shape)
        p.m = tensors[name + "#m"].astype(dtype).reshape(p.data.shape)
        p.v = tensors[name + "#v"].astype(dtype).reshape(p.data.shape)
        p.t = state["steps"][name]
    return model, state["extra"]
