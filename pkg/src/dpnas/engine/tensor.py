"""Dense tensors with reverse-mode gradients.

Feature maps are ``(n, c, h, w)`` arrays.  Each op records its parents and a
closure that pushes the output gradient back to them; :meth:`Tensor.backward`
walks the recorded graph in reverse topological order.  Nothing is recorded
when no input requires a gradient.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior buffers are not needed once propagated
                node.grad = None


class Parameter(Tensor):
    """A leaf tensor with persistent Adam state."""

    __slots__ = ("m", "v", "t")

    def __init__(self, data):
        super().__init__(np.array(data, copy=True), requires_grad=True)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.t = 0

    def zero_grad(self):
        self.grad = None


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


# ---------------------------------------------------------------------------
# ops


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 cross-correlation with zero 'same' padding."""
    n, c, h, w = x.shape
    co, ci, k, k2 = weight.shape
    if c != ci:
        raise ShapeError(f"conv2d expects {ci} input channels, got {c}")
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d needs an odd square kernel, got {k}x{k2}")
    cols = kernels.im2col(x.data, k)
    w2 = weight.data.reshape(co, ci * k * k)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, co, h, w)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(n, co, h * w)
        if weight.requires_grad:
            weight._accumulate(np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=(0, 2)))
        if x.requires_grad:
            x._accumulate(kernels.col2im(np.matmul(w2.T, g2), x.shape, k))

    return _result(out, parents, backward)


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Per-channel parametric ReLU."""
    if slope.shape != (x.shape[1],):
        raise ShapeError(f"prelu slope {slope.shape} vs {x.shape[1]} channels")
    a = slope.data[None, :, None, None]
    neg = x.data < 0
    out = np.where(neg, a * x.data, x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.where(neg, a * g, g))
        if slope.requires_grad:
            slope._accumulate(np.where(neg, g * x.data, 0).sum(axis=(0, 2, 3)))

    return _result(out, (x, slope), backward)


def _shuffle(a, r):
    n, c, h, w = a.shape
    if c % (r * r):
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by {r * r}")
    co = c // (r * r)
    return a.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)


def _unshuffle(a, r):
    n, c, h, w = a.shape
    if h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: {h}x{w} not divisible by {r}")
    return a.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(
        n, c * r * r, h // r, w // r)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """``out[c, h*r+i, w*r+j] = in[c*r*r + i*r + j, h, w]``."""
    out = _shuffle(x.data, r)
    return _result(out, (x,), lambda g: x._accumulate(_unshuffle(g, r)))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    out = _unshuffle(x.data, r)
    return _result(out, (x,), lambda g: x._accumulate(_shuffle(g, r)))


def add(x: Tensor, y: Tensor) -> Tensor:
    x, y = _wrap(x), _wrap(y)
    if x.shape != y.shape:
        raise ShapeError(f"add: {x.shape} vs {y.shape}")

    def backward(g):
        if x.requires_grad:
            x._accumulate(g)
        if y.requires_grad:
            y._accumulate(g)

    return _result(x.data + y.data, (x, y), backward)


def concat_channels(x: Tensor, y: Tensor) -> Tensor:
    """Stack channels with ``x`` first."""
    if x.shape[0] != y.shape[0] or x.shape[2:] != y.shape[2:]:
        raise ShapeError(f"concat: {x.shape} vs {y.shape}")
    cx = x.shape[1]

    def backward(g):
        if x.requires_grad:
            x._accumulate(g[:, :cx])
        if y.requires_grad:
            y._accumulate(g[:, cx:])

    return _result(np.concatenate([x.data, y.data], axis=1), (x, y), backward)


def pad_crop(x: Tensor, h: int, w: int) -> Tensor:
    """Center-crop or symmetrically zero-pad the spatial dims to ``(h, w)``."""
    n, c, hi, wi = x.shape
    out = np.zeros((n, c, h, w), dtype=x.dtype)
    # source and destination windows per axis
    def win(src, dst):
        if src >= dst:
            off = (src - dst) // 2
            return slice(off, off + dst), slice(0, dst)
        off = (dst - src) // 2
        return slice(0, src), slice(off, off + src)

    sh, dh = win(hi, h)
    sw, dw = win(wi, w)
    out[:, :, dh, dw] = x.data[:, :, sh, sw]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, :, sh, sw] = g[:, :, dh, dw]
        x._accumulate(gx)

    return _result(out, (x,), backward)


def channel_pad(x: Tensor, c: int) -> Tensor:
    """Zero-pad or truncate channels to ``c``."""
    n, ci, h, w = x.shape
    out = np.zeros((n, c, h, w), dtype=x.dtype)
    m = min(c, ci)
    out[:, :m] = x.data[:, :m]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, :m] = g[:, :m]
        x._accumulate(gx)

    return _result(out, (x,), backward)


def prior_mix(x: Tensor, y: Tensor, v: Tensor, delta: Tensor, eta: Tensor) -> Tensor:
    """One denoising-prior step with identity degradation:
    ``(1 - delta*eta - delta) * x + delta * y + delta*eta * v``.
    """
    d = delta.data
    e = eta.data
    a = 1 - d * e - d
    out = (a * x.data + d * y.data + (d * e) * v.data).astype(x.dtype, copy=False)

    def backward(g):
        if x.requires_grad:
            x._accumulate(a * g)
        if y.requires_grad:
            y._accumulate(d * g)
        if v.requires_grad:
            v._accumulate((d * e) * g)
        if delta.requires_grad or eta.requires_grad:
            g64 = g.astype(np.float64)
            xd, yd, vd = (t.data.astype(np.float64) for t in (x, y, v))
            if delta.requires_grad:
                delta._accumulate(np.sum(g64 * (yd - (e + 1) * xd + e * vd)))
            if eta.requires_grad:
                eta._accumulate(np.sum(g64 * (d * (vd - xd))))

    return _result(out, (x, y, v, delta, eta), backward)


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error accumulated in float64."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != t.shape:
        raise ShapeError(f"mse: {pred.shape} vs {t.shape}")
    diff = pred.data.astype(np.float64) - t
    out = np.mean(diff * diff)

    def backward(g):
        pred._accumulate((g * 2.0 / diff.size) * diff)

    return _result(np.float64(out), (pred,), backward)


def weighted_sum(x: Tensor, weights) -> Tensor:
    """``sum(x * weights)`` for a constant array, in float64."""
    wts = np.asarray(weights, dtype=np.float64)
    out = np.sum(x.data.astype(np.float64) * wts)
    return _result(np.float64(out), (x,), lambda g: x._accumulate(g * wts))


def psnr(pred, target, max_val=1.0, clamp_db=99.0):
    """Peak signal-to-noise ratio in dB; ``clamp_db`` when the error vanishes."""
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    err = np.mean((p.astype(np.float64) - t.astype(np.float64)) ** 2)
    if err < 1e-12:
        return float(clamp_db)
    return float(10.0 * np.log10(max_val * max_val / err))
