"""Adam, seeded random streams and weight initialisation."""

from __future__ import annotations

import numpy as np


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update applied in place to every parameter with a gradient."""
    for p in params:
        if p.grad is None:
            continue
        g = p.grad
        p.t += 1
        p.m *= beta1
        p.m += (1 - beta1) * g
        p.v *= beta2
        p.v += (1 - beta2) * (g * g)
        m_hat = p.m / (1 - beta1 ** p.t)
        v_hat = p.v / (1 - beta2 ** p.t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)


def zero_grad(params):
    for p in params:
        p.grad = None


def seeded_rng(seed, *keys):
    """Independent generator for ``(seed, *keys)``; same inputs give the same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in keys)]))


def kaiming_init(shape, fan_in, rng, dtype=np.float32):
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


def step_lr(epoch, base=1e-3, every=50, factor=0.5):
    """Learning rate halved every ``every`` epochs."""
    return base * factor ** (epoch // every)
