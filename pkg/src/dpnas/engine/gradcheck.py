"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradReport:
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    def passed(self, tol=1e-4):
        return self.max_error < tol

    def __str__(self):
        rows = [f"{k}: {v:.3e}" for k, v in sorted(self.errors.items(), key=lambda kv: -kv[1])]
        return "\n".join(rows)


def grad_check(loss_fn, tensors, h=1e-6, max_entries=None, rng=None):
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    ``tensors`` maps names to float64 tensors that require gradients.  The error
    for each tensor is ``max|a - n| / max(max|a|, max|n|)``, so entries whose
    gradient is tiny are judged relative to the tensor's gradient scale.  When
    ``max_entries`` is set, only that many randomly chosen entries per tensor
    are perturbed.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in tensors.values():
        if t.data.dtype != np.float64:
            raise TypeError("grad_check needs float64 tensors")
        t.grad = None
    loss_fn().backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in tensors.items()}
    report = GradReport()
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        a = analytic[name].reshape(-1)[idx]
        num = np.empty(len(idx))
        for n, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = float(loss_fn().data)
            flat[i] = old - h
            fm = float(loss_fn().data)
            flat[i] = old
            num[n] = (fp - fm) / (2 * h)
        scale = max(np.max(np.abs(a)), np.max(np.abs(num)), 1e-300)
        report.errors[name] = float(np.max(np.abs(a - num)) / scale)
    return report
