"""Compare the Cython and pure-Python convolution kernels.

    python benchmarks/bench_kernels.py [--repeat 50]

Times im2col, col2im and one forward/backward pass of a 3x3 conv layer for
each available backend, and checks that both backends agree bit for bit.
"""

import argparse
import timeit

import numpy as np

from dpnas.engine import Parameter, Tensor, conv2d, kernels


SHAPES = [(16, 8, 32, 32), (16, 8, 64, 64), (4, 32, 32, 32)]


def bench(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=30)
    args = ap.parse_args()
    backends = kernels.available_backends()
    rng = np.random.default_rng(0)
    print(f"backends: {', '.join(backends)}")
    print(f"{'shape':>18} {'op':>8} " + " ".join(f"{b + ' ms':>11}" for b in backends) + "  speedup")
    for shape in SHAPES:
        x = rng.standard_normal(shape).astype(np.float32)
        n, c, h, w = shape
        cols = {b: kernels.im2col(x, 3, backend=b) for b in backends}
        if len(backends) == 2:
            assert np.array_equal(cols["python"], cols["cython"])
            assert np.array_equal(kernels.col2im(cols["python"], shape, 3, backend="python"),
                                  kernels.col2im(cols["python"], shape, 3, backend="cython"))
        wt = Parameter(rng.standard_normal((c, c, 3, 3)).astype(np.float32) * 0.1)
        bias = Parameter(np.zeros(c, np.float32))
        rows = {}
        for b in backends:
            kernels.BACKEND = b
            rows.setdefault("im2col", []).append(bench(lambda: kernels.im2col(x, 3, backend=b), args.repeat))
            rows.setdefault("col2im", []).append(
                bench(lambda: kernels.col2im(cols[b], shape, 3, backend=b), args.repeat))
            rows.setdefault("conv f+b", []).append(bench(lambda: _conv(x, wt, bias), args.repeat))
        for op, ts in rows.items():
            speed = f"{ts[0] / ts[1]:7.2f}x" if len(ts) == 2 else ""
            print(f"{str(shape):>18} {op:>8} " + " ".join(f"{t:11.3f}" for t in ts) + "  " + speed)
    kernels.BACKEND = backends[-1]


def _conv(x, w, b):
    w.grad = b.grad = None
    out = conv2d(Tensor(x, requires_grad=True), w, b)
    out.backward(np.ones_like(out.data))


if __name__ == "__main__":
    main()
