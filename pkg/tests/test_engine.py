import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import dpnas.engine as E
from dpnas.engine import Parameter, Tensor, kernels
from dpnas.engine import _pykernels


def t64(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def p64(rng, *shape, scale=1.0):
    return Parameter(rng.standard_normal(shape) * scale)


def test_conv_identity_1x1():
    x = np.random.default_rng(0).standard_normal((2, 3, 5, 5))
    w = Parameter(np.eye(3).reshape(3, 3, 1, 1))
    out = E.conv2d(Tensor(x), w, Parameter(np.zeros(3)))
    assert np.array_equal(out.data, x)


def test_conv_zero_padding_tap_counts():
    x = np.full((1, 1, 4, 5), 2.0)
    out = E.conv2d(Tensor(x), Parameter(np.ones((1, 1, 3, 3))), Parameter(np.zeros(1))).data[0, 0]
    assert out[1, 1] == 18 and out[1, 3] == 18
    assert out[0, 2] == 12 and out[2, 0] == 12
    assert out[0, 0] == 8 and out[-1, -1] == 8


def test_conv_channel_mismatch():
    with pytest.raises(Exception):
        E.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Parameter(np.zeros((1, 3, 3, 3))))


@pytest.mark.parametrize("k", [1, 3])
def test_conv_gradcheck(k):
    rng = np.random.default_rng(k)
    x, w, b = t64(rng, 2, 3, 5, 4), p64(rng, 4, 3, k, k), p64(rng, 4)
    rep = E.grad_check(lambda: E.weighted_sum(E.conv2d(x, w, b), np.linspace(-1, 1, 160).reshape(2, 4, 5, 4)),
                       {"x": x, "w": w, "b": b})
    assert rep.passed(1e-6), rep


def test_prelu_values_and_grad():
    x = Tensor(np.array([2.0, -2.0]).reshape(1, 2, 1, 1), requires_grad=True)
    a = Parameter(np.array([0.25, 0.25]))
    out = E.prelu(x, a)
    assert out.data.ravel().tolist() == [2.0, -0.5]
    out.backward()
    assert a.grad.tolist() == [0.0, -2.0]
    rng = np.random.default_rng(1)
    x, a = t64(rng, 2, 3, 4, 4), p64(rng, 3)
    assert E.grad_check(lambda: E.weighted_sum(E.prelu(x, a), np.arange(96.0).reshape(2, 3, 4, 4)),
                        {"x": x, "a": a}).passed(1e-6)


def test_pixel_shuffle_layout():
    x = Tensor(np.array([1.0, 2, 3, 4]).reshape(1, 4, 1, 1))
    assert E.pixel_shuffle(x, 2).data.reshape(2, 2).tolist() == [[1, 2], [3, 4]]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(0, 10**6))
def test_shuffle_inverse_and_sum(r, c, h, w, seed):
    x = np.random.default_rng(seed).standard_normal((2, c * r * r, h, w))
    y = E.pixel_shuffle(Tensor(x), r)
    assert y.shape == (2, c, h * r, w * r)
    assert np.array_equal(E.pixel_unshuffle(y, r).data, x)
    assert np.array_equal(np.sort(y.data.ravel()), np.sort(x.ravel()))
    # explicit index formula out[c][h*r+i][w*r+j] = in[c*r*r+i*r+j][h][w]
    i, j = r - 1, 0
    assert y.data[1, c - 1, (h - 1) * r + i, j] == x[1, (c - 1) * r * r + i * r + j, h - 1, 0]


def test_shuffle_divisibility():
    with pytest.raises(Exception):
        E.pixel_shuffle(Tensor(np.zeros((1, 3, 2, 2))), 2)
    with pytest.raises(Exception):
        E.pixel_unshuffle(Tensor(np.zeros((1, 1, 3, 2))), 2)


def test_shuffle_gradcheck():
    rng = np.random.default_rng(2)
    x = t64(rng, 1, 8, 2, 2)
    wts = rng.standard_normal((1, 2, 4, 4))
    assert E.grad_check(lambda: E.weighted_sum(E.pixel_shuffle(x, 2), wts), {"x": x}).passed(1e-6)
    x = t64(rng, 1, 2, 4, 4)
    wts = rng.standard_normal((1, 8, 2, 2))
    assert E.grad_check(lambda: E.weighted_sum(E.pixel_unshuffle(x, 2), wts), {"x": x}).passed(1e-6)


def test_add_concat():
    rng = np.random.default_rng(3)
    x = t64(rng, 1, 2, 4, 4)
    assert np.array_equal(E.add(x, Tensor(np.zeros((1, 2, 4, 4)))).data, x.data)
    y = t64(rng, 1, 3, 4, 4)
    cat = E.concat_channels(x, y)
    assert cat.shape == (1, 5, 4, 4)
    assert np.array_equal(cat.data[:, :2], x.data)
    wts = rng.standard_normal((1, 5, 4, 4))
    assert E.grad_check(lambda: E.weighted_sum(E.concat_channels(x, y), wts), {"x": x, "y": y}).passed(1e-6)
    z = t64(rng, 1, 2, 4, 4)
    assert E.grad_check(lambda: E.weighted_sum(E.add(x, z), wts[:, :2]), {"x": x, "z": z}).passed(1e-6)
    with pytest.raises(Exception):
        E.add(x, y)


def test_pad_crop_channel_pad_gradcheck():
    rng = np.random.default_rng(4)
    x = t64(rng, 1, 3, 4, 4)
    for fn, shape in [(lambda: E.pad_crop(x, 8, 8), (1, 3, 8, 8)), (lambda: E.pad_crop(x, 2, 2), (1, 3, 2, 2)),
                      (lambda: E.channel_pad(x, 5), (1, 5, 4, 4)), (lambda: E.channel_pad(x, 2), (1, 2, 4, 4))]:
        assert fn().shape == shape
        wts = rng.standard_normal(shape)
        assert E.grad_check(lambda: E.weighted_sum(fn(), wts), {"x": x}).passed(1e-6)


def test_prior_mix_gradcheck():
    rng = np.random.default_rng(5)
    x, y, v = t64(rng, 1, 1, 3, 3), t64(rng, 1, 1, 3, 3), t64(rng, 1, 1, 3, 3)
    d, e = Parameter(np.array(0.1)), Parameter(np.array(0.9))
    wts = rng.standard_normal((1, 1, 3, 3))
    rep = E.grad_check(lambda: E.weighted_sum(E.prior_mix(x, y, v, d, e), wts),
                       {"x": x, "y": y, "v": v, "d": d, "e": e})
    assert rep.passed(1e-6), rep


def test_mse_psnr():
    a = np.random.default_rng(6).random((2, 1, 4, 4))
    assert E.mse(Tensor(a), a).item() == 0.0
    assert E.psnr(a, a) == 99.0
    assert E.psnr(np.full(4, 0.1), np.zeros(4)) == pytest.approx(20.0, abs=1e-12)
    assert E.psnr(np.full(4, 0.01), np.zeros(4)) == pytest.approx(40.0, abs=1e-12)
    rng = np.random.default_rng(7)
    x = t64(rng, 1, 2, 3, 3)
    assert E.grad_check(lambda: E.mse(x, np.zeros((1, 2, 3, 3))), {"x": x}).passed(1e-6)


def test_adam():
    p = Parameter(np.array([1.0, -1.0]))
    p.grad = np.array([0.5, 2.0])
    E.adam_step([p], 1e-3)
    assert np.allclose(p.data, [1 - 1e-3, -1 - 1e-3], atol=1e-9)
    q = Parameter(np.array([3.0]))
    q.grad = np.zeros(1)
    E.adam_step([q], 1e-3)
    assert q.data[0] == 3.0
    th = Parameter(np.array([2.0]))
    f = [th.data[0] ** 2]
    for _ in range(2):
        th.grad = 2 * th.data
        E.adam_step([th], 0.1)
        f.append(th.data[0] ** 2)
    assert f[2] < f[1] < f[0]


def test_seeded_rng_and_init():
    a = E.kaiming_init((8, 4, 3, 3), 36, E.seeded_rng(3, 1))
    b = E.kaiming_init((8, 4, 3, 3), 36, E.seeded_rng(3, 1))
    c = E.kaiming_init((8, 4, 3, 3), 36, E.seeded_rng(4, 1))
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    big = E.kaiming_init((256, 64, 3, 3), 576, E.seeded_rng(0), np.float64)
    assert big.std() == pytest.approx(np.sqrt(2 / 576), rel=0.02)


def test_step_lr_schedule():
    assert E.step_lr(0) == 1e-3
    assert E.step_lr(50) == 5e-4
    assert E.step_lr(100) == 2.5e-4
    assert E.step_lr(49) == 1e-3


@pytest.mark.skipif("cython" not in kernels.available_backends(), reason="extension not built")
@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5), st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]),
       st.sampled_from([np.float32, np.float64]), st.integers(0, 10**6))
def test_backends_bit_identical(n, c, h, w, k, dtype, seed):
    x = np.random.default_rng(seed).standard_normal((n, c, h, w)).astype(dtype)
    a = kernels.im2col(x, k, backend="python")
    b = kernels.im2col(x, k, backend="cython")
    assert np.array_equal(a, b)
    assert np.array_equal(kernels.col2im(a, x.shape, k, backend="python"),
                          kernels.col2im(a, x.shape, k, backend="cython"))


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 3, 5, 6))
    cols = _pykernels.im2col(x, 3)
    y = rng.standard_normal(cols.shape)
    assert np.sum(cols * y) == pytest.approx(np.sum(x * _pykernels.col2im(y, x.shape, 3)), rel=1e-12)


def test_pure_python_env_switch():
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-c", "from dpnas.engine import BACKEND; print(BACKEND)"],
                         env={**__import__("os").environ, "DPNAS_PURE_PYTHON": "1"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_dump_format(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    raw = E.tensor_bytes(arr)
    assert raw[:4] == b"DPNT"
    assert raw[4:8] == bytes([1, 0, 2, 0])
    assert raw[8:16] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert raw[16:] == arr.astype("<f4").tobytes()
    back, end = E.read_tensor(raw)
    assert end == len(raw) and np.array_equal(back, arr)
    with pytest.raises(E.TruncatedDump):
        E.read_tensor(raw[:-1])
    E.save_tensors(tmp_path / "a.bin", {"w": arr, "d": np.array([1.5])})
    got = E.load_tensors(tmp_path / "a.bin")
    assert list(got) == ["w", "d"] and got["d"].dtype == np.float64
