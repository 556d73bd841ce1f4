import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marsseg import functional as F
from marsseg.errors import DegenerateVarianceError, DimensionError, GeometryError
from marsseg.tensor import Tensor, concat


def naive_conv(x, w, b, stride, dilation, padding):
    """Direct sliding-window cross-correlation used as an oracle."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - ((kh - 1) * dilation + 1)) // stride + 1
    ow = (wd + 2 * padding - ((kw - 1) * dilation + 1)) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for bi in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0 if b is None else b[co]
                    for ci in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += w[co, ci, u, v] * xp[bi, ci, i * stride + u * dilation, j * stride + v * dilation]
                    out[bi, co, i, j] = acc
    return out


def test_conv_ones_kernel_counts_neighbours():
    out = F.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), padding=1).data[0, 0]
    expected = np.array([[4, 6, 6, 4], [6, 9, 9, 6], [6, 9, 9, 6], [4, 6, 6, 4]], dtype=float)
    np.testing.assert_array_equal(out, expected)


def test_conv_1x1_scales_input(rng):
    x = rng.standard_normal((2, 1, 5, 5)).astype(np.float32)
    out = F.conv2d(Tensor(x), Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.zeros(1)))
    np.testing.assert_allclose(out.data, 2 * x, rtol=1e-6)


def test_dilated_conv_keeps_extent():
    out = F.conv2d(Tensor(np.ones((1, 2, 16, 16))), Tensor(np.ones((3, 2, 3, 3))), dilation=2, padding=2)
    assert out.shape == (1, 3, 16, 16)


@pytest.mark.parametrize("stride,dilation,padding", [(1, 1, 0), (1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 2, 1), (3, 1, 2)])
def test_conv_matches_naive_oracle(f64, rng, stride, dilation, padding):
    x = rng.standard_normal((2, 3, 7, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, dilation, padding).data
    np.testing.assert_allclose(out, naive_conv(x, w, b, stride, dilation, padding), rtol=1e-10, atol=1e-10)


def test_conv_is_linear(f64, rng):
    x, y = rng.standard_normal((2, 2, 6, 6)), rng.standard_normal((2, 2, 6, 6))
    w = Tensor(rng.standard_normal((3, 2, 3, 3)))
    a, c = 0.7, -1.3
    lhs = F.conv2d(Tensor(a * x + c * y), w, padding=1).data
    rhs = a * F.conv2d(Tensor(x), w, padding=1).data + c * F.conv2d(Tensor(y), w, padding=1).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_conv_errors():
    with pytest.raises(DimensionError):
        F.conv2d(Tensor(np.ones((1, 2, 5, 5))), Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(GeometryError):
        F.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


@settings(max_examples=60, deadline=None)
@given(
    k=st.integers(1, 4), stride=st.integers(1, 3), dilation=st.integers(1, 3),
    padding=st.integers(0, 3), h=st.integers(1, 12), w=st.integers(1, 12),
)
def test_conv_shape_formula(k, stride, dilation, padding, h, w):
    eff = (k - 1) * dilation + 1
    x, wt = Tensor(np.zeros((1, 1, h, w))), Tensor(np.zeros((2, 1, k, k)))
    if eff > h + 2 * padding or eff > w + 2 * padding:
        with pytest.raises(GeometryError):
            F.conv2d(x, wt, stride=stride, dilation=dilation, padding=padding)
        return
    out = F.conv2d(x, wt, stride=stride, dilation=dilation, padding=padding)
    assert out.shape[2] == (h + 2 * padding - eff) // stride + 1
    assert out.shape[3] == (w + 2 * padding - eff) // stride + 1


def test_max_pool_values_and_shape(rng):
    x = rng.standard_normal((1, 2, 8, 8))
    out = F.max_pool2d(Tensor(x), 3, 2, 1).data
    assert out.shape == (1, 2, 4, 4)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    for i in range(4):
        for j in range(4):
            np.testing.assert_allclose(out[0, :, i, j], xp[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3].max(axis=(1, 2)), rtol=1e-6)


def test_batch_norm_hand_case():
    x = Tensor(np.array([1.0, 3.0]).reshape(1, 1, 1, 2))
    out = F.batch_norm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), eps=0.0)
    np.testing.assert_allclose(out.data.ravel(), [-1.0, 1.0])


def test_batch_norm_normalizes_and_tracks_running_stats(f64, rng):
    x = rng.normal(3.0, 2.0, size=(4, 3, 5, 5))
    rm, rv = np.zeros(3), np.ones(3)
    out = F.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, training=True)
    np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0, atol=1e-10)
    np.testing.assert_allclose(out.data.var(axis=(0, 2, 3)), 1, atol=1e-4)
    count = 4 * 25
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * count / (count - 1))
    ev = F.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, training=False).data
    np.testing.assert_allclose(ev, (x - rm.reshape(1, 3, 1, 1)) / np.sqrt(rv.reshape(1, 3, 1, 1) + 1e-5))


def test_batch_norm_constant_channel_gives_beta():
    out = F.batch_norm(Tensor(np.full((2, 1, 3, 3), 5.0)), Tensor(np.ones(1)), Tensor(np.full(1, 0.25)))
    np.testing.assert_allclose(out.data, 0.25)


def test_batch_norm_degenerate_variance():
    with pytest.raises(DegenerateVarianceError):
        F.batch_norm(Tensor(np.ones((1, 2, 1, 1))), Tensor(np.ones(2)), Tensor(np.zeros(2)))


def test_softmax_values():
    np.testing.assert_allclose(F.softmax(Tensor([1.0, 2.0, 3.0])).data, [0.09003, 0.24473, 0.66524], atol=1e-5)
    np.testing.assert_allclose(F.softmax(Tensor(np.full(4, 7.0))).data, 0.25)
    assert Tensor([0.0]).sigmoid().item() == 0.5


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_softmax_sums_to_one_and_sigmoid_in_range(values):
    x = Tensor(np.array(values, dtype=np.float64), dtype=np.float64)
    assert abs(F.softmax(x).data.sum() - 1) < 1e-6
    s = Tensor(np.clip(values, -30, 30), dtype=np.float64).sigmoid().data
    assert np.all((s > 0) & (s < 1))


def test_log_softmax_matches_log_of_softmax(f64, rng):
    x = Tensor(rng.standard_normal((3, 5)))
    np.testing.assert_allclose(F.log_softmax(x, axis=1).data, np.log(F.softmax(x, axis=1).data), atol=1e-12)


def test_adaptive_pool_quadrant_means():
    x = Tensor(np.arange(16, dtype=float).reshape(1, 1, 4, 4))
    np.testing.assert_allclose(F.adaptive_avg_pool2d(x, 2, 2).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])


def pool_oracle(x, oh, ow):
    h, w = x.shape
    out = np.zeros((oh, ow))
    for i in range(oh):
        for j in range(ow):
            r0, r1 = math.floor(i * h / oh), math.ceil((i + 1) * h / oh)
            c0, c1 = math.floor(j * w / ow), math.ceil((j + 1) * w / ow)
            out[i, j] = x[r0:r1, c0:c1].mean()
    return out


@settings(max_examples=50, deadline=None)
@given(h=st.integers(1, 11), w=st.integers(1, 11), data=st.data())
def test_adaptive_pool_bins_match_oracle(h, w, data):
    oh, ow = data.draw(st.integers(1, h)), data.draw(st.integers(1, w))
    x = np.random.default_rng(h * 31 + w).standard_normal((h, w))
    out = F.adaptive_avg_pool2d(Tensor(x[None, None], dtype=np.float64), oh, ow).data[0, 0]
    np.testing.assert_allclose(out, pool_oracle(x, oh, ow), atol=1e-12)


def test_adaptive_pool_global_and_constant(rng):
    x = rng.standard_normal((2, 3, 5, 7))
    np.testing.assert_allclose(F.adaptive_avg_pool2d(Tensor(x), 1, 1).data[..., 0, 0], x.mean(axis=(2, 3)), rtol=1e-5)
    np.testing.assert_allclose(F.adaptive_avg_pool2d(Tensor(np.full((1, 1, 5, 7), 3.0)), 3, 4).data, 3.0)
    with pytest.raises(GeometryError):
        F.adaptive_avg_pool2d(Tensor(x), 6, 2)


def bilinear_oracle(x, oh, ow):
    """Scalar half-pixel-center bilinear interpolation."""
    h, w = x.shape
    out = np.zeros((oh, ow))
    for i in range(oh):
        for j in range(ow):
            sy = max((i + 0.5) * h / oh - 0.5, 0.0)
            sx = max((j + 0.5) * w / ow - 0.5, 0.0)
            y0, x0 = min(int(sy), h - 1), min(int(sx), w - 1)
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[i, j] = (
                (1 - fy) * (1 - fx) * x[y0, x0] + (1 - fy) * fx * x[y0, x1]
                + fy * (1 - fx) * x[y1, x0] + fy * fx * x[y1, x1]
            )
    return out


def test_bilinear_hand_values():
    x = Tensor(np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2))
    out = F.bilinear_upsample(x, 4, 4).data[0, 0]
    assert out[0, 0] == 0.0
    assert out[1, 1] == pytest.approx(0.75)


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 6), w=st.integers(1, 6), oh=st.integers(1, 12), ow=st.integers(1, 12))
def test_bilinear_matches_oracle(h, w, oh, ow):
    x = np.random.default_rng(h * 7 + w).standard_normal((h, w))
    out = F.bilinear_upsample(Tensor(x[None, None], dtype=np.float64), oh, ow).data[0, 0]
    np.testing.assert_allclose(out, bilinear_oracle(x, oh, ow), atol=1e-12)


def test_bilinear_identity_and_constant(rng):
    x = rng.standard_normal((1, 2, 5, 3)).astype(np.float32)
    np.testing.assert_allclose(F.bilinear_upsample(Tensor(x), 5, 3).data, x)
    np.testing.assert_allclose(F.bilinear_upsample(Tensor(np.full((1, 1, 3, 3), 2.0)), 7, 8).data, 2.0, rtol=1e-6)


def test_concat_shape():
    assert concat([Tensor(np.ones((1, 4, 8, 8))), Tensor(np.ones((1, 4, 8, 8)))], axis=1).shape == (1, 8, 8, 8)
