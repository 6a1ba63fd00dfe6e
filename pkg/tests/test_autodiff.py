"""Unit tests for the tensor engine: op semantics and hand-checked examples."""

import numpy as np
import pytest

from refinpaint.autodiff import (Tensor, bilinear_sample, concat, conv2d, gelu,
                                 grid_sample, layer_norm, nearest_upsample2,
                                 softmax)
from refinpaint.optim import Adam


class TestConv2d:
    def test_all_ones_2x2_kernel(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 2, 2)))
        y = conv2d(x, w)
        assert y.shape == (1, 1, 2, 2)
        assert np.allclose(y.data, 4.0)

    def test_identity_1x1_kernel(self):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 5, 4)))
        w = np.zeros((3, 3, 1, 1))
        for c in range(3):
            w[c, c, 0, 0] = 1.0
        y = conv2d(x, Tensor(w))
        assert np.allclose(y.data, x.data)

    def test_matches_naive_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(1, 2, 5, 5)))
        w = Tensor(rng.normal(size=(3, 2, 3, 3)))
        b = Tensor(rng.normal(size=3))
        y = conv2d(x, w, b, stride=2, padding=1)

        xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
        expected = np.zeros_like(y.data)
        for n in range(1):
            for f in range(3):
                for oy in range(y.shape[2]):
                    for ox in range(y.shape[3]):
                        acc = b.data[f]
                        for c in range(2):
                            for ky in range(3):
                                for kx in range(3):
                                    acc += w.data[f, c, ky, kx] * xp[n, c, oy * 2 + ky, ox * 2 + kx]
                        expected[n, f, oy, ox] = acc
        assert np.abs(y.data - expected).max() < 1e-6

    def test_channel_mismatch_raises(self):
        with pytest.raises(ValueError, match="channel mismatch"):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_output_shape_formula(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            h, w_ = rng.integers(4, 9, size=2)
            k = int(rng.integers(1, 4))
            s = int(rng.integers(1, 3))
            p = int(rng.integers(0, 2))
            x = Tensor(rng.normal(size=(1, 1, h, w_)))
            kern = Tensor(rng.normal(size=(1, 1, k, k)))
            if h + 2 * p < k or w_ + 2 * p < k:
                continue
            y = conv2d(x, kern, stride=s, padding=p)
            assert y.shape[2] == (h + 2 * p - k) // s + 1
            assert y.shape[3] == (w_ + 2 * p - k) // s + 1


class TestSoftmax:
    def test_symmetric(self):
        out = softmax(Tensor(np.array([0.0, 0.0])), axis=0)
        assert np.allclose(out.data, [0.5, 0.5])

    def test_closed_form(self):
        out = softmax(Tensor(np.array([np.log(2.0), 0.0])), axis=0)
        assert np.allclose(out.data, [2 / 3, 1 / 3])

    def test_singleton(self):
        out = softmax(Tensor(np.array([3.7])), axis=0)
        assert np.allclose(out.data, [1.0])

    def test_rows_sum_to_one(self):
        x = Tensor(np.random.default_rng(3).normal(size=(4, 7)) * 10)
        out = softmax(x, axis=1)
        assert np.abs(out.data.sum(axis=1) - 1.0).max() < 1e-6
        assert (out.data >= 0).all()

    def test_permutation_equivariant(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=8)
        perm = rng.permutation(8)
        direct = softmax(Tensor(x[perm]), axis=0).data
        permuted = softmax(Tensor(x), axis=0).data[perm]
        assert np.allclose(direct, permuted)


class TestGelu:
    def test_zero(self):
        assert gelu(Tensor(np.array(0.0))).item() == 0.0

    def test_positive_asymptote(self):
        assert abs(gelu(Tensor(np.array(10.0))).item() - 10.0) < 1e-6

    def test_negative_asymptote(self):
        assert abs(gelu(Tensor(np.array(-10.0))).item()) < 1e-6


class TestLayerNorm:
    def test_constant_slice_is_zero(self):
        x = Tensor(np.full((2, 5), 3.0))
        out = layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
        assert np.abs(out.data).max() < 1e-12

    def test_two_point_closed_form(self):
        x = Tensor(np.array([[1.0, 3.0]]))
        out = layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
        assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-5)

    def test_zero_mean_unit_var(self):
        x = Tensor(np.random.default_rng(5).normal(size=(3, 16)) * 4 + 2)
        out = layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)))
        assert np.abs(out.data.mean(axis=-1)).max() < 1e-5
        assert np.abs(out.data.std(axis=-1) - 1.0).max() < 1e-3


class TestBilinearSample:
    def test_integer_coordinates(self):
        img = np.arange(12, dtype=np.float64).reshape(1, 3, 4)
        assert np.allclose(bilinear_sample(img, 2.0, 3.0), [11.0])

    def test_center_of_2x2(self):
        img = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        assert np.allclose(bilinear_sample(img, 0.5, 0.5), [2.5])

    def test_far_outside_is_zero(self):
        img = np.ones((2, 3, 3))
        assert np.allclose(bilinear_sample(img, -2.0, -2.0), [0.0, 0.0])

    def test_grid_sample_agrees_pointwise(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(1, 2, 5, 5))
        ys = rng.uniform(-1, 5, size=(1, 3, 3))
        xs = rng.uniform(-1, 5, size=(1, 3, 3))
        out = grid_sample(Tensor(x), Tensor(ys), Tensor(xs)).data
        for i in range(3):
            for j in range(3):
                ref = bilinear_sample(x[0], ys[0, i, j], xs[0, i, j])
                assert np.abs(out[0, :, i, j] - ref).max() < 1e-10


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        (x * x).sum().backward()
        assert np.allclose(x.grad, 2 * x.data)

    def test_unused_leaf_gets_no_grad(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        y = Tensor(np.array([2.0]), requires_grad=True)
        (x * x).sum().backward()
        assert y.grad is None

    def test_diamond_graph_accumulates_both_paths(self):
        # f(x) = x^2 * x => f'(x) = 3 x^2, with x^2 shared
        x = Tensor(np.array([1.5]), requires_grad=True)
        sq = x * x
        (sq * x).sum().backward()
        assert np.allclose(x.grad, 3 * x.data ** 2)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (x * x).backward()

    def test_repeated_use_accumulates(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        (x + x).sum().backward()
        assert np.allclose(x.grad, [2.0])


class TestShapes:
    def test_concat_and_split_grad(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones((2, 3)), requires_grad=True)
        out = concat([a, b], axis=1)
        assert out.shape == (2, 5)
        (out * out).sum().backward()
        assert a.grad.shape == (2, 2) and b.grad.shape == (2, 3)

    def test_nearest_upsample(self):
        x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
        y = nearest_upsample2(x)
        assert y.shape == (1, 1, 4, 4)
        assert np.allclose(y.data[0, 0, :2, :2], x.data[0, 0, 0, 0])

    def test_reshape_transpose_roundtrip(self):
        x = Tensor(np.random.default_rng(7).normal(size=(2, 3, 4)), requires_grad=True)
        y = x.transpose(1, 0, 2).reshape(3, 8).transpose(1, 0).reshape(2, 3, 4)
        (y * y).sum().backward()
        assert np.allclose(x.grad, 2 * x.data)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(2)
        opt.step()
        assert np.allclose(p.data, [1.0, 2.0])

    def test_first_step_is_signed_lr(self):
        p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        opt = Adam([p], lr=0.01)
        p.grad = np.array([0.5, -3.0])
        opt.step()
        # bias-corrected first step ~ -lr * sign(g)
        assert np.allclose(p.data, [1.0 - 0.01, -1.0 + 0.01], atol=1e-6)

    def test_matches_hand_executed_trace(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = Adam([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
        theta = np.array([1.0, 2.0])
        m = np.zeros(2)
        v = np.zeros(2)
        for t, g in enumerate((np.array([0.3, -0.7]), np.array([-0.2, 0.4])), start=1):
            p.grad = g.copy()
            opt.step()
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta = theta - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        assert np.abs(p.data - theta).max() < 1e-7
