"""Loss term tests: closed forms, loop oracles, weight arithmetic."""

import numpy as np
import pytest

from refinpaint.autodiff import Tensor
from refinpaint.features import FeatureExtractor, IdentityExtractor
from refinpaint.losses import (LossWeights, gram_matrix, joint_loss, l1_loss,
                               perceptual_loss, style_loss)

from helpers import check_grads


class TestL1:
    def test_identical_inputs_give_zero(self):
        x = Tensor(np.random.default_rng(0).normal(size=(1, 3, 4, 4)))
        assert l1_loss(x, x).item() == 0.0

    def test_constant_offset(self):
        a = Tensor(np.zeros((2, 3, 4, 4)))
        b = Tensor(np.ones((2, 3, 4, 4)))
        assert l1_loss(a, b).item() == pytest.approx(1.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(1, 2, 3, 3))
        b = rng.normal(size=(1, 2, 3, 3))
        got = l1_loss(Tensor(a), Tensor(b)).item()
        acc = 0.0
        for idx in np.ndindex(a.shape):
            acc += abs(a[idx] - b[idx])
        assert got == pytest.approx(acc / a.size, rel=1e-6)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError, match="mismatch"):
            l1_loss(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 3, 5, 5))))


class TestGram:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        f = rng.normal(size=(3, 4, 5))
        g = gram_matrix(Tensor(f)).data
        expected = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                expected[i, j] = (f[i] * f[j]).sum() / (3 * 4 * 5)
        assert np.abs(g - expected).max() < 1e-10

    def test_symmetric_and_psd_diagonal(self):
        f = Tensor(np.random.default_rng(3).normal(size=(1, 4, 3, 3)))
        g = gram_matrix(f).data[0]
        assert np.abs(g - g.T).max() < 1e-10
        assert (np.diag(g) >= 0).all()

    def test_channel_permutation_permutes_gram(self):
        rng = np.random.default_rng(4)
        f = rng.normal(size=(4, 3, 3))
        perm = rng.permutation(4)
        g = gram_matrix(Tensor(f)).data
        gp = gram_matrix(Tensor(f[perm])).data
        assert np.abs(gp - g[np.ix_(perm, perm)]).max() < 1e-10


class TestPerceptualAndStyle:
    def test_identity_extractor_reduces_to_l1(self):
        rng = np.random.default_rng(5)
        a = Tensor(rng.normal(size=(1, 3, 4, 4)))
        b = Tensor(rng.normal(size=(1, 3, 4, 4)))
        p = perceptual_loss(a, b, IdentityExtractor())
        assert p.item() == pytest.approx(l1_loss(a, b).item(), rel=1e-7)

    def test_style_zero_for_identical_inputs(self):
        x = Tensor(np.random.default_rng(6).normal(size=(1, 3, 8, 8)).astype(np.float32))
        assert style_loss(x, x, FeatureExtractor()).item() == 0.0

    def test_style_invariant_to_spatial_shuffle_with_identity_stage(self):
        # gram matrices ignore spatial arrangement
        rng = np.random.default_rng(7)
        f = rng.normal(size=(1, 3, 4, 4))
        shuffled = f.reshape(1, 3, 16)[:, :, rng.permutation(16)].reshape(1, 3, 4, 4)
        s = style_loss(Tensor(f), Tensor(shuffled), IdentityExtractor())
        assert s.item() == pytest.approx(0.0, abs=1e-12)

    def test_perceptual_positive_for_different_inputs(self):
        rng = np.random.default_rng(8)
        a = Tensor(rng.normal(size=(1, 3, 16, 16)).astype(np.float32))
        b = Tensor(rng.normal(size=(1, 3, 16, 16)).astype(np.float32))
        assert perceptual_loss(a, b, FeatureExtractor()).item() > 0


class TestJoint:
    def test_default_weights(self):
        w = LossWeights()
        assert (w.l1, w.perceptual, w.style) == (1.0, 0.1, 250.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            LossWeights(style=-1.0)

    def test_breakdown_arithmetic(self):
        rng = np.random.default_rng(9)
        a = Tensor(rng.normal(size=(1, 3, 8, 8)).astype(np.float32))
        b = Tensor(rng.normal(size=(1, 3, 8, 8)).astype(np.float32))
        fx = FeatureExtractor()
        total, bd = joint_loss(a, b, fx)
        recomputed = bd["l1"] * 1.0 + bd["perceptual"] * 0.1 + bd["style"] * 250.0
        assert bd["joint"] == pytest.approx(recomputed, rel=1e-5)
        assert total.item() == pytest.approx(bd["joint"])

    def test_hand_weighted_example(self):
        a = Tensor(np.full((1, 1, 2, 2), 2.0))
        b = Tensor(np.zeros((1, 1, 2, 2)))
        # l1 = 2; choose weights directly instead of stubbing features
        total, bd = joint_loss(a, b, IdentityExtractor(),
                               LossWeights(l1=1.0, perceptual=0.5, style=0.0))
        # identity extractor: perceptual == l1 == 2, style == 0
        assert bd["l1"] == pytest.approx(2.0)
        assert total.item() == pytest.approx(2.0 + 0.5 * 2.0)

    def test_scaling_linearity(self):
        rng = np.random.default_rng(10)
        a = Tensor(rng.normal(size=(1, 3, 8, 8)).astype(np.float32))
        b = Tensor(rng.normal(size=(1, 3, 8, 8)).astype(np.float32))
        fx = FeatureExtractor()
        t1, _ = joint_loss(a, b, fx, LossWeights(1.0, 0.1, 250.0))
        t2, _ = joint_loss(a, b, fx, LossWeights(2.0, 0.2, 500.0))
        assert t2.item() == pytest.approx(2 * t1.item(), rel=1e-5)

    def test_gradcheck_through_small_extractor(self):
        rng = np.random.default_rng(11)
        fx = FeatureExtractor(channels=(2, 2, 2, 2, 2), seed=0)
        for w in fx.weights:
            w.data = w.data.astype(np.float64)
        for b in fx.biases:
            b.data = b.data.astype(np.float64)
        a = Tensor(rng.normal(size=(1, 3, 16, 16)), requires_grad=True)
        b = Tensor(rng.normal(size=(1, 3, 16, 16)))
        check_grads(lambda: joint_loss(a, b, fx)[0], [a], tol=1e-4)
