import numpy as np
import pytest

from etsaliency.gradcam import GradCamBundle, class_weights, combine, gradcam_per_class, saliency_from_bundle
from etsaliency.heatmap import Heatmap


def loop_gradcam(lsfm, grads):
    """Direct loop evaluation of ReLU(sum_k alpha_ck * LSFM_k), alpha_ck = spatial mean of grads."""
    C, K, H, W = grads.shape
    out = np.zeros((C, H, W))
    for c in range(C):
        for k in range(K):
            alpha = 0.0
            for i in range(H):
                for j in range(W):
                    alpha += grads[c, k, i, j]
            alpha /= H * W
            for i in range(H):
                for j in range(W):
                    out[c, i, j] += alpha * lsfm[k, i, j]
    return np.maximum(out, 0.0)


def bundle(lsfm, grads, logits=None, nf=0):
    grads = np.asarray(grads, dtype=float)
    if logits is None:
        logits = np.zeros(grads.shape[0])
    return GradCamBundle(np.asarray(lsfm, dtype=float), grads, logits, no_finding_index=nf)


class TestPerClass:
    def test_unit_gradient_is_relu(self):
        lsfm = np.array([[[1.0, -2.0], [0.5, -0.1]]])
        maps = gradcam_per_class(bundle(lsfm, np.ones((1, 1, 2, 2))))
        np.testing.assert_array_equal(maps[0].values, np.maximum(lsfm[0], 0))

    def test_negative_gradient_clamped(self):
        maps = gradcam_per_class(bundle(np.full((1, 3, 3), 2.0), -np.ones((1, 1, 3, 3))))
        np.testing.assert_array_equal(maps[0].values, 0.0)

    def test_hand_case(self):
        lsfm = np.array([[[2.0]], [[-1.0]]])
        grads = np.array([[[[0.5]], [[1.0]]]])
        maps = gradcam_per_class(bundle(lsfm, grads))
        assert maps[0].values.tolist() == [[0.0]]

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        lsfm, grads = rng.normal(size=(3, 4, 5)), rng.normal(size=(2, 3, 4, 5))
        got = np.stack([m.values for m in gradcam_per_class(bundle(lsfm, grads))])
        np.testing.assert_allclose(got, loop_gradcam(lsfm, grads), atol=1e-12)

    def test_pre_relu_is_linear_in_gradients(self):
        rng = np.random.default_rng(1)
        lsfm, grads = rng.normal(size=(4, 3, 3)), rng.normal(size=(3, 4, 3, 3))
        # subtracting the ReLU of the negated map recovers the signed map
        def signed(g):
            pos = np.stack([m.values for m in gradcam_per_class(bundle(lsfm, g))])
            neg = np.stack([m.values for m in gradcam_per_class(bundle(lsfm, -g))])
            return pos - neg
        np.testing.assert_allclose(signed(2 * grads), 2 * signed(grads), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bundle(np.zeros((2, 3, 3)), np.zeros((1, 3, 3, 3)))
        with pytest.raises(ValueError):
            GradCamBundle(np.zeros((1, 2, 2)), np.zeros((2, 1, 2, 2)), np.zeros(3))
        with pytest.raises(ValueError):
            bundle(np.zeros((1, 2, 2)), np.zeros((2, 1, 2, 2)), nf=2)


class TestClassWeights:
    def test_thresholded_fallback(self):
        np.testing.assert_array_equal(class_weights([-1, -2, -3], "thresholded", 2), [0, 0, 1])

    def test_thresholded_mixed(self):
        np.testing.assert_array_equal(class_weights([0.3, -2, 0.0, 5], "thresholded", 1), [1, 0, 0, 1])

    def test_weighted_zero_logits(self):
        np.testing.assert_array_equal(class_weights([0, 0], "weighted", 0), [0.5, 0.5])

    def test_weighted_is_sigmoid_without_overflow(self):
        z = np.array([-800.0, -3.0, 0.0, 2.0, 800.0])
        w = class_weights(z, "weighted", 0)
        with np.errstate(over="ignore"):
            expected = 1 / (1 + np.exp(-z))
        np.testing.assert_allclose(w, expected, rtol=1e-15)
        assert np.all(np.isfinite(w))

    def test_uniform(self):
        np.testing.assert_array_equal(class_weights([3.0, -1.0, 0.2], "uniform", 0), [1, 1, 1])

    def test_positive_scaling(self):
        z = np.random.default_rng(2).normal(size=14)
        for scheme in ("thresholded", "uniform"):
            np.testing.assert_array_equal(class_weights(z, scheme, 3), class_weights(4.2 * z, scheme, 3))

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            class_weights([1.0], "softmax", 0)


class TestCombine:
    def test_uniform_pair(self):
        out = combine([Heatmap([[1.0, 0.0]]), Heatmap([[0.0, 1.0]])], [1, 1])
        np.testing.assert_array_equal(out.values, [[0.5, 0.5]])

    def test_one_hot(self):
        rng = np.random.default_rng(3)
        maps = [Heatmap(rng.random((4, 4))) for _ in range(3)]
        np.testing.assert_array_equal(combine(maps, [0, 1, 0]).values, maps[1].values)

    def test_weighted_by_hand(self):
        out = combine([Heatmap([[4.0, 0.0]]), Heatmap([[0.0, 4.0]])], [1, 3])
        np.testing.assert_array_equal(out.values, [[1.0, 3.0]])

    def test_all_zero_weights(self):
        with pytest.raises(ValueError, match="all weights zero"):
            combine([Heatmap([[1.0]])], [0.0])

    def test_scale_invariant_and_bounded(self):
        rng = np.random.default_rng(4)
        maps = [Heatmap(rng.random((5, 5))) for _ in range(6)]
        psi = rng.random(6)
        a = combine(maps, psi).values
        np.testing.assert_allclose(combine(maps, 7.5 * psi).values, a, atol=1e-12)
        stack = np.stack([m.values for m in maps])
        assert np.all(a >= stack.min(axis=0)) and np.all(a <= stack.max(axis=0))

    def test_bundle_pipeline(self):
        rng = np.random.default_rng(5)
        b = GradCamBundle(rng.normal(size=(2, 3, 3)), rng.normal(size=(3, 2, 3, 3)), [-1.0, -1.0, -1.0],
                          ("a", "b", "No Finding"), 2)
        np.testing.assert_array_equal(saliency_from_bundle(b, "thresholded").values, gradcam_per_class(b)[2].values)
