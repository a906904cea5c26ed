import math

import numpy as np
import pytest

from etsaliency.heatmap import Heatmap
from etsaliency.registration import (
    DiagonalAffine2D,
    NamedBox,
    compute_center_bias,
    fit_transform,
    mean_boxes,
    project_center_bias,
    registration_residual,
    resize_heatmap,
    warp_heatmap,
)

LAYOUT = [NamedBox("lungs", 20, 15, 100, 95), NamedBox("heart", 50, 50, 80, 90)]


def blob(width, height, cx, cy, sigma=5.0):
    yy, xx = np.mgrid[0:height, 0:width] + 0.5
    return Heatmap(np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2)))


def lstsq_oracle(source, reference):
    """Per-axis least squares through numpy's generic solver."""
    src = {b.name: b for b in source}
    pts_s, pts_r = [], []
    for b in reference:
        pts_s += src[b.name].corners()
        pts_r += b.corners()
    s, r = np.array(pts_s), np.array(pts_r)
    out = []
    for axis in (0, 1):
        A = np.column_stack([s[:, axis], np.ones(len(s))])
        out.append(np.linalg.lstsq(A, r[:, axis], rcond=None)[0])
    return out  # [(scale_x, tx), (scale_y, ty)]


def bilinear_oracle(v, qx, qy):
    """Scalar bilinear lookup at continuous point (qx, qy), pixel centers at k + 0.5."""
    h, w = v.shape
    if not (0 <= qx < w and 0 <= qy < h):
        return 0.0
    u = min(max(qx - 0.5, 0.0), w - 1.0)
    t = min(max(qy - 0.5, 0.0), h - 1.0)
    i0, j0 = int(math.floor(u)), int(math.floor(t))
    i1, j1 = min(i0 + 1, w - 1), min(j0 + 1, h - 1)
    fu, ft = u - i0, t - j0
    return (
        v[j0, i0] * (1 - fu) * (1 - ft)
        + v[j0, i1] * fu * (1 - ft)
        + v[j1, i0] * (1 - fu) * ft
        + v[j1, i1] * fu * ft
    )


class TestMeanBoxes:
    def test_identical(self):
        assert mean_boxes([LAYOUT, LAYOUT]) == LAYOUT

    def test_coordinate_means(self):
        a = [NamedBox("lungs", 0, 0, 100, 100)]
        b = [NamedBox("lungs", 20, 20, 140, 140)]
        assert mean_boxes([a, b]) == [NamedBox("lungs", 10, 10, 120, 120)]

    def test_missing_box_names_image(self):
        with pytest.raises(ValueError, match="image img2 is missing box 'heart'"):
            mean_boxes([LAYOUT, LAYOUT[:1]], image_ids=["img1", "img2"])


class TestFitTransform:
    def test_identity(self):
        t = fit_transform(LAYOUT, LAYOUT)
        assert (t.scale_x, t.scale_y) == pytest.approx((1, 1), abs=1e-12)
        assert (t.translate_x, t.translate_y) == pytest.approx((0, 0), abs=1e-12)

    def test_scale_half(self):
        t = fit_transform([NamedBox("b", 0, 0, 100, 100)], [NamedBox("b", 0, 0, 50, 50)])
        assert (t.scale_x, t.scale_y, t.translate_x, t.translate_y) == pytest.approx((0.5, 0.5, 0, 0), abs=1e-12)

    def test_translation(self):
        t = fit_transform([NamedBox("b", 10, 10, 20, 20)], [NamedBox("b", 30, 30, 40, 40)])
        assert (t.scale_x, t.scale_y, t.translate_x, t.translate_y) == pytest.approx((1, 1, 20, 20), abs=1e-12)

    def test_matches_lstsq_on_inexact_fit(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            src, ref = [], []
            for name in ("lungs", "heart", "spine"):
                x0, y0 = rng.uniform(0, 50, 2)
                src.append(NamedBox(name, x0, y0, x0 + rng.uniform(5, 40), y0 + rng.uniform(5, 40)))
                x0, y0 = rng.uniform(0, 50, 2)
                ref.append(NamedBox(name, x0, y0, x0 + rng.uniform(5, 40), y0 + rng.uniform(5, 40)))
            try:
                t = fit_transform(src, ref)
            except ValueError:
                continue  # negative best-fit scale is rejected by design
            (sx, tx), (sy, ty) = lstsq_oracle(src, ref)
            assert (t.scale_x, t.translate_x, t.scale_y, t.translate_y) == pytest.approx((sx, tx, sy, ty), abs=1e-9)

    def test_exact_for_diagonal_affine(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            true = DiagonalAffine2D(*rng.uniform(0.5, 2, 2), *rng.uniform(-30, 30, 2))
            ref = [true.apply_box(b) for b in LAYOUT]
            t = fit_transform(LAYOUT, ref)
            assert registration_residual(t, LAYOUT, ref) < 1e-9

    def test_name_mismatch(self):
        with pytest.raises(ValueError, match="box names differ"):
            fit_transform(LAYOUT, LAYOUT[:1])

    def test_mirrored_layout_is_degenerate(self):
        src = [NamedBox("a", 0, 0, 10, 10), NamedBox("b", 20, 0, 30, 10)]
        ref = [NamedBox("a", 20, 0, 30, 10), NamedBox("b", 0, 0, 10, 10)]
        with pytest.raises(ValueError, match="degenerate geometry"):
            fit_transform(src, ref)

    def test_inverse_roundtrip(self):
        t = DiagonalAffine2D(1.5, 0.7, 3.0, -4.0)
        x, y = t.inverse().apply(*t.apply(12.0, 7.0))
        assert (x, y) == pytest.approx((12.0, 7.0))


class TestWarp:
    def test_identity_exact(self):
        v = np.random.default_rng(5).random((13, 17))
        out = warp_heatmap(Heatmap(v), DiagonalAffine2D(), 17, 13)
        np.testing.assert_array_equal(out.values, v)

    def test_translate_one_pixel_right(self):
        v = np.arange(20.0).reshape(4, 5) + 1
        out = warp_heatmap(Heatmap(v), DiagonalAffine2D(translate_x=1.0), 5, 4).values
        np.testing.assert_array_equal(out[:, 1:], v[:, :-1])
        np.testing.assert_array_equal(out[:, 0], 0.0)

    def test_scale_two_constant(self):
        out = warp_heatmap(Heatmap.constant(10, 10, 3.0), DiagonalAffine2D(2.0, 2.0), 30, 30).values
        np.testing.assert_allclose(out[:20, :20], 3.0, rtol=1e-15)
        np.testing.assert_array_equal(out[20:, :], 0.0)
        np.testing.assert_array_equal(out[:, 20:], 0.0)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(6)
        v = rng.random((9, 12))
        t = DiagonalAffine2D(1.37, 0.81, -2.2, 3.4)
        out = warp_heatmap(Heatmap(v), t, 15, 11).values
        inv = t.inverse()
        for j in range(11):
            for i in range(15):
                qx, qy = inv.apply(i + 0.5, j + 0.5)
                assert out[j, i] == pytest.approx(bilinear_oracle(v, qx, qy), abs=1e-12)

    def test_constants_preserved_where_covered(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            t = DiagonalAffine2D(*rng.uniform(0.5, 2, 2), *rng.uniform(-10, 10, 2))
            out = warp_heatmap(Heatmap.constant(20, 16, 2.5), t, 25, 25).values
            inv = t.inverse()
            xs, ys = inv.apply(np.arange(25) + 0.5, np.arange(25) + 0.5)
            covered = ((ys >= 0) & (ys < 16))[:, None] & ((xs >= 0) & (xs < 20))[None, :]
            np.testing.assert_allclose(out[covered], 2.5, rtol=1e-14)
            np.testing.assert_array_equal(out[~covered], 0.0)

    def test_resize(self):
        out = resize_heatmap(Heatmap.constant(4, 4, 1.0), 16, 12)
        assert out.shape == (12, 16)
        np.testing.assert_allclose(out.values, 1.0)


def _translated_pair():
    boxes_a = LAYOUT
    shift = DiagonalAffine2D(translate_x=12.0, translate_y=-6.0)
    boxes_b = [shift.apply_box(b) for b in LAYOUT]
    map_a = blob(128, 128, 60, 60)
    map_b = blob(128, 128, 72, 54)
    return (map_a, boxes_a), (map_b, boxes_b)


class TestCenterBias:
    def test_single_reference_image(self):
        m = blob(64, 64, 30, 30)
        cb, ref = compute_center_bias([(m, LAYOUT)], (64, 64))
        assert ref == LAYOUT
        np.testing.assert_allclose(cb.values, m.values, atol=1e-15)

    def test_identical_pairs(self):
        m = blob(64, 64, 30, 30)
        cb, _ = compute_center_bias([(m, LAYOUT), (m, LAYOUT)], (64, 64))
        np.testing.assert_allclose(cb.values, m.values, atol=1e-15)

    def test_translated_blobs_align(self):
        a, b = _translated_pair()
        cb, ref = compute_center_bias([a, b], (128, 128))
        # reference sits halfway between the two layouts: blob at (66, 57)
        peak = np.unravel_index(np.argmax(cb.values), cb.shape)
        assert abs(peak[1] + 0.5 - 66) <= 1 and abs(peak[0] + 0.5 - 57) <= 1
        assert cb.values.max() == pytest.approx(a[0].values.max(), rel=0.02)

    def test_project_identity(self):
        m = blob(64, 64, 30, 30)
        np.testing.assert_allclose(project_center_bias(m, LAYOUT, LAYOUT, (64, 64)).values, m.values, atol=1e-15)

    def test_project_translation(self):
        v = np.random.default_rng(8).random((40, 40))
        shifted = [DiagonalAffine2D(translate_x=10, translate_y=10).apply_box(b) for b in LAYOUT]
        out = project_center_bias(Heatmap(v), LAYOUT, shifted, (40, 40)).values
        np.testing.assert_allclose(out[10:, 10:], v[:-10, :-10], atol=1e-12)

    def test_round_trip_localizes_blobs(self):
        a, b = _translated_pair()
        cb, ref = compute_center_bias([a, b], (128, 128))
        for m, boxes in (a, b):
            proj = project_center_bias(cb, ref, boxes, (128, 128))
            got = np.unravel_index(np.argmax(proj.values), proj.shape)
            want = np.unravel_index(np.argmax(m.values), m.shape)
            assert abs(got[0] - want[0]) <= 1 and abs(got[1] - want[1]) <= 1

    def test_equivariant_under_common_relabeling(self):
        # moving every (map, boxes) pair by g moves the reference frame by g as well
        rng = np.random.default_rng(9)
        pairs = []
        for _ in range(4):
            t = DiagonalAffine2D(*rng.uniform(0.9, 1.1, 2), *rng.uniform(-5, 5, 2))
            boxes = [t.apply_box(b) for b in LAYOUT]
            cx, cy = t.apply(60.0, 55.0)
            pairs.append((blob(128, 128, cx, cy, sigma=8.0), boxes))
        cb1, _ = compute_center_bias(pairs, (128, 128))
        g = DiagonalAffine2D(1.2, 0.9, 4.0, -3.0)
        moved = [(warp_heatmap(m, g, 128, 128), [g.apply_box(b) for b in bx]) for m, bx in pairs]
        cb2, _ = compute_center_bias(moved, (128, 128))
        expected = warp_heatmap(cb1, g, 128, 128).values
        assert np.abs(expected - cb2.values).mean() < 0.01 * cb2.values.max()
