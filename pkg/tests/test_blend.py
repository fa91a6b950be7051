"""Blending-map squashing, composition arithmetic, and scene pasting."""

import numpy as np
import pytest

from stda.blend import (
    compose,
    load_image,
    paste_into_scene,
    resize_bilinear,
    resize_mask,
    save_image,
    squash_alpha,
)
from stda.placement import BoundingBox


class TestSquashAlpha:
    def test_zero_maps_to_neutral(self):
        assert squash_alpha(np.zeros((3, 3)))[1, 1] == 1.0

    def test_asymptotes(self):
        big = squash_alpha(np.array([1e4]))
        small = squash_alpha(np.array([-1e4]))
        assert big[0] == pytest.approx(1.2, abs=1e-12)
        assert small[0] == pytest.approx(0.8, abs=1e-12)

    def test_atanh_half_hits_one_point_one(self):
        assert squash_alpha(np.array([np.arctanh(0.5)]))[0] == pytest.approx(1.1, abs=1e-12)

    def test_range_invariant_on_extreme_inputs(self):
        rng = np.random.default_rng(0)
        raw = np.concatenate([
            rng.uniform(-1e12, 1e12, size=5000),
            rng.normal(scale=1e-6, size=5000),
            np.array([0.0, 1e300, -1e300]),
        ])
        out = squash_alpha(raw)
        assert out.min() >= 0.8 and out.max() <= 1.2

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            squash_alpha(np.array([np.inf]))


class TestCompose:
    def _patches(self, h=4, w=5):
        rng = np.random.default_rng(1)
        fg = rng.uniform(size=(h, w, 3))
        bg = rng.uniform(size=(h, w, 3))
        return fg, bg

    def test_zero_mask_passes_background_bit_exactly(self):
        fg, bg = self._patches()
        out = compose(fg, np.zeros((4, 5)), np.ones((4, 5)), bg)
        assert np.array_equal(out, bg)

    def test_full_mask_neutral_alpha_gives_foreground(self):
        fg, bg = self._patches()
        out = compose(fg, np.ones((4, 5)), np.ones((4, 5)), bg)
        assert np.array_equal(out, fg)

    def test_spot_arithmetic(self):
        fg = np.full((1, 1, 3), 0.4)
        bg = np.full((1, 1, 3), 0.2)
        out = compose(fg, np.ones((1, 1)), np.full((1, 1), 1.2), bg)
        assert out[0, 0, 0] == pytest.approx(1.2 * 0.4 + (1 - 1.2) * 0.2, abs=1e-15)
        assert out[0, 0, 0] == pytest.approx(0.44, abs=1e-12)

    def test_monotone_in_alpha_when_foreground_brighter(self):
        fg = np.full((1, 1, 3), 0.8)
        bg = np.full((1, 1, 3), 0.1)
        alphas = np.linspace(0.8, 1.2, 9)
        vals = [compose(fg, np.ones((1, 1)), np.full((1, 1), a), bg)[0, 0, 0] for a in alphas]
        assert np.all(np.diff(vals) > 0)

    def test_no_clamp_needed_when_weight_below_one(self):
        rng = np.random.default_rng(2)
        fg = rng.uniform(size=(6, 6, 3))
        bg = rng.uniform(size=(6, 6, 3))
        mask = rng.uniform(0, 0.8, size=(6, 6))
        alpha = np.full((6, 6), 1.2)  # mask * alpha <= 0.96 < 1
        weight = (mask * alpha)[..., None]
        raw = weight * fg + (1 - weight) * bg
        np.testing.assert_array_equal(compose(fg, mask, alpha, bg), raw)

    def test_rejects_out_of_range_alpha(self):
        fg, bg = self._patches()
        with pytest.raises(ValueError):
            compose(fg, np.ones((4, 5)), np.full((4, 5), 1.3), bg)

    def test_rejects_dimension_mismatch(self):
        fg, bg = self._patches()
        with pytest.raises(ValueError):
            compose(fg, np.ones((3, 5)), np.ones((4, 5)), bg)


class TestResize:
    def test_identity_when_same_size(self):
        rng = np.random.default_rng(3)
        g = rng.uniform(size=(7, 9, 3))
        assert np.array_equal(resize_bilinear(g, 7, 9), g)

    def test_constant_preserved(self):
        g = np.full((5, 5), 0.6)
        np.testing.assert_allclose(resize_bilinear(g, 12, 3), 0.6, atol=1e-12)

    def test_mask_resize_is_binary(self):
        rng = np.random.default_rng(4)
        m = (rng.uniform(size=(8, 8)) > 0.5).astype(float)
        out = resize_mask(m, 13, 11)
        assert set(np.unique(out)) <= {0.0, 1.0}


class TestPasteIntoScene:
    def _scene(self, h=24, w=32):
        rng = np.random.default_rng(5)
        return rng.uniform(size=(h, w, 3))

    def test_outside_box_unchanged(self):
        scene = self._scene()
        patch = np.zeros((8, 8, 3))
        box = BoundingBox(10.0, 6.0, 8.0, 10.0)
        out = paste_into_scene(scene, patch, box)
        marked = np.zeros(scene.shape[:2], dtype=bool)
        marked[6:16, 10:18] = True
        assert np.array_equal(out[~marked], scene[~marked])
        assert np.all(out[marked] == 0.0)

    def test_full_scene_box_replaces_scene(self):
        scene = self._scene(10, 12)
        patch = np.full((4, 4, 3), 0.25)
        out = paste_into_scene(scene, patch, BoundingBox(0.0, 0.0, 12.0, 10.0))
        np.testing.assert_allclose(out, 0.25, atol=1e-12)

    def test_disjoint_pastes_commute(self):
        scene = self._scene()
        a = np.full((4, 4, 3), 0.9)
        b = np.full((4, 4, 3), 0.1)
        box_a = BoundingBox(2.0, 2.0, 5.0, 5.0)
        box_b = BoundingBox(20.0, 12.0, 6.0, 7.0)
        one = paste_into_scene(paste_into_scene(scene, a, box_a), b, box_b)
        two = paste_into_scene(paste_into_scene(scene, b, box_b), a, box_a)
        assert np.array_equal(one, two)

    def test_out_of_bounds_rejected_with_geometry(self):
        scene = self._scene()
        with pytest.raises(ValueError, match="scene"):
            paste_into_scene(scene, np.zeros((4, 4, 3)), BoundingBox(28.0, 2.0, 8.0, 4.0))


class TestImagePng:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        img = np.round(rng.uniform(size=(9, 7, 3)) * 255.0) / 255.0
        p = tmp_path / "img.png"
        save_image(img, p)
        assert np.array_equal(load_image(p), img)
