"""Placement-model fitting and sampling."""

import numpy as np
import pytest

from stda.placement import (
    CALTECH_ASPECT,
    CALTECH_INTERCEPT,
    CALTECH_SLOPE,
    BoundingBox,
    PlacementModel,
    fit,
    sample_count,
    sample_placement,
)

# Chi-square critical value at p = 0.01 for 4 degrees of freedom.
CHI2_CRIT_4DF_P01 = 13.2767


def _boxes_on_line(rng, n, slope, intercept, noise=0.0, aspect=0.41):
    boxes = []
    while len(boxes) < n:
        y = rng.uniform(250, 470)
        h = slope * y + intercept + (rng.normal(0, noise) if noise else 0.0)
        if h <= 20:
            continue
        boxes.append(BoundingBox(rng.uniform(0, 300), y - h, aspect * h, h))
    return boxes


class TestFit:
    def test_two_point_line(self):
        boxes = [
            BoundingBox(0.0, 150.0, 60.0, 150.0),   # y_bottom 300, h 150
            BoundingBox(0.0, 135.0, 106.0, 265.0),  # y_bottom 400, h 265
        ]
        model = fit(boxes)
        assert model.slope == pytest.approx(1.15, abs=1e-12)
        assert model.intercept == pytest.approx(-195.0, abs=1e-9)

    def test_noise_free_collinear_exact(self):
        rng = np.random.default_rng(0)
        boxes = _boxes_on_line(rng, 50, CALTECH_SLOPE, CALTECH_INTERCEPT)
        model = fit(boxes)
        assert model.slope == pytest.approx(CALTECH_SLOPE, abs=1e-9)
        assert model.intercept == pytest.approx(CALTECH_INTERCEPT, abs=1e-9)

    def test_noisy_regression_recovers_line(self):
        """1000 boxes on the reference line with sigma=2 Gaussian noise."""
        rng = np.random.default_rng(1)
        boxes = _boxes_on_line(rng, 1000, CALTECH_SLOPE, CALTECH_INTERCEPT, noise=2.0)
        model = fit(boxes)
        assert abs(model.slope - CALTECH_SLOPE) < 0.02
        assert abs(model.intercept - CALTECH_INTERCEPT) < 5.0

    def test_aspect_ratio_is_median(self):
        boxes = [
            BoundingBox(0, 0, 40.0, 100.0),
            BoundingBox(0, 50, 82.0, 200.0),
            BoundingBox(0, 100, 135.0, 300.0),
        ]
        model = fit(boxes)
        assert model.aspect_ratio == pytest.approx(0.41)

    def test_rejects_single_box(self):
        with pytest.raises(ValueError):
            fit([BoundingBox(0, 0, 10, 20)])

    def test_rejects_degenerate_bottom_edges(self):
        boxes = [BoundingBox(0, 0, 10, 20), BoundingBox(5, 0, 10, 20)]
        with pytest.raises(ValueError):
            fit(boxes)


class TestSamplePlacement:
    def _model(self, jitter=0.0):
        return PlacementModel(
            slope=CALTECH_SLOPE,
            intercept=CALTECH_INTERCEPT,
            aspect_ratio=CALTECH_ASPECT,
            image_height=480,
            image_width=640,
            jitter=jitter,
        )

    def test_reference_arithmetic_at_y400(self):
        model = self._model(jitter=0.0)
        h = model.height_at(400.0)
        assert h == pytest.approx(1.15 * 400 - 194.24, abs=1e-12)
        assert h == pytest.approx(265.76, abs=1e-10)
        assert CALTECH_ASPECT * h == pytest.approx(108.9616, abs=1e-10)

    def test_boxes_always_inside_image(self):
        model = self._model(jitter=0.1)
        rng = np.random.default_rng(2)
        for _ in range(10000):
            box = sample_placement(model, rng)
            assert box.x_left >= 0 and box.y_top >= 0
            assert box.x_right <= model.image_width
            assert box.y_bottom <= model.image_height
            assert box.height >= model.min_height

    def test_jitter_bound_and_exact_aspect(self):
        model = self._model(jitter=0.1)
        rng = np.random.default_rng(3)
        for _ in range(10000):
            box = sample_placement(model, rng)
            line = model.height_at(box.y_bottom)
            assert abs(box.height - line) <= model.jitter * line + 1e-9
            assert box.width == model.aspect_ratio * box.height

    def test_determinism_under_seed(self):
        model = self._model(jitter=0.05)
        a = [sample_placement(model, np.random.default_rng(9)).to_dict() for _ in range(1)]
        b = [sample_placement(model, np.random.default_rng(9)).to_dict() for _ in range(1)]
        assert a == b

    def test_infeasible_model_reports(self):
        model = PlacementModel(
            slope=0.0, intercept=5.0, image_height=100, image_width=100, jitter=0.0
        )
        with pytest.raises(ValueError, match="no feasible placement"):
            sample_placement(model, np.random.default_rng(0))

    def test_rescaled_model_scales_intercept(self):
        model = self._model()
        scaled = model.rescaled(240, 320)
        assert scaled.slope == model.slope
        assert scaled.intercept == pytest.approx(model.intercept / 2.0)


class TestSampleCount:
    def test_all_draws_in_range(self):
        rng = np.random.default_rng(4)
        draws = [sample_count(rng) for _ in range(10000)]
        assert min(draws) >= 1 and max(draws) <= 5

    def test_uniform_frequencies(self):
        rng = np.random.default_rng(5)
        draws = np.array([sample_count(rng) for _ in range(10000)])
        counts = np.bincount(draws, minlength=6)[1:6]
        chi2 = float(((counts - 2000.0) ** 2 / 2000.0).sum())
        assert chi2 < CHI2_CRIT_4DF_P01

    def test_mean_near_three(self):
        rng = np.random.default_rng(6)
        draws = np.array([sample_count(rng) for _ in range(10000)])
        assert abs(draws.mean() - 3.0) < 0.05


class TestModelFile:
    def test_save_load_round_trip(self, tmp_path):
        model = PlacementModel(slope=1.1, intercept=-100.0, aspect_ratio=0.4,
                               image_height=240, image_width=320, jitter=0.02)
        p = tmp_path / "model.json"
        model.save(p)
        assert PlacementModel.load(p) == model
