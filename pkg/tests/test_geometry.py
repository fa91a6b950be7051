"""Row-span extraction, rasterization, shape constraining, mask metrics."""

import numpy as np
import pytest

from stda.geometry import (
    RampProfile,
    RowSpans,
    blend_spans,
    constrain_shape,
    load_mask,
    mask_iou,
    mask_l1,
    rasterize,
    row_spans,
    save_mask,
)


def _mask_from_runs(height, width, runs):
    """runs: {row: (first_col, last_col)} inclusive."""
    m = np.zeros((height, width))
    for y, (a, b) in runs.items():
        m[y, a : b + 1] = 1.0
    return m


def _random_single_run_mask(rng, height=12, width=16):
    m = np.zeros((height, width))
    for y in range(height):
        if rng.random() < 0.3:
            continue
        a = int(rng.integers(0, width - 1))
        b = int(rng.integers(a, width))
        m[y, a : b + 1] = 1.0
    return m


class TestRowSpans:
    def test_single_row_two_columns(self):
        m = _mask_from_runs(4, 4, {1: (1, 2)})
        spans = row_spans(m)
        assert spans.center[1] == 1.5
        assert spans.width[1] == 2.0

    def test_all_zero_mask(self):
        spans = row_spans(np.zeros((5, 7)))
        assert np.all(spans.width == 0)
        assert np.all(np.isnan(spans.center))

    def test_three_column_run(self):
        m = _mask_from_runs(4, 6, {2: (1, 3)})
        spans = row_spans(m)
        assert spans.center[2] == 2.0
        assert spans.width[2] == 3.0

    def test_multi_run_row_uses_bounding_interval(self):
        m = np.zeros((1, 8))
        m[0, [1, 2, 5]] = 1.0
        spans = row_spans(m)
        assert spans.center[0] == 3.0  # (1 + 5) / 2
        assert spans.width[0] == 5.0

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            row_spans(np.zeros((2, 2)), threshold=0.0)
        with pytest.raises(ValueError):
            row_spans(np.zeros((2, 2)), threshold=1.0)


class TestRasterize:
    def test_inverse_of_two_column_example(self):
        spans = RowSpans(4, [np.nan, 1.5, np.nan, np.nan], [0, 2, 0, 0])
        out = rasterize(spans, 4, 4)
        assert np.array_equal(out, _mask_from_runs(4, 4, {1: (1, 2)}))

    def test_all_empty_spans(self):
        spans = RowSpans(4, [np.nan] * 3, [0] * 3)
        assert np.array_equal(rasterize(spans, 3, 4), np.zeros((3, 4)))

    def test_round_trip_centered_rectangle(self):
        m = _mask_from_runs(6, 8, {2: (2, 5), 3: (2, 5)})
        assert np.array_equal(rasterize(row_spans(m), 6, 8), m)

    def test_round_trip_random_single_run_masks(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            m = _random_single_run_mask(rng)
            assert np.array_equal(rasterize(row_spans(m), *m.shape), m)

    def test_out_of_bounds_span_rejected_with_index(self):
        spans = RowSpans(4, [0.0, 3.9], [1.0, 2.0])
        with pytest.raises(ValueError, match="row 1"):
            rasterize(spans, 2, 4)


class TestRampProfile:
    def test_linear_endpoints(self):
        ramp = RampProfile()
        vals = ramp.evaluate(np.arange(10), top=2, bottom=8)
        assert vals[2] == 0.0
        assert vals[8] == 1.0
        assert np.all((vals >= 0.0) & (vals <= 1.0))

    def test_constant(self):
        ramp = RampProfile(kind="constant", value=0.3)
        assert np.all(ramp.evaluate(np.arange(5), 0, 4) == 0.3)

    def test_table_interpolates(self):
        ramp = RampProfile(kind="table", values=[0.0, 1.0, 0.0])
        vals = ramp.evaluate(np.array([0, 5, 10]), 0, 10)
        assert vals[0] == 0.0
        assert vals[1] == 1.0
        assert vals[2] == 0.0

    def test_config_round_trip(self):
        ramp = RampProfile(kind="constant", value=0.25)
        again = RampProfile.from_config(ramp.to_config())
        assert again.kind == "constant" and again.value == 0.25


class TestConstrainShape:
    def _pair(self):
        src = _mask_from_runs(10, 20, {y: (4, 7) for y in range(2, 9)})
        tgt = _mask_from_runs(10, 20, {y: (10, 17) for y in range(2, 9)})
        return src, tgt

    def test_weight_zero_reproduces_source_spans(self):
        src, tgt = self._pair()
        out = constrain_shape(src, tgt, RampProfile(kind="constant", value=0.0))
        assert row_spans(out) == row_spans(src)

    def test_weight_one_reproduces_target_spans(self):
        src, tgt = self._pair()
        out = constrain_shape(src, tgt, RampProfile(kind="constant", value=1.0))
        assert row_spans(out) == row_spans(tgt)

    def test_worked_half_blend_row(self):
        spans_src = RowSpans(64, [10.0], [4.0])
        spans_tgt = RowSpans(64, [20.0], [8.0])
        center, width = blend_spans(spans_src, spans_tgt, np.array([0.5]))
        assert center[0] == 15.0
        assert width[0] == 6.0

    def test_empty_target_row_keeps_center_scales_width(self):
        spans_src = RowSpans(32, [10.0], [6.0])
        spans_tgt = RowSpans(32, [np.nan], [0.0])
        center, width = blend_spans(spans_src, spans_tgt, np.array([0.25]))
        assert center[0] == 10.0
        assert width[0] == pytest.approx(0.75 * 6.0)

    def test_both_rows_empty_stay_empty(self):
        center, width = blend_spans(
            RowSpans(8, [np.nan], [0.0]), RowSpans(8, [np.nan], [0.0]), np.array([0.5])
        )
        assert width[0] == 0.0 and np.isnan(center[0])

    def test_betweenness_of_blend(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            c_i, c_j = rng.uniform(0, 30, size=2)
            l_i, l_j = rng.uniform(1, 10, size=2)
            w = rng.uniform(0, 1)
            center, width = blend_spans(
                RowSpans(64, [c_i], [l_i]), RowSpans(64, [c_j], [l_j]), np.array([w])
            )
            assert min(c_i, c_j) - 1e-12 <= center[0] <= max(c_i, c_j) + 1e-12
            assert min(l_i, l_j) - 1e-12 <= width[0] <= max(l_i, l_j) + 1e-12

    def test_linear_ramp_on_real_pair(self):
        src, tgt = self._pair()
        out = constrain_shape(src, tgt, RampProfile())
        spans = row_spans(out)
        # Top of the body stays with the source, bottom goes to the target.
        assert spans.center[2] == row_spans(src).center[2]
        assert spans.center[8] == row_spans(tgt).center[8]

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            constrain_shape(np.zeros((4, 4)), np.zeros((5, 4)))


class TestMaskL1:
    def test_identical_masks(self):
        m = np.ones((3, 3))
        assert mask_l1(m, m) == 0.0

    def test_ones_vs_zeros(self):
        assert mask_l1(np.ones((4, 4)), np.zeros((4, 4))) == 1.0

    def test_one_pixel_difference(self):
        a = np.zeros((2, 2))
        b = a.copy()
        b[0, 0] = 1.0
        assert mask_l1(a, b) == 0.25

    def test_metric_properties_on_random_triples(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            a, b, c = rng.uniform(size=(3, 5, 5))
            assert mask_l1(a, b) == mask_l1(b, a)
            assert mask_l1(a, b) <= mask_l1(a, c) + mask_l1(c, b) + 1e-15
        assert mask_l1(a, a) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mask_l1(np.zeros((2, 2)), np.zeros((2, 3)))


class TestMaskIoU:
    def test_identical_nonempty(self):
        m = _mask_from_runs(4, 4, {1: (1, 2)})
        assert mask_iou(m, m) == 1.0

    def test_disjoint(self):
        a = _mask_from_runs(4, 4, {0: (0, 1)})
        b = _mask_from_runs(4, 4, {3: (2, 3)})
        assert mask_iou(a, b) == 0.0

    def test_shared_column_overlap(self):
        a = _mask_from_runs(2, 3, {0: (0, 1), 1: (0, 1)})
        b = _mask_from_runs(2, 3, {0: (1, 2), 1: (1, 2)})
        assert mask_iou(a, b) == pytest.approx(2.0 / 6.0)

    def test_both_empty(self):
        assert mask_iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0


class TestMaskPngRoundTrip:
    def test_binary_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        m = (rng.uniform(size=(9, 13)) > 0.5).astype(float)
        p = tmp_path / "m.png"
        save_mask(m, p)
        assert np.array_equal(load_mask(p), m)
