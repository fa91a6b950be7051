"""Field-solver losses, the optimization loop, and the deform wrapper."""

import numpy as np
import pytest

from stda.corpus import make_pair
from stda.geometry import RampProfile, constrain_shape, mask_iou, mask_l1
from stda.solver import (
    DeformResult,
    LossParts,
    SolverConfig,
    cycle_loss,
    deform,
    shape_loss,
    smoothness,
    smoothness_grad,
    solve_field,
    total_loss,
)
from stda.warp import identity_field, warp


def _square(h, w, side, cy, cx):
    m = np.zeros((h, w))
    m[cy - side // 2 : cy + side // 2, cx - side // 2 : cx + side // 2] = 1.0
    return m


class TestLosses:
    def test_shape_loss_zero_on_match(self):
        m = _square(16, 16, 6, 8, 8)
        assert shape_loss(m, m) == 0.0

    def test_shape_loss_saturated(self):
        assert shape_loss(np.ones((4, 4)), np.zeros((4, 4))) == 1.0

    def test_shape_loss_equals_mask_l1_on_translated_pair(self):
        a = _square(16, 16, 6, 8, 8)
        b = _square(16, 16, 6, 8, 11)
        assert shape_loss(a, warp(b, identity_field(16, 16))) == mask_l1(a, b)

    def test_cycle_loss_perfect_reconstruction(self):
        rng = np.random.default_rng(0)
        m = _square(8, 8, 4, 4, 4)
        z = rng.uniform(size=(8, 8, 3))
        assert cycle_loss(m, m, z, z) == 0.0

    def test_cycle_loss_patch_offset(self):
        m = _square(8, 8, 4, 4, 4)
        z = np.full((8, 8, 3), 0.5)
        assert cycle_loss(m, m, z, z + 0.1) == pytest.approx(0.1, abs=1e-12)

    def test_cycle_loss_is_directional(self):
        m1 = _square(8, 8, 4, 4, 4)
        m2 = np.zeros((8, 8))
        z1 = np.full((8, 8, 3), 0.2)
        z2 = np.full((8, 8, 3), 0.9)
        # Same value either way for L1 pairs, but the definition fixes roles:
        # (original, reconstruction); swapping roles is a different statement.
        assert cycle_loss(m1, m2, z1, z2) == cycle_loss(m2, m1, z2, z1)

    def test_smoothness_constant_and_identity(self):
        f = identity_field(6, 6)
        assert smoothness(f) == 0.0
        f2 = f.copy()
        f2[..., 0] = 3.0
        f2[..., 1] = -2.0
        assert smoothness(f2) == 0.0

    def test_smoothness_alternating_row(self):
        f = identity_field(1, 6)
        f[0, ::2, 0] = 1.0
        # Five horizontal edges, each |diff| == 1, over 2*(1*5) difference terms.
        assert smoothness(f) == pytest.approx(5.0 / 10.0)

    def test_smoothness_grad_matches_fd(self):
        rng = np.random.default_rng(1)
        f = rng.uniform(-2, 2, size=(5, 6, 2))
        g = smoothness_grad(f)
        h = 1e-6
        for _ in range(20):
            i, j, c = rng.integers(5), rng.integers(6), rng.integers(2)
            fp, fm = f.copy(), f.copy()
            fp[i, j, c] += h
            fm[i, j, c] -= h
            fd = (smoothness(fp) - smoothness(fm)) / (2 * h)
            assert g[i, j, c] == pytest.approx(fd, abs=1e-9)

    def test_total_loss_weighting(self):
        cfg = SolverConfig()
        assert total_loss(LossParts(shape=0.1), cfg) == pytest.approx(10.0)
        assert total_loss(LossParts(), cfg) == 0.0
        assert total_loss(LossParts(cycle=0.2), cfg) == pytest.approx(0.1)

    def test_total_loss_includes_smoothness(self):
        cfg = SolverConfig(smooth_weight=0.25)
        assert total_loss(LossParts(smoothness=0.4), cfg) == pytest.approx(0.1)


class TestSolveField:
    def test_identity_pair_is_immediately_optimal(self):
        rng = np.random.default_rng(2)
        mask = _square(24, 24, 10, 12, 12)
        patch = rng.uniform(size=(24, 24, 3))
        fwd, bwd, diag = solve_field(patch, mask, mask.copy())
        assert shape_loss(mask, warp(mask, fwd)) == pytest.approx(0.0, abs=1e-9)
        assert diag.loss_trace[0] == min(diag.loss_trace)

    def test_translation_reaches_oracle_optimum(self):
        rng = np.random.default_rng(3)
        src = _square(32, 32, 12, 16, 15)
        tgt = _square(32, 32, 12, 18, 18)
        patch = rng.uniform(size=(32, 32, 3))
        cfg = SolverConfig(smooth_weight=0.0)
        fwd, _, diag = solve_field(patch, src, tgt, cfg)
        assert shape_loss(tgt, warp(src, fwd)) < 0.01
        assert diag.iterations <= cfg.max_iters

    def test_best_loss_nonincreasing_and_beats_identity(self):
        rng = np.random.default_rng(4)
        ex, donor, _ = make_pair("arbitrary", rng, height=48, width=48)
        target = constrain_shape(ex.mask, donor, RampProfile())
        cfg = SolverConfig(max_iters=120)
        _, _, diag = solve_field(ex.patch, ex.mask, target, cfg)
        best = np.minimum.accumulate(diag.loss_trace)
        assert np.all(np.diff(best) <= 0)
        assert min(diag.loss_trace) <= diag.loss_trace[0]

    def test_corpus_pair_beats_identity_iou(self):
        rng = np.random.default_rng(5)
        ex, donor, _ = make_pair("arbitrary", rng)
        target = constrain_shape(ex.mask, donor, RampProfile())
        fwd, _, _ = solve_field(ex.patch, ex.mask, target, SolverConfig(max_iters=200))
        solved_iou = mask_iou(warp(ex.mask, fwd), target)
        identity_iou = mask_iou(ex.mask, target)
        assert solved_iou > identity_iou

    def test_deterministic_given_identical_inputs(self):
        rng = np.random.default_rng(6)
        ex, donor, _ = make_pair("arbitrary", rng, height=32, width=32)
        target = constrain_shape(ex.mask, donor, RampProfile())
        cfg = SolverConfig(max_iters=60)
        fwd1, bwd1, d1 = solve_field(ex.patch, ex.mask, target, cfg)
        fwd2, bwd2, d2 = solve_field(ex.patch, ex.mask, target, cfg)
        assert np.array_equal(fwd1, fwd2)
        assert np.array_equal(bwd1, bwd2)
        assert d1.loss_trace == d2.loss_trace

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            solve_field(np.zeros((4, 4, 3)), np.zeros((4, 4)), np.zeros((5, 4)))

    def test_objective_gradient_matches_fd_on_soft_masks(self):
        """Hand-wired chain rule vs central differences on the coarse params."""
        from stda.solver import _CoarseField, _objective

        rng = np.random.default_rng(7)
        h = w = 10
        patch = rng.uniform(size=(h, w, 3))
        src = rng.uniform(0.2, 0.8, size=(h, w))
        tgt = rng.uniform(0.2, 0.8, size=(h, w))
        cfg = SolverConfig(grid_stride=3, smooth_weight=0.05)
        grids = _CoarseField(h, w, cfg.grid_stride)
        cf = rng.uniform(0.05, 0.3, size=grids.shape) * rng.choice([-1, 1], size=grids.shape)
        cb = rng.uniform(0.05, 0.3, size=grids.shape) * rng.choice([-1, 1], size=grids.shape)
        _, _, gf, gb = _objective(patch, src, tgt, cfg, grids, cf, cb)
        eps = 1e-6
        for grad, params, which in ((gf, cf, 0), (gb, cb, 1)):
            for _ in range(10):
                idx = tuple(rng.integers(s) for s in grids.shape)
                bump = np.zeros(grids.shape)
                bump[idx] = eps
                if which == 0:
                    lp = _objective(patch, src, tgt, cfg, grids, params + bump, cb)[0]
                    lm = _objective(patch, src, tgt, cfg, grids, params - bump, cb)[0]
                else:
                    lp = _objective(patch, src, tgt, cfg, grids, cf, params + bump)[0]
                    lm = _objective(patch, src, tgt, cfg, grids, cf, params - bump)[0]
                fd = (lp - lm) / (2 * eps)
                assert grad[idx] == pytest.approx(fd, abs=5e-6)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(step_size=0.0)
        with pytest.raises(ValueError):
            SolverConfig(max_iters=0)
        with pytest.raises(ValueError):
            SolverConfig(shape_weight=-1.0)


class TestDeform:
    def test_same_shape_keeps_patch(self):
        rng = np.random.default_rng(8)
        ex, _, _ = make_pair("arbitrary", rng, height=32, width=32)
        res = deform(ex.patch, ex.mask, ex.mask.copy(), config=SolverConfig(max_iters=80))
        assert isinstance(res, DeformResult)
        assert mask_l1(res.warped_patch, ex.patch) < 0.02

    def test_zero_ramp_reduces_to_source_target(self):
        rng = np.random.default_rng(9)
        ex, donor, _ = make_pair("arbitrary", rng, height=32, width=32)
        res = deform(
            ex.patch,
            ex.mask,
            donor,
            ramp=RampProfile(kind="constant", value=0.0),
            config=SolverConfig(max_iters=80),
        )
        assert np.array_equal(res.target_mask, ex.mask)
        assert mask_l1(res.warped_mask, ex.mask) < 0.02

    def test_corpus_pair_hits_shape_tolerance(self):
        rng = np.random.default_rng(10)
        ex, donor, _ = make_pair("arbitrary", rng)
        res = deform(ex.patch, ex.mask, donor)
        assert mask_l1(res.warped_mask, res.target_mask) < 0.03
        assert res.diagnostics.final_shape_loss < 0.06
