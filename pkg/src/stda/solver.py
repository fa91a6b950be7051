"""Direct per-pair optimization of the shape-guided warping field.

Given an exemplar patch, its mask, and a (constrained) target mask, two
displacement fields are optimized jointly: a forward field that warps the
source silhouette into the target, and a backward field that warps the
target back, coupled through a cyclic reconstruction term on both mask and
appearance.  Fields are parameterized on a coarse control grid (bilinearly
upsampled) and fitted by momentum gradient descent with max-norm-normalized
steps, so ``step_size`` is measured in pixels of displacement per iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .geometry import RampProfile, constrain_shape, mask_l1
from .warp import FieldSampler, warp

__all__ = [
    "SolverConfig",
    "SolveDiagnostics",
    "LossParts",
    "DeformResult",
    "shape_loss",
    "cycle_loss",
    "smoothness",
    "smoothness_grad",
    "total_loss",
    "solve_field",
    "deform",
]


@dataclass
class SolverConfig:
    """Weights and schedule for the direct field solver.

    The loss weights default to the amortized-training values
    (shape 100, cycle 0.5, adversarial 1, hard-positive 0.5); the solver
    itself runs with the adversarial pair at 0 since no critic exists on
    this path.
    """

    shape_weight: float = 100.0
    cycle_weight: float = 0.5
    adversarial_weight: float = 0.0
    hard_positive_weight: float = 0.0
    smooth_weight: float = 0.1
    step_size: float = 1.0
    max_iters: int = 500
    tol: float = 1e-5
    grid_stride: int = 4
    momentum: float = 0.9
    plateau_patience: int = 10
    min_step: float = 1e-3

    def __post_init__(self):
        for name in ("shape_weight", "cycle_weight", "adversarial_weight",
                     "hard_positive_weight", "smooth_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.grid_stride < 1:
            raise ValueError("grid_stride must be >= 1")

    @classmethod
    def from_dict(cls, cfg: dict | None) -> "SolverConfig":
        return cls(**(cfg or {}))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolveDiagnostics:
    """Per-iteration total-loss trace plus the final loss breakdown."""

    loss_trace: list = field(default_factory=list)
    final_shape_loss: float = math.nan
    final_cycle_loss: float = math.nan
    final_smoothness: float = math.nan
    iterations: int = 0
    converged: bool = False

    def to_dict(self) -> dict:
        return {
            "loss_trace": [float(v) for v in self.loss_trace],
            "final_shape_loss": self.final_shape_loss,
            "final_cycle_loss": self.final_cycle_loss,
            "final_smoothness": self.final_smoothness,
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass
class LossParts:
    """Unweighted loss components feeding :func:`total_loss`."""

    shape: float = 0.0
    cycle: float = 0.0
    adversarial: float = 0.0
    hard_positive: float = 0.0
    smoothness: float = 0.0


def shape_loss(target_mask: np.ndarray, warped_mask: np.ndarray) -> float:
    """Mean-L1 distance between the target mask and the warped source mask."""
    return mask_l1(target_mask, warped_mask)


def cycle_loss(
    source_mask: np.ndarray,
    mask_back: np.ndarray,
    patch: np.ndarray,
    patch_back: np.ndarray,
) -> float:
    """Round-trip penalty: mean-L1 of the mask pair plus the patch pair.

    Directional by definition: the first argument of each pair is the
    original, the second the forward-then-backward reconstruction.
    """
    return mask_l1(source_mask, mask_back) + mask_l1(patch, patch_back)


def smoothness(field_arr: np.ndarray) -> float:
    """Mean total variation: average |first difference| of dx and dy."""
    f = np.asarray(field_arr, dtype=np.float64)
    terms = 0.0
    count = 0
    for axis in (0, 1):
        d = np.diff(f, axis=axis)
        terms += np.abs(d).sum()
        count += d[..., 0].size * 2
    return float(terms / count) if count else 0.0


def smoothness_grad(field_arr: np.ndarray) -> np.ndarray:
    """Gradient of :func:`smoothness` (sign subgradient, 0 at zero diffs)."""
    f = np.asarray(field_arr, dtype=np.float64)
    count = sum(np.diff(f, axis=axis)[..., 0].size * 2 for axis in (0, 1))
    g = np.zeros_like(f)
    if count == 0:
        return g
    for axis in (0, 1):
        s = np.sign(np.diff(f, axis=axis)) / count
        if axis == 0:
            g[1:, :] += s
            g[:-1, :] -= s
        else:
            g[:, 1:] += s
            g[:, :-1] -= s
    return g


def total_loss(parts: LossParts, config: SolverConfig) -> float:
    """Weighted sum of the loss components under ``config``."""
    return float(
        config.shape_weight * parts.shape
        + config.cycle_weight * parts.cycle
        + config.adversarial_weight * parts.adversarial
        + config.hard_positive_weight * parts.hard_positive
        + config.smooth_weight * parts.smoothness
    )


def _upsample_matrix(n_full: int, stride: int) -> np.ndarray:
    """Rows interpolate coarse control values (spacing ``stride``) to pixels."""
    if stride == 1:
        return np.eye(n_full)
    n_coarse = math.ceil((n_full - 1) / stride) + 1 if n_full > 1 else 1
    m = np.zeros((n_full, n_coarse))
    if n_coarse == 1:
        m[:, 0] = 1.0
        return m
    t = np.arange(n_full, dtype=np.float64) / stride
    i0 = np.minimum(np.floor(t).astype(np.int64), n_coarse - 2)
    frac = t - i0
    rows = np.arange(n_full)
    m[rows, i0] = 1.0 - frac
    m[rows, i0 + 1] += frac
    return m


class _CoarseField:
    """Coarse control grid with bilinear upsampling and its adjoint."""

    def __init__(self, height: int, width: int, stride: int):
        self.uy = _upsample_matrix(height, stride)
        self.ux = _upsample_matrix(width, stride)
        self.shape = (self.uy.shape[1], self.ux.shape[1], 2)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def up(self, coarse: np.ndarray) -> np.ndarray:
        full = np.empty((self.uy.shape[0], self.ux.shape[0], 2))
        for c in range(2):
            full[..., c] = self.uy @ coarse[..., c] @ self.ux.T
        return full

    def down(self, grad_full: np.ndarray) -> np.ndarray:
        coarse = np.empty(self.shape)
        for c in range(2):
            coarse[..., c] = self.uy.T @ grad_full[..., c] @ self.ux
        return coarse


def _l1_grad(pred: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return np.sign(pred - ref) / pred.size


def _objective(patch, source_mask, target_mask, cfg, grids, coarse_fwd, coarse_bwd):
    """Total loss and coarse-parameter gradients for the joint objective."""
    fwd = grids.up(coarse_fwd)
    bwd = grids.up(coarse_bwd)
    samp_fwd = FieldSampler(fwd)
    samp_bwd = FieldSampler(bwd)
    w1, w2, ls = cfg.shape_weight, cfg.cycle_weight, cfg.smooth_weight

    warped_src = samp_fwd.warp(source_mask)
    warped_tgt = samp_bwd.warp(target_mask)
    parts = LossParts(
        shape=shape_loss(target_mask, warped_src) + shape_loss(source_mask, warped_tgt)
    )
    if w2 > 0:
        mask_back = samp_bwd.warp(warped_src)
        patch_fwd = samp_fwd.warp(patch)
        patch_back = samp_bwd.warp(patch_fwd)
        parts.cycle = cycle_loss(source_mask, mask_back, patch, patch_back)
    if ls > 0:
        parts.smoothness = smoothness(fwd) + smoothness(bwd)
    loss = total_loss(parts, cfg)

    # Backward-field gradient: direct shape term plus both cycle legs.
    up_warped_src = w1 * _l1_grad(warped_src, target_mask)
    _, g_bwd = samp_bwd.vjp(
        target_mask, w1 * _l1_grad(warped_tgt, source_mask), compute_grid_grad=False
    )
    g_fwd = np.zeros_like(g_bwd)
    if w2 > 0:
        g_warped_src, g_b1 = samp_bwd.vjp(warped_src, w2 * _l1_grad(mask_back, source_mask))
        g_patch_fwd, g_b3 = samp_bwd.vjp(patch_fwd, w2 * _l1_grad(patch_back, patch))
        g_bwd += g_b1 + g_b3
        up_warped_src = up_warped_src + g_warped_src
        _, g_f2 = samp_fwd.vjp(patch, g_patch_fwd, compute_grid_grad=False)
        g_fwd += g_f2

    # Forward-field gradient: shape term plus what the cycle pushed back.
    _, g_f1 = samp_fwd.vjp(source_mask, up_warped_src, compute_grid_grad=False)
    g_fwd += g_f1
    if ls > 0:
        g_fwd += ls * smoothness_grad(fwd)
        g_bwd += ls * smoothness_grad(bwd)

    return loss, parts, grids.down(g_fwd), grids.down(g_bwd)


def solve_field(
    patch: np.ndarray,
    source_mask: np.ndarray,
    target_mask: np.ndarray,
    config: SolverConfig | None = None,
) -> tuple[np.ndarray, np.ndarray, SolveDiagnostics]:
    """Fit forward and backward fields aligning source to target silhouette.

    Both fields start at identity; the best-so-far parameters are returned,
    so the result can never be worse than the identity initialization.
    Steps are normalized to max-norm ``step_size`` pixels and the step is
    halved whenever the best loss stops improving by more than ``tol`` for
    ``plateau_patience`` iterations; the solve stops early once the step
    falls below ``min_step``.
    """
    cfg = config or SolverConfig()
    patch = np.asarray(patch, dtype=np.float64)
    source_mask = np.asarray(source_mask, dtype=np.float64)
    target_mask = np.asarray(target_mask, dtype=np.float64)
    if source_mask.shape != target_mask.shape:
        raise ValueError("source and target masks must share dimensions")
    if patch.shape[:2] != source_mask.shape:
        raise ValueError("patch and mask dimensions disagree")

    h, w = source_mask.shape
    grids = _CoarseField(h, w, cfg.grid_stride)
    cur_fwd, cur_bwd = grids.zeros(), grids.zeros()
    vel_fwd, vel_bwd = grids.zeros(), grids.zeros()

    diag = SolveDiagnostics()
    best_loss = math.inf
    best_fwd, best_bwd = cur_fwd.copy(), cur_bwd.copy()
    step = cfg.step_size
    since_improve = 0
    converged = False

    for it in range(cfg.max_iters):
        loss, parts, g_fwd, g_bwd = _objective(
            patch, source_mask, target_mask, cfg, grids, cur_fwd, cur_bwd
        )
        if not math.isfinite(loss):
            raise RuntimeError(f"non-finite loss at iteration {it}")
        diag.loss_trace.append(loss)
        diag.iterations = it + 1

        if loss < best_loss - cfg.tol:
            since_improve = 0
        else:
            since_improve += 1
        if loss < best_loss:
            best_loss = loss
            best_fwd, best_bwd = cur_fwd.copy(), cur_bwd.copy()

        if since_improve >= cfg.plateau_patience:
            step *= 0.5
            since_improve = 0
            if step < cfg.min_step:
                converged = True
                break

        gnorm = max(np.abs(g_fwd).max(), np.abs(g_bwd).max())
        if gnorm == 0.0:
            converged = True
            break
        vel_fwd = cfg.momentum * vel_fwd - step * g_fwd / gnorm
        vel_bwd = cfg.momentum * vel_bwd - step * g_bwd / gnorm
        cur_fwd = cur_fwd + vel_fwd
        cur_bwd = cur_bwd + vel_bwd

    fwd = grids.up(best_fwd)
    bwd = grids.up(best_bwd)
    warped_src = warp(source_mask, fwd)
    warped_tgt = warp(target_mask, bwd)
    mask_back = warp(warped_src, bwd)
    patch_back = warp(warp(patch, fwd), bwd)
    diag.final_shape_loss = shape_loss(target_mask, warped_src) + shape_loss(
        source_mask, warped_tgt
    )
    diag.final_cycle_loss = cycle_loss(source_mask, mask_back, patch, patch_back)
    diag.final_smoothness = smoothness(fwd) + smoothness(bwd)
    diag.converged = converged
    return fwd, bwd, diag


@dataclass
class DeformResult:
    warped_patch: np.ndarray
    warped_mask: np.ndarray
    field_fwd: np.ndarray
    field_bwd: np.ndarray
    target_mask: np.ndarray
    diagnostics: SolveDiagnostics


def deform(
    patch: np.ndarray,
    source_mask: np.ndarray,
    donor_mask: np.ndarray,
    ramp: RampProfile | None = None,
    config: SolverConfig | None = None,
) -> DeformResult:
    """Full shape-guided deformation: constrain the donor shape, fit the
    fields, and warp both the patch and its mask forward."""
    target_mask = constrain_shape(source_mask, donor_mask, ramp)
    fwd, bwd, diag = solve_field(patch, source_mask, target_mask, config)
    return DeformResult(
        warped_patch=warp(patch, fwd),
        warped_mask=warp(source_mask, fwd),
        field_fwd=fwd,
        field_bwd=bwd,
        target_mask=target_mask,
        diagnostics=diag,
    )
