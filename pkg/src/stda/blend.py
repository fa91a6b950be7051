"""Foreground/background blending and scene pasting.

The blending map is a per-pixel multiplier in [0.8, 1.2] applied to the
foreground mask before compositing: out = (mask * alpha) * foreground +
(1 - mask * alpha) * background, clamped to [0, 1].  All effect routes
through the mask-alpha product, so background pixels (mask 0) pass through
bit-exactly.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

__all__ = [
    "squash_alpha",
    "compose",
    "resize_bilinear",
    "resize_mask",
    "paste_into_scene",
    "box_to_pixels",
    "load_image",
    "save_image",
]

ALPHA_LO = 0.8
ALPHA_HI = 1.2


def squash_alpha(raw: np.ndarray) -> np.ndarray:
    """Squash raw predictions into the [0.8, 1.2] blending range.

    alpha = 1 + 0.2 * tanh(raw): zero maps to the neutral 1.0 and the
    asymptotes are exactly the range bounds.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if not np.isfinite(raw).all():
        raise ValueError("raw blending values must be finite")
    return 1.0 + 0.2 * np.tanh(raw)


def compose(
    foreground: np.ndarray,
    mask: np.ndarray,
    alpha: np.ndarray,
    background: np.ndarray,
) -> np.ndarray:
    """Blend a warped foreground patch over a background patch.

    out = (mask * alpha) * foreground + (1 - mask * alpha) * background,
    per pixel and channel, clamped to [0, 1].  Clamping can only trigger
    where mask * alpha exceeds 1.
    """
    fg = np.asarray(foreground, dtype=np.float64)
    bg = np.asarray(background, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if fg.shape != bg.shape:
        raise ValueError(f"foreground {fg.shape} and background {bg.shape} disagree")
    if mask.shape != fg.shape[:2] or alpha.shape != fg.shape[:2]:
        raise ValueError("mask and alpha must match the patch height and width")
    if mask.min() < 0.0 or mask.max() > 1.0:
        raise ValueError("mask values must lie in [0, 1]")
    if alpha.min() < ALPHA_LO - 1e-12 or alpha.max() > ALPHA_HI + 1e-12:
        raise ValueError(f"alpha values must lie in [{ALPHA_LO}, {ALPHA_HI}]")
    weight = mask * alpha
    if fg.ndim == 3:
        weight = weight[..., None]
    return np.clip(weight * fg + (1.0 - weight) * bg, 0.0, 1.0)


def _resize_axis_coords(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Half-pixel-center sampling; reduces to identity when n_out == n_in.
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def resize_bilinear(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an (H, W) or (H, W, C) grid to (height, width)."""
    grid = np.asarray(grid, dtype=np.float64)
    if height < 1 or width < 1:
        raise ValueError(f"target size must be positive, got {height}x{width}")
    if grid.shape[0] == height and grid.shape[1] == width:
        return grid.copy()
    y0, y1, fy = _resize_axis_coords(height, grid.shape[0])
    x0, x1, fx = _resize_axis_coords(width, grid.shape[1])
    rows0 = grid[y0]
    rows1 = grid[y1]
    if grid.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = rows0[:, x0] + fx * (rows0[:, x1] - rows0[:, x0])
    bot = rows1[:, x0] + fx * (rows1[:, x1] - rows1[:, x0])
    return top + fy * (bot - top)


def resize_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize a mask bilinearly and re-binarize at 0.5."""
    return (resize_bilinear(mask, height, width) >= 0.5).astype(np.float64)


def box_to_pixels(box, scene_shape: tuple[int, int]) -> tuple[int, int, int, int]:
    """Integer pixel region (y0, y1, x0, x1) for a box, half-up rounded.

    Rejects boxes that leave the scene, reporting the offending geometry.
    """
    h, w = scene_shape
    x0f, y0f = box.x_left, box.y_top
    x1f, y1f = box.x_left + box.width, box.y_top + box.height
    if box.width <= 0 or box.height <= 0 or x0f < 0 or y0f < 0 or x1f > w or y1f > h:
        raise ValueError(
            f"box outside scene: x=[{x0f:.2f},{x1f:.2f}] y=[{y0f:.2f},{y1f:.2f}] "
            f"scene {w}x{h}"
        )
    y0 = int(np.floor(y0f + 0.5))
    y1 = int(np.floor(y1f + 0.5))
    x0 = int(np.floor(x0f + 0.5))
    x1 = int(np.floor(x1f + 0.5))
    y1 = max(y1, y0 + 1)
    x1 = max(x1, x0 + 1)
    if y1 > h or x1 > w:
        raise ValueError(f"box rounds outside scene: rows [{y0},{y1}) cols [{x0},{x1})")
    return y0, y1, x0, x1


def paste_into_scene(scene: np.ndarray, patch: np.ndarray, box) -> np.ndarray:
    """Return a copy of ``scene`` with ``patch`` resized into ``box``.

    Pixels outside the box are untouched bit-exactly.
    """
    scene = np.asarray(scene, dtype=np.float64)
    y0, y1, x0, x1 = box_to_pixels(box, scene.shape[:2])
    out = scene.copy()
    out[y0:y1, x0:x1] = resize_bilinear(patch, y1 - y0, x1 - x0)
    return out


def load_image(path) -> np.ndarray:
    """Load an 8-bit RGB PNG as an (H, W, 3) float array in [0, 1]."""
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def save_image(image: np.ndarray, path) -> None:
    """Write an (H, W, 3) float array in [0, 1] as 8-bit RGB PNG."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3), got {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="RGB").save(path)
