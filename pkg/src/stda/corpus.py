"""Procedural pedestrian-like silhouettes, textured exemplars, and scenes.

The generator is the desk-scale test bed: silhouettes are built row by row
from analytic spans (head disc, tapered torso, legs whose outer edges slant
with the spread angle), so every mask is binary, vertically connected, and
has exactly one foreground run per row.  Span-based operations are therefore
exact on this corpus.  Foreground textures live in [0.5, 1] and background
textures in [0, 0.45], so the foreground/background partition of an
exemplar patch is checkable by value alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .blend import box_to_pixels, compose, paste_into_scene, resize_bilinear, resize_mask
from .geometry import RowSpans, rasterize, row_spans
from .placement import BoundingBox
from .warp import identity_field, warp

__all__ = [
    "SilhouetteParams",
    "PedestrianExemplar",
    "SceneParams",
    "random_params",
    "gen_silhouette",
    "gen_exemplar",
    "make_pair",
    "gen_scene",
    "sample_clear_box",
]


@dataclass
class SilhouetteParams:
    """Body-part extents in pixels/degrees inside a height x width patch."""

    height: int = 64
    width: int = 64
    overall_height: float = 52.0
    head_radius: float = 5.0
    torso_width: float = 16.0
    torso_height: float = 20.0
    leg_length: float = 18.0
    leg_spread_deg: float = 6.0
    center_x: float | None = None

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError("patch must be at least 8x8")
        parts = 2 * self.head_radius + self.torso_height + self.leg_length
        if parts > self.overall_height + 1e-9:
            raise ValueError(
                f"body parts sum to {parts:.1f}px but overall height is "
                f"{self.overall_height:.1f}px"
            )
        if self.overall_height > self.height:
            raise ValueError("overall height exceeds the patch")
        if not (0.0 <= self.leg_spread_deg < 45.0):
            raise ValueError("leg spread must lie in [0, 45) degrees")


def random_params(rng: np.random.Generator, height: int = 64, width: int = 64) -> SilhouetteParams:
    """Draw silhouette parameters that always produce a valid mask."""
    overall = rng.uniform(0.70, 0.90) * height
    head_r = rng.uniform(0.070, 0.105) * overall
    torso_h = rng.uniform(0.32, 0.42) * overall
    leg_len = overall - 2 * head_r - torso_h - rng.uniform(0.5, 2.0)
    torso_w = rng.uniform(0.26, 0.40) * overall
    spread = rng.uniform(0.0, 9.0)
    # Box-cropped pedestrians sit near the patch center; allow a small sway.
    max_half = _max_halfwidth(torso_w, leg_len, spread)
    sway = min(3.0, max(width / 2.0 - 1.0 - max_half, 0.0))
    cx = width / 2.0 + rng.uniform(-sway, sway)
    return SilhouetteParams(
        height=height,
        width=width,
        overall_height=overall,
        head_radius=head_r,
        torso_width=torso_w,
        torso_height=torso_h,
        leg_length=leg_len,
        leg_spread_deg=spread,
        center_x=cx,
    )


def _max_halfwidth(torso_w: float, leg_len: float, spread_deg: float) -> float:
    leg_half = 0.45 * torso_w
    return max(torso_w / 2.0, leg_half + leg_len * math.tan(math.radians(spread_deg)))


def _body_spans(p: SilhouetteParams) -> RowSpans:
    h, w = p.height, p.width
    cx = p.center_x if p.center_x is not None else w / 2.0
    top = (h - p.overall_height) / 2.0
    head_bottom = top + 2.0 * p.head_radius
    hip = head_bottom + p.torso_height
    feet = hip + p.leg_length

    center = np.full(h, np.nan)
    width = np.zeros(h)
    head_cy = top + p.head_radius
    shoulder_half = p.torso_width / 2.0
    hip_half = 0.45 * p.torso_width
    leg_half = 0.45 * p.torso_width
    slope = math.tan(math.radians(p.leg_spread_deg))

    for y in range(h):
        yc = y + 0.0
        if yc < top or yc > feet:
            continue
        if yc <= head_bottom:
            d = abs(yc - head_cy)
            if d > p.head_radius:
                continue
            half = math.sqrt(max(p.head_radius**2 - d**2, 0.0))
            half = max(half, 0.8)  # keep the head tip at least one pixel wide
        elif yc <= hip:
            t = (yc - head_bottom) / max(p.torso_height, 1e-9)
            # Shoulder taper: widen quickly from the neck, then ease to the hip.
            neck_half = max(0.6 * p.head_radius, 1.0)
            grow = min(t / 0.2, 1.0)
            half = neck_half + grow * (shoulder_half - neck_half)
            half = half + (hip_half - half) * max(t - 0.6, 0.0) / 0.4 * 0.5
        else:
            # Legs: inner edges meet below the hip, outer edges slant outward,
            # so the union of the two quadrilaterals is one run per row.
            half = leg_half + slope * (yc - hip)
        center[y] = cx
        width[y] = 2.0 * half

    return RowSpans(width_px=w, center=center, width=width)


def gen_silhouette(params: SilhouetteParams, rng: np.random.Generator | None = None) -> np.ndarray:
    """Binary pedestrian-like mask; raises if the params leave the patch."""
    spans = _body_spans(params)
    occ = spans.occupied
    if not occ.any():
        raise ValueError("silhouette parameters produce an empty mask")
    rows = np.flatnonzero(occ)
    if not np.array_equal(rows, np.arange(rows[0], rows[-1] + 1)):
        raise ValueError("silhouette parameters produce a disconnected mask")
    return rasterize(spans, params.height, params.width)


@dataclass
class PedestrianExemplar:
    """A textured foreground patch with its mask and provenance metadata."""

    patch: np.ndarray
    mask: np.ndarray
    exemplar_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.patch.shape[:2] != self.mask.shape:
            raise ValueError("exemplar patch and mask dimensions disagree")
        if not (self.mask > 0).any():
            raise ValueError("exemplar mask is empty")

    @property
    def mask_height_fraction(self) -> float:
        rows = np.flatnonzero((self.mask >= 0.5).any(axis=1))
        return float((rows[-1] - rows[0] + 1) / self.mask.shape[0])


def _smooth_noise(rng: np.random.Generator, h: int, w: int, amplitude: float) -> np.ndarray:
    coarse = rng.uniform(-amplitude, amplitude, size=(max(h // 8, 2), max(w // 8, 2)))
    return resize_bilinear(coarse, h, w)


def _background_texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    base = rng.uniform(0.10, 0.30)
    grad = np.linspace(-0.05, 0.05, h)[:, None, None]
    tex = np.empty((h, w, 3))
    for c in range(3):
        tex[..., c] = base + rng.uniform(-0.04, 0.04) + _smooth_noise(rng, h, w, 0.05)
    return np.clip(tex + grad, 0.0, 0.45)


def _foreground_texture(
    rng: np.random.Generator, params: SilhouetteParams
) -> np.ndarray:
    h, w = params.height, params.width
    top = (h - params.overall_height) / 2.0
    head_bottom = top + 2.0 * params.head_radius
    hip = head_bottom + params.torso_height
    rows = np.arange(h)[:, None]

    head_tone = rng.uniform(0.70, 0.85)
    shirt = rng.uniform(0.55, 0.85, size=3)
    trousers = rng.uniform(0.52, 0.80, size=3)
    tex = np.empty((h, w, 3))
    for c in range(3):
        band = np.where(rows < head_bottom, head_tone,
                        np.where(rows < hip, shirt[c], trousers[c]))
        tex[..., c] = band + _smooth_noise(rng, h, w, 0.12)
    return np.clip(tex, 0.5, 1.0)


def gen_exemplar(
    params: SilhouetteParams,
    rng: np.random.Generator,
    exemplar_id: str = "",
) -> PedestrianExemplar:
    """Silhouette filled with banded foreground texture over a background."""
    mask = gen_silhouette(params)
    fg = _foreground_texture(rng, params)
    bg = _background_texture(rng, params.height, params.width)
    patch = np.where(mask[..., None] > 0, fg, bg)
    return PedestrianExemplar(
        patch=patch,
        mask=mask,
        exemplar_id=exemplar_id,
        meta={"overall_height": params.overall_height, "leg_spread_deg": params.leg_spread_deg},
    )


def _integer_shift(mask: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys, xs = np.nonzero(mask > 0)
    ys2, xs2 = ys + dy, xs + dx
    if ys2.min() < 0 or ys2.max() >= h or xs2.min() < 0 or xs2.max() >= w:
        raise ValueError(f"shift ({dx},{dy}) pushes the silhouette out of the patch")
    out[ys2, xs2] = 1.0
    return out


def make_pair(
    mode: str,
    rng: np.random.Generator,
    height: int = 64,
    width: int = 64,
    max_shift: int = 5,
) -> tuple[PedestrianExemplar, np.ndarray, np.ndarray | None]:
    """Exemplar plus a target silhouette, with an exact oracle field when
    one exists.

    translate: integer-shifted copy of the source mask, oracle = constant
    field (backward warping, so the oracle displacement is the negated
    shift).  scale-legs: same body, wider leg spread, no oracle.
    arbitrary: an independent silhouette, no oracle.
    """
    if mode not in ("translate", "scale-legs", "arbitrary"):
        raise ValueError(f"unknown pair mode {mode!r}")
    params = random_params(rng, height, width)
    exemplar = gen_exemplar(params, rng)

    if mode == "translate":
        for _ in range(32):
            dx = int(rng.integers(-max_shift, max_shift + 1))
            dy = int(rng.integers(-max_shift, max_shift + 1))
            try:
                target = _integer_shift(exemplar.mask, dx, dy)
            except ValueError:
                continue
            oracle = identity_field(height, width)
            oracle[..., 0] = -dx
            oracle[..., 1] = -dy
            return exemplar, target, oracle
        # Zero shift always fits.
        return exemplar, exemplar.mask.copy(), identity_field(height, width)

    if mode == "scale-legs":
        widened = SilhouetteParams(
            height=params.height,
            width=params.width,
            overall_height=params.overall_height,
            head_radius=params.head_radius,
            torso_width=params.torso_width,
            torso_height=params.torso_height,
            leg_length=params.leg_length,
            leg_spread_deg=min(params.leg_spread_deg + rng.uniform(4.0, 10.0), 20.0),
            center_x=params.width / 2.0,
        )
        return exemplar, gen_silhouette(widened), None

    other = random_params(rng, height, width)
    return exemplar, gen_silhouette(other), None


@dataclass
class SceneParams:
    """Street-scene layout: frame size, planted count, and the placement line."""

    height: int = 240
    width: int = 320
    n_pedestrians: int = 3
    slope: float = 1.15
    intercept: float = -97.0
    aspect_ratio: float = 0.41
    horizon_frac: float = 0.45


def gen_scene(
    params: SceneParams,
    rng: np.random.Generator,
    exemplars: list[PedestrianExemplar] | None = None,
) -> tuple[np.ndarray, list[BoundingBox]]:
    """Gradient-sky / textured-ground scene with pedestrians planted at
    boxes satisfying height = slope * y_bottom + intercept exactly."""
    h, w = params.height, params.width
    horizon = int(params.horizon_frac * h)
    scene = np.empty((h, w, 3))
    sky_top = rng.uniform(0.55, 0.75)
    sky = np.linspace(sky_top, sky_top - 0.2, max(horizon, 1))
    ground = 0.25 + _smooth_noise(rng, h - horizon, w, 0.08)
    for c in range(3):
        scene[:horizon, :, c] = sky[:, None] * (1.0 - 0.08 * c)
        scene[horizon:, :, c] = ground * (1.0 + 0.05 * c)
    scene = np.clip(scene, 0.0, 1.0)

    # Feasible bottom edges: tall enough to see, box fully inside the frame.
    y_lo = max((12.0 - params.intercept) / params.slope, horizon + 1.0)
    y_hi = float(h)
    boxes: list[BoundingBox] = []
    for i in range(params.n_pedestrians):
        y_bottom = rng.uniform(y_lo, y_hi)
        height = params.slope * y_bottom + params.intercept
        width_box = params.aspect_ratio * height
        if y_bottom - height < 0 or width_box >= w:
            continue
        x_left = rng.uniform(0.0, w - width_box)
        box = BoundingBox(x_left, y_bottom - height, width_box, height)
        ex = (
            exemplars[int(rng.integers(0, len(exemplars)))]
            if exemplars
            else gen_exemplar(random_params(rng), rng)
        )
        y0, y1, x0, x1 = box_to_pixels(box, (h, w))
        crop = scene[y0:y1, x0:x1]
        fg = resize_bilinear(ex.patch, y1 - y0, x1 - x0)
        m = resize_mask(ex.mask, y1 - y0, x1 - x0)
        blended = compose(fg, m, np.ones_like(m), crop)
        scene = paste_into_scene(scene, blended, box)
        boxes.append(box)
    return scene, boxes


def sample_clear_box(
    scene_shape: tuple[int, int],
    occupied: list[BoundingBox],
    rng: np.random.Generator,
    size: int = 48,
    tries: int = 64,
) -> BoundingBox | None:
    """A size x size box that intersects none of the occupied boxes."""
    h, w = scene_shape
    if size >= h or size >= w:
        return None
    for _ in range(tries):
        x = rng.uniform(0, w - size)
        y = rng.uniform(0, h - size)
        cand = BoundingBox(x, y, float(size), float(size))
        if not any(cand.intersects(b) for b in occupied):
            return cand
    return None
