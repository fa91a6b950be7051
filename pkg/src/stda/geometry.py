"""Binary-mask geometry: per-row spans, span blending, and mask metrics.

Masks are 2-D float arrays with values in [0, 1]; a binary mask holds only
{0, 1}.  A row of foreground is summarized by its midpoint column ``center``
and its width ``width`` (pixels); rows with no foreground carry width 0 and
an undefined (NaN) center.  Rows with several disconnected runs are
summarized by their bounding interval, since the one-span-per-row model
admits no more detail.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

__all__ = [
    "RowSpans",
    "RampProfile",
    "row_spans",
    "rasterize",
    "blend_spans",
    "constrain_shape",
    "mask_l1",
    "mask_iou",
    "foreground_rows",
    "load_mask",
    "save_mask",
]


def _check_mask(mask: np.ndarray, name: str = "mask") -> np.ndarray:
    arr = np.asarray(mask, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D grid, got shape {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def _round_half_up(x: np.ndarray) -> np.ndarray:
    # np.round ties to even; span->pixel conversion needs deterministic half-up.
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


@dataclass
class RowSpans:
    """One span per row: fractional midpoint column and pixel width.

    ``width[y] == 0`` means row ``y`` has no foreground; its center is NaN.
    """

    width_px: int
    center: np.ndarray
    width: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.width = np.asarray(self.width, dtype=np.float64)
        if self.center.shape != self.width.shape or self.center.ndim != 1:
            raise ValueError("center and width must be 1-D arrays of equal length")
        if np.any(self.width < 0):
            raise ValueError("span widths must be >= 0")

    @property
    def height(self) -> int:
        return self.center.shape[0]

    @property
    def occupied(self) -> np.ndarray:
        return self.width > 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, RowSpans):
            return NotImplemented
        return (
            self.width_px == other.width_px
            and np.array_equal(self.width, other.width)
            and np.array_equal(self.center, other.center, equal_nan=True)
        )


def row_spans(mask: np.ndarray, threshold: float = 0.5) -> RowSpans:
    """Extract the per-row foreground span of ``mask``.

    For each row, ``center = (first + last) / 2`` and
    ``width = last - first + 1`` over columns with value >= threshold.
    Empty rows get width 0 and NaN center.  Total function: any valid mask
    and threshold in (0, 1) yields a result.
    """
    arr = _check_mask(mask)
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    fg = arr >= threshold
    occupied = fg.any(axis=1)
    first = fg.argmax(axis=1)
    last = arr.shape[1] - 1 - fg[:, ::-1].argmax(axis=1)
    center = np.where(occupied, (first + last) / 2.0, np.nan)
    width = np.where(occupied, last - first + 1.0, 0.0)
    return RowSpans(width_px=arr.shape[1], center=center, width=width)


def rasterize(spans: RowSpans, height: int, width: int) -> np.ndarray:
    """Paint spans back into a binary mask.

    Row ``y`` is foreground on the half-open pixel interval
    [center - width/2, center + width/2) with half-up rounding at both
    boundaries; this inverts :func:`row_spans` exactly on masks whose rows
    are single contiguous runs.
    """
    if spans.height != height:
        raise ValueError(f"spans cover {spans.height} rows, mask wants {height}")
    occ = spans.occupied
    start = np.where(occ, spans.center - spans.width / 2.0, 0.0)
    stop = np.where(occ, spans.center + spans.width / 2.0, 0.0)
    bad = occ & ((start < -0.5) | (stop > width - 0.5))
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise ValueError(
            f"span at row {idx} exceeds [0, {width}): "
            f"center={spans.center[idx]:.3f} width={spans.width[idx]:.3f}"
        )
    lo = _round_half_up(start).astype(np.int64)
    hi = _round_half_up(stop).astype(np.int64)
    out = np.zeros((height, width), dtype=np.float64)
    cols = np.arange(width)
    fill = occ[:, None] & (cols >= lo[:, None]) & (cols < hi[:, None])
    out[fill] = 1.0
    return out


@dataclass
class RampProfile:
    """Per-row blending weight in [0, 1] over a vertical domain.

    ``linear`` rises from 0 at the top row of the domain to 1 at the bottom
    row; ``constant`` holds ``value`` everywhere; ``table`` linearly
    interpolates ``values`` across the domain.
    """

    kind: str = "linear"
    value: float = 1.0
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "constant", "table"):
            raise ValueError(f"unknown ramp kind {self.kind!r}")
        if self.kind == "constant" and not (0.0 <= self.value <= 1.0):
            raise ValueError("constant ramp value must lie in [0, 1]")
        if self.kind == "table":
            self.values = np.asarray(self.values, dtype=np.float64)
            if self.values is None or self.values.ndim != 1 or self.values.size < 1:
                raise ValueError("table ramp needs a 1-D array of values")
            if self.values.min() < 0.0 or self.values.max() > 1.0:
                raise ValueError("table ramp values must lie in [0, 1]")

    def evaluate(self, rows: np.ndarray, top: int, bottom: int) -> np.ndarray:
        """Weights for ``rows`` given the ramp domain [top, bottom]."""
        rows = np.asarray(rows, dtype=np.float64)
        if self.kind == "constant":
            return np.full(rows.shape, self.value)
        if bottom > top:
            t = np.clip((rows - top) / (bottom - top), 0.0, 1.0)
        else:
            # Single-row domain: top and bottom coincide, split the difference.
            t = np.full(rows.shape, 0.5)
        if self.kind == "linear":
            return t
        xp = np.linspace(0.0, 1.0, self.values.size) if self.values.size > 1 else [0.0]
        return np.interp(t, xp, self.values)

    @classmethod
    def from_config(cls, cfg: dict | str | float | None) -> "RampProfile":
        if cfg is None:
            return cls()
        if isinstance(cfg, str):
            return cls(kind=cfg)
        if isinstance(cfg, (int, float)):
            return cls(kind="constant", value=float(cfg))
        return cls(
            kind=cfg.get("kind", "linear"),
            value=float(cfg.get("value", 1.0)),
            values=cfg.get("values"),
        )

    def to_config(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "constant":
            out["value"] = self.value
        if self.kind == "table":
            out["values"] = self.values.tolist()
        return out


def foreground_rows(mask: np.ndarray, threshold: float = 0.5) -> tuple[int, int] | None:
    """(top, bottom) row indices of the foreground extent, or None if empty."""
    occ = np.asarray(mask) >= threshold
    rows = np.flatnonzero(occ.any(axis=1))
    if rows.size == 0:
        return None
    return int(rows[0]), int(rows[-1])


def blend_spans(
    source: RowSpans, target: RowSpans, weight: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row convex blend of (center, width) between two span sets.

    weight 0 keeps the source span, weight 1 the target span.  When one side
    of a row is empty its center is borrowed from the occupied side so only
    the width interpolates; rows empty on both sides stay empty.
    """
    if source.height != target.height:
        raise ValueError("span sets must cover the same number of rows")
    w = np.asarray(weight, dtype=np.float64)
    if w.shape != source.center.shape:
        raise ValueError("weight must supply one value per row")
    src_occ, tgt_occ = source.occupied, target.occupied
    c_src = np.where(src_occ, source.center, np.where(tgt_occ, target.center, 0.0))
    c_tgt = np.where(tgt_occ, target.center, c_src)
    l_src = source.width  # already 0 on empty rows
    l_tgt = target.width
    center = w * c_tgt + (1.0 - w) * c_src
    width = w * l_tgt + (1.0 - w) * l_src
    empty = ~src_occ & ~tgt_occ
    center = np.where(empty | (width <= 0), np.nan, center)
    width = np.where(empty, 0.0, width)
    return center, width


def constrain_shape(
    source_mask: np.ndarray,
    target_mask: np.ndarray,
    ramp: RampProfile | None = None,
    threshold: float = 0.5,
) -> np.ndarray:
    """Pull the target silhouette toward the source, more so near the top.

    Each row's blended span is center = w*c_target + (1-w)*c_source and
    width = w*l_target + (1-w)*l_source, where w comes from ``ramp``
    evaluated over the union of both silhouettes' foreground rows.  The
    blend is rasterized back to a binary mask; spans are clipped to the
    grid before painting.
    """
    src = _check_mask(source_mask, "source_mask")
    tgt = _check_mask(target_mask, "target_mask")
    _check_same_shape(src, tgt)
    ramp = ramp or RampProfile()
    h, w_px = src.shape
    spans_src = row_spans(src, threshold)
    spans_tgt = row_spans(tgt, threshold)

    ext_src = foreground_rows(src, threshold)
    ext_tgt = foreground_rows(tgt, threshold)
    extents = [e for e in (ext_src, ext_tgt) if e is not None]
    if not extents:
        return np.zeros_like(src)
    top = min(e[0] for e in extents)
    bottom = max(e[1] for e in extents)

    weight = ramp.evaluate(np.arange(h), top, bottom)
    center, width = blend_spans(spans_src, spans_tgt, weight)

    # Clip blended spans to the grid; blending two in-bounds spans can
    # overshoot when a wide span meets an off-center narrow one.
    occ = width > 0
    start = np.where(occ, center - width / 2.0, 0.0)
    stop = np.where(occ, center + width / 2.0, 0.0)
    start = np.maximum(start, -0.5)
    stop = np.minimum(stop, w_px - 0.5)
    width = np.where(occ, np.maximum(stop - start, 0.0), 0.0)
    center = np.where(width > 0, (start + stop) / 2.0, np.nan)

    return rasterize(RowSpans(w_px, center, width), h, w_px)


def mask_l1(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute difference over all pixels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    return float(np.mean(np.abs(a - b)))


def mask_iou(a: np.ndarray, b: np.ndarray, threshold: float = 0.5) -> float:
    """Intersection over union of the binarized masks; 1.0 when both empty."""
    a = np.asarray(a) >= threshold
    b = np.asarray(b) >= threshold
    _check_same_shape(a, b)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def load_mask(path) -> np.ndarray:
    """Load an 8-bit single-channel PNG as a binary mask (threshold 0.5)."""
    img = Image.open(path).convert("L")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return (arr >= 0.5).astype(np.float64)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a mask as 8-bit single-channel PNG, foreground 255."""
    arr = _check_mask(mask)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path)
