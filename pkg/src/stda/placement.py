"""Scene-geometry placement: the bottom-edge/height linear law.

In fixed-camera street scenes a pedestrian box's height grows linearly with
its bottom edge: height = k * y_bottom + b.  The model is fitted by ordinary
least squares (height regressed on bottom edge, since height is the
dependent quantity), paired with a fixed width/height aspect ratio taken as
the median over the fitted boxes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

__all__ = [
    "BoundingBox",
    "PlacementModel",
    "fit",
    "sample_placement",
    "sample_count",
    "CALTECH_SLOPE",
    "CALTECH_INTERCEPT",
    "CALTECH_ASPECT",
]

# Reference street-scene statistics for 480x640 frames.
CALTECH_SLOPE = 1.15
CALTECH_INTERCEPT = -194.24
CALTECH_ASPECT = 0.41


@dataclass
class BoundingBox:
    """Axis-aligned box in pixel coordinates (fractional allowed)."""

    x_left: float
    y_top: float
    width: float
    height: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"box must have positive size, got {self.width}x{self.height}")

    @property
    def y_bottom(self) -> float:
        return self.y_top + self.height

    @property
    def x_right(self) -> float:
        return self.x_left + self.width

    def intersects(self, other: "BoundingBox") -> bool:
        return not (
            self.x_right <= other.x_left
            or other.x_right <= self.x_left
            or self.y_bottom <= other.y_top
            or other.y_bottom <= self.y_top
        )

    def to_dict(self) -> dict:
        return {"x": self.x_left, "y": self.y_top, "w": self.width, "h": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox":
        return cls(float(d["x"]), float(d["y"]), float(d["w"]), float(d["h"]))


@dataclass
class PlacementModel:
    """height = slope * y_bottom + intercept, plus aspect ratio and jitter."""

    slope: float
    intercept: float
    aspect_ratio: float = CALTECH_ASPECT
    image_height: int = 480
    image_width: int = 640
    jitter: float = 0.05
    min_height: float = 20.0

    def __post_init__(self):
        if self.aspect_ratio <= 0:
            raise ValueError("aspect ratio must be positive")
        if not (0.0 <= self.jitter < 1.0):
            raise ValueError("jitter must lie in [0, 1)")

    def height_at(self, y_bottom: float) -> float:
        return self.slope * y_bottom + self.intercept

    def rescaled(self, image_height: int, image_width: int) -> "PlacementModel":
        """Adapt to a different frame size: slope is scale-free, the
        intercept scales with image height."""
        if image_height == self.image_height and image_width == self.image_width:
            return self
        factor = image_height / self.image_height
        return PlacementModel(
            slope=self.slope,
            intercept=self.intercept * factor,
            aspect_ratio=self.aspect_ratio,
            image_height=image_height,
            image_width=image_width,
            jitter=self.jitter,
            min_height=self.min_height,
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PlacementModel":
        with open(path) as fh:
            return cls(**json.load(fh))


def fit(
    boxes,
    image_height: int = 480,
    image_width: int = 640,
    jitter: float = 0.05,
) -> PlacementModel:
    """Least-squares fit of box height on bottom edge.

    Needs at least two boxes with distinct bottom edges; the aspect ratio is
    the median width/height over the boxes.
    """
    boxes = list(boxes)
    y = np.array([b.y_bottom for b in boxes], dtype=np.float64)
    h = np.array([b.height for b in boxes], dtype=np.float64)
    if len(boxes) < 2 or np.unique(y).size < 2:
        raise ValueError("need at least 2 boxes with distinct bottom edges")
    var = np.var(y)
    if var <= 0:
        raise ValueError("degenerate bottom-edge variance, cannot fit a line")
    slope = float(np.cov(y, h, bias=True)[0, 1] / var)
    intercept = float(h.mean() - slope * y.mean())
    ratio = float(np.median(np.array([b.width / b.height for b in boxes])))
    return PlacementModel(
        slope=slope,
        intercept=intercept,
        aspect_ratio=ratio,
        image_height=image_height,
        image_width=image_width,
        jitter=jitter,
    )


def _feasible_bottom_range(model: PlacementModel) -> tuple[float, float]:
    """Interval of bottom edges whose boxes fit the frame for any jitter draw.

    Every requirement is linear in y_bottom, so the feasible set is the
    intersection of half-lines:
      height*(1-jitter) >= min_height      (box tall enough)
      y_bottom - height*(1+jitter) >= 0    (top edge inside)
      aspect*height*(1+jitter) <= width    (box narrow enough)
      y_bottom <= image_height
    """
    k, b = model.slope, model.intercept
    j = model.jitter
    lo, hi = 0.0, float(model.image_height)

    def apply(coef: float, const: float):
        # Constraint: coef * y + const >= 0.
        nonlocal lo, hi
        if coef > 0:
            lo = max(lo, -const / coef)
        elif coef < 0:
            hi = min(hi, -const / coef)
        elif const < 0:
            lo, hi = 1.0, 0.0  # unsatisfiable

    apply(k * (1 - j), b * (1 - j) - model.min_height)
    apply(1 - k * (1 + j), -b * (1 + j))
    apply(-model.aspect_ratio * k * (1 + j),
          model.image_width - model.aspect_ratio * b * (1 + j))
    return lo, hi


def sample_placement(model: PlacementModel, rng: np.random.Generator) -> BoundingBox:
    """Draw one box: bottom edge uniform over the feasible range, height on
    the line with relative jitter, width locked to the aspect ratio."""
    lo, hi = _feasible_bottom_range(model)
    if not lo < hi:
        raise ValueError(
            f"no feasible placement: slope={model.slope:.4f} "
            f"intercept={model.intercept:.2f} frame="
            f"{model.image_width}x{model.image_height} range=({lo:.1f}, {hi:.1f})"
        )
    y_bottom = rng.uniform(lo, hi)
    height = model.height_at(y_bottom) * (1.0 + rng.uniform(-model.jitter, model.jitter))
    width = model.aspect_ratio * height
    x_left = rng.uniform(0.0, model.image_width - width)
    return BoundingBox(x_left=x_left, y_top=y_bottom - height, width=width, height=height)


def sample_count(rng: np.random.Generator, low: int = 1, high: int = 5) -> int:
    """Uniform integer draw from {low..high} (how many instances per image)."""
    return int(rng.integers(low, high + 1))
