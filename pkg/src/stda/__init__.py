"""Shape-guided copy-paste augmentation for detection datasets.

Deforms real foreground exemplars into new silhouettes with an optimized
dense warping field, blends them into background scenes through a bounded
per-pixel blending map, and places them according to a fitted
bottom-edge/height scene-geometry model.
"""

from .geometry import (
    RampProfile,
    RowSpans,
    constrain_shape,
    mask_iou,
    mask_l1,
    rasterize,
    row_spans,
)
from .warp import finite_diff_field_grad, identity_field, load_field, save_field, warp, warp_vjp
from .blend import compose, paste_into_scene, squash_alpha
from .solver import SolveDiagnostics, SolverConfig, deform, solve_field
from .placement import BoundingBox, PlacementModel, fit, sample_count, sample_placement

__version__ = "0.1.0"

__all__ = [
    "RampProfile",
    "RowSpans",
    "constrain_shape",
    "mask_iou",
    "mask_l1",
    "rasterize",
    "row_spans",
    "identity_field",
    "warp",
    "warp_vjp",
    "finite_diff_field_grad",
    "save_field",
    "load_field",
    "squash_alpha",
    "compose",
    "paste_into_scene",
    "SolverConfig",
    "SolveDiagnostics",
    "solve_field",
    "deform",
    "BoundingBox",
    "PlacementModel",
    "fit",
    "sample_placement",
    "sample_count",
    "__version__",
]
