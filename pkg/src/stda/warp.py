"""Dense displacement fields and differentiable backward bilinear warping.

A field is an (H, W, 2) array of per-pixel displacements in pixels;
``field[..., 0]`` is the horizontal component dx and ``field[..., 1]`` the
vertical component dy.  Warping is backward: output pixel (x, y) samples the
input at (x + dx, y + dy) with bilinear interpolation, and sample positions
outside the grid clamp to the nearest edge so warped foregrounds never gain
dark halos.
"""

from __future__ import annotations

import json

import numpy as np

__all__ = [
    "identity_field",
    "warp",
    "warp_vjp",
    "FieldSampler",
    "finite_diff_field_grad",
    "save_field",
    "load_field",
]

_coord_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _base_coords(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    key = (h, w)
    if key not in _coord_cache:
        cols, rows = np.meshgrid(
            np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64)
        )
        _coord_cache[key] = (cols, rows)
    return _coord_cache[key]


def identity_field(height: int, width: int) -> np.ndarray:
    """The all-zero field: warping with it is the identity."""
    if height < 1 or width < 1:
        raise ValueError(f"field dimensions must be positive, got {height}x{width}")
    return np.zeros((height, width, 2), dtype=np.float64)


def _check_field(field: np.ndarray) -> np.ndarray:
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 3 or field.shape[2] != 2:
        raise ValueError(f"field must have shape (H, W, 2), got {field.shape}")
    if not np.isfinite(field).all():
        raise ValueError("field contains non-finite displacements")
    return field


class FieldSampler:
    """Precomputed bilinear sample coordinates for one field.

    Amortizes the floor/clamp work when one field warps several grids,
    as in the solver's per-iteration objective.
    """

    def __init__(self, field: np.ndarray):
        field = _check_field(field)
        h, w = field.shape[:2]
        self.shape = (h, w)
        cols, rows = _base_coords(h, w)
        sx = cols + field[..., 0]
        sy = rows + field[..., 1]
        sxc = np.clip(sx, 0.0, w - 1.0)
        syc = np.clip(sy, 0.0, h - 1.0)
        x0 = np.floor(sxc).astype(np.int64)
        y0 = np.floor(syc).astype(np.int64)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        self.fx = sxc - x0
        self.fy = syc - y0
        self.i00 = y0 * w + x0
        self.i01 = y0 * w + x1
        self.i10 = y1 * w + x0
        self.i11 = y1 * w + x1
        # Clamp gate: samples pushed off the grid stop moving with the field.
        self.gate_x = (sx >= 0.0) & (sx <= w - 1.0)
        self.gate_y = (sy >= 0.0) & (sy <= h - 1.0)

    def _corners(self, grid: np.ndarray):
        flat = grid.reshape(-1, *grid.shape[2:])
        return flat[self.i00], flat[self.i01], flat[self.i10], flat[self.i11]

    def _check_grid(self, grid: np.ndarray) -> np.ndarray:
        grid = np.asarray(grid, dtype=np.float64)
        if grid.shape[:2] != self.shape:
            raise ValueError(f"grid {grid.shape[:2]} and field {self.shape} disagree")
        return grid

    def warp(self, grid: np.ndarray) -> np.ndarray:
        grid = self._check_grid(grid)
        v00, v01, v10, v11 = self._corners(grid)
        fx = self.fx[..., None] if grid.ndim == 3 else self.fx
        fy = self.fy[..., None] if grid.ndim == 3 else self.fy
        top = v00 + fx * (v01 - v00)
        bot = v10 + fx * (v11 - v10)
        return top + fy * (bot - top)

    def vjp(
        self, grid: np.ndarray, upstream: np.ndarray, compute_grid_grad: bool = True
    ) -> tuple[np.ndarray | None, np.ndarray]:
        grid = self._check_grid(grid)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != grid.shape:
            raise ValueError(f"upstream {upstream.shape} must match grid {grid.shape}")
        multi = grid.ndim == 3
        fx = self.fx[..., None] if multi else self.fx
        fy = self.fy[..., None] if multi else self.fy
        v00, v01, v10, v11 = self._corners(grid)

        grid_grad = None
        if compute_grid_grad:
            vals = (
                upstream * ((1.0 - fx) * (1.0 - fy)),
                upstream * (fx * (1.0 - fy)),
                upstream * ((1.0 - fx) * fy),
                upstream * (fx * fy),
            )
            grid_grad = self._scatter(grid.shape, vals)

        ddx = (1.0 - fy) * (v01 - v00) + fy * (v11 - v10)
        ddy = (1.0 - fx) * (v10 - v00) + fx * (v11 - v01)
        if multi:
            ddx = (upstream * ddx).sum(axis=2)
            ddy = (upstream * ddy).sum(axis=2)
        else:
            ddx = upstream * ddx
            ddy = upstream * ddy
        field_grad = np.zeros((*self.shape, 2))
        field_grad[..., 0] = np.where(self.gate_x, ddx, 0.0)
        field_grad[..., 1] = np.where(self.gate_y, ddy, 0.0)
        return grid_grad, field_grad

    def _scatter(self, shape, val_list) -> np.ndarray:
        h, w = self.shape
        flat_idx = np.concatenate([self.i00.ravel(), self.i01.ravel(),
                                   self.i10.ravel(), self.i11.ravel()])
        if len(shape) == 3:
            out = np.empty(shape)
            for c in range(shape[2]):
                vals = np.concatenate([v[..., c].ravel() for v in val_list])
                out[..., c] = np.bincount(flat_idx, weights=vals, minlength=h * w).reshape(h, w)
            return out
        vals = np.concatenate([v.ravel() for v in val_list])
        return np.bincount(flat_idx, weights=vals, minlength=h * w).reshape(h, w)


def warp(grid: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Backward-warp ``grid`` (H, W) or (H, W, C) by ``field``.

    The zero field reproduces the input bit-exactly; channels are warped
    independently; bilinear sampling keeps outputs inside the input's value
    range.
    """
    return FieldSampler(field).warp(grid)


def warp_vjp(
    grid: np.ndarray,
    field: np.ndarray,
    upstream: np.ndarray,
    compute_grid_grad: bool = True,
) -> tuple[np.ndarray | None, np.ndarray]:
    """Vector-Jacobian product of :func:`warp` w.r.t. grid and field.

    The field gradient uses the bilinear cell containing the sample point;
    at integer sample coordinates the right/lower cell's slope is taken
    (floor picks that cell), and positions pushed outside the grid by the
    edge clamp get zero field gradient.  Multi-channel grids sum their
    channel contributions into the shared field gradient.  Callers that
    treat the grid as a constant can skip its gradient (returned as None).
    """
    return FieldSampler(field).vjp(grid, upstream, compute_grid_grad)


def finite_diff_field_grad(grid: np.ndarray, field: np.ndarray, loss, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of ``loss(warp(grid, field))`` w.r.t. field.

    Independent oracle for :func:`warp_vjp`: perturbs every field component
    by +/- h and differences the scalar loss.  O(H*W) warps; test-scale only.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    field = np.asarray(field, dtype=np.float64)
    grad = np.zeros_like(field)
    it = np.nditer(field, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        bumped = field.copy()
        bumped[idx] = field[idx] + h
        plus = loss(warp(grid, bumped))
        bumped[idx] = field[idx] - h
        minus = loss(warp(grid, bumped))
        grad[idx] = (plus - minus) / (2.0 * h)
    return grad


_FIELD_ORDER = "row-major, dx-then-dy planes"


def save_field(field: np.ndarray, path) -> None:
    """Write a field: one JSON header line, then raw little-endian float32."""
    field = _check_field(field)
    h, w = field.shape[:2]
    header = {"height": h, "width": w, "dtype": "f32le", "order": _FIELD_ORDER}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("ascii"))
        fh.write(field[..., 0].astype("<f4").tobytes())
        fh.write(field[..., 1].astype("<f4").tobytes())


def load_field(path) -> np.ndarray:
    """Read a field written by :func:`save_field`."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        if header.get("dtype") != "f32le":
            raise ValueError(f"unsupported field dtype {header.get('dtype')!r}")
        h, w = int(header["height"]), int(header["width"])
        raw = np.frombuffer(fh.read(), dtype="<f4")
    if raw.size != 2 * h * w:
        raise ValueError(f"field payload holds {raw.size} floats, expected {2 * h * w}")
    field = np.empty((h, w, 2), dtype=np.float64)
    field[..., 0] = raw[: h * w].reshape(h, w)
    field[..., 1] = raw[h * w :].reshape(h, w)
    return field
