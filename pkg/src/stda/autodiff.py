"""Minimal reverse-mode gradient engine for the amortized predictor.

Covers exactly the operations the training pipeline needs: convolution,
leaky-ReLU, nearest/bilinear resize, concatenation, tanh, logistic, log,
clip, elementwise arithmetic with broadcasting, mean reductions, and the
bilinear warp (reusing the solver's VJP).  Tensors are float64 numpy arrays
in NCHW layout for image data; the graph is a tape of closures walked once
in reverse topological order.
"""

from __future__ import annotations

import numpy as np

from .warp import FieldSampler

__all__ = [
    "Tensor",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "affine",
    "concat",
    "conv2d",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "log",
    "clip",
    "absolute",
    "mean",
    "l1_mean",
    "upsample_nearest",
    "resize_bilinear",
    "warp_batch",
    "Adam",
]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary(a: Tensor, b: Tensor, out_data, da, db) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(da(g), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(db(g), b.shape))

    return Tensor(out_data, parents=(a, b), backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.data + b.data, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, a.data * b.data, lambda g: g * b.data, lambda g: g * a.data)


def affine(x: Tensor, scale: float, shift: float) -> Tensor:
    def backward(g):
        x._accumulate(g * scale)

    return Tensor(scale * x.data + shift, parents=(x,), backward=backward)


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        parents=tuple(tensors),
        backward=backward,
    )


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    gate = np.where(x.data > 0, 1.0, slope)

    def backward(g):
        x._accumulate(g * gate)

    return Tensor(x.data * gate, parents=(x,), backward=backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - out**2))

    return Tensor(out, parents=(x,), backward=backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def backward(g):
        x._accumulate(g * out * (1.0 - out))

    return Tensor(out, parents=(x,), backward=backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(g / x.data)

    return Tensor(np.log(x.data), parents=(x,), backward=backward)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    gate = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        x._accumulate(g * gate)

    return Tensor(np.clip(x.data, lo, hi), parents=(x,), backward=backward)


def absolute(x: Tensor) -> Tensor:
    s = np.sign(x.data)

    def backward(g):
        x._accumulate(g * s)

    return Tensor(np.abs(x.data), parents=(x,), backward=backward)


def mean(x: Tensor, axis: tuple | None = None, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size / out.size

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape) / count)

    return Tensor(out, parents=(x,), backward=backward)


def l1_mean(a: Tensor, b: Tensor) -> Tensor:
    return mean(absolute(sub(a, b)))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 1) -> Tensor:
    """2-D convolution, NCHW input, (OC, C, kh, kw) weights.

    im2col + one GEMM each for the output, the weight gradient, and the
    column gradient; the column gradient folds back with nine strided adds.
    """
    bsz, cin, h, w = x.shape
    oc, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, OH, OW, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        bsz * oh * ow, cin * kh * kw
    )
    wmat = weight.data.reshape(oc, cin * kh * kw)
    out = np.ascontiguousarray(
        (cols @ wmat.T).reshape(bsz, oh, ow, oc).transpose(0, 3, 1, 2)
    )
    out += bias.data[None, :, None, None]

    def backward(g):
        g2d = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz * oh * ow, oc)
        if bias.requires_grad:
            bias._accumulate(g2d.sum(axis=0))
        if weight.requires_grad:
            weight._accumulate((g2d.T @ cols).reshape(weight.shape))
        if x.requires_grad:
            gcols = (g2d @ wmat).reshape(bsz, oh, ow, cin, kh, kw)
            # Accumulate channels-last: the inner axis stays short-strided.
            gxp = np.zeros((bsz, h + 2 * pad, w + 2 * pad, cin))
            for ki in range(kh):
                for kj in range(kw):
                    gxp[:, ki : ki + stride * oh : stride,
                        kj : kj + stride * ow : stride, :] += gcols[:, :, :, :, ki, kj]
            x._accumulate(
                np.ascontiguousarray(
                    gxp[:, pad : pad + h, pad : pad + w, :].transpose(0, 3, 1, 2)
                )
            )

    return Tensor(out, parents=(x, weight, bias), backward=backward)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(g):
        bsz, c, h, w = x.shape
        x._accumulate(
            g.reshape(bsz, c, h, factor, w, factor).sum(axis=(3, 5))
        )

    return Tensor(out, parents=(x,), backward=backward)


def _resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    src = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    m[rows, i0] += 1.0 - frac
    m[rows, i1] += frac
    return m


def resize_bilinear(x: Tensor, height: int, width: int) -> Tensor:
    ry = _resize_matrix(height, x.shape[2])
    rx = _resize_matrix(width, x.shape[3])
    out = np.matmul(np.matmul(ry, x.data), rx.T)

    def backward(g):
        x._accumulate(np.matmul(np.matmul(ry.T, g), rx))

    return Tensor(out, parents=(x,), backward=backward)


def warp_batch(x: Tensor, field: Tensor) -> Tensor:
    """Backward bilinear warp of each sample; field is (B, 2, H, W) in
    dx-then-dy channel order, displacements in pixels."""
    bsz = x.shape[0]
    samplers = []
    outs = np.empty_like(x.data)
    for b in range(bsz):
        f = np.stack([field.data[b, 0], field.data[b, 1]], axis=-1)
        sampler = FieldSampler(f)
        samplers.append(sampler)
        outs[b] = sampler.warp(x.data[b].transpose(1, 2, 0)).transpose(2, 0, 1)

    def backward(g):
        need_x = x.requires_grad
        gx = np.zeros_like(x.data) if need_x else None
        gf = np.zeros_like(field.data) if field.requires_grad else None
        for b in range(bsz):
            grid = x.data[b].transpose(1, 2, 0)
            upstream = g[b].transpose(1, 2, 0)
            grid_grad, field_grad = samplers[b].vjp(grid, upstream, compute_grid_grad=need_x)
            if need_x:
                gx[b] = grid_grad.transpose(2, 0, 1)
            if gf is not None:
                gf[b, 0] = field_grad[..., 0]
                gf[b, 1] = field_grad[..., 1]
        if need_x:
            x._accumulate(gx)
        if gf is not None:
            field._accumulate(gf)

    return Tensor(outs, parents=(x, field), backward=backward)


class Adam:
    """Deterministic Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * p.grad
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * p.grad**2
            p.data -= self.lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + self.eps)
