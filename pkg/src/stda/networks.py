"""Encoder-decoder predictor and the two 3-block critics.

The predictor is a U-shaped network with skip connections: strided
convolutions down, nearest-upsample + convolution back up, and two heads on
the full-resolution trunk: a 2-channel displacement-field head and a
1-channel raw blending head squashed to [0.8, 1.2].  Both heads are
zero-initialized so an untrained predictor emits the identity field and the
neutral blending map.  The critics share one 3-convolution-block shape
ending in a scalar probability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

__all__ = [
    "PredictorConfig",
    "init_predictor",
    "predictor_apply",
    "predictor_forward",
    "init_critic",
    "critic_apply",
    "save_params",
    "load_params",
]

PREDICTOR_IN_CHANNELS = 8  # patch(3) + mask(1) + target mask(1) + background(3)


@dataclass
class PredictorConfig:
    """Network size; 4 blocks / 64 px is the desk default, 8 / 256 the
    full-scale configuration."""

    blocks: int = 4
    base_channels: int = 16
    max_channels: int = 128
    patch_size: int = 64
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.blocks < 1:
            raise ValueError("need at least one block")
        if self.patch_size % (2 ** self.blocks) != 0:
            raise ValueError(
                f"patch size {self.patch_size} not divisible by 2^{self.blocks}"
            )

    def encoder_channels(self) -> list[int]:
        return [min(self.base_channels * 2**i, self.max_channels) for i in range(self.blocks)]


def _he_conv(rng: np.random.Generator, out_ch: int, in_ch: int, k: int = 3):
    std = np.sqrt(2.0 / (in_ch * k * k))
    w = ad.parameter(rng.normal(0.0, std, size=(out_ch, in_ch, k, k)))
    b = ad.parameter(np.zeros(out_ch))
    return w, b


def _zero_conv(out_ch: int, in_ch: int, k: int = 3):
    return ad.parameter(np.zeros((out_ch, in_ch, k, k))), ad.parameter(np.zeros(out_ch))


def init_predictor(cfg: PredictorConfig, rng: np.random.Generator) -> dict[str, ad.Tensor]:
    params: dict[str, ad.Tensor] = {}
    chans = cfg.encoder_channels()
    in_ch = PREDICTOR_IN_CHANNELS
    for i, out_ch in enumerate(chans):
        params[f"enc{i}.w"], params[f"enc{i}.b"] = _he_conv(rng, out_ch, in_ch)
        in_ch = out_ch
    d_ch = chans[-1]
    for i in range(cfg.blocks - 2, -1, -1):
        params[f"dec{i}.w"], params[f"dec{i}.b"] = _he_conv(rng, chans[i], d_ch)
        d_ch = chans[i] * 2  # conv output concatenated with the skip
    params["trunk.w"], params["trunk.b"] = _he_conv(rng, cfg.base_channels, d_ch)
    params["field.w"], params["field.b"] = _zero_conv(2, cfg.base_channels)
    params["alpha.w"], params["alpha.b"] = _zero_conv(1, cfg.base_channels)
    return params


def predictor_apply(
    params: dict[str, ad.Tensor], cfg: PredictorConfig, x: ad.Tensor
) -> tuple[ad.Tensor, ad.Tensor]:
    """Run the predictor on a (B, 8, S, S) input.

    Returns the displacement field (B, 2, S, S) in pixels and the squashed
    blending map (B, 1, S, S) in [0.8, 1.2].
    """
    if x.shape[1] != PREDICTOR_IN_CHANNELS or x.shape[2] != cfg.patch_size:
        raise ValueError(
            f"predictor expects (B, {PREDICTOR_IN_CHANNELS}, {cfg.patch_size}, "
            f"{cfg.patch_size}), got {x.shape}"
        )
    skips = []
    h = x
    for i in range(cfg.blocks):
        h = ad.leaky_relu(
            ad.conv2d(h, params[f"enc{i}.w"], params[f"enc{i}.b"], stride=2, pad=1),
            cfg.leaky_slope,
        )
        skips.append(h)
    for i in range(cfg.blocks - 2, -1, -1):
        h = ad.upsample_nearest(h, 2)
        h = ad.leaky_relu(
            ad.conv2d(h, params[f"dec{i}.w"], params[f"dec{i}.b"], stride=1, pad=1),
            cfg.leaky_slope,
        )
        h = ad.concat([h, skips[i]], axis=1)
    # Trunk and heads run at half resolution; the outputs upsample
    # bilinearly, which keeps the displacement field smooth and halves the
    # cost of the most expensive convolutions.
    h = ad.leaky_relu(
        ad.conv2d(h, params["trunk.w"], params["trunk.b"], stride=1, pad=1),
        cfg.leaky_slope,
    )
    field = ad.conv2d(h, params["field.w"], params["field.b"], stride=1, pad=1)
    raw_alpha = ad.conv2d(h, params["alpha.w"], params["alpha.b"], stride=1, pad=1)
    size = cfg.patch_size
    field = ad.resize_bilinear(field, size, size)
    alpha = ad.affine(ad.tanh(ad.resize_bilinear(raw_alpha, size, size)), 0.2, 1.0)
    return field, alpha


def predictor_forward(
    params: dict[str, ad.Tensor],
    cfg: PredictorConfig,
    patch: np.ndarray,
    source_mask: np.ndarray,
    target_mask: np.ndarray,
    background: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Single-sample inference: (H, W, 2) field and (H, W) blending map."""
    x = ad.constant(
        np.concatenate(
            [
                patch.transpose(2, 0, 1),
                source_mask[None],
                target_mask[None],
                background.transpose(2, 0, 1),
            ]
        )[None]
    )
    field, alpha = predictor_apply(params, cfg, x)
    out_field = np.stack([field.data[0, 0], field.data[0, 1]], axis=-1)
    return out_field, alpha.data[0, 0]


def init_critic(rng: np.random.Generator, in_channels: int = 3,
                base_channels: int = 16) -> dict[str, ad.Tensor]:
    """3 strided conv blocks plus a 1-channel projection."""
    params: dict[str, ad.Tensor] = {}
    chans = [base_channels, base_channels * 2, base_channels * 4]
    in_ch = in_channels
    for i, out_ch in enumerate(chans):
        params[f"conv{i}.w"], params[f"conv{i}.b"] = _he_conv(rng, out_ch, in_ch)
        in_ch = out_ch
    params["proj.w"], params["proj.b"] = _he_conv(rng, 1, in_ch)
    return params


def critic_apply(params: dict[str, ad.Tensor], x: ad.Tensor,
                 leaky_slope: float = 0.2) -> ad.Tensor:
    """Per-sample probability (B, 1) via spatial mean + logistic squash."""
    h = x
    for i in range(3):
        h = ad.leaky_relu(
            ad.conv2d(h, params[f"conv{i}.w"], params[f"conv{i}.b"], stride=2, pad=1),
            leaky_slope,
        )
    h = ad.conv2d(h, params["proj.w"], params["proj.b"], stride=1, pad=1)
    return ad.sigmoid(ad.mean(h, axis=(2, 3)))


def save_params(params: dict[str, ad.Tensor], path) -> None:
    """JSON header line naming tensors and shapes, then raw f32le payloads."""
    names = sorted(params)
    header = {
        "dtype": "f32le",
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("ascii"))
        for n in names:
            fh.write(params[n].data.astype("<f4").tobytes())


def load_params(path) -> dict[str, ad.Tensor]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        if header.get("dtype") != "f32le":
            raise ValueError(f"unsupported params dtype {header.get('dtype')!r}")
        params: dict[str, ad.Tensor] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = np.frombuffer(fh.read(4 * count), dtype="<f4")
            if raw.size != count:
                raise ValueError(f"truncated payload for tensor {entry['name']!r}")
            params[entry["name"]] = ad.parameter(raw.reshape(shape).astype(np.float64))
    return params
