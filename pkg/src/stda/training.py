"""Amortized training: predictor against a realness critic and a
pedestrian-vs-background classifier.

Every step updates the predictor on the weighted sum of shape, cycle,
adversarial, and hard-positive-mining losses; the two critics each get one
ascent step per ``update_period`` predictor updates (the stabilizing 1:40
schedule at full scale).  The realness critic compares real exemplar patches
against composited outputs; the classifier never sees real-vs-generated
labels, only pedestrian-vs-background ones.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .blend import resize_bilinear, resize_mask
from .corpus import PedestrianExemplar
from .geometry import RampProfile, constrain_shape
from .networks import (
    PredictorConfig,
    critic_apply,
    init_critic,
    init_predictor,
    predictor_apply,
)

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "adversarial_loss",
    "hard_positive_loss",
    "loss_adv",
    "loss_hpm",
    "sample_batch",
    "predictor_total_loss",
    "train",
]

PROB_EPS = 1e-7

# Loss weights: shape, cycle, adversarial, hard-positive mining.
WEIGHT_SHAPE = 100.0
WEIGHT_CYCLE = 0.5
WEIGHT_ADV = 1.0
WEIGHT_HPM = 0.5


@dataclass
class TrainConfig:
    """Desk-scale defaults; the full-scale run uses lr 1e-5, 256 px patches,
    8 blocks, and epoch-length schedules."""

    learning_rate: float = 1e-3
    steps: int = 300
    update_period: int = 40
    batch_size: int = 2
    patch_size: int = 64
    blocks: int = 4
    base_channels: int = 16
    max_channels: int = 128
    seed: int = 0
    probe_batches: int = 4

    def __post_init__(self):
        if self.update_period < 1:
            raise ValueError("update_period must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def predictor_config(self) -> PredictorConfig:
        return PredictorConfig(
            blocks=self.blocks,
            base_channels=self.base_channels,
            max_channels=self.max_channels,
            patch_size=self.patch_size,
        )

    @classmethod
    def from_dict(cls, cfg: dict | None) -> "TrainConfig":
        return cls(**(cfg or {}))

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, last_good: dict):
        super().__init__(f"non-finite training loss at step {step}")
        self.step = step
        self.last_good = last_good


def _clipped(p: ad.Tensor) -> ad.Tensor:
    return ad.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def _one_minus(x: ad.Tensor) -> ad.Tensor:
    return ad.affine(x, -1.0, 1.0)


def adversarial_loss(prob_real: ad.Tensor, prob_generated: ad.Tensor) -> ad.Tensor:
    """log D(real) + log(1 - D(generated)), batch-averaged.

    The critic ascends this; the generator descends its second term.
    """
    return ad.add(
        ad.mean(ad.log(_clipped(prob_real))),
        ad.mean(ad.log(_clipped(_one_minus(prob_generated)))),
    )


def hard_positive_loss(
    prob_generated: ad.Tensor, prob_real: ad.Tensor, prob_background: ad.Tensor
) -> ad.Tensor:
    """log(1 - R(generated)) + log R(real) + log(1 - R(background)).

    R sees only pedestrian-vs-background structure; the generator descends
    the generated term to make its outputs harder positives.
    """
    return ad.add(
        ad.add(
            ad.mean(ad.log(_clipped(_one_minus(prob_generated)))),
            ad.mean(ad.log(_clipped(prob_real))),
        ),
        ad.mean(ad.log(_clipped(_one_minus(prob_background)))),
    )


def loss_adv(disc_params, real_patches: np.ndarray, generated_patches: np.ndarray) -> float:
    """Numpy-facing evaluation of the adversarial objective."""
    pr = critic_apply(disc_params, ad.constant(real_patches))
    pg = critic_apply(disc_params, ad.constant(generated_patches))
    return adversarial_loss(pr, pg).item()


def loss_hpm(
    clf_params,
    generated_patches: np.ndarray,
    real_patches: np.ndarray,
    background_patches: np.ndarray,
) -> float:
    """Numpy-facing evaluation of the hard-positive-mining objective."""
    pg = critic_apply(clf_params, ad.constant(generated_patches))
    pr = critic_apply(clf_params, ad.constant(real_patches))
    pb = critic_apply(clf_params, ad.constant(background_patches))
    return hard_positive_loss(pg, pr, pb).item()


@dataclass
class Batch:
    """Arrays in NCHW at the working patch size."""

    patches: np.ndarray
    masks: np.ndarray
    target_masks: np.ndarray
    backgrounds: np.ndarray


def _fit_to(arr: np.ndarray, size: int, is_mask: bool) -> np.ndarray:
    if is_mask:
        return resize_mask(arr, size, size)
    return resize_bilinear(arr, size, size)


def sample_batch(
    exemplar_bank: list[PedestrianExemplar],
    shape_bank: list[np.ndarray],
    background_bank: list[np.ndarray],
    size: int,
    batch_size: int,
    rng: np.random.Generator,
    ramp: RampProfile | None = None,
) -> Batch:
    """Draw exemplars, donor shapes from other exemplars, and backgrounds;
    resize to the working size and constrain the donor shapes."""
    if not exemplar_bank or not shape_bank or not background_bank:
        raise ValueError("banks must be nonempty")
    ramp = ramp or RampProfile()
    patches = np.empty((batch_size, 3, size, size))
    masks = np.empty((batch_size, 1, size, size))
    targets = np.empty((batch_size, 1, size, size))
    bgs = np.empty((batch_size, 3, size, size))
    for i in range(batch_size):
        e = int(rng.integers(len(exemplar_bank)))
        d = int(rng.integers(len(shape_bank)))
        if len(shape_bank) > 1:
            while d == e % len(shape_bank):
                d = int(rng.integers(len(shape_bank)))
        ex = exemplar_bank[e]
        patch = _fit_to(ex.patch, size, False)
        mask = _fit_to(ex.mask, size, True)
        donor = _fit_to(shape_bank[d], size, True)
        bg = _fit_to(background_bank[int(rng.integers(len(background_bank)))], size, False)
        patches[i] = patch.transpose(2, 0, 1)
        masks[i, 0] = mask
        targets[i, 0] = constrain_shape(mask, donor, ramp)
        bgs[i] = bg.transpose(2, 0, 1)
    return Batch(patches, masks, targets, bgs)


def _compose_generated(
    warped_patch: ad.Tensor, target_mask: ad.Tensor, alpha: ad.Tensor, background: ad.Tensor
) -> ad.Tensor:
    weight = ad.mul(target_mask, alpha)
    blended = ad.add(
        ad.mul(weight, warped_patch), ad.mul(_one_minus(weight), background)
    )
    return ad.clip(blended, 0.0, 1.0)


def predictor_total_loss(
    pred_params,
    disc_params,
    clf_params,
    batch: Batch,
    cfg: PredictorConfig,
) -> tuple[ad.Tensor, dict]:
    """Full weighted objective for one batch, with its unweighted parts."""
    z = ad.constant(batch.patches)
    s = ad.constant(batch.masks)
    s_target = ad.constant(batch.target_masks)
    bg = ad.constant(batch.backgrounds)

    x = ad.concat([z, s, s_target, bg], axis=1)
    field, alpha = predictor_apply(pred_params, cfg, x)
    warped_mask = ad.warp_batch(s, field)
    warped_patch = ad.warp_batch(z, field)
    generated = _compose_generated(warped_patch, s_target, alpha, bg)

    # Second pass predicts the return trip; one backward field warps both.
    x_back = ad.concat([warped_patch, warped_mask, s, bg], axis=1)
    field_back, _ = predictor_apply(pred_params, cfg, x_back)
    mask_back = ad.warp_batch(warped_mask, field_back)
    patch_back = ad.warp_batch(warped_patch, field_back)

    l_shape = ad.l1_mean(s_target, warped_mask)
    l_cycle = ad.add(ad.l1_mean(s, mask_back), ad.l1_mean(z, patch_back))
    l_adv = adversarial_loss(
        critic_apply(disc_params, z), critic_apply(disc_params, generated)
    )
    l_hpm = hard_positive_loss(
        critic_apply(clf_params, generated),
        critic_apply(clf_params, z),
        critic_apply(clf_params, bg),
    )
    total = ad.add(
        ad.add(ad.affine(l_shape, WEIGHT_SHAPE, 0.0), ad.affine(l_cycle, WEIGHT_CYCLE, 0.0)),
        ad.add(ad.affine(l_adv, WEIGHT_ADV, 0.0), ad.affine(l_hpm, WEIGHT_HPM, 0.0)),
    )
    parts = {
        "shape": l_shape.item(),
        "cycle": l_cycle.item(),
        "adversarial": l_adv.item(),
        "hard_positive": l_hpm.item(),
        "generated": generated,
    }
    return total, parts


def _set_requires_grad(params: dict, flag: bool) -> None:
    for p in params.values():
        p.requires_grad = flag


def _critic_ascent(critic_params, optimizer, loss_builder):
    """One maximization step: descend the negated objective."""
    _set_requires_grad(critic_params, True)
    optimizer.zero_grad()
    loss = ad.affine(loss_builder(), -1.0, 0.0)
    loss.backward()
    optimizer.step()
    _set_requires_grad(critic_params, False)


def train(
    exemplar_bank: list[PedestrianExemplar],
    shape_bank: list[np.ndarray] | None,
    background_bank: list[np.ndarray],
    config: TrainConfig | None = None,
) -> tuple[dict, dict]:
    """Alternating optimization on the banks.

    Returns the trained predictor parameters and a report with loss curves,
    update counters, and the probe-set loss before and after training.
    """
    cfg = config or TrainConfig()
    net_cfg = cfg.predictor_config()
    if shape_bank is None:
        shape_bank = [ex.mask for ex in exemplar_bank]
    rng = np.random.default_rng(cfg.seed)

    pred = init_predictor(net_cfg, rng)
    disc = init_critic(rng)
    clf = init_critic(rng)
    opt_pred = ad.Adam(pred, lr=cfg.learning_rate)
    opt_disc = ad.Adam(disc, lr=cfg.learning_rate)
    opt_clf = ad.Adam(clf, lr=cfg.learning_rate)
    # Critic weights only train on their own ascent steps; freezing them in
    # the predictor pass skips their weight-gradient GEMMs.
    _set_requires_grad(disc, False)
    _set_requires_grad(clf, False)

    def snapshot():
        return {k: p.data.copy() for k, p in pred.items()}

    probe = [
        sample_batch(exemplar_bank, shape_bank, background_bank,
                     cfg.patch_size, cfg.batch_size, rng)
        for _ in range(cfg.probe_batches)
    ]

    def probe_loss() -> float:
        vals = []
        for b in probe:
            total, _ = predictor_total_loss(pred, disc, clf, b, net_cfg)
            vals.append(total.item())
        return float(np.mean(vals))

    t_start = time.time()
    initial_loss = probe_loss()
    curves = {"total": [], "shape": [], "cycle": [], "adversarial": [], "hard_positive": []}
    d_updates = 0
    r_updates = 0
    last_good = snapshot()

    for step in range(1, cfg.steps + 1):
        batch = sample_batch(exemplar_bank, shape_bank, background_bank,
                             cfg.patch_size, cfg.batch_size, rng)
        opt_pred.zero_grad()
        total, parts = predictor_total_loss(pred, disc, clf, batch, net_cfg)
        if not math.isfinite(total.item()):
            raise TrainingDiverged(step, last_good)
        total.backward()
        opt_pred.step()

        curves["total"].append(total.item())
        for k in ("shape", "cycle", "adversarial", "hard_positive"):
            curves[k].append(parts[k])

        if step % cfg.update_period == 0:
            generated = parts["generated"].detach()
            real = ad.constant(batch.patches)
            bg = ad.constant(batch.backgrounds)
            _critic_ascent(
                disc, opt_disc,
                lambda: adversarial_loss(
                    critic_apply(disc, real), critic_apply(disc, generated)
                ),
            )
            d_updates += 1
            _critic_ascent(
                clf, opt_clf,
                lambda: hard_positive_loss(
                    critic_apply(clf, generated),
                    critic_apply(clf, real),
                    critic_apply(clf, bg),
                ),
            )
            r_updates += 1
            last_good = snapshot()

    final_loss = probe_loss()
    report = {
        "config": cfg.to_dict(),
        "steps": cfg.steps,
        "d_updates": d_updates,
        "r_updates": r_updates,
        "initial_probe_loss": initial_loss,
        "final_probe_loss": final_loss,
        "loss_reduction": (initial_loss - final_loss) / abs(initial_loss)
        if initial_loss
        else 0.0,
        "curves": curves,
        "wall_time_s": time.time() - t_start,
    }
    return pred, report
