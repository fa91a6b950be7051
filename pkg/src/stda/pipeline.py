"""End-to-end dataset augmentation: sampling, deformation, compositing,
and dataset I/O.

For every scene: draw an instance count uniform on {1..5}, and for each
instance sample a placement box from the scene-geometry model, an exemplar,
and a donor shape from a different exemplar inside the height-compatibility
window; crop the background at the box, deform the exemplar toward the
constrained donor shape, blend, paste, and emit a synthetic annotation
carrying the 0.1 detector loss weight.  Original annotations pass through
unchanged.  Synthetic boxes may overlap anything; overlaps are recorded in
provenance, never prevented.

All randomness derives from per-image streams keyed by (seed, image id), so
results are bit-reproducible regardless of processing order or thread
count (STDA_THREADS caps the worker pool).
"""

from __future__ import annotations

import json
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blend import box_to_pixels, compose, load_image, paste_into_scene, resize_bilinear, resize_mask, save_image
from .corpus import PedestrianExemplar
from .geometry import RampProfile, constrain_shape, load_mask
from .networks import PredictorConfig, load_params, predictor_forward
from .placement import BoundingBox, PlacementModel, sample_count, sample_placement
from .solver import SolverConfig, solve_field
from .warp import warp

__all__ = [
    "AnnotationRecord",
    "AugmentConfig",
    "AugmentReport",
    "load_manifest",
    "save_annotations",
    "load_annotations",
    "load_exemplar_bank",
    "image_rng",
    "augment_image",
    "augment_dataset",
    "evaluate_augmented",
]

SYNTHETIC_LOSS_WEIGHT = 0.1


@dataclass
class AnnotationRecord:
    """One box in one image, real or synthesized."""

    image_id: str
    box: BoundingBox
    is_synthetic: bool = False
    loss_weight: float | None = None
    provenance: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.loss_weight is None:
            self.loss_weight = SYNTHETIC_LOSS_WEIGHT if self.is_synthetic else 1.0
        if self.is_synthetic != (self.loss_weight == SYNTHETIC_LOSS_WEIGHT):
            raise ValueError(
                f"loss_weight {self.loss_weight} inconsistent with "
                f"is_synthetic={self.is_synthetic}"
            )

    def to_dict(self) -> dict:
        out = {
            "image": self.image_id,
            "x": self.box.x_left,
            "y": self.box.y_top,
            "w": self.box.width,
            "h": self.box.height,
            "synthetic": self.is_synthetic,
            "loss_weight": self.loss_weight,
        }
        if self.provenance:
            out["provenance"] = self.provenance
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationRecord":
        known = {"image", "x", "y", "w", "h", "synthetic", "loss_weight", "provenance"}
        return cls(
            image_id=d["image"],
            box=BoundingBox(float(d["x"]), float(d["y"]), float(d["w"]), float(d["h"])),
            is_synthetic=bool(d.get("synthetic", False)),
            loss_weight=d.get("loss_weight"),
            provenance=d.get("provenance", {}),
            extra={k: v for k, v in d.items() if k not in known},
        )


@dataclass
class AugmentConfig:
    """Pipeline knobs; serialized as plain JSON."""

    seed: int = 0
    mode: str = "solver"
    patch_size: int = 64
    compat_window: tuple[float, float] = (0.75, 1.33)
    count_range: tuple[int, int] = (1, 5)
    ramp: RampProfile = field(default_factory=RampProfile)
    solver: SolverConfig = field(default_factory=SolverConfig)
    placement_model: str | None = None
    predictor_params: str | None = None
    predictor_blocks: int = 4
    max_placement_retries: int = 8

    def __post_init__(self):
        if self.mode not in ("solver", "predictor"):
            raise ValueError(f"mode must be solver or predictor, got {self.mode!r}")
        lo, hi = self.compat_window
        if not (0.0 < lo <= 1.0 <= hi):
            raise ValueError(f"compatibility window must straddle 1, got ({lo}, {hi})")
        if self.count_range[0] < 0 or self.count_range[0] > self.count_range[1]:
            raise ValueError(f"bad count range {self.count_range}")

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        d = dict(d)
        if "ramp" in d:
            d["ramp"] = RampProfile.from_config(d["ramp"])
        if "solver" in d:
            d["solver"] = SolverConfig.from_dict(d["solver"])
        if "compat_window" in d:
            d["compat_window"] = tuple(d["compat_window"])
        if "count_range" in d:
            d["count_range"] = tuple(d["count_range"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mode": self.mode,
            "patch_size": self.patch_size,
            "compat_window": list(self.compat_window),
            "count_range": list(self.count_range),
            "ramp": self.ramp.to_config(),
            "solver": self.solver.to_dict(),
            "placement_model": self.placement_model,
            "predictor_params": self.predictor_params,
            "predictor_blocks": self.predictor_blocks,
            "max_placement_retries": self.max_placement_retries,
        }

    @classmethod
    def load(cls, path) -> "AugmentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _read_jsonl(path) -> list[dict]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}: malformed JSON on line {lineno}: {err}") from None
    return records


def _write_jsonl(records: list[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def load_manifest(path) -> list[dict]:
    """Scene records: {"id", "image", "boxes": [...]}; unknown keys survive."""
    entries = _read_jsonl(path)
    for i, entry in enumerate(entries):
        if "id" not in entry or "image" not in entry:
            raise ValueError(f"{path}: manifest entry {i} lacks 'id' or 'image'")
    return entries


def save_annotations(records: list[AnnotationRecord], path) -> None:
    _write_jsonl([r.to_dict() for r in records], path)


def load_annotations(path) -> list[AnnotationRecord]:
    return [AnnotationRecord.from_dict(d) for d in _read_jsonl(path)]


def load_exemplar_bank(corpus_dir) -> list[PedestrianExemplar]:
    """Read the exemplar index written by gen-corpus."""
    corpus_dir = Path(corpus_dir)
    entries = _read_jsonl(corpus_dir / "exemplars.jsonl")
    bank = []
    for entry in entries:
        bank.append(
            PedestrianExemplar(
                patch=load_image(corpus_dir / entry["patch"]),
                mask=load_mask(corpus_dir / entry["mask"]),
                exemplar_id=entry["id"],
                meta=entry.get("meta", {}),
            )
        )
    if not bank:
        raise ValueError(f"no exemplars found under {corpus_dir}")
    return bank


def image_rng(seed: int, image_id: str) -> np.random.Generator:
    """Independent, order-free stream per (seed, image id)."""
    return np.random.default_rng([seed, zlib.crc32(image_id.encode("utf-8"))])


def _pick_donor(
    bank: list[PedestrianExemplar],
    exemplar_idx: int,
    window: tuple[float, float],
    rng: np.random.Generator,
) -> int:
    """Donor shape from a different exemplar, inside the height window when
    possible, else the closest-ratio alternative."""
    base = bank[exemplar_idx].mask_height_fraction
    others = [i for i in range(len(bank)) if i != exemplar_idx]
    if not others:
        raise ValueError("shape bank exhausted: need at least two exemplars")
    ratios = np.array([bank[i].mask_height_fraction / base for i in others])
    eligible = [i for i, r in zip(others, ratios) if window[0] <= r <= window[1]]
    if eligible:
        return eligible[int(rng.integers(len(eligible)))]
    return others[int(np.argmin(np.abs(np.log(ratios))))]


class _PredictorRunner:
    """Lazily-loaded amortized predictor for predictor-mode augmentation."""

    def __init__(self, params_path: str, blocks: int, patch_size: int):
        self.params = load_params(params_path)
        self.cfg = PredictorConfig(blocks=blocks, patch_size=patch_size)

    def __call__(self, patch, source_mask, target_mask, background):
        return predictor_forward(
            self.params, self.cfg, patch, source_mask, target_mask, background
        )


def augment_image(
    scene: np.ndarray,
    image_id: str,
    exemplar_bank: list[PedestrianExemplar],
    shape_bank: list[PedestrianExemplar],
    model: PlacementModel,
    config: AugmentConfig,
    rng: np.random.Generator,
    existing_boxes: list[BoundingBox] | None = None,
    predictor: _PredictorRunner | None = None,
) -> tuple[np.ndarray, list[AnnotationRecord], list[str]]:
    """Augment one scene; returns (new scene, synthetic records, skips)."""
    h, w = scene.shape[:2]
    model = model.rescaled(h, w)
    size = config.patch_size
    placed: list[BoundingBox] = list(existing_boxes or [])
    records: list[AnnotationRecord] = []
    skips: list[str] = []
    n = sample_count(rng, *config.count_range)

    for _ in range(n):
        box = None
        for _ in range(config.max_placement_retries):
            try:
                box = sample_placement(model, rng)
                break
            except ValueError as err:
                skips.append(str(err))
        if box is None:
            skips.append(f"{image_id}: placement sampling exhausted retries")
            continue

        e_idx = int(rng.integers(len(exemplar_bank)))
        d_idx = _pick_donor(shape_bank, e_idx, config.compat_window, rng)
        exemplar = exemplar_bank[e_idx]
        donor = shape_bank[d_idx]

        y0, y1, x0, x1 = box_to_pixels(box, (h, w))
        background = resize_bilinear(scene[y0:y1, x0:x1], size, size)
        patch = resize_bilinear(exemplar.patch, size, size)
        mask = resize_mask(exemplar.mask, size, size)
        donor_mask = resize_mask(donor.mask, size, size)
        target_mask = constrain_shape(mask, donor_mask, config.ramp)

        if config.mode == "predictor":
            if predictor is None:
                raise ValueError("predictor mode needs trained parameters")
            field, alpha = predictor(patch, mask, target_mask, background)
            warped_patch = warp(patch, field)
        else:
            field, _, _ = solve_field(patch, mask, target_mask, config.solver)
            warped_patch = warp(patch, field)
            alpha = np.ones((size, size))

        composed = compose(warped_patch, target_mask, alpha, background)
        scene = paste_into_scene(scene, composed, box)

        overlaps = [i for i, other in enumerate(placed) if box.intersects(other)]
        records.append(
            AnnotationRecord(
                image_id=image_id,
                box=box,
                is_synthetic=True,
                provenance={
                    "exemplar": exemplar.exemplar_id or str(e_idx),
                    "shape": donor.exemplar_id or str(d_idx),
                    "seed": config.seed,
                    "overlaps": overlaps,
                },
            )
        )
        placed.append(box)
    return scene, records, skips


@dataclass
class AugmentReport:
    total_images: int = 0
    failed_images: int = 0
    total_synthetic: int = 0
    count_histogram: dict = field(default_factory=dict)
    skips: list = field(default_factory=list)
    wall_time_s: float = 0.0
    manifest: str = ""
    out_dir: str = ""
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "total_images": self.total_images,
            "failed_images": self.failed_images,
            "total_synthetic": self.total_synthetic,
            "count_histogram": self.count_histogram,
            "skips": self.skips,
            "wall_time_s": self.wall_time_s,
            "manifest": self.manifest,
            "out_dir": self.out_dir,
            "config": self.config,
        }


def _worker_count() -> int:
    env = os.environ.get("STDA_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return 1


def augment_dataset(
    manifest_path,
    out_dir,
    config: AugmentConfig,
    exemplar_bank: list[PedestrianExemplar],
    shape_bank: list[PedestrianExemplar] | None = None,
    model: PlacementModel | None = None,
) -> AugmentReport:
    """Augment every scene in the manifest; write PNGs, annotations, report.

    Source files are never touched.  Unreadable scenes are recorded and
    skipped; the report's failed_images count signals a nonzero exit.
    """
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    shape_bank = shape_bank or exemplar_bank
    if model is None:
        if not config.placement_model:
            raise ValueError("augment needs a placement model (config.placement_model)")
        model = PlacementModel.load(config.placement_model)
    predictor = None
    if config.mode == "predictor":
        if not config.predictor_params:
            raise ValueError("predictor mode needs config.predictor_params")
        predictor = _PredictorRunner(
            config.predictor_params, config.predictor_blocks, config.patch_size
        )

    entries = load_manifest(manifest_path)
    base = manifest_path.parent
    t0 = time.time()

    def process(entry: dict):
        image_id = entry["id"]
        try:
            scene = load_image(base / entry["image"])
        except Exception as err:
            return image_id, None, [], [f"{image_id}: unreadable image ({err})"], True
        rng = image_rng(config.seed, image_id)
        real = [
            AnnotationRecord(image_id=image_id, box=BoundingBox.from_dict(b),
                             extra={k: v for k, v in b.items() if k not in ("x", "y", "w", "h")})
            for b in entry.get("boxes", [])
        ]
        augmented, synthetic, skips = augment_image(
            scene, image_id, exemplar_bank, shape_bank, model, config, rng,
            existing_boxes=[r.box for r in real], predictor=predictor,
        )
        return image_id, augmented, real + synthetic, skips, False

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(process, entries))
    else:
        results = [process(e) for e in entries]

    report = AugmentReport(
        manifest=str(manifest_path), out_dir=str(out_dir), config=config.to_dict()
    )
    all_records: list[AnnotationRecord] = []
    histogram: dict[int, int] = {}
    for image_id, augmented, records, skips, failed in results:
        report.total_images += 1
        report.skips.extend(skips)
        if failed:
            report.failed_images += 1
            continue
        save_image(augmented, out_dir / "images" / f"{image_id}.png")
        n_synth = sum(r.is_synthetic for r in records)
        histogram[n_synth] = histogram.get(n_synth, 0) + 1
        report.total_synthetic += n_synth
        all_records.extend(records)

    save_annotations(all_records, out_dir / "annotations.jsonl")
    report.count_histogram = {str(k): v for k, v in sorted(histogram.items())}
    report.wall_time_s = time.time() - t0
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    return report


def evaluate_augmented(out_dir, manifest_path=None) -> tuple[bool, list[tuple[str, bool, str]]]:
    """Recheck pipeline invariants on an augmented set.

    Returns (all passed, table rows).  Checks: the synthetic flag and loss
    weight agree; boxes lie inside their images; per-image synthetic counts
    stay in the configured range; pixels outside synthetic boxes match the
    source scene bit-exactly.
    """
    out_dir = Path(out_dir)
    with open(out_dir / "report.json") as fh:
        report = json.load(fh)
    config = AugmentConfig.from_dict(report["config"])
    records = load_annotations(out_dir / "annotations.jsonl")
    manifest = load_manifest(manifest_path or report["manifest"])
    base = Path(manifest_path or report["manifest"]).parent

    rows: list[tuple[str, bool, str]] = []

    bad_weight = [
        r for r in records
        if (r.is_synthetic and r.loss_weight != SYNTHETIC_LOSS_WEIGHT)
        or (not r.is_synthetic and r.loss_weight == SYNTHETIC_LOSS_WEIGHT)
    ]
    rows.append(("loss-weight flags", not bad_weight,
                 f"{len(bad_weight)} inconsistent records"))

    per_image: dict[str, list[AnnotationRecord]] = {}
    for r in records:
        per_image.setdefault(r.image_id, []).append(r)

    lo, hi = config.count_range
    bad_counts = []
    for entry in manifest:
        synth = sum(r.is_synthetic for r in per_image.get(entry["id"], []))
        if not lo <= synth <= hi:
            bad_counts.append(entry["id"])
    rows.append(("per-image counts", not bad_counts,
                 f"{len(bad_counts)} images outside [{lo}, {hi}]"))

    bad_boxes = 0
    bad_purity = 0
    for entry in manifest:
        image_id = entry["id"]
        out_path = out_dir / "images" / f"{image_id}.png"
        if not out_path.exists():
            continue
        augmented = load_image(out_path)
        original = load_image(base / entry["image"])
        h, w = augmented.shape[:2]
        touched = np.zeros((h, w), dtype=bool)
        for r in per_image.get(image_id, []):
            if r.box.x_left < 0 or r.box.y_top < 0 or r.box.x_right > w or r.box.y_bottom > h:
                bad_boxes += 1
                continue
            if r.is_synthetic:
                y0, y1, x0, x1 = box_to_pixels(r.box, (h, w))
                touched[y0:y1, x0:x1] = True
        if original.shape == augmented.shape and not np.array_equal(
            augmented[~touched], original[~touched]
        ):
            bad_purity += 1
    rows.append(("boxes inside image", bad_boxes == 0, f"{bad_boxes} out-of-bounds boxes"))
    rows.append(("pixels outside boxes", bad_purity == 0,
                 f"{bad_purity} images changed outside pasted boxes"))

    ok = all(passed for _, passed, _ in rows)
    return ok, rows
