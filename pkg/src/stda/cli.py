"""Command-line interface.

Subcommands: gen-corpus, fit-placement, solve, train, augment, eval.
Report-producing paths (solve diagnostics, training reports, placement
fits, augmentation reports) also render a figure next to the JSON output.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import report as figures
from .blend import load_image, save_image
from .corpus import SceneParams, gen_exemplar, gen_scene, random_params, sample_clear_box
from .geometry import constrain_shape, load_mask, save_mask
from .networks import save_params
from .pipeline import (
    AugmentConfig,
    augment_dataset,
    evaluate_augmented,
    load_annotations,
    load_exemplar_bank,
    load_manifest,
)
from .placement import fit as fit_placement_model
from .solver import SolverConfig, solve_field
from .training import TrainConfig, train
from .warp import save_field, warp


def _cmd_gen_corpus(args) -> int:
    out = Path(args.out_dir)
    (out / "exemplars").mkdir(parents=True, exist_ok=True)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    exemplars = []
    index = []
    for i in range(args.count):
        ex = gen_exemplar(random_params(rng, args.patch_size, args.patch_size), rng,
                          exemplar_id=f"ex_{i:04d}")
        patch_rel = f"exemplars/{ex.exemplar_id}.patch.png"
        mask_rel = f"exemplars/{ex.exemplar_id}.mask.png"
        save_image(ex.patch, out / patch_rel)
        save_mask(ex.mask, out / mask_rel)
        index.append({"id": ex.exemplar_id, "patch": patch_rel, "mask": mask_rel,
                      "meta": ex.meta})
        exemplars.append(ex)
    with open(out / "exemplars.jsonl", "w") as fh:
        for entry in index:
            fh.write(json.dumps(entry) + "\n")

    scene_params = SceneParams(height=args.scene_height, width=args.scene_width)
    with open(out / "manifest.jsonl", "w") as fh:
        for i in range(args.scenes):
            scene, boxes = gen_scene(scene_params, rng, exemplars)
            scene_id = f"scene_{i:04d}"
            save_image(scene, out / "scenes" / f"{scene_id}.png")
            fh.write(json.dumps({
                "id": scene_id,
                "image": f"scenes/{scene_id}.png",
                "boxes": [b.to_dict() for b in boxes],
            }) + "\n")
    print(f"wrote {args.count} exemplars and {args.scenes} scenes to {out}")
    return 0


def _cmd_fit_placement(args) -> int:
    records = load_annotations(args.annotations)
    boxes = [r.box for r in records if not r.is_synthetic]
    if not boxes:
        boxes = [r.box for r in records]
    model = fit_placement_model(
        boxes, image_height=args.image_height, image_width=args.image_width,
        jitter=args.jitter,
    )
    model.save(args.out_model)
    fig = figures.save_placement_fit(boxes, model, figures.figure_path_for(args.out_model))
    print(f"fit {len(boxes)} boxes: slope={model.slope:.4f} "
          f"intercept={model.intercept:.2f} aspect={model.aspect_ratio:.3f}")
    print(f"model -> {args.out_model}, figure -> {fig}")
    return 0


def _cmd_solve(args) -> int:
    patch = load_image(args.exemplar_image)
    source_mask = load_mask(args.exemplar_mask)
    donor_mask = load_mask(args.target_mask)
    cfg = SolverConfig()
    if args.config:
        with open(args.config) as fh:
            cfg = SolverConfig.from_dict(json.load(fh))
    target = constrain_shape(source_mask, donor_mask) if args.constrain else donor_mask
    fwd, bwd, diag = solve_field(patch, source_mask, target, cfg)
    if args.out_field:
        save_field(fwd, args.out_field)
    if args.out_backward_field:
        save_field(bwd, args.out_backward_field)
    if args.out_patch:
        save_image(np.clip(warp(patch, fwd), 0.0, 1.0), args.out_patch)
    if args.diagnostics:
        with open(args.diagnostics, "w") as fh:
            json.dump(diag.to_dict(), fh, indent=2)
            fh.write("\n")
        figures.save_loss_trace(diag.to_dict(), figures.figure_path_for(args.diagnostics))
    print(f"solved in {diag.iterations} iterations; "
          f"final shape loss {diag.final_shape_loss:.5f} (converged={diag.converged})")
    return 0


def _load_banks(corpus_dir, seed: int, background_count: int = 64, size: int = 48):
    bank = load_exemplar_bank(corpus_dir)
    rng = np.random.default_rng([seed, 0xB0_0C])
    backgrounds = []
    manifest = load_manifest(Path(corpus_dir) / "manifest.jsonl")
    from .placement import BoundingBox
    from .blend import box_to_pixels

    for entry in manifest:
        scene = load_image(Path(corpus_dir) / entry["image"])
        boxes = [BoundingBox.from_dict(b) for b in entry.get("boxes", [])]
        for _ in range(max(1, background_count // max(len(manifest), 1))):
            clear = sample_clear_box(scene.shape[:2], boxes, rng, size=size)
            if clear is None:
                continue
            y0, y1, x0, x1 = box_to_pixels(clear, scene.shape[:2])
            backgrounds.append(scene[y0:y1, x0:x1].copy())
    if not backgrounds:
        raise ValueError(f"no pedestrian-free background crops found in {corpus_dir}")
    return bank, backgrounds


def _cmd_train(args) -> int:
    cfg = TrainConfig()
    if args.config:
        with open(args.config) as fh:
            cfg = TrainConfig.from_dict(json.load(fh))
    bank, backgrounds = _load_banks(args.banks, cfg.seed)
    params, report = train(bank, None, backgrounds, cfg)
    save_params(params, args.out_params)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
        figures.save_training_curves(report, figures.figure_path_for(args.report))
    print(f"trained {report['steps']} steps "
          f"(D updates {report['d_updates']}, R updates {report['r_updates']}); "
          f"probe loss {report['initial_probe_loss']:.4f} -> {report['final_probe_loss']:.4f}")
    return 0


def _cmd_augment(args) -> int:
    config = AugmentConfig.load(args.config) if args.config else AugmentConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.mode:
        config.mode = args.mode
    if args.placement_model:
        config.placement_model = args.placement_model
    corpus = args.corpus or getattr(config, "corpus", None)
    if not corpus:
        print("augment: --corpus (exemplar bank directory) is required", file=sys.stderr)
        return 2
    bank = load_exemplar_bank(corpus)
    report = augment_dataset(args.manifest, args.out_dir, config, bank)
    figures.save_count_histogram(
        report.to_dict(), Path(args.out_dir) / "report.png"
    )

    if args.preview:
        manifest = load_manifest(args.manifest)
        base = Path(args.manifest).parent
        preview_dir = Path(args.out_dir) / "previews"
        preview_dir.mkdir(parents=True, exist_ok=True)
        for entry in manifest[: args.preview]:
            out_image = Path(args.out_dir) / "images" / f"{entry['id']}.png"
            if not out_image.exists():
                continue
            figures.save_preview(
                load_image(base / entry["image"]),
                load_image(out_image),
                preview_dir / f"{entry['id']}.png",
            )

    print(f"augmented {report.total_images - report.failed_images}/{report.total_images} "
          f"images with {report.total_synthetic} synthetic instances "
          f"in {report.wall_time_s:.1f}s")
    if report.skips:
        print(f"{len(report.skips)} instance skips (see report.json)")
    return 1 if report.failed_images else 0


def _cmd_eval(args) -> int:
    ok, rows = evaluate_augmented(args.out_dir, args.manifest)
    width = max(len(name) for name, _, _ in rows)
    for name, passed, detail in rows:
        status = "PASS" if passed else "FAIL"
        print(f"{name.ljust(width)}  {status}  {detail}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stda",
        description="Shape-guided copy-paste augmentation for detection datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate synthetic exemplars and scenes")
    p.add_argument("--count", type=int, default=16, help="number of exemplars")
    p.add_argument("--scenes", type=int, default=8, help="number of scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--scene-height", type=int, default=240)
    p.add_argument("--scene-width", type=int, default=320)
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("fit-placement", help="fit the bottom-edge/height line")
    p.add_argument("--annotations", required=True, help="JSON Lines box records")
    p.add_argument("--out-model", required=True)
    p.add_argument("--image-height", type=int, default=480)
    p.add_argument("--image-width", type=int, default=640)
    p.add_argument("--jitter", type=float, default=0.05)
    p.set_defaults(func=_cmd_fit_placement)

    p = sub.add_parser("solve", help="fit a warping field for one exemplar/shape pair")
    p.add_argument("--exemplar-image", required=True)
    p.add_argument("--exemplar-mask", required=True)
    p.add_argument("--target-mask", required=True)
    p.add_argument("--config", help="JSON SolverConfig overrides")
    p.add_argument("--out-field")
    p.add_argument("--out-backward-field")
    p.add_argument("--out-patch")
    p.add_argument("--diagnostics", help="JSON loss trace (figure rendered alongside)")
    p.add_argument("--constrain", action=argparse.BooleanOptionalAction, default=True,
                   help="apply the shape-constraining ramp to the target mask")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("train", help="train the amortized predictor on a corpus")
    p.add_argument("--banks", required=True, help="corpus directory (gen-corpus output)")
    p.add_argument("--config", help="JSON TrainConfig overrides")
    p.add_argument("--out-params", required=True)
    p.add_argument("--report", help="JSON loss curves (figure rendered alongside)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("augment", help="augment a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="JSON AugmentConfig")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["solver", "predictor"])
    p.add_argument("--corpus", help="exemplar bank directory")
    p.add_argument("--placement-model", help="placement model JSON")
    p.add_argument("--preview", type=int, default=0,
                   help="emit N side-by-side before/after panels")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("eval", help="recheck invariants on an augmented set")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--manifest", help="override the manifest recorded in the report")
    p.set_defaults(func=_cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
