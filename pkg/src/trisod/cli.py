"""Command-line entry points: synth, train, infer, eval, ablate.

Exit codes: 0 success, 1 internal error, 2 user/input error. The
DISENT_SOD_THREADS environment variable caps torch's intra-op threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import checkpoint as ckpt_mod
from . import metrics, rasters, training
from .rasters import CodecError, RasterShapeError
from .tiling import TileLayout, run_pipeline_detailed
from .training import AblateConfig, ConfigError

USER_ERRORS = (
    FileNotFoundError,
    NotADirectoryError,
    CodecError,
    RasterShapeError,
    ConfigError,
    ckpt_mod.CheckpointError,
    ValueError,
)


def cmd_synth(args) -> int:
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(args.count):
        seed = args.seed + i
        stem = f"scene_{i:05d}"
        image, mask = rasters.gen_synthetic_scene(seed, args.size, args.shapes)
        rasters.save_image(image, out / "images" / f"{stem}.png")
        rasters.save_mask(mask, out / "masks" / f"{stem}.png")
        entries.append({"stem": stem, "seed": seed})
    manifest = {
        "count": args.count,
        "size": args.size,
        "base_seed": args.seed,
        "n_shapes": args.shapes,
        "entries": entries,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(f"wrote {args.count} scenes to {out}")
    return 0


def cmd_train(args) -> int:
    config = training.load_train_config(args.config, args.stage, args.override)
    dataset = rasters.load_dataset(args.data)
    if config.noise_kernel:
        dataset = training._corrupted_dataset(dataset, config.noise_kernel, config.noise_seed)
    ckpt = training.train(config, dataset)
    ckpt_mod.save_checkpoint(ckpt, args.out)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.jsonl")
    with open(log_path, "w") as fh:
        for entry in ckpt.metrics.get("log", []):
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    print(
        f"trained {config.stage} for {config.steps} steps: loss "
        f"{ckpt.metrics['initial_loss']:.4f} -> {ckpt.metrics['final_loss']:.4f}"
    )
    print(f"checkpoint: {args.out}")
    return 0


def cmd_infer(args) -> int:
    image = rasters.load_image(args.image)
    lrscn_model = ckpt_mod.load_lrscn(args.lrscn)
    hrrn_model = ckpt_mod.load_hrrn(args.hrrn)
    layout = TileLayout(canonical_size=args.canonical)
    result = run_pipeline_detailed(image, lrscn_model, hrrn_model, layout)
    rasters.save_saliency(result.saliency, args.out)
    if args.trimap_out:
        trimap = rasters.resize_nearest(result.trimap_canonical, image.shape[:2])
        rasters.encode_trimap(trimap, args.trimap_out)
    print(f"saliency: {args.out}")
    return 0


def cmd_eval(args) -> int:
    rows = metrics.evaluate_directory(
        args.pred, args.gt, out_csv=args.out, pr_out=args.pr_out, jsonl_out=args.jsonl
    )
    agg = rows[-1]
    print(
        f"{len(rows) - 1} images: mae {agg['mae']:.4f} f_beta {agg['f_beta']:.4f} "
        f"f_beta_max {agg['f_beta_max']:.4f} bde {agg['bde']:.3f} b_mu {agg['b_mu']:.4f}"
    )
    return 0


def cmd_ablate(args) -> int:
    with open(args.config) as fh:
        import yaml

        data = yaml.safe_load(fh) or {}
    section = data.get("ablate", data)
    config = AblateConfig.from_dict(section)
    if not config.train_data or not config.test_data:
        raise ConfigError("ablate config needs train_data and test_data paths")
    train_set = rasters.load_dataset(config.train_data)
    test_set = rasters.load_dataset(config.test_data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(seed, kernel, arm, scores):
        print(
            f"seed {seed} kernel {kernel:2d} arm {arm:11s} "
            f"bde {scores['bde']:.3f} b_mu {scores['b_mu']:.4f}",
            flush=True,
        )

    report = training.ablate_noise(config, train_set, test_set, progress=progress)
    with open(out / "ablation_long.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["kernel", "arm", "metric", "value", "seed"])
        writer.writeheader()
        writer.writerows(report.rows)
    with open(out / "ablation_medians.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["kernel", "arm", "metric", "median"])
        writer.writeheader()
        writer.writerows(report.medians)
    print(f"wrote {out / 'ablation_long.csv'} and {out / 'ablation_medians.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trisod",
        description="Two-stage salient object detection: synthesize data, "
        "train both stages, run tiled inference, evaluate, ablate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic image/mask dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shapes", type=int, default=3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one stage on a dataset directory")
    p.add_argument("--stage", choices=("lrscn", "hrrn"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="two-stage tiled inference on one image")
    p.add_argument("--image", required=True)
    p.add_argument("--lrscn", required=True)
    p.add_argument("--hrrn", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trimap-out", default=None)
    p.add_argument("--canonical", type=int, default=256)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a prediction directory against GT")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pr-out", default=None)
    p.add_argument("--jsonl", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="annotation-noise robustness experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    rasters.set_thread_cap()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
