"""Calibration run for the end-to-end smoke criterion: train both stages
on synthetic scenes and score the tiled pipeline on a held-out split."""

import argparse
import time

import numpy as np
import torch

from trisod import metrics, rasters, training
from trisod.checkpoint import build_hrrn, build_lrscn
from trisod.tiling import TileLayout, run_pipeline_detailed
from trisod.training import TrainConfig


def make_scenes(seeds, size, n_shapes=3):
    recs = []
    for seed in seeds:
        img, mask = rasters.gen_synthetic_scene(seed, size, n_shapes)
        recs.append(rasters.DatasetRecord(img, mask, f"s{seed}"))
    return recs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--train-scenes", type=int, default=60)
    ap.add_argument("--test-scenes", type=int, default=12)
    ap.add_argument("--scene-size", type=int, default=256)
    ap.add_argument("--lrscn-steps", type=int, default=600)
    ap.add_argument("--hrrn-steps", type=int, default=800)
    ap.add_argument("--lrscn-lr", type=float, default=0.02)
    ap.add_argument("--hrrn-lr", type=float, default=0.001)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--hrrn-width", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    torch.set_num_threads(2)

    train_set = make_scenes(range(args.train_scenes), args.scene_size)
    test_set = make_scenes(range(10_000, 10_000 + args.test_scenes), args.scene_size)

    t0 = time.time()
    lcfg = TrainConfig(
        stage="lrscn", seed=args.seed, steps=args.lrscn_steps, batch_size=args.batch,
        lr=args.lrscn_lr, input_size=128, warmup_steps=50,
    )
    lck = training.train_lrscn(lcfg, train_set)
    print(f"lrscn {time.time()-t0:.0f}s loss {lck.metrics['initial_loss']:.3f} -> {lck.metrics['final_loss']:.3f}", flush=True)

    t0 = time.time()
    hcfg = TrainConfig(
        stage="hrrn", seed=args.seed, steps=args.hrrn_steps, batch_size=args.batch,
        lr=args.hrrn_lr, input_size=128, warmup_steps=50,
        hrrn_base_width=args.hrrn_width, hrrn_max_width=args.hrrn_width * 8,
    )
    hck = training.train_hrrn(hcfg, train_set)
    print(f"hrrn {time.time()-t0:.0f}s loss {hck.metrics['initial_loss']:.3f} -> {hck.metrics['final_loss']:.3f}", flush=True)

    lrscn_model = build_lrscn(lck)
    hrrn_model = build_hrrn(hck)
    layout = TileLayout(canonical_size=256)
    fbs, maes, bdes, bmus, unc_flags = [], [], [], [], []
    coarse_fbs = []
    t0 = time.time()
    for rec in test_set:
        res = run_pipeline_detailed(rec.image, lrscn_model, hrrn_model, layout)
        fbs.append(metrics.f_beta(res.saliency, rec.mask, "adaptive"))
        maes.append(metrics.mae(res.saliency, rec.mask))
        try:
            bdes.append(metrics.bde((res.saliency >= 0.5).astype(np.uint8), rec.mask))
        except metrics.EmptyBoundaryError:
            bdes.append(float("nan"))
        bmus.append(metrics.b_mu(res.saliency, rec.mask))
        tri = res.trimap_canonical
        lv = res.logvar_canonical
        definite = (tri != 1)
        if definite.any() and (tri == 1).any():
            unc_flags.append(lv[tri == 1].mean() > lv[definite].mean())
        gm = rasters.resize_nearest(rec.mask, res.coarse_saliency.shape)
        coarse_fbs.append(metrics.f_beta(np.clip(res.coarse_saliency, 0, 1), gm, "adaptive"))
    print(f"eval {time.time()-t0:.0f}s", flush=True)
    print(f"pipeline F_beta  mean {np.mean(fbs):.4f} min {np.min(fbs):.4f}")
    print(f"pipeline MAE     mean {np.mean(maes):.4f} max {np.max(maes):.4f}")
    print(f"pipeline BDE     mean {np.nanmean(bdes):.3f}")
    print(f"pipeline B_mu    mean {np.mean(bmus):.4f}")
    print(f"coarse F_beta    mean {np.mean(coarse_fbs):.4f}")
    print(f"logvar uncertain>definite on {sum(unc_flags)}/{len(unc_flags)} images")


if __name__ == "__main__":
    main()
