"""Optimization loops for both stages plus the annotation-noise ablation.

Both stages train with SGD (momentum 0.9, weight decay 5e-4 by default),
a warmup followed by linear (first stage) or cosine (second stage) decay,
per-sample random trimap targets redrawn every occurrence, and optional
horizontal-flip / multi-scale augmentation. Everything is a deterministic
function of (seed, config, dataset).
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import yaml

from . import losses, metrics
from .checkpoint import (
    Checkpoint,
    build_hrrn,
    build_lrscn,
    hrrn_config_dict,
    lrscn_config_dict,
    state_to_arrays,
)
from .hrrn import Hrrn, HrrnConfig, one_hot_trimap
from .lrscn import BackboneConfig, Lrscn
from .rasters import DatasetRecord, corrupt_mask, resize_bilinear, resize_nearest
from .tiling import TileLayout, run_pipeline
from .trimap import TRAIN_KERNELS, trimap_from_mask


class TrainingDivergedError(RuntimeError):
    """The loss became non-finite; carries the offending step."""


class DegenerateTrainingError(RuntimeError):
    """No pixel contributed to the loss for a whole epoch."""


class ConfigError(ValueError):
    """A config file contains unknown or invalid keys."""


@dataclass
class TrainConfig:
    stage: str = "lrscn"
    seed: int = 0
    steps: int = 2000
    batch_size: int = 8
    lr: float = 0.01
    backbone_lr_ratio: float = 0.1  # 0.001 / 0.01 split, first stage only
    momentum: float = 0.9
    weight_decay: float = 0.0005
    warmup_steps: int = 100
    schedule: str = ""  # "" picks the stage default
    hflip: bool = True
    multiscale: bool = True
    scales: tuple = (0.75, 1.0, 1.25)
    uncertainty: bool = True
    input_size: int = 128
    stage_channels: tuple = (32, 64, 128, 128)
    hrrn_base_width: int = 32
    hrrn_max_width: int = 256
    noise_kernel: int = 0  # 0 trains on clean annotations
    noise_seed: int = 0

    def __post_init__(self):
        if self.stage not in ("lrscn", "hrrn"):
            raise ConfigError(f"stage must be 'lrscn' or 'hrrn', got {self.stage!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("rates must be non-negative")
        if not self.schedule:
            self.schedule = "linear" if self.stage == "lrscn" else "cosine"
        if self.schedule not in ("linear", "cosine"):
            raise ConfigError(f"schedule must be 'linear' or 'cosine', got {self.schedule!r}")
        self.scales = tuple(float(s) for s in self.scales)
        self.stage_channels = tuple(int(c) for c in self.stage_channels)

    @staticmethod
    def from_dict(data: dict, stage: str | None = None) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if stage is not None:
            data = {**data, "stage": stage}
        return TrainConfig(**data)


def load_train_config(path, stage: str, overrides=()) -> TrainConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    section = data.get(stage, data)
    if not isinstance(section, dict):
        raise ConfigError(f"{path}: section {stage!r} must be a mapping")
    section = {k: v for k, v in section.items() if k not in ("lrscn", "hrrn")}
    section.update(parse_overrides(overrides))
    return TrainConfig.from_dict(section, stage=stage)


def parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        out[key.strip()] = yaml.safe_load(raw)
    return out


# ---------------------------------------------------------------------------
# learning-rate schedules
# ---------------------------------------------------------------------------


def schedule_factor(t: float, total: float, warmup: float, kind: str) -> float:
    """Peak-relative learning-rate factor, continuous on [0, total]."""
    warmup = min(warmup, total)
    if t <= warmup:
        return t / warmup if warmup > 0 else 1.0
    frac = (t - warmup) / max(total - warmup, 1e-12)
    if kind == "linear":
        return 1.0 - frac
    if kind == "cosine":
        return 0.5 * (1.0 + math.cos(math.pi * frac))
    raise ValueError(f"unknown schedule {kind!r}")


def _set_lr(optimizer, cfg: TrainConfig, step: int) -> float:
    factor = schedule_factor(step + 0.5, cfg.steps, cfg.warmup_steps, cfg.schedule)
    for group in optimizer.param_groups:
        group["lr"] = group["max_lr"] * factor
    return factor


# ---------------------------------------------------------------------------
# deterministic batch assembly
# ---------------------------------------------------------------------------


def _index_stream(rng, n: int):
    while True:
        yield from rng.permutation(n)


def _round_to(value: float, multiple: int, floor: int) -> int:
    return max(floor, int(round(value / multiple)) * multiple)


def _training_mask(record: DatasetRecord) -> np.ndarray:
    return record.noisy_mask if record.noisy_mask is not None else record.mask


def _sample_view(record, size, flip, rng, crop=False):
    """One (image, mask) training view at size x size."""
    image, mask = record.image, _training_mask(record)
    h = image.shape[0]
    if crop and h > size:
        oy = int(rng.integers(0, h - size + 1))
        ox = int(rng.integers(0, image.shape[1] - size + 1))
        image = image[oy : oy + size, ox : ox + size]
        mask = mask[oy : oy + size, ox : ox + size]
    if image.shape[0] != size or image.shape[1] != size:
        image = np.clip(resize_bilinear(image, (size, size)), 0.0, 1.0)
        mask = resize_nearest(mask, (size, size))
    if flip:
        image = image[:, ::-1]
        mask = mask[:, ::-1]
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def _batch_size_choice(cfg: TrainConfig, rng, divisor: int) -> int:
    if not cfg.multiscale:
        return cfg.input_size
    scale = cfg.scales[int(rng.integers(len(cfg.scales)))]
    return _round_to(cfg.input_size * scale, divisor, divisor)


# ---------------------------------------------------------------------------
# stage trainers
# ---------------------------------------------------------------------------


def _finite_or_raise(value: float, step: int, parts: dict):
    if not np.isfinite(value):
        raise TrainingDivergedError(
            f"non-finite loss {value} at step {step}; components: {parts}"
        )


def train_lrscn(config: TrainConfig, dataset: list[DatasetRecord]) -> Checkpoint:
    """SGD training of the classification stage; returns a checkpoint."""
    if config.stage != "lrscn":
        raise ConfigError(f"config stage is {config.stage!r}, expected 'lrscn'")
    if not dataset:
        raise ValueError("dataset is empty")
    torch.manual_seed(config.seed)
    model = Lrscn(BackboneConfig(config.stage_channels, config.input_size))
    model.train()

    backbone_ids = {id(p) for p in model.backbone.parameters()}
    groups = [
        {
            "params": [p for p in model.parameters() if id(p) in backbone_ids],
            "max_lr": config.lr * config.backbone_lr_ratio,
        },
        {
            "params": [p for p in model.parameters() if id(p) not in backbone_ids],
            "max_lr": config.lr,
        },
    ]
    opt = torch.optim.SGD(
        groups, lr=0.0, momentum=config.momentum, weight_decay=config.weight_decay
    )

    rng_data = np.random.default_rng([config.seed, 11])
    rng_aug = np.random.default_rng([config.seed, 12])
    rng_tri = np.random.default_rng([config.seed, 13])
    stream = _index_stream(rng_data, len(dataset))
    history = []

    for step in range(config.steps):
        size = _batch_size_choice(config, rng_aug, 32)
        images, masks, trimaps = [], [], []
        for _ in range(config.batch_size):
            record = dataset[next(stream)]
            flip = config.hflip and rng_aug.random() < 0.5
            image, mask = _sample_view(record, size, flip, rng_aug)
            kernel = TRAIN_KERNELS[int(rng_tri.integers(len(TRAIN_KERNELS)))]
            images.append(image.transpose(2, 0, 1))
            masks.append(mask)
            trimaps.append(trimap_from_mask(mask, kernel))
        x = torch.from_numpy(np.stack(images)).float()
        out = model(x)

        levels = []
        for lvl in out.saliency_levels:
            h, w = lvl.shape[-2:]
            g = np.stack([resize_nearest(m, (h, w)) for m in masks])
            levels.append((lvl.squeeze(1), torch.from_numpy(g).float()))
        lh, lw = out.trimap_logits.shape[-2:]
        t_low = torch.from_numpy(
            np.stack([resize_nearest(t, (lh, lw)) for t in trimaps]).astype(np.int64)
        )
        try:
            sal = losses.saliency_loss(levels)
            tri = losses.trimap_ce_loss(out.trimap_logits, t_low)
        except FloatingPointError as exc:
            raise TrainingDivergedError(f"step {step}: {exc}") from exc
        loss = sal.tensor + tri.tensor
        parts = {"saliency": sal.value, "trimap": tri.value}
        _finite_or_raise(float(loss.detach()), step, parts)

        lr = _set_lr(opt, config, step) * config.lr
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append({"step": step, "lr": round(lr, 8), "loss": round(float(loss.detach()), 6), **{k: round(v, 6) for k, v in parts.items()}})

    return Checkpoint(
        kind="lrscn",
        config=lrscn_config_dict(model),
        model_state=state_to_arrays(model),
        optimizer_state=_momentum_arrays(opt, model),
        step=config.steps,
        metrics=_history_metrics(history),
    )


def train_hrrn(config: TrainConfig, dataset: list[DatasetRecord]) -> Checkpoint:
    """SGD training of the refinement stage; returns a checkpoint.

    Raises DegenerateTrainingError when an entire epoch passes without a
    single supervised pixel (for example an all-uncertain trimap with the
    uncertainty term disabled).
    """
    if config.stage != "hrrn":
        raise ConfigError(f"config stage is {config.stage!r}, expected 'hrrn'")
    if not dataset:
        raise ValueError("dataset is empty")
    torch.manual_seed(config.seed)
    model = Hrrn(HrrnConfig(config.hrrn_base_width, config.hrrn_max_width))
    model.train()
    opt = torch.optim.SGD(
        [{"params": list(model.parameters()), "max_lr": config.lr}],
        lr=0.0,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )

    rng_data = np.random.default_rng([config.seed, 21])
    rng_aug = np.random.default_rng([config.seed, 22])
    rng_tri = np.random.default_rng([config.seed, 23])
    stream = _index_stream(rng_data, len(dataset))
    steps_per_epoch = max(1, math.ceil(len(dataset) / config.batch_size))
    history = []
    epoch_pixels = 0

    for step in range(config.steps):
        size = _batch_size_choice(config, rng_aug, 16)
        inputs, gts, trimaps = [], [], []
        for _ in range(config.batch_size):
            record = dataset[next(stream)]
            flip = config.hflip and rng_aug.random() < 0.5
            image, mask = _sample_view(record, size, flip, rng_aug, crop=True)
            kernel = TRAIN_KERNELS[int(rng_tri.integers(len(TRAIN_KERNELS)))]
            trimap = trimap_from_mask(mask, kernel)
            inputs.append(np.concatenate([image.transpose(2, 0, 1), one_hot_trimap(trimap)]))
            gts.append(mask)
            trimaps.append(trimap)
        x = torch.from_numpy(np.stack(inputs)).float()
        g = torch.from_numpy(np.stack(gts)).float()
        t = torch.from_numpy(np.stack(trimaps).astype(np.int64))
        out = model(x)
        s = out.saliency.squeeze(1)

        try:
            l1 = losses.l1_definite_loss(s, g, t)
            if config.uncertainty:
                unc = losses.uncertainty_loss(s, g, out.logvar.squeeze(1), t)
                loss, count = l1.tensor + unc.tensor, l1.pixel_count + unc.pixel_count
                parts = {"l1": l1.value, "uncertainty": unc.value}
            else:
                loss, count = l1.tensor, l1.pixel_count
                parts = {"l1": l1.value}
        except FloatingPointError as exc:
            raise TrainingDivergedError(f"step {step}: {exc}") from exc
        _finite_or_raise(float(loss.detach()), step, parts)
        epoch_pixels += count

        lr = _set_lr(opt, config, step) * config.lr
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append({"step": step, "lr": round(lr, 8), "loss": round(float(loss.detach()), 6), **{k: round(v, 6) for k, v in parts.items()}})

        if (step + 1) % steps_per_epoch == 0 or step + 1 == config.steps:
            if epoch_pixels == 0:
                raise DegenerateTrainingError(
                    "no pixel contributed to the loss for an entire epoch "
                    "(empty definite set with the uncertainty term disabled?)"
                )
            epoch_pixels = 0

    return Checkpoint(
        kind="hrrn",
        config=hrrn_config_dict(model),
        model_state=state_to_arrays(model),
        optimizer_state=_momentum_arrays(opt, model),
        step=config.steps,
        metrics=_history_metrics(history),
    )


def _momentum_arrays(opt, model) -> dict:
    names = {id(p): n for n, p in model.named_parameters()}
    out = {}
    for group in opt.param_groups:
        for p in group["params"]:
            buf = opt.state.get(p, {}).get("momentum_buffer")
            if buf is not None:
                out[names[id(p)]] = buf.detach().cpu().numpy()
    return out


def _history_metrics(history) -> dict:
    values = [h["loss"] for h in history]
    k = max(1, min(20, len(values) // 10))
    return {
        "log": history,
        "initial_loss": float(np.mean(values[:k])),
        "final_loss": float(np.mean(values[-k:])),
    }


def train(config: TrainConfig, dataset) -> Checkpoint:
    if config.stage == "lrscn":
        return train_lrscn(config, dataset)
    return train_hrrn(config, dataset)


# ---------------------------------------------------------------------------
# annotation-noise ablation
# ---------------------------------------------------------------------------


@dataclass
class AblateConfig:
    kernels: tuple = (3, 5, 7, 9, 11, 13)
    seeds: tuple = (0, 1, 2)
    canonical_size: int = 256
    lrscn: TrainConfig = field(
        default_factory=lambda: TrainConfig(stage="lrscn")
    )
    hrrn: TrainConfig = field(default_factory=lambda: TrainConfig(stage="hrrn"))
    lrscn_checkpoint: str | None = None
    train_data: str | None = None
    test_data: str | None = None

    @staticmethod
    def from_dict(data: dict) -> "AblateConfig":
        known = {f.name for f in dataclasses.fields(AblateConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown ablate config keys: {', '.join(unknown)}")
        data = dict(data)
        if "lrscn" in data:
            data["lrscn"] = TrainConfig.from_dict(data["lrscn"], stage="lrscn")
        if "hrrn" in data:
            data["hrrn"] = TrainConfig.from_dict(data["hrrn"], stage="hrrn")
        for key in ("kernels", "seeds"):
            if key in data:
                data[key] = tuple(data[key])
        return AblateConfig(**data)


@dataclass
class AblationReport:
    rows: list  # one dict per (kernel, arm, metric, seed)
    medians: list  # one dict per (kernel, arm, metric)


ARMS = ("l1", "uncertainty")
ABLATION_METRICS = ("bde", "b_mu")


def _corrupted_dataset(dataset, kernel: int, seed: int) -> list[DatasetRecord]:
    if kernel == 0:
        return dataset
    out = []
    for idx, record in enumerate(dataset):
        noisy = corrupt_mask(record.mask, kernel, "random", seed=[seed, kernel, idx])
        out.append(
            DatasetRecord(record.image, record.mask, record.identifier, noisy_mask=noisy)
        )
    return out


def _evaluate_arm(lrscn_model, hrrn_model, test_set, layout) -> dict:
    bdes, bmus = [], []
    for record in test_set:
        pred = run_pipeline(record.image, lrscn_model, hrrn_model, layout)
        try:
            bdes.append(metrics.bde((pred >= 0.5).astype(np.uint8), record.mask))
        except metrics.EmptyBoundaryError:
            warnings.warn(f"{record.identifier}: blank prediction, bde skipped")
        bmus.append(metrics.b_mu(pred, record.mask))
    return {
        "bde": float(np.mean(bdes)) if bdes else float("nan"),
        "b_mu": float(np.mean(bmus)),
    }


def ablate_noise(
    config: AblateConfig,
    train_set: list[DatasetRecord],
    test_set: list[DatasetRecord],
    progress=None,
) -> AblationReport:
    """Corrupt training annotations per kernel, train both loss arms, and
    score each through the full tiled pipeline against clean ground truth.

    Both arms share initialization and data order within a (seed, kernel)
    cell, so the loss switch is the only difference between them.
    """
    layout = TileLayout(canonical_size=config.canonical_size)
    if config.lrscn_checkpoint:
        from .checkpoint import load_lrscn

        lrscn_model = load_lrscn(config.lrscn_checkpoint)
    else:
        lrscn_model = build_lrscn(train_lrscn(config.lrscn, train_set))

    rows = []
    for seed in config.seeds:
        for kernel in config.kernels:
            noisy = _corrupted_dataset(train_set, kernel, seed)
            for arm in ARMS:
                cfg = dataclasses.replace(
                    config.hrrn,
                    seed=seed,
                    uncertainty=(arm == "uncertainty"),
                    noise_kernel=kernel,
                )
                hrrn_model = build_hrrn(train_hrrn(cfg, noisy))
                scores = _evaluate_arm(lrscn_model, hrrn_model, test_set, layout)
                for metric in ABLATION_METRICS:
                    rows.append(
                        {
                            "kernel": kernel,
                            "arm": arm,
                            "metric": metric,
                            "value": scores[metric],
                            "seed": seed,
                        }
                    )
                if progress is not None:
                    progress(seed=seed, kernel=kernel, arm=arm, scores=scores)

    medians = []
    for kernel in config.kernels:
        for arm in ARMS:
            for metric in ABLATION_METRICS:
                vals = [
                    r["value"]
                    for r in rows
                    if r["kernel"] == kernel and r["arm"] == arm and r["metric"] == metric
                ]
                medians.append(
                    {
                        "kernel": kernel,
                        "arm": arm,
                        "metric": metric,
                        "median": float(np.median(vals)),
                    }
                )
    return AblationReport(rows=rows, medians=medians)
