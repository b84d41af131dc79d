"""Self-describing checkpoint container shared by both networks.

A checkpoint is a .npz whose "__meta__" entry holds a JSON header
(format version, model kind, model config, step, metric snapshot) and
whose remaining entries are weight arrays keyed "model/<layer>" plus
optional optimizer momentum buffers keyed "opt/<layer>".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .hrrn import Hrrn, HrrnConfig
from .lrscn import BackboneConfig, GcnSchedule, Lrscn

FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Unreadable container or a model-kind mismatch."""


@dataclass
class Checkpoint:
    kind: str  # "lrscn" | "hrrn"
    config: dict
    model_state: dict
    optimizer_state: dict = field(default_factory=dict)
    step: int = 0
    metrics: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": ckpt.kind,
        "config": ckpt.config,
        "step": ckpt.step,
        "metrics": ckpt.metrics,
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), np.uint8)}
    for name, arr in ckpt.model_state.items():
        arrays[f"model/{name}"] = np.asarray(arr)
    for name, arr in ckpt.optimizer_state.items():
        arrays[f"opt/{name}"] = np.asarray(arr)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, expect_kind: str | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    with np.load(path) as data:
        if "__meta__" not in data:
            raise CheckpointError(f"{path}: missing container header")
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format version {meta.get('format_version')}"
            )
        model_state = {
            k[len("model/") :]: data[k] for k in data.files if k.startswith("model/")
        }
        optimizer_state = {
            k[len("opt/") :]: data[k] for k in data.files if k.startswith("opt/")
        }
    kind = meta["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"{path}: expected a {expect_kind} checkpoint, found {kind}")
    return Checkpoint(
        kind=kind,
        config=meta["config"],
        model_state=model_state,
        optimizer_state=optimizer_state,
        step=meta["step"],
        metrics=meta["metrics"],
    )


def state_to_arrays(module: torch.nn.Module) -> dict:
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def arrays_to_state(module: torch.nn.Module, arrays: dict) -> None:
    state = {k: torch.from_numpy(np.asarray(v)) for k, v in arrays.items()}
    module.load_state_dict(state)


def build_lrscn(ckpt: Checkpoint) -> Lrscn:
    if ckpt.kind != "lrscn":
        raise CheckpointError(f"expected a lrscn checkpoint, found {ckpt.kind}")
    cfg = ckpt.config
    model = Lrscn(
        BackboneConfig(
            stage_channels=tuple(cfg["stage_channels"]),
            input_size=cfg["input_size"],
        ),
        GcnSchedule({int(k): tuple(v) for k, v in cfg["gcn_kernels"].items()}),
    )
    arrays_to_state(model, ckpt.model_state)
    return model.eval()


def build_hrrn(ckpt: Checkpoint) -> Hrrn:
    if ckpt.kind != "hrrn":
        raise CheckpointError(f"expected a hrrn checkpoint, found {ckpt.kind}")
    cfg = ckpt.config
    model = Hrrn(
        HrrnConfig(
            base_width=cfg["base_width"],
            max_width=cfg["max_width"],
            depth=cfg.get("depth", 4),
        )
    )
    arrays_to_state(model, ckpt.model_state)
    return model.eval()


def lrscn_config_dict(model: Lrscn) -> dict:
    return {
        "stage_channels": list(model.config.stage_channels),
        "input_size": model.config.input_size,
        "gcn_kernels": {
            str(k): list(v) for k, v in model.schedule.kernels_per_level.items()
        },
    }


def hrrn_config_dict(model: Hrrn) -> dict:
    return {
        "base_width": model.config.base_width,
        "max_width": model.config.max_width,
        "depth": model.config.depth,
    }


def load_lrscn(path) -> Lrscn:
    return build_lrscn(load_checkpoint(path, expect_kind="lrscn"))


def load_hrrn(path) -> Hrrn:
    return build_hrrn(load_checkpoint(path, expect_kind="hrrn"))
