"""Training checkpoints on top of the tensor bundle format.

Array names are prefixed by role: ``param/<name>``, ``adam_m/<i>`` and
``adam_v/<i>`` (optimizer moments in parameter order).  Everything else lives
in the JSON ``meta`` block, which is written with sorted keys, so a
save -> load -> save round trip reproduces the file byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .autodiff.serialize import read_bundle, write_bundle

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    optimizer: dict[str, Any] | None = None  # {"step", "lr", "m": [...], "v": [...]}
    scheduler: dict[str, Any] | None = None
    config: dict[str, Any] = field(default_factory=dict)
    history: list[dict[str, Any]] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    arrays = {f"param/{k}": v for k, v in ckpt.params.items()}
    meta: dict[str, Any] = {
        "version": ckpt.version,
        "config": ckpt.config,
        "history": ckpt.history,
        "extra": ckpt.extra,
        "scheduler": ckpt.scheduler,
        "optimizer": None,
    }
    if ckpt.optimizer is not None:
        opt = ckpt.optimizer
        width = len(str(max(len(opt["m"]) - 1, 0)))
        for i, (m, v) in enumerate(zip(opt["m"], opt["v"])):
            arrays[f"adam_m/{i:0{width}d}"] = m
            arrays[f"adam_v/{i:0{width}d}"] = v
        meta["optimizer"] = {"step": opt["step"], "lr": opt["lr"], "count": len(opt["m"])}
    path.parent.mkdir(parents=True, exist_ok=True)
    write_bundle(path, arrays, meta)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    arrays, meta = read_bundle(path)
    if meta.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    optimizer = None
    if meta.get("optimizer") is not None:
        o = meta["optimizer"]
        keys_m = sorted(k for k in arrays if k.startswith("adam_m/"))
        keys_v = sorted(k for k in arrays if k.startswith("adam_v/"))
        if len(keys_m) != o["count"] or len(keys_v) != o["count"]:
            raise ValueError("checkpoint optimizer moments are incomplete")
        optimizer = {"step": o["step"], "lr": o["lr"], "m": [arrays[k] for k in keys_m],
                     "v": [arrays[k] for k in keys_v]}
    return Checkpoint(params, optimizer, meta.get("scheduler"), meta.get("config", {}),
                      meta.get("history", []), meta.get("extra", {}), meta["version"])
