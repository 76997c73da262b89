"""Training loops, evaluation and experiment configuration.

Network training runs two phases: ``epochs_phase1`` epochs on the
multi-scale L1 + perceptual objective, then ``epochs_phase2`` epochs with the
Haar wavelet term added.  Each epoch shuffles with a generator seeded by
``(seed, epoch)``, so a run resumed from ``last.ckpt`` replays exactly the
batches an uninterrupted run would have seen.

Artifacts in the output directory:

* ``train_log.csv``: ``epoch,phase,lr,train_loss,val_loss,val_psnr,val_ssim``
* ``last.ckpt``: state after the most recent epoch (resumable)
* ``best.ckpt``: state with the lowest validation loss so far
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff.tensor import Tape, Tensor
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .flow import ConvVelocityField, fm_train_step
from .metrics import MetricsReport, psnr, ssim
from .net import DemoireNet, NetworkConfig
from .net.losses import total_loss, wavelet_loss
from .optim import AdamW, PlateauScheduler
from .synth import DatasetManifest

LOG_COLUMNS = ("epoch", "phase", "lr", "train_loss", "val_loss", "val_psnr", "val_ssim")


class NonFiniteLossError(FloatingPointError):
    pass


def _from_dict(cls, d: dict):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {unknown}")
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class TrainConfig:
    lr: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    plateau_factor: float = 0.8
    plateau_patience: int = 3
    min_lr: float = 5e-6
    epochs_phase1: int = 40
    epochs_phase2: int = 10
    wavelet_weight: float = 1.0
    batch_size: int = 8
    seed: int = 0
    max_train: int | None = None
    max_val: int | None = None

    def __post_init__(self):
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.min_lr > self.lr:
            raise ValueError(f"min_lr {self.min_lr} exceeds lr {self.lr}")
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0 or self.batch_size < 1:
            raise ValueError("epoch counts must be >= 0 and batch_size >= 1")

    @property
    def epochs(self) -> int:
        return self.epochs_phase1 + self.epochs_phase2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _from_dict(cls, d)


FULL_SCALE_TRAIN = TrainConfig(epochs_phase1=175, epochs_phase2=41)


@dataclass
class FlowTrainConfig:
    steps: int = 3000
    batch_size: int = 16
    crop: int = 32
    lr: float = 2e-3
    hidden: int = 32
    layers: int = 4
    seed: int = 0
    max_train: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FlowTrainConfig":
        return _from_dict(cls, d)


@dataclass
class DataConfig:
    root: str = "data"
    n_train: int = 512
    n_val: int = 32
    n_test: int = 32
    size: int = 64

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        return _from_dict(cls, d)


@dataclass
class ExperimentConfig:
    """Everything one ``config.json`` holds."""

    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    flow_train: FlowTrainConfig = field(default_factory=FlowTrainConfig)
    refine: dict = field(default_factory=lambda: {"t0": 0.95, "dt": 0.002, "n_iters": 15, "n_samples": 5})

    def to_dict(self) -> dict:
        return {
            "data": self.data.to_dict(),
            "network": self.network.to_dict(),
            "train": self.train.to_dict(),
            "flow_train": self.flow_train.to_dict(),
            "refine": dict(self.refine),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        out = cls()
        if "data" in d:
            out.data = DataConfig.from_dict(d["data"])
        if "network" in d:
            out.network = NetworkConfig.from_dict(d["network"])
        if "train" in d:
            out.train = TrainConfig.from_dict(d["train"])
        if "flow_train" in d:
            out.flow_train = FlowTrainConfig.from_dict(d["flow_train"])
        if "refine" in d:
            out.refine = {**out.refine, **d["refine"]}
        return out

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


# --- evaluation ------------------------------------------------------------------


@dataclass
class EvalResult:
    loss: float
    psnr: float
    ssim: float
    pred: np.ndarray


def evaluate(net: DemoireNet, raw: np.ndarray, clean: np.ndarray, batch_size: int = 8) -> EvalResult:
    """Validation loss (phase-1 objective) and metrics on clipped full-resolution output."""
    losses, preds = [], []
    for i in range(0, len(raw), batch_size):
        out = net(Tensor(raw[i : i + batch_size]))
        gt = Tensor(clean[i : i + batch_size])
        losses.append(total_loss(out, gt).item() * len(gt.data))
        preds.append(np.clip(out.full.data, 0.0, 1.0))
    pred = np.concatenate(preds)
    return EvalResult(
        float(np.sum(losses) / len(raw)),
        float(np.mean([psnr(p, g) for p, g in zip(pred, clean)])),
        float(np.mean([ssim(p, g) for p, g in zip(pred, clean)])),
        pred,
    )


def metrics_report(ids, pred: np.ndarray, gt: np.ndarray, runtime_s: float = 0.0) -> MetricsReport:
    return MetricsReport.compute(ids, pred, gt, runtime_s)


# --- network training ------------------------------------------------------------


@dataclass
class TrainResult:
    out_dir: Path
    history: list[dict]
    net: DemoireNet

    @property
    def best_checkpoint(self) -> Path:
        return self.out_dir / "best.ckpt"

    @property
    def last_checkpoint(self) -> Path:
        return self.out_dir / "last.ckpt"


def _write_log(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in history:
            w.writerow([row["epoch"], row["phase"]] + [repr(float(row[k])) for k in LOG_COLUMNS[2:]])


def load_network(path: str | Path) -> tuple[DemoireNet, Checkpoint]:
    ckpt = load_checkpoint(path)
    if ckpt.extra.get("kind") != "network":
        raise ValueError(f"{path} is not a network checkpoint")
    net = DemoireNet(NetworkConfig.from_dict(ckpt.config["network"]))
    net.load_state_dict(ckpt.params)
    return net, ckpt


def fit(
    net: DemoireNet,
    cfg: TrainConfig,
    train: dict,
    val: dict,
    out_dir: str | Path,
    resume: bool = False,
    log: Callable[[str], None] | None = None,
    stop_after: int | None = None,
) -> TrainResult:
    """Train ``net`` in place on preloaded arrays (``raw``/``clean`` keys).

    ``stop_after`` ends the call after that many epochs, as if interrupted.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = net.parameters()
    opt = AdamW(params, cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay)
    sched = PlateauScheduler(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr)
    config_snapshot = {"network": net.cfg.to_dict(), "train": cfg.to_dict()}
    history: list[dict] = []
    start = 0
    best = math.inf
    if resume:
        ckpt = load_checkpoint(out_dir / "last.ckpt")
        if ckpt.config != config_snapshot:
            raise ValueError("cannot resume: checkpoint config differs from the requested config")
        net.load_state_dict(ckpt.params)
        opt.load_state_dict(ckpt.optimizer)
        sched.load_state_dict(ckpt.scheduler)
        history = list(ckpt.history)
        start = ckpt.extra["epoch"] + 1
        best = ckpt.extra["best_val_loss"]

    raw, clean = train["raw"], train["clean"]
    n = len(raw)
    end = cfg.epochs if stop_after is None else min(cfg.epochs, start + stop_after)
    for epoch in range(start, end):
        phase = 1 if epoch < cfg.epochs_phase1 else 2
        t_start = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        total, seen = 0.0, 0
        for step, b0 in enumerate(range(0, n, cfg.batch_size)):
            idx = order[b0 : b0 + cfg.batch_size]
            gt = Tensor(clean[idx])
            with Tape() as tape:
                tape.watch(params)
                out = net(Tensor(raw[idx]))
                loss = total_loss(out, gt)
                if phase == 2:
                    loss = loss + wavelet_loss(out.full, gt) * cfg.wavelet_weight
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLossError(f"non-finite training loss at epoch {epoch}, step {step}")
            opt.step(tape.gradient(loss, params))
            total += value * len(idx)
            seen += len(idx)
        ev = evaluate(net, val["raw"], val["clean"], cfg.batch_size)
        if not math.isfinite(ev.loss):
            raise NonFiniteLossError(f"non-finite validation loss at epoch {epoch}")
        lr_used = opt.lr
        opt.lr = sched.step(ev.loss)
        row = {"epoch": epoch, "phase": phase, "lr": lr_used, "train_loss": total / seen,
               "val_loss": ev.loss, "val_psnr": ev.psnr, "val_ssim": ev.ssim}
        history.append(row)
        _write_log(out_dir / "train_log.csv", history)
        improved = ev.loss < best
        best = min(best, ev.loss)
        ckpt = Checkpoint(
            net.state_dict(), opt.state_dict(), sched.state_dict(), config_snapshot, history,
            {"kind": "network", "epoch": epoch, "best_val_loss": best},
        )
        save_checkpoint(out_dir / "last.ckpt", ckpt)
        if improved:
            save_checkpoint(out_dir / "best.ckpt", ckpt)
        if log:
            log(f"epoch {epoch:3d} phase {phase} loss {row['train_loss']:.4f} val {ev.loss:.4f} "
                f"psnr {ev.psnr:.2f} ssim {ev.ssim:.4f} lr {lr_used:.2e} ({time.perf_counter() - t_start:.1f}s)")
    return TrainResult(out_dir, history, net)


def load_splits(data_root: str | Path, cfg: TrainConfig) -> tuple[dict, dict]:
    manifest = DatasetManifest.load(data_root)
    return manifest.load_split("train", cfg.max_train), manifest.load_split("val", cfg.max_val)


def train_network(
    net_cfg: NetworkConfig,
    cfg: TrainConfig,
    data_root: str | Path,
    out_dir: str | Path,
    resume: bool = False,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    train, val = load_splits(data_root, cfg)
    return fit(DemoireNet(net_cfg), cfg, train, val, out_dir, resume=resume, log=log)


# --- velocity-field training -------------------------------------------------------


def random_crops(images: np.ndarray, rng: np.random.Generator, n: int, crop: int) -> np.ndarray:
    h, w = images.shape[-2:]
    if crop > min(h, w):
        raise ValueError(f"crop {crop} exceeds image size {h}x{w}")
    idx = rng.integers(0, len(images), size=n)
    ys = rng.integers(0, h - crop + 1, size=n)
    xs = rng.integers(0, w - crop + 1, size=n)
    return np.stack([images[i, :, y : y + crop, x : x + crop] for i, y, x in zip(idx, ys, xs)])


def fit_flow(
    clean: np.ndarray,
    cfg: FlowTrainConfig,
    out_dir: str | Path,
    log: Callable[[str], None] | None = None,
) -> tuple[ConvVelocityField, list[float]]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vf = ConvVelocityField(clean.shape[1], cfg.hidden, cfg.layers, seed=cfg.seed)
    opt = AdamW(vf.parameters(), lr=cfg.lr, weight_decay=0.0)
    rng = np.random.default_rng([cfg.seed, 1])
    losses = []
    for step in range(cfg.steps):
        batch = random_crops(clean, rng, cfg.batch_size, cfg.crop)
        try:
            losses.append(fm_train_step(vf, batch, opt, rng))
        except FloatingPointError as e:
            raise NonFiniteLossError(f"velocity-field training diverged at step {step}") from e
        if log and (step + 1) % max(1, cfg.steps // 10) == 0:
            log(f"flow step {step + 1}/{cfg.steps} loss {np.mean(losses[-50:]):.4f}")
    save_checkpoint(out_dir / "flow.ckpt", Checkpoint(
        vf.state_dict(), opt.state_dict(), None, {"flow_train": cfg.to_dict()},
        [{"step": i, "loss": v} for i, v in enumerate(losses)], {"kind": "flow", "channels": int(clean.shape[1])},
    ))
    return vf, losses


def train_flow(cfg: FlowTrainConfig, data_root: str | Path, out_dir: str | Path,
               log: Callable[[str], None] | None = None) -> tuple[ConvVelocityField, list[float]]:
    clean = DatasetManifest.load(data_root).load_split("train", cfg.max_train)["clean"]
    return fit_flow(clean, cfg, out_dir, log)


def load_flow(path: str | Path) -> ConvVelocityField:
    ckpt = load_checkpoint(path)
    if ckpt.extra.get("kind") != "flow":
        raise ValueError(f"{path} is not a velocity-field checkpoint")
    cfg = FlowTrainConfig.from_dict(ckpt.config["flow_train"])
    vf = ConvVelocityField(ckpt.extra["channels"], cfg.hidden, cfg.layers, seed=cfg.seed)
    vf.load_state_dict(ckpt.params)
    return vf


# --- ablation ------------------------------------------------------------------------

ABLATION_VARIANTS = {
    "full": {},
    "no_lfef": {"use_lfef": False},
    "no_inn": {"use_inn": False, "use_lfef": False},
}


def run_ablation(
    base: NetworkConfig,
    cfg: TrainConfig,
    train: dict,
    test: dict,
    seeds=(0, 1, 2),
    out_dir: str | Path = "ablation",
    variants: dict | None = None,
    log: Callable[[str], None] | None = None,
) -> dict[str, list[float]]:
    """Retrain each variant from scratch per seed; return test PSNR lists keyed by variant."""
    variants = variants or ABLATION_VARIANTS
    results: dict[str, list[float]] = {name: [] for name in variants}
    for seed in seeds:
        for name, overrides in variants.items():
            net_cfg = NetworkConfig.from_dict({**base.to_dict(), **overrides, "seed": seed})
            tcfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": seed})
            res = fit(DemoireNet(net_cfg), tcfg, train, test, Path(out_dir) / f"{name}_seed{seed}")
            value = res.history[-1]["val_psnr"]
            results[name].append(value)
            if log:
                log(f"ablation {name} seed {seed}: psnr {value:.3f}")
    return results
