"""Flow-matching prior and truncated refinement.

Time runs from noise (t = 0) to clean data (t = 1) along the straight path
``x_t = (1 - t) x0 + t x1`` with target velocity ``u = x1 - x0``.  Refinement
starts a late time ``t0`` from a restored image and integrates forward::

    for i in range(n_iters):
        t = t0 + i * dt
        x_t^(j) = t * current + (1 - t) * eps_j          j = 1..S
        current += dt * mean_j v(x_t^(j), t)

Each step re-noises the current estimate onto the path S times and averages
the predicted velocities, which is where the stochastic samples per step come
from.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tape, Tensor
from .nn import Conv2d, Linear, Module

VelocityFn = Callable[[Tensor, "float | np.ndarray"], Tensor]


@dataclass
class FlowConfig:
    t0: float = 0.95
    dt: float = 0.002
    n_iters: int = 15
    n_samples: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.t0 < 1:
            raise ValueError(f"t0 must lie in (0, 1), got {self.t0}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_iters < 0:
            raise ValueError("n_iters must be non-negative")
        if self.t0 + self.n_iters * self.dt > 1 + 1e-9:
            raise ValueError(f"t0 + n_iters * dt = {self.t0 + self.n_iters * self.dt:.6g} exceeds 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


def _time_column(t, n: int, dtype) -> np.ndarray:
    t = np.asarray(t, dtype=dtype).reshape(-1)
    return np.broadcast_to(t, (n,)).astype(dtype)


class ConvVelocityField(Module):
    """Small conv net ``v(x, t)``; ``t`` enters as an extra constant channel."""

    def __init__(self, channels: int = 3, hidden: int = 32, layers: int = 4, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.channels, self.hidden, self.n_layers = channels, hidden, layers
        widths = [channels + 1] + [hidden] * (layers - 1) + [channels]
        self.convs = [Conv2d(rng, a, b, 3) for a, b in zip(widths[:-1], widths[1:])]
        self.convs[-1].weight.data *= 0.1

    def forward(self, x: Tensor, t) -> Tensor:
        n, _, h, w = x.shape
        tcol = _time_column(t, n, x.dtype)
        plane = Tensor(np.broadcast_to(tcol[:, None, None, None], (n, 1, h, w)).copy())
        hdn = ops.concat([x, plane], axis=1)
        for conv in self.convs[:-1]:
            hdn = ops.gelu(conv(hdn))
        return self.convs[-1](hdn)


class MLPVelocityField(Module):
    """``v(x, t)`` for flat vectors ``(N, dim)``; time enters as ``[t, sin, cos]`` features."""

    def __init__(self, dim: int = 2, hidden: int = 64, layers: int = 3, seed: int = 0):
        rng = np.random.default_rng(seed)
        widths = [dim + 3] + [hidden] * (layers - 1) + [dim]
        self.linears = [Linear(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]

    def forward(self, x: Tensor, t) -> Tensor:
        tcol = _time_column(t, x.shape[0], x.dtype)[:, None]
        feats = np.concatenate([tcol, np.sin(math.pi * tcol), np.cos(math.pi * tcol)], axis=1)
        hdn = ops.concat([x, Tensor(feats)], axis=1)
        for lin in self.linears[:-1]:
            hdn = ops.gelu(lin(hdn))
        return self.linears[-1](hdn)


class ZeroVelocity:
    """Control field that never moves anything."""

    def __call__(self, x: Tensor, t) -> Tensor:
        return Tensor(np.zeros_like(x.data))


# --- training ------------------------------------------------------------------


def fm_sample_pair(x1: np.ndarray, rng: np.random.Generator | int, t=None):
    """Draw ``x0 ~ N(0, I)`` and ``t ~ U(0, 1)`` per sample; return ``(x_t, t, u)``."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    x1 = np.asarray(x1)
    n = x1.shape[0]
    x0 = rng.standard_normal(x1.shape).astype(x1.dtype)
    if t is None:
        t = rng.uniform(0.0, 1.0, size=n)
    t = _time_column(t, n, x1.dtype)
    tb = t.reshape((n,) + (1,) * (x1.ndim - 1))
    x_t = (1 - tb) * x0 + tb * x1
    return x_t, t, x1 - x0


def fm_loss(vf: VelocityFn, x_t: np.ndarray, t: np.ndarray, u: np.ndarray) -> Tensor:
    pred = vf(Tensor(x_t), t)
    return ops.mean(ops.square(pred - Tensor(u)))


def fm_train_step(vf: Module, batch: np.ndarray, optimizer, rng: np.random.Generator) -> float:
    """One MSE step towards ``u = x1 - x0``; returns the batch loss."""
    x_t, t, u = fm_sample_pair(batch, rng)
    params = vf.parameters()
    with Tape() as tape:
        tape.watch(params)
        loss = fm_loss(vf, x_t, t, u)
    grads = tape.gradient(loss, params)
    value = loss.item()
    if not math.isfinite(value):
        raise FloatingPointError("flow-matching loss is not finite")
    optimizer.step(grads)
    return value


# --- integration -----------------------------------------------------------------


def euler_step(x, t: float, dt: float, vf: VelocityFn) -> np.ndarray:
    """``x + dt * v(x, t)``."""
    if t + dt > 1 + 1e-9:
        raise ValueError(f"euler step from t={t} by dt={dt} passes t=1")
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    return x + dt * vf(Tensor(x), t).data


def integrate(x, vf: VelocityFn, t_start: float = 0.0, t_end: float = 1.0, n_steps: int = 100) -> np.ndarray:
    dt = (t_end - t_start) / n_steps
    for i in range(n_steps):
        x = euler_step(x, t_start + i * dt, dt, vf)
    return x


def gaussian_toy_velocity(mu: np.ndarray) -> VelocityFn:
    """Exact field ``E[x1 - x0 | x_t]`` for ``x0 ~ N(0, I)``, ``x1 ~ N(mu, I)``."""
    mu = np.asarray(mu, dtype=np.float64)

    def v(x: Tensor, t) -> Tensor:
        t = float(np.asarray(t).reshape(-1)[0])
        gain = (2 * t - 1) / (t * t + (1 - t) ** 2)
        return Tensor(mu + gain * (x.data - t * mu))

    return v


def train_gaussian_toy(mu, steps: int = 3000, batch_size: int = 512, lr: float = 3e-3, hidden: int = 64,
                       seed: int = 0) -> tuple[MLPVelocityField, list[float]]:
    """Fit an MLP field for ``N(0, I) -> N(mu, I)``; lr drops 3x for the last third."""
    from .optim import AdamW

    mu = np.asarray(mu, dtype=np.float64)
    vf = MLPVelocityField(len(mu), hidden, 3, seed=seed).to(np.float64)
    opt = AdamW(vf.parameters(), lr=lr, weight_decay=0.0)
    rng = np.random.default_rng(seed)
    losses = []
    for step in range(steps):
        if step == (2 * steps) // 3:
            opt.lr = lr / 3
        x1 = rng.standard_normal((batch_size, len(mu))) + mu
        losses.append(fm_train_step(vf, x1, opt, rng))
    return vf, losses


# --- truncated refinement --------------------------------------------------------


def image_digest(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x, dtype=np.float32).tobytes()).hexdigest()[:16]


@dataclass
class TraceEntry:
    iteration: int
    t: float
    digest: str
    psnr: float | None = None


@dataclass
class RefineTrace:
    entries: list[TraceEntry] = field(default_factory=list)

    @property
    def psnrs(self) -> list[float]:
        return [e.psnr for e in self.entries]

    @property
    def ts(self) -> list[float]:
        return [e.t for e in self.entries]


def tfmp_refine(
    x_tilde: np.ndarray,
    vf: VelocityFn,
    cfg: FlowConfig,
    reference: np.ndarray | None = None,
) -> tuple[np.ndarray, RefineTrace]:
    """Refine a restored image (or batch) starting the flow at ``cfg.t0``."""
    from .metrics import psnr

    x_tilde = np.asarray(x_tilde, dtype=np.float32)
    single = x_tilde.ndim == 3
    current = x_tilde[None] if single else x_tilde
    ref = None if reference is None else np.asarray(reference, dtype=np.float32).reshape(current.shape)
    rng = np.random.default_rng(cfg.seed)
    trace = RefineTrace()

    def record(i: int, t: float, img: np.ndarray) -> None:
        out = img[0] if single else img
        trace.entries.append(TraceEntry(i, t, image_digest(out), None if ref is None else psnr(img, ref)))

    current = current.copy()
    record(0, cfg.t0, current)
    s = cfg.n_samples
    for i in range(cfg.n_iters):
        t = cfg.t0 + i * cfg.dt
        vbar = np.zeros_like(current)
        for b in range(current.shape[0]):
            eps = rng.standard_normal((s,) + current.shape[1:]).astype(np.float32)
            xs = (t * current[b][None] + (1 - t) * eps).astype(np.float32)
            vbar[b] = vf(Tensor(xs), t).data.mean(axis=0)
        current = (current + np.float32(cfg.dt) * vbar).astype(np.float32)
        record(i + 1, cfg.t0 + (i + 1) * cfg.dt, current)
    return (current[0] if single else current), trace


def sweep_iterations(
    x_tilde: np.ndarray,
    vf: VelocityFn,
    cfg: FlowConfig,
    reference: np.ndarray,
    csv_path: str | Path | None = None,
) -> list[tuple[int, float, float]]:
    """``(iteration, t, psnr)`` rows for iterations ``0..n_iters``."""
    if reference is None:
        raise ValueError("sweep_iterations needs a reference image")
    _, trace = tfmp_refine(x_tilde, vf, cfg, reference)
    rows = [(e.iteration, e.t, e.psnr) for e in trace.entries]
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fp:
            w = csv.writer(fp, lineterminator="\n")
            w.writerow(["iteration", "t", "psnr"])
            for it, t, p in rows:
                w.writerow([it, f"{t:.6f}", f"{p:.6f}"])
    return rows
