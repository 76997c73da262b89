"""AdamW with decoupled weight decay, and a reduce-on-plateau learning-rate rule."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff.tensor import ShapeError, Tensor


def adamw_update(theta, grad, m, v, step: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
    """One AdamW update for a single array; returns ``(theta, m, v)``.

    ``step`` counts from 1.  Decay is applied to ``theta`` directly, scaled by
    ``lr``, and does not pass through the moment estimates.
    """
    theta, grad = np.asarray(theta), np.asarray(grad)
    if theta.shape != grad.shape:
        raise ShapeError(f"parameter {theta.shape} and gradient {grad.shape} differ")
    b1, b2 = betas
    m = b1 * m + (1 - b1) * grad
    v = b2 * v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**step)
    v_hat = v / (1 - b2**step)
    theta = theta * (1 - lr * weight_decay) - lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta.astype(grad.dtype, copy=False), m.astype(grad.dtype, copy=False), v.astype(grad.dtype, copy=False)


class AdamW:
    """Stateful wrapper that updates a fixed list of tensors in place."""

    def __init__(self, params: list[Tensor], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-4):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, tuple(betas), eps, weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeError(f"{len(grads)} gradients for {len(self.params)} parameters")
        self.step_count += 1
        for i, (p, g) in enumerate(zip(self.params, grads)):
            p.data, self.m[i], self.v[i] = adamw_update(
                p.data, g, self.m[i], self.v[i], self.step_count, self.lr, self.betas, self.eps, self.weight_decay
            )

    def state_dict(self) -> dict:
        return {"step": self.step_count, "lr": self.lr, "m": list(self.m), "v": list(self.v)}

    def load_state_dict(self, state: dict) -> None:
        if len(state["m"]) != len(self.params):
            raise ShapeError("optimizer state does not match the parameter list")
        self.step_count = int(state["step"])
        self.lr = float(state["lr"])
        self.m = [np.array(a, dtype=p.dtype) for a, p in zip(state["m"], self.params)]
        self.v = [np.array(a, dtype=p.dtype) for a, p in zip(state["v"], self.params)]


@dataclass
class PlateauScheduler:
    """Multiply ``lr`` by ``factor`` once ``patience`` epochs pass without improvement.

    Improvement means ``loss < best - threshold``.  The counter resets after
    each reduction, and ``lr`` never drops below ``min_lr``.
    """

    lr: float = 3e-4
    factor: float = 0.8
    patience: int = 3
    min_lr: float = 5e-6
    threshold: float = 1e-8
    best: float = math.inf
    bad_epochs: int = 0

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValueError(f"factor must lie in (0, 1), got {self.factor}")
        if self.min_lr > self.lr:
            raise ValueError(f"min_lr {self.min_lr} exceeds lr {self.lr}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")

    def step(self, val_loss: float) -> float:
        if not math.isfinite(val_loss):
            raise ValueError(f"validation loss must be finite, got {val_loss}")
        if val_loss < self.best - self.threshold:
            self.best = float(val_loss)
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.bad_epochs = 0
        return self.lr

    def state_dict(self) -> dict:
        state = asdict(self)
        state["best"] = None if math.isinf(self.best) else self.best
        return state

    def load_state_dict(self, state: dict) -> None:
        for k, v in state.items():
            setattr(self, k, v)
        if self.best is None:
            self.best = math.inf
