"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def numerical_gradient(fn: Callable[..., float], arrays: Sequence[np.ndarray], eps: float) -> list[np.ndarray]:
    """Central differences of scalar ``fn(*arrays)`` w.r.t. every array entry."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn(*arrays)
            flat[i] = orig - eps
            fm = fn(*arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)`` (0 when both vanish)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(
    op: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    *,
    dtype=np.float64,
    eps: float | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between taped and finite-difference gradients.

    The op output is contracted against a fixed random projection so every
    output element contributes.  Analytic gradients are taken at ``dtype``;
    the finite-difference reference always evaluates the op in double
    precision.
    """
    rng = np.random.default_rng(seed)
    probe = Tensor(np.asarray(op(*[Tensor(np.asarray(a, dtype=np.float64)) for a in inputs]).data))
    proj = rng.standard_normal(probe.shape)

    def scalar64(*arrays):
        out = op(*[Tensor(a) for a in arrays])
        return float(np.sum(out.data * proj))

    with Tape() as tape:
        leaves = [Tensor(np.asarray(a), dtype=dtype) for a in inputs]
        tape.watch(*leaves)
        out = op(*leaves)
        loss = (out * Tensor(proj.astype(dtype))).sum()
    analytic = tape.gradient(loss, leaves)
    if eps is None:
        eps = 1e-6
    numeric = numerical_gradient(scalar64, inputs, eps)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
