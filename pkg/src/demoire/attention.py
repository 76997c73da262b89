"""Sequence mixers: softmax attention, compressed attention and the TTT layer.

Conventions: token sequences are ``(..., t, d)`` with row-vector tokens, so a
projection ``theta`` of shape ``(d, d_k)`` maps ``x`` to ``x @ theta``.

The TTT layer keeps a ``d_k x d_k`` linear model ``W`` as its hidden state.
Each incoming token takes one gradient step on the reconstruction loss
``|W k - v|^2`` and then reads out ``z = W q`` with the updated state::

    W <- W - 2 * eta * (W k - v) k^T
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import ops
from .autodiff.tensor import ShapeError, Tensor
from .nn import Module

_MASK_VALUE = -1e9


@dataclass(frozen=True)
class AttentionConfig:
    model_dim: int = 32
    key_dim: int = 32
    max_length: int = 4096
    variant: str = "ttt"

    def __post_init__(self):
        if self.model_dim <= 0 or self.key_dim <= 0:
            raise ValueError("model_dim and key_dim must be positive")
        if self.variant not in ("softmax", "compressed", "ttt"):
            raise ValueError(f"unknown attention variant {self.variant!r}")


# --- softmax attention ------------------------------------------------------


def attention_weights(q: Tensor, k: Tensor, causal: bool = False) -> Tensor:
    """Row-stochastic ``softmax(q k^T / sqrt(d_k))``; causal masks future keys."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key dims differ: {q.shape} vs {k.shape}")
    d_k = q.shape[-1]
    scores = ops.matmul(q, ops.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d_k))
    if causal:
        tq, tk = scores.shape[-2:]
        mask = np.triu(np.full((tq, tk), _MASK_VALUE, dtype=scores.dtype), k=1 + tk - tq)
        scores = scores + Tensor(mask)
    return ops.softmax(scores, axis=-1)


def softmax_attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False, return_weights: bool = False):
    """``softmax(q k^T / sqrt(d_k)) v``.

    With ``causal=True`` query i only attends to keys ``j <= i`` (aligned at
    the end when the query block is shorter than the key block).
    """
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"keys and values differ in length: {k.shape} vs {v.shape}")
    w = attention_weights(q, k, causal=causal)
    out = ops.matmul(w, v)
    return (out, w) if return_weights else out


@dataclass
class CompressionMatrices:
    """Token-mixing matrices producing ``K' = W_k K`` and ``V' = W_v V``."""

    w_k: Tensor
    w_v: Tensor

    @classmethod
    def identity(cls, length: int, dtype=np.float32) -> "CompressionMatrices":
        eye = np.eye(length, dtype=dtype)
        return cls(Tensor(eye), Tensor(eye.copy()))

    @classmethod
    def random(cls, rng: np.random.Generator, length: int, dtype=np.float32) -> "CompressionMatrices":
        def one():
            return Tensor((rng.standard_normal((length, length)) / math.sqrt(length)).astype(dtype))

        return cls(one(), one())

    def check(self, k: Tensor, v: Tensor) -> None:
        if self.w_k.shape[-1] != k.shape[-2] or self.w_v.shape[-1] != v.shape[-2]:
            raise ShapeError(
                f"compression matrices {self.w_k.shape}, {self.w_v.shape} do not conform to K {k.shape}, V {v.shape}"
            )
        if self.w_k.shape[-2] != self.w_v.shape[-2]:
            raise ShapeError("compressed key and value stacks must have equal length")


def compressed_attention(q: Tensor, k: Tensor, v: Tensor, comp: CompressionMatrices) -> Tensor:
    comp.check(k, v)
    k_c = ops.matmul(comp.w_k, k)
    v_c = ops.matmul(comp.w_v, v)
    return softmax_attention(q, k_c, v_c)


# --- test-time training -----------------------------------------------------


@dataclass
class TTTState:
    """Hidden linear model plus the outer parameters that drive its updates."""

    hidden: Tensor
    theta_k: Tensor
    theta_v: Tensor
    theta_q: Tensor
    eta: Tensor
    token_index: int = 0

    @classmethod
    def initial(cls, theta_k, theta_v, theta_q, eta, batch_shape: tuple[int, ...] = ()) -> "TTTState":
        d_k = theta_k.shape[-1]
        hidden = Tensor(np.zeros(batch_shape + (d_k, d_k), dtype=theta_k.dtype))
        return cls(hidden, theta_k, theta_v, theta_q, eta, 0)

    @property
    def nbytes(self) -> int:
        """Bytes of per-sequence state (the hidden model only)."""
        return self.hidden.data.nbytes


def _inner_update(hidden: Tensor, k_col: Tensor, k_row: Tensor, v_col: Tensor, eta: Tensor) -> Tensor:
    with np.errstate(over="ignore", invalid="ignore"):
        err = ops.matmul(hidden, k_col) - v_col
        new = hidden - ops.matmul(err, k_row) * (eta * 2.0)
    if not np.all(np.isfinite(new.data)):
        raise FloatingPointError(f"TTT inner update produced non-finite state (eta={float(eta.data):g})")
    return new


def ttt_step(state: TTTState, x_t: Tensor) -> tuple[TTTState, Tensor]:
    """Consume one token ``x_t`` of shape ``(..., d)``; returns the new state and ``z_t``."""
    k = ops.matmul(ops.reshape(x_t, x_t.shape[:-1] + (1, x_t.shape[-1])), state.theta_k)
    v = ops.matmul(ops.reshape(x_t, x_t.shape[:-1] + (1, x_t.shape[-1])), state.theta_v)
    q = ops.matmul(ops.reshape(x_t, x_t.shape[:-1] + (1, x_t.shape[-1])), state.theta_q)
    hidden = _inner_update(state.hidden, ops.swapaxes(k, -1, -2), k, ops.swapaxes(v, -1, -2), state.eta)
    z = ops.matmul(hidden, ops.swapaxes(q, -1, -2))
    z = ops.reshape(z, z.shape[:-1])
    return replace(state, hidden=hidden, token_index=state.token_index + 1), z


def ttt_forward(
    tokens: Tensor,
    theta_k: Tensor,
    theta_v: Tensor,
    theta_q: Tensor,
    eta: Tensor,
    causal: bool = True,
    return_state: bool = False,
    initial: Tensor | None = None,
):
    """Run the TTT layer over ``tokens`` of shape ``(..., t, d)``.

    The hidden model starts at ``initial`` (broadcast over the batch), or at
    ``W = 0`` when it is omitted.

    ``causal=True`` reads token t out right after its own update, so it sees
    tokens ``<= t`` only.  ``causal=False`` first folds the whole sequence
    into ``W`` and then reads every token out of the final state.
    """
    if tokens.ndim < 2 or tokens.shape[-2] < 1:
        raise ShapeError(f"ttt_forward needs (..., t>=1, d) tokens, got {tokens.shape}")
    t_len = tokens.shape[-2]
    batch = tokens.shape[:-2]
    # (..., t, d_k) projections, sliced per token below as rows/columns
    k_all = ops.matmul(tokens, theta_k)
    v_all = ops.matmul(tokens, theta_v)
    q_all = ops.matmul(tokens, theta_q)
    d_k = k_all.shape[-1]
    k_rows = ops.reshape(k_all, batch + (t_len, 1, d_k))
    k_cols = ops.reshape(k_all, batch + (t_len, d_k, 1))
    v_cols = ops.reshape(v_all, batch + (t_len, d_k, 1))
    q_cols = ops.reshape(q_all, batch + (t_len, d_k, 1))
    state = TTTState.initial(theta_k, theta_v, theta_q, eta, batch)
    if initial is not None:
        if initial.shape[-2:] != (d_k, d_k):
            raise ShapeError(f"initial hidden state must end in ({d_k}, {d_k}), got {initial.shape}")
        state = replace(state, hidden=initial)
    hidden = state.hidden
    lead = (slice(None),) * len(batch)
    outs = []
    for i in range(t_len):
        sel = lead + (i,)
        hidden = _inner_update(hidden, k_cols[sel], k_rows[sel], v_cols[sel], eta)
        if causal:
            outs.append(ops.matmul(hidden, q_cols[sel]))
    if causal:
        z = ops.stack(outs, axis=-3)
        z = ops.reshape(z, batch + (t_len, d_k))
    else:
        z = ops.matmul(q_all, ops.swapaxes(hidden, -1, -2))
    if return_state:
        return z, replace(state, hidden=hidden, token_index=t_len)
    return z


class TTTLayer(Module):
    """Learnable projections and inner step size for :func:`ttt_forward`."""

    def __init__(self, rng: np.random.Generator, model_dim: int, key_dim: int, eta_init: float = 0.1, causal=True):
        # std 1/d keeps |k|^2 near d_k/d so the initial inner step stays contractive
        scale = 1.0 / model_dim
        self.theta_k = Tensor((rng.standard_normal((model_dim, key_dim)) * scale).astype(np.float32))
        self.theta_v = Tensor((rng.standard_normal((model_dim, key_dim)) * scale).astype(np.float32))
        self.theta_q = Tensor((rng.standard_normal((model_dim, key_dim)) * scale).astype(np.float32))
        self.eta = Tensor(np.array(eta_init, dtype=np.float32))
        self.causal = causal

    def forward(self, tokens: Tensor) -> Tensor:
        return ttt_forward(tokens, self.theta_k, self.theta_v, self.theta_q, self.eta, causal=self.causal)


# --- scaling benchmark -------------------------------------------------------


@dataclass
class ScalingRow:
    variant: str
    length: int
    wall_ms: float
    state_bytes: int


@dataclass
class ScalingReport:
    rows: list[ScalingRow] = field(default_factory=list)

    COLUMNS = ("variant", "length", "wall_ms", "state_bytes")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r.variant, r.length, f"{r.wall_ms:.4f}", r.state_bytes])
        return buf.getvalue()

    def for_variant(self, variant: str) -> list[ScalingRow]:
        return [r for r in self.rows if r.variant == variant]

    def loglog_slope(self, variant: str) -> float:
        rows = self.for_variant(variant)
        x = np.log([r.length for r in rows])
        y = np.log([max(r.wall_ms, 1e-9) for r in rows])
        return float(np.polyfit(x, y, 1)[0])


def _run_variant(variant: str, x: np.ndarray, rng: np.random.Generator, d_k: int) -> int:
    """Process one sequence; returns the peak bytes of auxiliary state held."""
    t, d = x.shape
    theta = [Tensor((rng.standard_normal((d, d_k)) / d).astype(np.float32)) for _ in range(3)]
    tokens = Tensor(x)
    if variant == "ttt":
        _, state = ttt_forward(tokens, *theta, Tensor(np.array(0.1, dtype=np.float32)), return_state=True)
        return state.nbytes
    q = ops.matmul(tokens, theta[2])
    k = ops.matmul(tokens, theta[0])
    v = ops.matmul(tokens, theta[1])
    if variant == "softmax":
        softmax_attention(q, k, v, causal=True)
        return k.data.nbytes + v.data.nbytes
    if variant == "compressed":
        comp = CompressionMatrices.random(rng, t)
        k_c = ops.matmul(comp.w_k, k)
        v_c = ops.matmul(comp.w_v, v)
        softmax_attention(q, k_c, v_c)
        return k_c.data.nbytes + v_c.data.nbytes
    raise ValueError(f"unknown attention variant {variant!r}")


def bench_scaling(
    variant: str,
    lengths: list[int],
    model_dim: int = 32,
    key_dim: int = 32,
    repeats: int = 3,
    seed: int = 0,
    report: ScalingReport | None = None,
) -> ScalingReport:
    """Time each variant per sequence length (best of ``repeats``) and record state bytes."""
    if list(lengths) != sorted(lengths):
        raise ValueError("lengths must be sorted ascending")
    report = report if report is not None else ScalingReport()
    for length in lengths:
        best = math.inf
        state_bytes = 0
        for rep in range(repeats):
            rng = np.random.default_rng([seed, length, rep])
            x = rng.standard_normal((length, model_dim)).astype(np.float32)
            start = time.perf_counter()
            state_bytes = max(state_bytes, _run_variant(variant, x, rng, key_dim))
            best = min(best, time.perf_counter() - start)
        report.rows.append(ScalingRow(variant, int(length), best * 1e3, int(state_bytes)))
    return report
