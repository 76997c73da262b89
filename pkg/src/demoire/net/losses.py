"""Training objectives: multi-scale L1 + perceptual surrogate, and a Haar wavelet term."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import ShapeError, Tensor
from ..nn import Conv2d, Module
from .model import TripleOutput

L1_WEIGHT = 0.7
PERCEPTUAL_WEIGHT = 0.3
PERCEPTUAL_SEED = 16


class PerceptualSurrogate(Module):
    """Frozen random conv stack standing in for pretrained VGG features.

    Three ReLU conv layers (3->8, 8->16 stride 2, 16->16), He-initialised from
    a fixed seed.  The distance is the sum over layers of the mean absolute
    feature difference.
    """

    frozen = True

    def __init__(self, seed: int = PERCEPTUAL_SEED):
        rng = np.random.default_rng(seed)
        self.layers = [
            Conv2d(rng, 3, 8, 3, bias=False),
            Conv2d(rng, 8, 16, 3, stride=2, bias=False),
            Conv2d(rng, 16, 16, 3, bias=False),
        ]

    def features(self, x: Tensor) -> list[Tensor]:
        feats = []
        for layer in self.layers:
            x = ops.relu(layer(x))
            feats.append(x)
        return feats


def l1(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"loss operands differ in shape: {a.shape} vs {b.shape}")
    return ops.mean(ops.abs(a - b))


def perceptual_distance(a: Tensor, b: Tensor, features: Callable[[Tensor], Sequence[Tensor]]) -> Tensor:
    total = None
    for fa, fb in zip(features(a), features(b)):
        term = l1(fa, fb)
        total = term if total is None else total + term
    return total


def gt_pyramid(gt: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    return gt, ops.bilinear_resize(gt, 0.5), ops.bilinear_resize(gt, 0.25)


def total_loss(
    pred: TripleOutput,
    gt: Tensor,
    features: Callable[[Tensor], Sequence[Tensor]] | None = None,
    l1_weight: float = L1_WEIGHT,
    perceptual_weight: float = PERCEPTUAL_WEIGHT,
) -> Tensor:
    """Sum over the three output scales of ``0.7 * L1 + 0.3 * perceptual``.

    ``gt`` is full resolution; the half and quarter targets are its bilinear
    downsamples.  ``features`` defaults to :class:`PerceptualSurrogate`.
    """
    if features is None:
        features = _default_surrogate().features
    if pred.full.shape != gt.shape:
        raise ShapeError(f"prediction {pred.full.shape} and target {gt.shape} differ")
    loss = None
    for p, g in zip(pred.as_tuple(), gt_pyramid(gt)):
        term = l1(p, g) * l1_weight + perceptual_distance(p, g, features) * perceptual_weight
        loss = term if loss is None else loss + term
    return loss


_SURROGATES: dict[str, PerceptualSurrogate] = {}


def _default_surrogate(dtype=np.float32) -> PerceptualSurrogate:
    key = np.dtype(dtype).name
    if key not in _SURROGATES:
        _SURROGATES[key] = PerceptualSurrogate().to(dtype)
    return _SURROGATES[key]


# --- Haar wavelet ---------------------------------------------------------------


def haar_analysis(x: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Single-level orthonormal 2-D Haar transform of the last two axes.

    Returns ``(LL, LH, HL, HH)``; a constant image ``c`` maps to ``LL = 2c``.
    """
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(f"Haar transform needs even spatial dims, got {h}x{w}")
    lead = (slice(None),) * (x.ndim - 2)
    a = x[lead + (slice(0, None, 2), slice(0, None, 2))]
    b = x[lead + (slice(0, None, 2), slice(1, None, 2))]
    c = x[lead + (slice(1, None, 2), slice(0, None, 2))]
    d = x[lead + (slice(1, None, 2), slice(1, None, 2))]
    ll = (a + b + c + d) * 0.5
    lh = (a - b + c - d) * 0.5
    hl = (a + b - c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return ll, lh, hl, hh


def haar_synthesis(ll: Tensor, lh: Tensor, hl: Tensor, hh: Tensor) -> Tensor:
    a = (ll + lh + hl + hh) * 0.5
    b = (ll - lh + hl - hh) * 0.5
    c = (ll + lh - hl - hh) * 0.5
    d = (ll - lh - hl + hh) * 0.5
    h, w = ll.shape[-2:]
    lead = ll.shape[:-2]
    # (..., 2, 2, h, w) -> (..., h, 2, w, 2) -> interleaved (..., 2h, 2w)
    s = ops.reshape(ops.stack([a, b, c, d], axis=-3), lead + (2, 2, h, w))
    k = len(lead)
    s = ops.transpose(s, tuple(range(k)) + (k + 2, k, k + 3, k + 1))
    return ops.reshape(s, lead + (2 * h, 2 * w))


def wavelet_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Sum over the four Haar subbands of their mean absolute difference."""
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and target {gt.shape} differ")
    loss = None
    for bp, bg in zip(haar_analysis(pred), haar_analysis(gt)):
        term = l1(bp, bg)
        loss = term if loss is None else loss + term
    return loss
