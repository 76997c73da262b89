"""Real 2-D FFT pair over the last two axes, restricted to power-of-two sizes.

The half spectrum is carried as two real tensors ``(re, im)`` of shape
``(..., H, W // 2 + 1)``.  Transforms are numpy's pocketfft; the adjoints
below are derived for that exact layout (columns 0 and W/2 are counted once
by the inverse, every other column twice).
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, apply


class FFTSizeError(ShapeError):
    """Raised for spatial sizes the transform does not support."""


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def check_fft_size(h: int, w: int) -> None:
    if not (_is_pow2(h) and _is_pow2(w)) or w < 2:
        raise FFTSizeError(f"FFT needs power-of-two spatial dims (W >= 2), got {h}x{w}")


def _hermitian_weights(w: int, dtype) -> np.ndarray:
    c = np.full(w // 2 + 1, 2.0, dtype=dtype)
    c[0] = 1.0
    c[-1] = 1.0
    return c


def rfft2(x: Tensor) -> tuple[Tensor, Tensor]:
    """Forward transform; returns ``(re, im)`` of the half spectrum."""
    if x.ndim < 2:
        raise ShapeError(f"rfft2 needs rank >= 2, got {x.shape}")
    h, w = x.shape[-2:]
    check_fft_size(h, w)
    spec = np.fft.rfft2(x.data)
    dtype = x.dtype
    hw = h * w

    def _adjoint(gc: np.ndarray) -> np.ndarray:
        full = np.zeros(gc.shape[:-1] + (w,), dtype=np.complex128)
        full[..., : w // 2 + 1] = gc
        return (np.fft.ifft2(full).real * hw).astype(dtype)

    re = apply((x,), spec.real.astype(dtype), lambda g: (_adjoint(g),))
    im = apply((x,), spec.imag.astype(dtype), lambda g: (_adjoint(1j * g),))
    return re, im


def irfft2(re: Tensor, im: Tensor, shape: tuple[int, int] | None = None) -> Tensor:
    """Inverse of :func:`rfft2`; ``shape`` defaults to ``(H, 2 * (Wh - 1))``."""
    if re.shape != im.shape:
        raise ShapeError(f"real/imag parts differ in shape: {re.shape} vs {im.shape}")
    h, wh = re.shape[-2:]
    if shape is None:
        shape = (h, 2 * (wh - 1))
    if shape[0] != h or shape[1] // 2 + 1 != wh:
        raise ShapeError(f"half spectrum {re.shape[-2:]} does not match output {shape}")
    check_fft_size(*shape)
    dtype = re.dtype
    out = np.fft.irfft2(re.data + 1j * im.data, s=shape).astype(dtype)
    scale = _hermitian_weights(shape[1], np.float64) / (shape[0] * shape[1])

    def backward(g):
        gs = np.fft.rfft2(g) * scale
        return gs.real.astype(dtype), gs.imag.astype(dtype)

    return apply((re, im), out, backward)
