"""Learnable frequency filter applied to feature maps.

The filter holds a per-channel, per-bin complex gate ``G`` over the half
spectrum and a scalar mix ``alpha``::

    out = alpha * irfft2(rfft2(f) * G) + (1 - alpha) * f

``G`` is stored as its deviation ``D = G - 1`` and evaluated as
``f + alpha * irfft2(rfft2(f) * D)``, which is the same map but returns ``f``
bit-for-bit while the gate is still all-pass.

Gates are allocated for one feature size.  Inputs of another power-of-two
size read the gate at the nearest normalised frequency (cycles/pixel), so a
filter trained at 32x32 applies unchanged to 64x64 maps.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..autodiff import ops
from ..autodiff.spectral import check_fft_size, irfft2, rfft2
from ..autodiff.tensor import ShapeError, Tensor
from ..nn import Module


@lru_cache(maxsize=32)
def _frequency_lookup(h0: int, w0: int, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ky = np.arange(h)
    fy = np.where(ky < h // 2 + (h % 2), ky, ky - h) / h
    src_y = np.clip(np.rint(fy * h0), -(h0 // 2), h0 // 2).astype(int) % h0
    fx = np.arange(w // 2 + 1) / w
    src_x = np.clip(np.rint(fx * w0), 0, w0 // 2).astype(int)
    return src_y, src_x


class FrequencyFilter(Module):
    def __init__(self, channels: int, height: int, width: int, alpha_init: float = 0.5,
                 rng: np.random.Generator | None = None, init_std: float = 0.0):
        check_fft_size(height, width)
        self.size = (height, width)
        shape = (channels, height, width // 2 + 1)
        self.delta_re = Tensor(np.zeros(shape, dtype=np.float32))
        self.delta_im = Tensor(np.zeros(shape, dtype=np.float32))
        if init_std:
            # a gate exactly at 1 would leave alpha without gradient
            self.delta_re.data = (rng.standard_normal(shape) * init_std).astype(np.float32)
            self.delta_im.data = (rng.standard_normal(shape) * init_std).astype(np.float32)
        self.alpha = Tensor(np.array(alpha_init, dtype=np.float32))

    @property
    def gate(self) -> np.ndarray:
        return 1.0 + self.delta_re.data + 1j * self.delta_im.data

    def set_gate(self, gate: np.ndarray) -> None:
        gate = np.broadcast_to(np.asarray(gate), self.delta_re.shape)
        self.delta_re.data = (gate.real - 1.0).astype(self.delta_re.dtype)
        self.delta_im.data = gate.imag.astype(self.delta_im.dtype)

    def _deltas(self, h: int, w: int) -> tuple[Tensor, Tensor]:
        if (h, w) == self.size:
            return self.delta_re, self.delta_im
        iy, ix = _frequency_lookup(self.size[0], self.size[1], h, w)
        idx = (slice(None), iy[:, None], ix[None, :])
        return self.delta_re[idx], self.delta_im[idx]

    def forward(self, f: Tensor) -> Tensor:
        if f.ndim != 4 or f.shape[1] != self.delta_re.shape[0]:
            raise ShapeError(f"expected (N, {self.delta_re.shape[0]}, h, w), got {f.shape}")
        h, w = f.shape[-2:]
        check_fft_size(h, w)
        d_re, d_im = self._deltas(h, w)
        re, im = rfft2(f)
        out_re = re * d_re - im * d_im
        out_im = re * d_im + im * d_re
        return f + self.alpha * irfft2(out_re, out_im, (h, w))


def lfef_apply(f: Tensor, filt: FrequencyFilter) -> Tensor:
    return filt(f)
