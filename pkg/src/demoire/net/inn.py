"""Affine coupling blocks.

Forward: ``y_a = x_a``, ``y_b = x_b * exp(s(x_a)) + t(x_a)`` where ``x_a`` is
the conditioning half and ``x_b`` the transformed half of the channel axis.
``s`` is squashed by ``tanh`` so each block scales by at most ``e``.
The inverse is exact: ``x_b = (y_b - t(y_a)) * exp(-s(y_a))``.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import ShapeError, Tensor
from ..nn import Conv2d, Module


class _SubNet(Module):
    def __init__(self, rng, c_in, c_out, hidden, zero_last):
        self.conv1 = Conv2d(rng, c_in, hidden, 3)
        self.conv2 = Conv2d(rng, hidden, c_out, 3, init_gain=0.1)
        if zero_last:
            self.conv2.zero_()

    def forward(self, x):
        return self.conv2(ops.relu(self.conv1(x)))


class CouplingBlock(Module):
    def __init__(self, rng: np.random.Generator, channels: int, swap: bool = False, hidden: int | None = None,
                 identity_init: bool = False):
        if channels < 2:
            raise ShapeError(f"coupling needs at least 2 channels, got {channels}")
        self.channels = channels
        self.split_at = channels // 2
        self.swap = swap
        c_lo, c_hi = self.split_at, channels - self.split_at
        c_cond, c_trans = (c_hi, c_lo) if swap else (c_lo, c_hi)
        hidden = hidden or max(c_cond, 8)
        self.s_net = _SubNet(rng, c_cond, c_trans, hidden, identity_init)
        self.t_net = _SubNet(rng, c_cond, c_trans, hidden, identity_init)

    def _halves(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"expected (N, {self.channels}, H, W), got {x.shape}")
        lo, hi = ops.split(x, [self.split_at], axis=1)
        return (hi, lo) if self.swap else (lo, hi)

    def _join(self, cond: Tensor, trans: Tensor) -> Tensor:
        return ops.concat([trans, cond] if self.swap else [cond, trans], axis=1)

    def scale(self, cond: Tensor) -> Tensor:
        return ops.tanh(self.s_net(cond))

    def forward(self, x: Tensor, return_logdet: bool = False):
        cond, trans = self._halves(x)
        s = self.scale(cond)
        y = self._join(cond, trans * ops.exp(s) + self.t_net(cond))
        if return_logdet:
            return y, ops.sum(s, axis=(1, 2, 3))
        return y

    def inverse(self, y: Tensor) -> Tensor:
        cond, trans = self._halves(y)
        s = self.scale(cond)
        return self._join(cond, (trans - self.t_net(cond)) * ops.exp(-s))


class InnStage(Module):
    """Stack of coupling blocks with alternating conditioning halves."""

    def __init__(self, rng: np.random.Generator, channels: int, n_blocks: int = 2, identity_init: bool = False):
        self.blocks = [CouplingBlock(rng, channels, swap=bool(i % 2), identity_init=identity_init)
                       for i in range(n_blocks)]

    def forward(self, x: Tensor, return_logdet: bool = False):
        logdet = None
        for block in self.blocks:
            x, ld = block(x, return_logdet=True)
            logdet = ld if logdet is None else logdet + ld
        return (x, logdet) if return_logdet else x

    def inverse(self, y: Tensor) -> Tensor:
        for block in reversed(self.blocks):
            y = block.inverse(y)
        return y


def inn_forward(x: Tensor, stage: InnStage, return_logdet: bool = False):
    return stage(x, return_logdet=return_logdet)


def inn_inverse(y: Tensor, stage: InnStage) -> Tensor:
    return stage.inverse(y)
