"""Multi-scale RAW-to-sRGB restoration network.

Pipeline for a packed RGGB input ``(N, 4, h, w)`` (``h = H / 2``):

1. shallow extraction: two 3x3 convs, then the coupling (INN) stage;
2. deep extraction at scales 1, 1/2, 1/4 of the shallow map (bilinear), each
   scale running its frequency filter and then a TTT block over p x p patch
   tokens in raster order;
3. coarse-to-fine reconstruction: each scale adds a 1x1-projected, 2x
   upsampled copy of the next coarser fused map, and a head emits sRGB at
   twice that scale's resolution via depth-to-space.  Heads predict a
   residual over a naive demosaic of the input (R, mean G, B), resampled to
   the head's resolution.

With ``input_frames=3`` the neighbouring frames are concatenated on the
channel axis before the first conv; the centre frame drives the residual base.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import ShapeError, Tensor
from ..attention import TTTLayer
from ..nn import Conv2d, LayerNorm, Linear, Module
from .config import NetworkConfig
from .inn import InnStage
from .lfef import FrequencyFilter


@dataclass
class TripleOutput:
    full: Tensor
    half: Tensor
    quarter: Tensor

    def as_tuple(self) -> tuple[Tensor, Tensor, Tensor]:
        return self.full, self.half, self.quarter


@dataclass
class MultiScaleFeatures:
    maps: list[Tensor]  # ordered as NetworkConfig.scales

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [m.shape for m in self.maps]


class TTTBlock(Module):
    """Residual TTT mixer over non-overlapping ``p x p`` patch tokens."""

    def __init__(self, rng, channels, patch, dim, key_dim, eta_init, causal, identity_init):
        self.patch = patch
        token_dim = channels * patch * patch
        self.norm = LayerNorm(token_dim)
        self.embed = Linear(rng, token_dim, dim)
        self.ttt = TTTLayer(rng, dim, key_dim, eta_init=eta_init, causal=causal)
        self.unembed = Linear(rng, key_dim, token_dim, init_gain=0.1)
        if identity_init:
            self.unembed.zero_()

    def tokenize(self, f: Tensor) -> Tensor:
        n, c, h, w = f.shape
        p = self.patch
        if h % p or w % p:
            raise ShapeError(f"feature map {h}x{w} not divisible into {p}x{p} patches")
        t = ops.pixel_unshuffle(f, p)
        t = ops.reshape(t, (n, c * p * p, (h // p) * (w // p)))
        return ops.swapaxes(t, 1, 2)

    def untokenize(self, tokens: Tensor, shape) -> Tensor:
        n, c, h, w = shape
        p = self.patch
        t = ops.swapaxes(tokens, 1, 2)
        t = ops.reshape(t, (n, c * p * p, h // p, w // p))
        return ops.pixel_shuffle(t, p)

    def forward(self, f: Tensor) -> Tensor:
        tokens = self.tokenize(f)
        z = self.ttt(self.embed(self.norm(tokens)))
        return f + self.untokenize(self.unembed(z), f.shape)


class Head(Module):
    def __init__(self, rng, channels):
        self.conv1 = Conv2d(rng, channels, channels, 3)
        self.conv2 = Conv2d(rng, channels, 12, 3, init_gain=0.1)

    def forward(self, f: Tensor) -> Tensor:
        return ops.pixel_shuffle(self.conv2(ops.gelu(self.conv1(f))), 2)


def naive_demosaic(raw: Tensor) -> Tensor:
    """(N, 4, h, w) RGGB planes -> (N, 3, h, w) with the two greens averaged."""
    r, g1, g2, b = ops.split(raw, 4, axis=1)
    return ops.concat([r, (g1 + g2) * 0.5, b], axis=1)


class DemoireNet(Module):
    def __init__(self, cfg: NetworkConfig | None = None):
        cfg = cfg or NetworkConfig()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        c = cfg.base_channels
        self.conv_in = Conv2d(rng, cfg.in_channels, c, 3)
        self.conv_shallow = Conv2d(rng, c, c, 3)
        self.inn = InnStage(rng, c, cfg.inn_blocks, identity_init=cfg.identity_init) if cfg.use_inn else None
        base = cfg.image_size // 2
        self.filters = (
            [
                FrequencyFilter(c, int(base * s), int(base * s), rng=rng, init_std=0.0 if cfg.identity_init else 0.02)
                for s in cfg.scales
            ]
            if cfg.use_lfef
            else None
        )
        self.ttt_blocks = (
            [
                TTTBlock(rng, c, cfg.patch_size, cfg.ttt_dim, cfg.ttt_key_dim, cfg.eta_init, cfg.causal,
                         cfg.identity_init)
                for _ in cfg.scales
            ]
            if cfg.use_ttt
            else None
        )
        self.fuse = [Conv2d(rng, c, c, 1) for _ in cfg.scales[:-1]]
        self.heads = [Head(rng, c) for _ in cfg.scales]

    # -- stages ---------------------------------------------------------------
    def check_input(self, raw: Tensor) -> None:
        if raw.ndim != 4 or raw.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"expected RGGB input (N, {self.cfg.in_channels}, h, w), got {raw.shape}")
        self.cfg.check_input_size(*raw.shape[-2:])

    def sfe_forward(self, raw: Tensor) -> Tensor:
        self.check_input(raw)
        f = ops.gelu(self.conv_in(raw))
        f = self.conv_shallow(f)
        if self.inn is not None:
            f = self.inn(f)
        return f

    def dfe_forward(self, shallow: Tensor) -> MultiScaleFeatures:
        maps = []
        for i, s in enumerate(self.cfg.scales):
            f = ops.bilinear_resize(shallow, s)
            if self.filters is not None:
                f = self.filters[i](f)
            if self.ttt_blocks is not None:
                f = self.ttt_blocks[i](f)
            maps.append(f)
        return MultiScaleFeatures(maps)

    def reconstruct(self, features: MultiScaleFeatures, raw: Tensor | None = None) -> TripleOutput:
        maps = features.maps
        outs: list[Tensor] = [None] * len(maps)  # type: ignore[list-item]
        fused = None
        for i in reversed(range(len(maps))):
            f = maps[i]
            if fused is not None:
                f = f + self.fuse[i](ops.bilinear_resize(fused, 2.0))
            fused = f
            outs[i] = self.heads[i](f)
        if raw is not None:
            centre = raw if self.cfg.input_frames == 1 else raw[:, 4:8]
            rgb = naive_demosaic(centre)
            for i, s in enumerate(self.cfg.scales):
                outs[i] = outs[i] + ops.bilinear_resize(rgb, 2.0 * s)
        return TripleOutput(*outs)

    def forward(self, raw: Tensor) -> TripleOutput:
        return self.reconstruct(self.dfe_forward(self.sfe_forward(raw)), raw)

    def predict(self, raw: np.ndarray, batch_size: int = 8) -> np.ndarray:
        """Full-resolution sRGB for a batch of RGGB arrays, no tape."""
        outs = []
        for i in range(0, len(raw), batch_size):
            out = self.forward(Tensor(np.asarray(raw[i : i + batch_size], dtype=np.float32)))
            outs.append(out.full.data)
        return np.concatenate(outs, axis=0)
