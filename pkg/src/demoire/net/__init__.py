"""Restoration network: shallow conv + coupling stage, per-scale frequency filter
and TTT mixing, coarse-to-fine three-resolution reconstruction."""

from .config import SCALES, NetworkConfig
from .inn import CouplingBlock, InnStage, inn_forward, inn_inverse
from .lfef import FrequencyFilter, lfef_apply
from .losses import PerceptualSurrogate, haar_analysis, haar_synthesis, total_loss, wavelet_loss
from .model import DemoireNet, MultiScaleFeatures, TTTBlock, TripleOutput, naive_demosaic

__all__ = [
    "SCALES",
    "CouplingBlock",
    "DemoireNet",
    "FrequencyFilter",
    "InnStage",
    "MultiScaleFeatures",
    "NetworkConfig",
    "PerceptualSurrogate",
    "TTTBlock",
    "TripleOutput",
    "haar_analysis",
    "haar_synthesis",
    "inn_forward",
    "inn_inverse",
    "lfef_apply",
    "naive_demosaic",
    "total_loss",
    "wavelet_loss",
]
