"""Image quality metrics on float images in [0, 1].

PSNR uses unquantised floats and reports 100 dB for identical inputs.  SSIM
uses an 11x11 Gaussian window (sigma 1.5), evaluated only where the window
fits, and averages the map over positions and channels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """``-10 log10(MSE)`` for unit-range images, capped at 100 dB."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * math.log10(mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable valid-mode filtering of the last two axes."""
    k = len(g)
    x = sliding_window_view(x, k, axis=-1) @ g
    return np.swapaxes(sliding_window_view(np.swapaxes(x, -1, -2), k, axis=-1) @ g, -1, -2)


def ssim_map(a, b) -> np.ndarray:
    a, b = _check_pair(a, b)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[-2:]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def ssim(a, b) -> float:
    """Mean SSIM over window positions and channels (and batch, if any)."""
    return float(np.mean(ssim_map(a, b)))


@dataclass
class MetricsRow:
    sample_id: str
    psnr: float
    ssim: float


@dataclass
class MetricsReport:
    rows: list[MetricsRow] = field(default_factory=list)
    runtime_s: float = 0.0

    @classmethod
    def compute(cls, ids, pred: np.ndarray, gt: np.ndarray, runtime_s: float = 0.0) -> "MetricsReport":
        if len(ids) != len(pred) or len(pred) != len(gt):
            raise ValueError("ids, predictions and references must have equal length")
        rows = [MetricsRow(str(i), psnr(p, g), ssim(p, g)) for i, p, g in zip(ids, pred, gt)]
        return cls(rows, runtime_s)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r.psnr for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r.ssim for r in self.rows]))

    def summary(self) -> dict:
        n = len(self.rows)
        return {
            "count": n,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "runtime_s": self.runtime_s,
            "runtime_per_sample_s": self.runtime_s / n if n else 0.0,
        }

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fp:
            w = csv.writer(fp, lineterminator="\n")
            w.writerow(["id", "psnr", "ssim"])
            for r in self.rows:
                w.writerow([r.sample_id, f"{r.psnr:.6f}", f"{r.ssim:.6f}"])
            w.writerow(["mean", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.6f}"])
