"""Synthetic paired moire data.

The degradation is a stand-in for real screen-capture moire::

    y = clip(x * m(u', v') + n, 0, 1)
    m(u, v) = 1 + a * cos(2 pi (f u + g v) + phi)
    u' = u + w sin(2 pi v / H),  v' = v + w sin(2 pi u / W)

``u`` is the column and ``v`` the row index in pixels, ``w`` the warp
strength in pixels and ``n`` i.i.d. Gaussian noise.  The warp bends the
interference fringes; the image itself is not resampled, so clean and
degraded frames stay pixel-aligned.  No tone curve is simulated: the RAW
input is simply the RGGB mosaic of the degraded sRGB frame.

Dataset layout under ``root``::

    manifest.json
    <split>/<id>/clean.png   8-bit sRGB target, H x W
    <split>/<id>/moire.png   8-bit degraded sRGB, H x W
    <split>/<id>/raw.png     8-bit RGBA = packed (R, G, G, B) planes, H/2 x W/2
    <split>/<id>/params.json degradation parameters
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

SPLITS = ("train", "val", "test")
CONTENT_KINDS = ("gradient", "text", "stripes", "mixed")
DATA_ROOT_ENV = "DEMOIRE_DATA_ROOT"


@dataclass
class DegradationParams:
    freq_u: float = 0.05
    freq_v: float = 0.03
    phase: float = 0.0
    amplitude: float = 0.3
    warp: float = 1.5
    sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        for name in ("freq_u", "freq_v"):
            f = getattr(self, name)
            if not 0 < f <= 0.5:
                raise ValueError(f"{name}={f} outside (0, 0.5] cycles/pixel")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "DegradationParams":
        return cls(
            freq_u=float(rng.uniform(0.01, 0.1)),
            freq_v=float(rng.uniform(0.01, 0.1)),
            phase=float(rng.uniform(0, 2 * math.pi)),
            amplitude=float(rng.uniform(0.2, 0.45)),
            warp=float(rng.uniform(0.0, 3.0)),
            sigma=0.01,
            seed=int(rng.integers(0, 2**31 - 1)),
        )


@dataclass
class MoireSample:
    raw_in: np.ndarray  # (4, H/2, W/2)
    clean_srgb: np.ndarray  # (3, H, W)
    moire_srgb: np.ndarray  # (3, H, W)
    params: DegradationParams
    id: str


# --- clean content -------------------------------------------------------------


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _gradient_background(rng, size):
    corners = rng.uniform(0.15, 0.85, size=(3, 2, 2))
    t = np.linspace(0.0, 1.0, size)
    wy, wx = t[:, None], t[None, :]
    bg = (
        corners[:, 0, 0, None, None] * (1 - wy) * (1 - wx)
        + corners[:, 0, 1, None, None] * (1 - wy) * wx
        + corners[:, 1, 0, None, None] * wy * (1 - wx)
        + corners[:, 1, 1, None, None] * wy * wx
    )
    # a couple of soft blobs for low-frequency variety
    yy, xx = np.mgrid[0:size, 0:size] / size
    for _ in range(2):
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.1, 0.35)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        bg += rng.uniform(-0.2, 0.2, size=(3, 1, 1)) * blob
    return bg


def _add_text(rng, img, size):
    """Glyph-like strokes arranged in lines."""
    color = rng.uniform(0.0, 1.0, size=3)
    n_lines = int(rng.integers(2, max(3, size // 12)))
    for _ in range(n_lines):
        y0 = int(rng.integers(0, size - 6))
        x = int(rng.integers(0, size // 4))
        height = int(rng.integers(4, 7))
        while x < size - 3:
            glyph_w = int(rng.integers(2, 5))
            kind = rng.integers(0, 3)
            if kind == 0:  # vertical stem
                img[:, y0 : y0 + height, x : x + 1] = color[:, None, None]
            elif kind == 1:  # box-ish glyph
                img[:, y0 : y0 + height, x : x + 1] = color[:, None, None]
                img[:, y0 : y0 + height, x + glyph_w - 1 : x + glyph_w] = color[:, None, None]
                img[:, y0 : y0 + 1, x : x + glyph_w] = color[:, None, None]
            else:  # bar
                mid = y0 + height // 2
                img[:, mid : mid + 1, x : x + glyph_w] = color[:, None, None]
            x += glyph_w + int(rng.integers(1, 3))
            if rng.random() < 0.15:
                x += 3
    return img


def _add_stripes(rng, img, size):
    """High-frequency stripe and checker patches (the moire-prone content)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(int(rng.integers(1, 3))):
        h = int(rng.integers(size // 4, size // 2 + 1))
        w = int(rng.integers(size // 4, size // 2 + 1))
        y0 = int(rng.integers(0, size - h + 1))
        x0 = int(rng.integers(0, size - w + 1))
        if rng.random() < 0.6:
            freq = rng.uniform(0.15, 0.35)
            theta = rng.uniform(0, math.pi)
            pattern = 0.5 + 0.5 * np.sign(np.cos(2 * math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta))))
        else:
            period = int(rng.integers(2, 5))
            pattern = ((yy // period + xx // period) % 2).astype(np.float64)
        lo, hi = rng.uniform(0.0, 0.4), rng.uniform(0.6, 1.0)
        tint = rng.uniform(0.6, 1.0, size=3)
        patch = (lo + (hi - lo) * pattern)[None] * tint[:, None, None]
        img[:, y0 : y0 + h, x0 : x0 + w] = patch[:, y0 : y0 + h, x0 : x0 + w]
    return img


def synth_clean(seed: int, size: int = 64, kind: str = "mixed") -> np.ndarray:
    """Procedural clean sRGB image ``(3, size, size)`` in [0, 1], float32."""
    if not _is_pow2(size):
        raise ValueError(f"size must be a power of two, got {size}")
    if kind not in CONTENT_KINDS:
        raise ValueError(f"kind must be one of {CONTENT_KINDS}")
    rng = np.random.default_rng(seed)
    img = _gradient_background(rng, size)
    if kind in ("stripes", "mixed"):
        img = _add_stripes(rng, img, size)
    if kind in ("text", "mixed"):
        img = _add_text(rng, img, size)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# --- degradation -----------------------------------------------------------------


def interference_field(h: int, w: int, p: DegradationParams) -> np.ndarray:
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    u_w = u + p.warp * np.sin(2 * math.pi * v / h)
    v_w = v + p.warp * np.sin(2 * math.pi * u / w)
    return 1.0 + p.amplitude * np.cos(2 * math.pi * (p.freq_u * u_w + p.freq_v * v_w) + p.phase)


def apply_moire(x: np.ndarray, p: DegradationParams) -> np.ndarray:
    """Degrade a clean ``(3, H, W)`` image; deterministic given ``(x, p)``."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    y = x * interference_field(h, w, p)
    if p.sigma > 0:
        y = y + np.random.default_rng(p.seed).normal(0.0, p.sigma, size=x.shape)
    return np.clip(y, 0.0, 1.0).astype(np.float32)


def mosaic_rggb(x: np.ndarray) -> np.ndarray:
    """Bayer-sample ``(3, H, W)`` into packed ``(4, H/2, W/2)`` planes R, G, G, B.

    R sits at (even row, even col), G at (even, odd) and (odd, even), B at (odd, odd).
    """
    x = np.asarray(x)
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"mosaic needs even dims, got {h}x{w}")
    return np.stack([x[0, 0::2, 0::2], x[1, 0::2, 1::2], x[1, 1::2, 0::2], x[2, 1::2, 1::2]])


def unmosaic_rggb(raw: np.ndarray) -> np.ndarray:
    """Place packed planes back on their Bayer sites; other entries are zero."""
    raw = np.asarray(raw)
    _, h, w = raw.shape
    out = np.zeros((3, 2 * h, 2 * w), dtype=raw.dtype)
    out[0, 0::2, 0::2] = raw[0]
    out[1, 0::2, 1::2] = raw[1]
    out[1, 1::2, 0::2] = raw[2]
    out[2, 1::2, 1::2] = raw[3]
    return out


def make_sample(global_seed: int, index: int, size: int, sample_id: str | None = None) -> MoireSample:
    ss = np.random.SeedSequence([global_seed, index])
    content_seed, param_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    clean = synth_clean(content_seed, size)
    params = DegradationParams.sample(np.random.default_rng(param_seed))
    moire = apply_moire(clean, params)
    return MoireSample(mosaic_rggb(moire), clean, moire, params, sample_id or f"{index:06d}")


# --- dataset on disk ---------------------------------------------------------------


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_png(path: str | Path, chw: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(to_uint8(chw).transpose(1, 2, 0))).save(path, format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 2:
        arr = arr[..., None]
    return (arr.transpose(2, 0, 1).astype(np.float32) / 255.0).astype(np.float32)


@dataclass
class DatasetManifest:
    seed: int
    size: int
    splits: dict[str, list[str]] = field(default_factory=dict)
    samples: dict[str, dict] = field(default_factory=dict)
    root: Path | None = None

    def save(self, root: str | Path) -> Path:
        root = Path(root)
        doc = {"seed": self.seed, "size": self.size, "splits": self.splits, "samples": self.samples}
        path = root / "manifest.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, root: str | Path) -> "DatasetManifest":
        root = Path(root)
        path = root / "manifest.json" if root.is_dir() else root
        if not path.exists():
            raise FileNotFoundError(f"dataset manifest not found: {path}")
        doc = json.loads(path.read_text())
        return cls(doc["seed"], doc["size"], doc["splits"], doc["samples"], path.parent)

    def path(self, sample_id: str, key: str) -> Path:
        return Path(self.root) / self.samples[sample_id][key]

    def load_split(self, split: str, limit: int | None = None) -> dict[str, np.ndarray | list[str]]:
        ids = self.splits[split][:limit]
        if not ids:
            raise ValueError(f"split {split!r} is empty")
        return {
            "ids": list(ids),
            "raw": np.stack([load_png(self.path(i, "raw")) for i in ids]),
            "clean": np.stack([load_png(self.path(i, "clean")) for i in ids]),
            "moire": np.stack([load_png(self.path(i, "moire")) for i in ids]),
        }


def resolve_data_root(path: str | Path | None, workdir: str | Path = ".") -> Path:
    """Explicit path, else ``$DEMOIRE_DATA_ROOT``, else ``<workdir>/data``."""
    if path is not None:
        p = Path(path)
    elif os.environ.get(DATA_ROOT_ENV):
        p = Path(os.environ[DATA_ROOT_ENV])
    else:
        p = Path("data")
    return p if p.is_absolute() else Path(workdir) / p


def build_dataset(
    root: str | Path, n_train: int, n_val: int, n_test: int, size: int = 64, seed: int = 0
) -> DatasetManifest:
    """Write a reproducible paired dataset; each sample's seed derives from ``(seed, index)``."""
    counts = {"train": n_train, "val": n_val, "test": n_test}
    if any(n <= 0 for n in counts.values()):
        raise ValueError(f"split counts must be positive, got {counts}")
    root = Path(root)
    manifest = DatasetManifest(seed, size, {s: [] for s in SPLITS}, {}, root)
    index = 0
    for split in SPLITS:
        for _ in range(counts[split]):
            sid = f"{index:06d}"
            sample = make_sample(seed, index, size, sid)
            rel = Path(split) / sid
            d = root / rel
            try:
                d.mkdir(parents=True, exist_ok=True)
                save_png(d / "clean.png", sample.clean_srgb)
                save_png(d / "moire.png", sample.moire_srgb)
                save_png(d / "raw.png", sample.raw_in)
                (d / "params.json").write_text(json.dumps(asdict(sample.params), indent=2, sort_keys=True) + "\n")
            except OSError as e:
                raise OSError(f"failed writing sample {sid} under {d}: {e}") from e
            manifest.splits[split].append(sid)
            manifest.samples[sid] = {
                "split": split,
                "clean": str(rel / "clean.png"),
                "moire": str(rel / "moire.png"),
                "raw": str(rel / "raw.png"),
                "params": str(rel / "params.json"),
            }
            index += 1
    manifest.save(root)
    return manifest
