from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

SCALES = (1.0, 0.5, 0.25)


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@dataclass
class NetworkConfig:
    """Hyper-parameters of the restoration network.

    ``image_size`` is the sRGB training resolution; the packed RGGB input is
    half of it.  LFEF gates are allocated for that size and resampled in
    frequency for other sizes.
    """

    base_channels: int = 16
    image_size: int = 64
    inn_blocks: int = 2
    use_inn: bool = True
    use_lfef: bool = True
    use_ttt: bool = True
    ttt_dim: int = 32
    ttt_key_dim: int = 32
    patch_size: int = 4
    eta_init: float = 0.1
    causal: bool = True
    input_frames: int = 1
    identity_init: bool = False
    seed: int = 0
    scales: tuple[float, ...] = field(default=SCALES)

    def __post_init__(self):
        self.scales = tuple(self.scales)
        if self.scales != SCALES:
            raise ValueError(f"scales are fixed to {SCALES}")
        if self.input_frames not in (1, 3):
            raise ValueError("input_frames must be 1 (single image) or 3 (naive neighbour fusion)")
        if self.base_channels < 2:
            raise ValueError("base_channels must be >= 2 for the coupling split")
        self.check_input_size(self.image_size // 2, self.image_size // 2)

    @property
    def in_channels(self) -> int:
        return 4 * self.input_frames

    def check_input_size(self, h: int, w: int) -> None:
        """RGGB plane dims must be powers of two and leave whole patches at 1/4 scale."""
        if not (_is_pow2(h) and _is_pow2(w)):
            raise ValueError(f"RGGB input dims must be powers of two, got {h}x{w}")
        if h % (4 * self.patch_size) or w % (4 * self.patch_size):
            raise ValueError(f"RGGB input dims {h}x{w} must be divisible by 4 * patch_size = {4 * self.patch_size}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown NetworkConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetworkConfig":
        return cls.from_dict(json.loads(text))
