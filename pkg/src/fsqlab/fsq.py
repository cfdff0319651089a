"""Finite scalar quantization.

Each latent dimension ``i`` is clamped to ``[-1, 1]`` and rounded to one of
``n_i`` equidistant levels. A level tuple is enumerated as a mixed-radix
number with dimension 0 as the least significant digit, so for power-of-two
level counts every dimension owns a contiguous bit field of the code index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

MAX_CODEBOOK_SIZE = 2**32

PRESETS = {
    "neucodec": (4, 4, 4, 4, 4, 4, 4, 4),
    "stablecodec": (8, 8, 8, 8, 4, 4),
}


@dataclass(frozen=True)
class FsqSpec:
    levels: tuple[int, ...]
    codebook_size: int = field(init=False)
    steps: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        levels = tuple(int(n) for n in self.levels)
        if not levels:
            raise ValueError("levels must be non-empty")
        if any(n < 2 for n in levels):
            raise ValueError(f"every level count must be >= 2, got {levels}")
        size = math.prod(levels)
        if size > MAX_CODEBOOK_SIZE:
            raise ValueError(f"codebook size {size} exceeds 2**32")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "codebook_size", size)
        object.__setattr__(self, "steps", tuple(2.0 / (n - 1) for n in levels))

    @property
    def dim(self) -> int:
        return len(self.levels)

    @property
    def index_bits(self) -> int:
        """Bits needed to carry one code index."""
        return max(1, (self.codebook_size - 1).bit_length())

    @property
    def radices(self) -> np.ndarray:
        """Place value of each dimension in the mixed-radix index."""
        return np.cumprod((1,) + self.levels[:-1], dtype=np.int64)

    def to_json(self) -> str:
        return json.dumps({"levels": list(self.levels)})

    @classmethod
    def from_json(cls, text: str) -> "FsqSpec":
        obj = json.loads(text)
        return make_fsq_spec(obj["levels"])


@dataclass(frozen=True)
class QuantizedVector:
    """Integer levels and their grid values; arrays may carry leading batch axes."""

    levels: np.ndarray
    values: np.ndarray


def make_fsq_spec(levels) -> FsqSpec:
    return FsqSpec(tuple(levels))


def preset(name: str) -> FsqSpec:
    try:
        return make_fsq_spec(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown FSQ preset {name!r}; choose from {sorted(PRESETS)}") from None


def _check_levels(spec: FsqSpec, k) -> np.ndarray:
    k = np.asarray(k, dtype=np.int64)
    if k.shape[-1:] != (spec.dim,):
        raise ValueError(f"expected trailing dimension {spec.dim}, got shape {k.shape}")
    n = np.asarray(spec.levels)
    if np.any(k < 0) or np.any(k >= n):
        raise ValueError("level out of range for spec")
    return k


def level_values(spec: FsqSpec, k) -> np.ndarray:
    n = np.asarray(spec.levels, dtype=np.float64)
    return -1.0 + 2.0 * np.asarray(k, dtype=np.float64) / (n - 1.0)


def fsq_quantize(spec: FsqSpec, x) -> QuantizedVector:
    """Round each coordinate of ``x`` (shape ``(..., d)``) to its nearest grid level.

    Ties go away from zero in level space, i.e. ``floor(y + 0.5)`` since the
    scaled coordinate ``y`` is never negative.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (spec.dim,):
        raise ValueError(f"expected trailing dimension {spec.dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    n = np.asarray(spec.levels, dtype=np.float64)
    y = (np.clip(x, -1.0, 1.0) + 1.0) / 2.0 * (n - 1.0)
    k = np.floor(y + 0.5).astype(np.int64)
    return QuantizedVector(levels=k, values=level_values(spec, k))


def fsq_dequantize(spec: FsqSpec, k) -> np.ndarray:
    return level_values(spec, _check_levels(spec, k))


def fsq_index_encode(spec: FsqSpec, k) -> np.ndarray | int:
    k = _check_levels(spec, k)
    index = k @ spec.radices
    return int(index) if index.ndim == 0 else index


def fsq_index_decode(spec: FsqSpec, index) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    if np.any(index < 0) or np.any(index >= spec.codebook_size):
        raise ValueError(f"index out of range [0, {spec.codebook_size})")
    n = np.asarray(spec.levels, dtype=np.int64)
    return (index[..., None] // spec.radices) % n


def bit_field(spec: FsqSpec, dim: int) -> tuple[int, int]:
    """Half-open range of index bits (LSB = 0) owned by ``dim``.

    Only defined when every level count is a power of two.
    """
    widths = []
    for n in spec.levels:
        if n & (n - 1):
            raise ValueError("bit fields require power-of-two level counts")
        widths.append(n.bit_length() - 1)
    lo = sum(widths[:dim])
    return lo, lo + widths[dim]
