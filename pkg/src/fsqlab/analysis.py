"""Code-level divergence statistics between two encoders over the same audio."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitstream import CodeSequence
from .codec import LatentSequence
from .fsq import FsqSpec, fsq_index_decode


@dataclass(frozen=True)
class ConfusionMatrix:
    dim: int
    counts: np.ndarray  # rows: encoder A level, columns: encoder B level

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def within(self, radius: int = 1) -> float:
        """Fraction of mass within ``radius`` of the diagonal."""
        n = self.counts.shape[0]
        a, b = np.indices((n, n))
        return float(self.counts[np.abs(a - b) <= radius].sum() / max(self.total, 1))


@dataclass(frozen=True)
class CosineResult:
    mean: float
    skipped: int


def _check_pair(a: CodeSequence, b: CodeSequence):
    if a.codes.shape != b.codes.shape or a.slot_sizes != b.slot_sizes:
        raise ValueError("code sequences differ in shape or slot sizes")


def _levels(a: CodeSequence, b: CodeSequence, spec: FsqSpec) -> tuple[np.ndarray, np.ndarray]:
    _check_pair(a, b)
    if a.slot_sizes != (spec.codebook_size,):
        raise ValueError(f"not an FSQ sequence for levels {spec.levels}")
    return fsq_index_decode(spec, a.codes[:, 0]), fsq_index_decode(spec, b.codes[:, 0])


def exact_code_agreement(a: CodeSequence, b: CodeSequence) -> float:
    _check_pair(a, b)
    return float(np.mean(a.codes == b.codes))


def level_accuracy(a: CodeSequence, b: CodeSequence, spec: FsqSpec) -> tuple[np.ndarray, float]:
    """Per-dimension fraction of equal levels, and the overall fraction."""
    ka, kb = _levels(a, b, spec)
    per_dim = np.mean(ka == kb, axis=0)
    return per_dim, float(np.mean(ka == kb))


def within_level_rate(a: CodeSequence, b: CodeSequence, spec: FsqSpec, radius: int = 1) -> float:
    if radius < 0:
        raise ValueError("radius must be >= 0")
    ka, kb = _levels(a, b, spec)
    return float(np.mean(np.abs(ka - kb) <= radius))


def level_confusion(a: CodeSequence, b: CodeSequence, spec: FsqSpec, dim: int) -> ConfusionMatrix:
    if not 0 <= dim < spec.dim:
        raise ValueError(f"dim must lie in [0, {spec.dim})")
    ka, kb = _levels(a, b, spec)
    n = spec.levels[dim]
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (ka[:, dim], kb[:, dim]), 1)
    return ConfusionMatrix(dim, counts)


def mean_cosine_similarity(la, lb) -> CosineResult:
    a = la.h if isinstance(la, LatentSequence) else np.atleast_2d(np.asarray(la, dtype=np.float64))
    b = lb.h if isinstance(lb, LatentSequence) else np.atleast_2d(np.asarray(lb, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"latent shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    keep = (na > 0) & (nb > 0)
    if not keep.any():
        raise ValueError("every frame has a zero-norm latent")
    cos = np.sum(a[keep] * b[keep], axis=1) / (na[keep] * nb[keep])
    return CosineResult(float(np.mean(cos)), int((~keep).sum()))


def uniform_within_baseline(n: int, radius: int = 1) -> float:
    """Within-``radius`` rate for two independent uniform levels on ``n`` values."""
    a, b = np.indices((n, n))
    return float(np.mean(np.abs(a - b) <= radius))
