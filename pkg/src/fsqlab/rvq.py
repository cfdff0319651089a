"""Residual vector quantization with codebooks fitted by residual k-means."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"RVQ1"
DEDUP_TOL = 1e-9
CONVERGENCE_TOL = 1e-6


@dataclass(frozen=True)
class RvqCodebook:
    codewords: np.ndarray

    def __post_init__(self):
        cw = np.array(self.codewords, dtype=np.float64, ndmin=2)
        if cw.ndim != 2 or cw.shape[0] < 1:
            raise ValueError("codebook needs shape (K, D) with K >= 1")
        if not np.all(np.isfinite(cw)):
            raise ValueError("codewords must be finite")
        if cw.shape[0] > 1:
            d2 = _sq_dists(cw, cw)
            d2[np.diag_indices_from(d2)] = np.inf
            if d2.min() <= DEDUP_TOL**2:
                raise ValueError("codebook contains duplicate codewords")
        cw.flags.writeable = False
        object.__setattr__(self, "codewords", cw)

    @property
    def size(self) -> int:
        return self.codewords.shape[0]

    @property
    def dim(self) -> int:
        return self.codewords.shape[1]


@dataclass(frozen=True)
class RvqSpec:
    codebooks: tuple[RvqCodebook, ...]
    latent_dim: int = field(init=False)

    def __post_init__(self):
        books = tuple(b if isinstance(b, RvqCodebook) else RvqCodebook(b) for b in self.codebooks)
        if not books:
            raise ValueError("need at least one codebook")
        dims = {b.dim for b in books}
        if len(dims) != 1:
            raise ValueError(f"codebooks disagree on latent dimension: {sorted(dims)}")
        object.__setattr__(self, "codebooks", books)
        object.__setattr__(self, "latent_dim", dims.pop())

    @property
    def slot_sizes(self) -> tuple[int, ...]:
        return tuple(b.size for b in self.codebooks)

    def to_bytes(self) -> bytes:
        sizes = {b.size for b in self.codebooks}
        if len(sizes) != 1:
            raise ValueError("binary format requires equal codebook sizes")
        header = MAGIC + struct.pack("<III", len(self.codebooks), sizes.pop(), self.latent_dim)
        body = np.stack([b.codewords for b in self.codebooks]).astype("<f8").tobytes()
        return header + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "RvqSpec":
        spec, used = read_rvq_block(data)
        if used != len(data):
            raise ValueError("trailing bytes after RVQ block")
        return spec


def read_rvq_block(data: bytes, offset: int = 0) -> tuple[RvqSpec, int]:
    """Parse an ``RVQ1`` block at ``offset``; return the spec and the end offset."""
    if data[offset:offset + 4] != MAGIC:
        raise ValueError("not an RVQ1 block")
    q, k, d = struct.unpack_from("<III", data, offset + 4)
    start = offset + 16
    end = start + 8 * q * k * d
    if len(data) < end:
        raise ValueError("truncated RVQ1 block")
    cw = np.frombuffer(data[start:end], dtype="<f8").reshape(q, k, d).astype(np.float64)
    return RvqSpec(tuple(RvqCodebook(c) for c in cw)), end


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # Exact per-pair differences: the expanded |x|^2 - 2xc + |c|^2 form can
    # misorder exact ties, which breaks the lowest-index rule.
    out = np.empty((x.shape[0], c.shape[0]))
    for start in range(0, x.shape[0], 256):
        diff = x[start:start + 256, None, :] - c[None, :, :]
        out[start:start + 256] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def _sq_dists_fast(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d2 = np.sum(x * x, axis=1)[:, None] - 2.0 * (x @ c.T) + np.sum(c * c, axis=1)[None, :]
    return np.maximum(d2, 0.0)


def nearest(x: np.ndarray, codewords: np.ndarray) -> np.ndarray:
    """Index of the nearest codeword per row; ``argmin`` keeps the lowest index on ties."""
    return np.argmin(_sq_dists(x, codewords), axis=1)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [points[rng.integers(len(points))]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            break
        idx = rng.choice(len(points), p=d2 / total)
        centers.append(points[idx])
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return np.array(centers)


@dataclass
class KMeansResult:
    codebook: RvqCodebook
    sse_history: list[float]
    iterations: int


def kmeans_fit(points, k: int, max_iters: int = 50, seed: int = 0) -> KMeansResult:
    """Lloyd's algorithm from a seeded k-means++ start.

    ``sse_history[j]`` is the within-cluster squared error of the assignment
    made at iteration ``j``, measured against the centroids it was assigned to.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if k < 1:
        raise ValueError("K must be >= 1")
    if len(np.unique(points, axis=0)) < k:
        raise ValueError(f"need at least {k} distinct points")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(points, k, rng)
    history: list[float] = []
    it = 0
    for it in range(1, max_iters + 1):
        dists = _sq_dists_fast(points, centers)
        assign = np.argmin(dists, axis=1)
        point_err = np.sum((points - centers[assign]) ** 2, axis=1)
        history.append(float(point_err.sum()))

        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, points)
        new = centers.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        taken = set()
        for j in np.flatnonzero(~filled):
            # reseed to the worst-served point not already used as a reseed
            for cand in np.argsort(-point_err, kind="stable"):
                if cand not in taken:
                    taken.add(cand)
                    new[j] = points[cand]
                    point_err[cand] = 0.0
                    break
        shift = np.sqrt(np.max(np.sum((new - centers) ** 2, axis=1)))
        centers = new
        if shift < CONVERGENCE_TOL:
            break
    return KMeansResult(RvqCodebook(centers), history, it)


def kmeans(points, k: int, max_iters: int = 50, seed: int = 0) -> RvqCodebook:
    return kmeans_fit(points, k, max_iters, seed).codebook


def train_rvq(frames, num_codebooks: int, codebook_size: int,
              max_iters: int = 50, seed: int = 0) -> RvqSpec:
    if num_codebooks < 1:
        raise ValueError("num_codebooks must be >= 1")
    residual = np.array(frames, dtype=np.float64)
    books = []
    for q in range(num_codebooks):
        book = kmeans(residual, codebook_size, max_iters, seed + q)
        residual = residual - book.codewords[nearest(residual, book.codewords)]
        books.append(book)
    return RvqSpec(tuple(books))


def rvq_quantize(spec: RvqSpec, x) -> np.ndarray:
    """Greedy stage-wise codes for ``x`` of shape ``(D,)`` or ``(N, D)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != spec.latent_dim:
        raise ValueError(f"expected latent dimension {spec.latent_dim}, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    residual = x.copy()
    codes = np.empty((x.shape[0], len(spec.codebooks)), dtype=np.int64)
    for q, book in enumerate(spec.codebooks):
        codes[:, q] = nearest(residual, book.codewords)
        residual -= book.codewords[codes[:, q]]
    return codes[0] if single else codes


def rvq_dequantize(spec: RvqSpec, codes) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    single = codes.ndim == 1
    codes = np.atleast_2d(codes)
    if codes.shape[1] != len(spec.codebooks):
        raise ValueError(f"expected {len(spec.codebooks)} codes per vector")
    out = np.zeros((codes.shape[0], spec.latent_dim))
    for q, book in enumerate(spec.codebooks):
        c = codes[:, q]
        if np.any(c < 0) or np.any(c >= book.size):
            raise ValueError(f"code out of range for codebook {q}")
        out += book.codewords[c]
    return out[0] if single else out
