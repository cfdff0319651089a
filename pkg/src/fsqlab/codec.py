"""Deterministic desk-scale codec: windowed DCT analysis, a linear projection
into a bounded latent, an FSQ or RVQ bottleneck, and weighted overlap-add
synthesis.

The teacher encoder is a PCA projection of the retained DCT coefficients;
the student is a single linear map from the windowed frame to the latent
(see :mod:`fsqlab.distill`). Both share the frozen FSQ grid and decoder.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.fft import dct, idct

from .bitstream import CodeSequence
from .fsq import FsqSpec, fsq_dequantize, fsq_index_decode, fsq_index_encode, fsq_quantize, make_fsq_spec
from .rvq import RvqSpec, read_rvq_block, rvq_dequantize, rvq_quantize, train_rvq

MAGIC = b"NDSK1"
BOTTLENECKS = ("fsq", "rvq")


@dataclass(frozen=True)
class CodecConfig:
    sample_rate: int = 16000
    frame_len: int = 64
    hop: int = 32
    dct_keep: int = 32
    fsq_dims: int = 8
    bottleneck: str = "fsq"
    fsq_levels: tuple[int, ...] = (4,) * 8
    rvq_codebooks: int = 2
    rvq_size: int = 256
    # latent normalizer, in standard deviations of each projected dimension
    scale_sigmas: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "fsq_levels", tuple(int(n) for n in self.fsq_levels))
        if self.frame_len != 2 * self.hop:
            raise ValueError("frame_len must equal 2 * hop")
        if not 1 <= self.dct_keep <= self.frame_len:
            raise ValueError("dct_keep must lie in [1, frame_len]")
        if not 1 <= self.fsq_dims <= self.dct_keep:
            raise ValueError("fsq_dims must lie in [1, dct_keep]")
        if len(self.fsq_levels) != self.fsq_dims:
            raise ValueError("one FSQ level count per latent dimension is required")
        if self.bottleneck not in BOTTLENECKS:
            raise ValueError(f"bottleneck must be one of {BOTTLENECKS}")
        if not self.scale_sigmas > 0:
            raise ValueError("scale_sigmas must be positive")

    @property
    def fsq_spec(self) -> FsqSpec:
        return make_fsq_spec(self.fsq_levels)


@dataclass(frozen=True)
class TeacherEncoder:
    basis: np.ndarray  # dct_keep x fsq_dims, orthonormal columns
    dim_scale: np.ndarray  # fsq_dims, > 0

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=np.float64)
        scale = np.asarray(self.dim_scale, dtype=np.float64)
        if basis.ndim != 2 or scale.shape != (basis.shape[1],):
            raise ValueError("basis/scale shapes disagree")
        if not np.allclose(basis.T @ basis, np.eye(basis.shape[1]), atol=1e-9, rtol=0):
            raise ValueError("basis columns are not orthonormal")
        if np.any(scale <= 0):
            raise ValueError("dim_scale must be strictly positive")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "dim_scale", scale)


@dataclass(frozen=True)
class StudentEncoder:
    weight: np.ndarray  # frame_len x fsq_dims

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        if w.ndim != 2 or not np.all(np.isfinite(w)):
            raise ValueError("student weight must be a finite matrix")
        object.__setattr__(self, "weight", w)


@dataclass(frozen=True)
class LatentSequence:
    h: np.ndarray

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.h, dtype=np.float64))
        if not np.all(np.isfinite(h)):
            raise ValueError("latents must be finite")
        object.__setattr__(self, "h", h)

    @property
    def shape(self):
        return self.h.shape


def window(config: CodecConfig) -> np.ndarray:
    """Square root of the half-sample-shifted Hann window, i.e. a sine window.

    Its square satisfies w[n]**2 + w[n + hop]**2 == 1, so analysis and
    synthesis with it at 50% overlap reconstruct exactly.
    """
    n = np.arange(config.frame_len)
    return np.sin(np.pi * (n + 0.5) / config.frame_len)


def num_frames(length: int, config: CodecConfig) -> int:
    return -(-length // config.hop)


def frame_signal(audio, config: CodecConfig) -> np.ndarray:
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1 or audio.size == 0:
        raise ValueError("audio must be a non-empty mono signal")
    if not np.all(np.isfinite(audio)):
        raise ValueError("audio contains non-finite samples")
    t = num_frames(audio.size, config)
    padded = np.zeros((t + 1) * config.hop)
    padded[:audio.size] = audio
    idx = np.arange(t)[:, None] * config.hop + np.arange(config.frame_len)[None, :]
    return padded[idx] * window(config)


def overlap_add(frames, config: CodecConfig, length: int | None = None) -> np.ndarray:
    """Synthesis-window each frame and overlap-add at ``hop`` spacing.

    The default output has ``T * hop`` samples, which covers every sample the
    frames were analysed from.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != config.frame_len:
        raise ValueError(f"frames must be shaped (T, {config.frame_len})")
    t = frames.shape[0]
    out = np.zeros((t + 1) * config.hop)
    windowed = frames * window(config)
    hop = config.hop
    out[:t * hop] += windowed[:, :hop].ravel()
    out[hop:(t + 1) * hop] += windowed[:, hop:].ravel()
    if length is None:
        length = t * hop
    return out[:length]


def analysis_coefficients(audio, config: CodecConfig) -> np.ndarray:
    """Retained orthonormal DCT-II coefficients per frame, shape (T, dct_keep)."""
    return dct(frame_signal(audio, config), type=2, norm="ortho", axis=1)[:, :config.dct_keep]


def synthesize(coeffs, config: CodecConfig, length: int | None = None) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    full = np.zeros((coeffs.shape[0], config.frame_len))
    full[:, :coeffs.shape[1]] = coeffs
    return overlap_add(idct(full, type=2, norm="ortho", axis=1), config, length)


def dct_matrix(config: CodecConfig) -> np.ndarray:
    """Rows are the orthonormal DCT-II basis functions (frame_len x frame_len)."""
    return dct(np.eye(config.frame_len), type=2, norm="ortho", axis=0)


def fit_teacher_from_coefficients(coeffs, config: CodecConfig) -> TeacherEncoder:
    """PCA of retained DCT coefficients.

    The second-moment matrix is taken about the origin so that silence maps
    to the zero latent. Eigenvectors come in descending eigenvalue order and
    are signed so their largest-magnitude entry is positive.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[0] < 10 * config.dct_keep:
        raise ValueError(f"need at least {10 * config.dct_keep} frames, got {coeffs.shape[0]}")
    moment = coeffs.T @ coeffs / coeffs.shape[0]
    evals, evecs = np.linalg.eigh(moment)
    order = np.argsort(evals, kind="stable")[::-1]
    evals, evecs = evals[order], evecs[:, order]
    k = config.fsq_dims
    if evals[k - 1] <= 1e-12 * max(evals[0], 1e-300):
        raise ValueError(f"degenerate corpus: second-moment rank below {k}")
    basis = evecs[:, :k]
    peak = np.argmax(np.abs(basis), axis=0)
    basis = basis * np.sign(basis[peak, np.arange(k)])
    # re-orthonormalize away eigh round-off so the 1e-9 check is robust
    q, r = np.linalg.qr(basis)
    basis = q * np.sign(np.diag(r))
    proj = coeffs @ basis
    return TeacherEncoder(basis, config.scale_sigmas * proj.std(axis=0))


def corpus_coefficients(corpus, config: CodecConfig) -> np.ndarray:
    return np.concatenate([analysis_coefficients(a, config) for a in corpus])


def fit_teacher(corpus, config: CodecConfig, seed: int = 0) -> TeacherEncoder:
    # ``seed`` is accepted for a uniform training signature; the fit is closed form
    return fit_teacher_from_coefficients(corpus_coefficients(corpus, config), config)


def teacher_project(enc: TeacherEncoder, audio, config: CodecConfig) -> np.ndarray:
    """Scaled projection before the clamp."""
    return analysis_coefficients(audio, config) @ enc.basis / enc.dim_scale


def teacher_encode(enc: TeacherEncoder, audio, config: CodecConfig) -> LatentSequence:
    return LatentSequence(np.clip(teacher_project(enc, audio, config), -1.0, 1.0))


def teacher_linear_map(enc: TeacherEncoder, config: CodecConfig) -> np.ndarray:
    """The frame -> pre-clamp latent map of the teacher as one matrix (frame_len x fsq_dims)."""
    return dct_matrix(config)[:config.dct_keep].T @ enc.basis / enc.dim_scale


def decoder_matrix(enc: TeacherEncoder, config: CodecConfig) -> np.ndarray:
    """Frozen latent -> windowed-frame map (fsq_dims x frame_len)."""
    return (enc.basis * enc.dim_scale).T @ dct_matrix(config)[:config.dct_keep]


def student_encode(student: StudentEncoder, audio, config: CodecConfig) -> LatentSequence:
    return LatentSequence(np.clip(frame_signal(audio, config) @ student.weight, -1.0, 1.0))


@dataclass(frozen=True)
class DeskCodec:
    config: CodecConfig
    teacher: TeacherEncoder | None = None
    student: StudentEncoder | None = None
    rvq: RvqSpec | None = None
    name: str = field(default="", compare=False)

    @property
    def quantizer_id(self) -> str:
        if self.config.bottleneck == "fsq":
            return "fsq:" + "x".join(map(str, self.config.fsq_levels))
        if self.rvq is None:
            return "rvq:untrained"
        return f"rvq:{'x'.join(map(str, self.rvq.slot_sizes))}d{self.rvq.latent_dim}"

    @property
    def slot_sizes(self) -> tuple[int, ...]:
        if self.config.bottleneck == "fsq":
            return (self.config.fsq_spec.codebook_size,)
        self._require_rvq()
        return self.rvq.slot_sizes

    def _require_teacher(self):
        if self.teacher is None:
            raise ValueError("codec has no fitted teacher encoder")

    def _require_rvq(self):
        if self.rvq is None:
            raise ValueError("codec has no trained RVQ codebooks")

    def latents(self, audio) -> LatentSequence:
        """Pre-quantization encoder output: student when present, else teacher.

        On the RVQ path this is the raw retained-DCT frame.
        """
        if self.config.bottleneck == "rvq":
            return LatentSequence(analysis_coefficients(audio, self.config))
        self._require_teacher()
        if self.student is not None:
            return student_encode(self.student, audio, self.config)
        return teacher_encode(self.teacher, audio, self.config)

    def encode(self, audio) -> CodeSequence:
        h = self.latents(audio).h
        if self.config.bottleneck == "fsq":
            spec = self.config.fsq_spec
            codes = fsq_index_encode(spec, fsq_quantize(spec, h).levels)[:, None]
        else:
            self._require_rvq()
            codes = rvq_quantize(self.rvq, h)
        return CodeSequence(codes, self.slot_sizes, self.quantizer_id)

    def dequantize(self, seq: CodeSequence) -> np.ndarray:
        if seq.slot_sizes != self.slot_sizes:
            raise ValueError(f"code slots {seq.slot_sizes} do not match codec slots {self.slot_sizes}")
        if self.config.bottleneck == "fsq":
            spec = self.config.fsq_spec
            return fsq_dequantize(spec, fsq_index_decode(spec, seq.codes[:, 0]))
        return rvq_dequantize(self.rvq, seq.codes)

    def decode(self, seq: CodeSequence, length: int | None = None) -> np.ndarray:
        v = self.dequantize(seq)
        if self.config.bottleneck == "fsq":
            self._require_teacher()
            coeffs = (v * self.teacher.dim_scale) @ self.teacher.basis.T
        else:
            coeffs = v
        return synthesize(coeffs, self.config, length)

    def with_student(self, student: StudentEncoder | None, name: str = "") -> "DeskCodec":
        return replace(self, student=student, name=name or self.name)

    # --- NDSK1 serialization -------------------------------------------------

    def to_bytes(self) -> bytes:
        c = self.config
        out = [MAGIC, struct.pack("<5IBI", c.sample_rate, c.frame_len, c.hop, c.dct_keep, c.fsq_dims,
                                  BOTTLENECKS.index(c.bottleneck), len(c.fsq_levels)),
               struct.pack(f"<{len(c.fsq_levels)}I2Id", *c.fsq_levels, c.rvq_codebooks, c.rvq_size,
                           c.scale_sigmas)]
        for arrays in ((self.teacher.basis, self.teacher.dim_scale) if self.teacher else None,
                       (self.student.weight,) if self.student else None):
            out.append(struct.pack("<B", arrays is not None))
            if arrays is not None:
                out.extend(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
        out.append(struct.pack("<B", self.rvq is not None))
        if self.rvq is not None:
            out.append(self.rvq.to_bytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes, name: str = "") -> "DeskCodec":
        if data[:5] != MAGIC:
            raise ValueError("not an NDSK1 model file")
        pos = 5
        sr, flen, hop, keep, dims, bn, nlev = struct.unpack_from("<5IBI", data, pos)
        pos += struct.calcsize("<5IBI")
        *levels, q, k, sigmas = struct.unpack_from(f"<{nlev}I2Id", data, pos)
        pos += struct.calcsize(f"<{nlev}I2Id")
        config = CodecConfig(sr, flen, hop, keep, dims, BOTTLENECKS[bn], tuple(levels), q, k, sigmas)

        def take(shape):
            nonlocal pos
            n = int(np.prod(shape))
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape)
            pos += 8 * n
            return arr.astype(np.float64)

        def flag():
            nonlocal pos
            pos += 1
            return data[pos - 1]

        teacher = student = rvq = None
        if flag():
            teacher = TeacherEncoder(take((keep, dims)), take((dims,)))
        if flag():
            student = StudentEncoder(take((flen, dims)))
        if flag():
            rvq, pos = read_rvq_block(data, pos)
        if pos != len(data):
            raise ValueError("trailing bytes in NDSK1 model file")
        return cls(config, teacher, student, rvq, name)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, name: str = "") -> "DeskCodec":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), name)


def train_fsq_codec(corpus, config: CodecConfig | None = None, seed: int = 0, name: str = "fsq-desk") -> DeskCodec:
    config = config or CodecConfig()
    if config.bottleneck != "fsq":
        config = replace(config, bottleneck="fsq")
    return DeskCodec(config, teacher=fit_teacher(corpus, config, seed), name=name)


def train_rvq_codec(corpus, config: CodecConfig | None = None, seed: int = 0,
                    max_iters: int = 50, name: str = "rvq-desk") -> DeskCodec:
    config = replace(config or CodecConfig(), bottleneck="rvq")
    frames = corpus_coefficients(corpus, config)
    spec = train_rvq(frames, config.rvq_codebooks, config.rvq_size, max_iters, seed)
    return DeskCodec(config, rvq=spec, name=name)
