"""Fixed-width serialization of code sequences and a binary symmetric channel.

Codes are written frame-major, slot order within a frame, each one
most-significant-bit first in ``ceil(log2(slot_size))`` bits.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

BITS_MAGIC = b"NBITS1"
CODES_MAGIC = b"NCODE1"


def slot_width(size: int) -> int:
    if size < 1:
        raise ValueError("slot size must be >= 1")
    return (int(size) - 1).bit_length()


@dataclass(frozen=True)
class CodeSequence:
    codes: np.ndarray
    slot_sizes: tuple[int, ...]
    quantizer_id: str = ""

    def __post_init__(self):
        codes = np.array(self.codes, dtype=np.int64)
        if codes.ndim == 1:
            codes = codes[:, None]
        sizes = tuple(int(s) for s in self.slot_sizes)
        if codes.ndim != 2 or codes.shape[1] != len(sizes):
            raise ValueError(f"codes shape {codes.shape} does not match {len(sizes)} slots")
        if any(s < 1 or s > 2**32 for s in sizes):
            raise ValueError("slot sizes must lie in [1, 2**32]")
        if codes.size and (np.any(codes < 0) or np.any(codes >= np.asarray(sizes))):
            raise ValueError("code outside its slot range")
        codes.flags.writeable = False
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "slot_sizes", sizes)

    @property
    def num_frames(self) -> int:
        return self.codes.shape[0]

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(slot_width(s) for s in self.slot_sizes)

    @property
    def bits_per_frame(self) -> int:
        return sum(self.widths)

    def with_codes(self, codes) -> "CodeSequence":
        return CodeSequence(codes, self.slot_sizes, self.quantizer_id)

    def __eq__(self, other):
        if not isinstance(other, CodeSequence):
            return NotImplemented
        return (self.slot_sizes == other.slot_sizes and self.quantizer_id == other.quantizer_id
                and np.array_equal(self.codes, other.codes))

    def to_bytes(self) -> bytes:
        t, s = self.codes.shape
        sizes = [sz % 2**32 for sz in self.slot_sizes]
        head = CODES_MAGIC + struct.pack(f"<II{s}I", t, s, *sizes)
        return head + self.codes.astype("<u4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, quantizer_id: str = "") -> "CodeSequence":
        if data[:6] != CODES_MAGIC:
            raise ValueError("not an NCODE1 file")
        t, s = struct.unpack_from("<II", data, 6)
        sizes = struct.unpack_from(f"<{s}I", data, 14)
        start = 14 + 4 * s
        if len(data) != start + 4 * t * s:
            raise ValueError("NCODE1 payload length does not match header")
        codes = np.frombuffer(data[start:], dtype="<u4").reshape(t, s).astype(np.int64)
        # the file stores a slot size of 2**32 as 0
        sizes = tuple(sz or 2**32 for sz in sizes)
        return cls(codes, sizes, quantizer_id)


@dataclass(frozen=True)
class BitString:
    """One ``uint8`` per bit (0 or 1)."""

    bits: np.ndarray
    length: int = field(init=False)

    def __post_init__(self):
        bits = np.array(self.bits, dtype=np.uint8).ravel()
        if np.any(bits > 1):
            raise ValueError("bits must be 0 or 1")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "length", int(bits.size))

    def __eq__(self, other):
        if not isinstance(other, BitString):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __str__(self):
        return "".join("1" if b else "0" for b in self.bits)

    def to_bytes(self) -> bytes:
        return BITS_MAGIC + struct.pack("<Q", self.length) + np.packbits(self.bits).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitString":
        if data[:6] != BITS_MAGIC:
            raise ValueError("not an NBITS1 file")
        (n,) = struct.unpack_from("<Q", data, 6)
        payload = np.frombuffer(data[14:], dtype=np.uint8)
        if payload.size != (n + 7) // 8:
            raise ValueError("NBITS1 payload length does not match header")
        return cls(np.unpackbits(payload)[:n])


@dataclass(frozen=True)
class ChannelSpec:
    p_flip: float
    seed: int = 0
    stream_id: str = ""

    def __post_init__(self):
        if not 0.0 <= self.p_flip <= 1.0:
            raise ValueError(f"p_flip must lie in [0, 1], got {self.p_flip}")


def _slot_bits(values: np.ndarray, width: int) -> np.ndarray:
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    return ((values.astype(np.uint64)[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)


def pack_codes(seq: CodeSequence) -> BitString:
    widths = seq.widths
    columns = [_slot_bits(seq.codes[:, s], w) for s, w in enumerate(widths) if w]
    if not columns:
        return BitString(np.zeros(0, dtype=np.uint8))
    return BitString(np.concatenate(columns, axis=1).ravel())


def unpack_codes(bits: BitString, template: CodeSequence) -> CodeSequence:
    """Inverse of :func:`pack_codes` for the frame count and slots of ``template``.

    A decoded word that lands outside a non-power-of-two slot is wrapped
    modulo the slot size.
    """
    widths = template.widths
    per_frame = sum(widths)
    t = template.num_frames
    if bits.length != t * per_frame:
        raise ValueError(f"expected {t * per_frame} bits, got {bits.length}")
    grid = bits.bits.reshape(t, per_frame) if per_frame else np.zeros((t, 0), np.uint8)
    codes = np.zeros((t, len(widths)), dtype=np.int64)
    pos = 0
    for s, w in enumerate(widths):
        field_bits = grid[:, pos:pos + w].astype(np.uint64)
        weights = np.uint64(1) << np.arange(w - 1, -1, -1, dtype=np.uint64)
        words = (field_bits * weights).sum(axis=1, dtype=np.uint64)
        codes[:, s] = (words % np.uint64(template.slot_sizes[s])).astype(np.int64)
        pos += w
    return template.with_codes(codes)


def channel_key(seed: int, stream_id: str) -> np.ndarray:
    digest = hashlib.sha256(f"{int(seed)}\x1f{stream_id}".encode()).digest()
    return np.frombuffer(digest[:16], dtype="<u8").astype(np.uint64)


def channel_uniforms(ch: ChannelSpec, start: int, count: int) -> np.ndarray:
    """Uniforms in [0, 1) for absolute bit positions ``start .. start+count-1``.

    Philox is counter based: block ``c`` carries positions ``4c .. 4c+3``, so
    any position can be regenerated without touching the ones before it.
    """
    if count == 0:
        return np.zeros(0)
    block, skip = divmod(start, 4)
    counter = np.array([block, 0, 0, 0], dtype=np.uint64)
    gen = np.random.Philox(key=channel_key(ch.seed, ch.stream_id), counter=counter)
    raw = gen.random_raw(skip + count)[skip:]
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53


def flip_mask(ch: ChannelSpec, length: int, start: int = 0) -> np.ndarray:
    if ch.p_flip == 0.0:
        return np.zeros(length, dtype=bool)
    if ch.p_flip == 1.0:
        return np.ones(length, dtype=bool)
    return channel_uniforms(ch, start, length) < ch.p_flip


def bsc_transmit(bits: BitString, ch: ChannelSpec, start: int = 0) -> BitString:
    """Flip each bit independently with probability ``ch.p_flip``.

    ``start`` is the absolute position of ``bits[0]`` in the stream, so a long
    stream can be pushed through in chunks with an identical result.
    """
    mask = flip_mask(ch, bits.length, start)
    return BitString(bits.bits ^ mask.astype(np.uint8))


def flip_bits(bits: BitString, positions) -> BitString:
    out = bits.bits.copy()
    out[np.asarray(positions, dtype=np.int64)] ^= 1
    return BitString(out)


def corrupt_sequence(seq: CodeSequence, ch: ChannelSpec) -> CodeSequence:
    return unpack_codes(bsc_transmit(pack_codes(seq), ch), seq)
