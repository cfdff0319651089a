"""Synthetic speech-like corpus and strict 16 kHz PCM16 WAV I/O."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

SAMPLE_RATE = 16000
NUM_HARMONICS = 10
# breathy noise mixed into voiced segments, relative to the harmonic RMS
ASPIRATION_LEVEL = 0.2


class WavFormatError(ValueError):
    pass


def load_wav(path) -> np.ndarray:
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            if channels != 1:
                raise WavFormatError(f"channels: expected 1, got {channels}")
            if rate != SAMPLE_RATE:
                raise WavFormatError(f"sample_rate: expected {SAMPLE_RATE}, got {rate}")
            if width != 2:
                raise WavFormatError(f"encoding: expected PCM16, got {8 * width}-bit samples")
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"encoding: expected PCM16 RIFF/WAVE ({exc})") from None
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def to_pcm16(audio) -> np.ndarray:
    scaled = np.asarray(audio, dtype=np.float64) * 32768.0
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(rounded, -32768, 32767).astype("<i2")


def save_wav(path, audio) -> None:
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(to_pcm16(audio).tobytes())


def _envelope(n: int, ramp: int) -> np.ndarray:
    env = np.ones(n)
    ramp = min(ramp, n // 2)
    if ramp:
        rise = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = rise
        env[n - ramp:] = rise[::-1]
    return env


def _formant_gain(freqs: np.ndarray, formants, bandwidths) -> np.ndarray:
    gain = np.full_like(freqs, 0.02)
    for f, bw, amp in zip(formants, bandwidths, (1.0, 0.6, 0.3)):
        gain += amp * np.exp(-0.5 * ((freqs - f) / bw) ** 2)
    return gain


def _voiced(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    f_start, f_end = rng.uniform(80.0, 300.0, size=2)
    f0 = np.geomspace(f_start, f_end, n)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    formants = (rng.uniform(300, 900), rng.uniform(900, 2400), rng.uniform(2200, 3500))
    bandwidths = (rng.uniform(60, 150), rng.uniform(80, 200), rng.uniform(100, 250))
    out = np.zeros(n)
    for h in range(1, NUM_HARMONICS + 1):
        freq = h * f0
        gain = _formant_gain(freq, formants, bandwidths) / h**0.5
        gain[freq >= 0.45 * sr] = 0.0
        out += gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    # ten harmonics of a low f0 leave the upper bands empty; aspiration fills them
    sos = butter(1, [200.0, 6000.0], btype="bandpass", fs=sr, output="sos")
    breath = sosfilt(sos, rng.standard_normal(n))
    return out + ASPIRATION_LEVEL * np.std(out) / np.std(breath) * breath


def _burst(rng: np.random.Generator, n: int, sr: int) -> np.ndarray:
    lo = rng.uniform(150, 800)
    hi = min(lo + rng.uniform(3000, 6000), 0.45 * sr)
    sos = butter(4, [lo, hi], btype="bandpass", fs=sr, output="sos")
    noise = sosfilt(sos, rng.standard_normal(n))
    t = np.arange(n) / sr
    am = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(4, 12) * t + rng.uniform(0, 2 * np.pi))
    return noise * am


def synth_utterance(rng: np.random.Generator, duration_s: float, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Voiced glides with formant-shaped harmonics, noise bursts and pauses."""
    total = int(round(duration_s * sr))
    out = np.zeros(total)
    pos = int(rng.uniform(0.05, 0.15) * sr)
    while pos < total:
        kind = rng.choice(3, p=(0.6, 0.2, 0.2))
        if kind == 0:
            n = int(rng.uniform(0.15, 0.45) * sr)
            seg = _voiced(rng, n, sr) * rng.uniform(0.5, 1.0)
        elif kind == 1:
            n = int(rng.uniform(0.05, 0.15) * sr)
            seg = _burst(rng, n, sr) * rng.uniform(0.2, 0.5)
        else:
            pos += int(rng.uniform(0.05, 0.2) * sr)
            continue
        n = min(n, total - pos)
        out[pos:pos + n] += seg[:n] * _envelope(n, int(0.01 * sr))
        pos += n
    peak = np.max(np.abs(out))
    return out * (0.5 / peak) if peak > 0 else out


def generate_audio(seed: int, count: int, duration_s: float) -> list[np.ndarray]:
    if count < 1:
        raise ValueError("count must be >= 1")
    if duration_s < 1.0:
        raise ValueError("duration must be at least 1 s")
    children = np.random.SeedSequence(seed).spawn(count)
    return [synth_utterance(np.random.default_rng(c), duration_s) for c in children]


def gen_corpus(seed: int, count: int, duration_s: float, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, audio in enumerate(generate_audio(seed, count, duration_s)):
        path = out_dir / f"utt{i:04d}.wav"
        save_wav(path, audio)
        paths.append(path)
    return paths


def load_corpus(path) -> dict[str, np.ndarray]:
    """All ``*.wav`` files in a directory, keyed by file stem, in sorted order."""
    files = sorted(Path(path).glob("*.wav"))
    if not files:
        raise FileNotFoundError(f"no .wav files under {path}")
    return {f.stem: load_wav(f) for f in files}
