"""Reference-based quality metrics: SI-SDR, classic STOI and log-mel MSE."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import firwin, get_window, resample_poly

SI_SDR_CAP_DB = 60.0
EPS = np.finfo(np.float64).eps

# classic STOI constants
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA_DB = -15.0
STOI_DYN_RANGE_DB = 40.0
RESAMPLER_TAPS = 64
RESAMPLER_BETA = 8.0


def _pair(reference, estimate) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if ref.ndim != 1 or ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {est.shape}")
    if ref.size == 0:
        raise ValueError("signals must be non-empty")
    return ref, est


def si_sdr(reference, estimate) -> float:
    """Scale-invariant SDR in dB after mean removal, capped at +60 dB."""
    ref, est = _pair(reference, estimate)
    ref = ref - ref.mean()
    est = est - est.mean()
    ref_energy = ref @ ref
    if ref_energy == 0.0:
        raise ValueError("reference is identically zero after mean removal")
    target = (est @ ref) / ref_energy * ref
    residual = target - est
    t_energy, r_energy = target @ target, residual @ residual
    if r_energy == 0.0 or t_energy >= r_energy * 10 ** (SI_SDR_CAP_DB / 10):
        return SI_SDR_CAP_DB
    if t_energy == 0.0:
        return -np.inf
    return float(10 * np.log10(t_energy / r_energy))


# --- STOI ---------------------------------------------------------------------


def _resample_to_stoi(x: np.ndarray, fs: int) -> np.ndarray:
    if fs == STOI_FS:
        return x
    from math import gcd

    g = gcd(int(fs), STOI_FS)
    up, down = STOI_FS // g, int(fs) // g
    if max(up, down) > 64:
        raise ValueError(f"sample rate {fs} Hz is not supported by the resampler")
    taps = firwin(RESAMPLER_TAPS, 1.0 / max(up, down), window=("kaiser", RESAMPLER_BETA))
    return resample_poly(x, up, down, window=taps)


def _stoi_window() -> np.ndarray:
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _frames(x: np.ndarray, hop: int) -> np.ndarray:
    # frame starts stay strictly below len - frame, as in the reference implementation
    n = (x.size - STOI_FRAME - 1) // hop + 1
    if n <= 0:
        return np.zeros((0, STOI_FRAME))
    idx = np.arange(n)[:, None] * hop + np.arange(STOI_FRAME)[None, :]
    return x[idx] * _stoi_window()


def _remove_silent_frames(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames more than 40 dB below the loudest reference frame and
    overlap-add what is left back into signals."""
    hop = STOI_FRAME // 2
    xf, yf = _frames(x, hop), _frames(y, hop)
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + EPS)
    keep = energy > energy.max() - STOI_DYN_RANGE_DB if energy.size else energy.astype(bool)
    xf, yf = xf[keep], yf[keep]

    def ola(frames):
        out = np.zeros((len(frames) + 1) * hop)
        for i, f in enumerate(frames):
            out[i * hop:i * hop + STOI_FRAME] += f
        return out

    return ola(xf), ola(yf)


@lru_cache(maxsize=None)
def third_octave_matrix() -> np.ndarray:
    """Rectangular one-third-octave band matrix over the 512-point FFT bins."""
    freqs = np.linspace(0, STOI_FS, STOI_NFFT + 1)[:STOI_NFFT // 2 + 1]
    k = np.arange(STOI_BANDS)
    lo = STOI_MIN_FREQ * 2.0 ** ((2 * k - 1) / 6)
    hi = STOI_MIN_FREQ * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((STOI_BANDS, freqs.size))
    for i in range(STOI_BANDS):
        a = np.argmin((freqs - lo[i]) ** 2)
        b = np.argmin((freqs - hi[i]) ** 2)
        obm[i, a:b] = 1.0
    return obm


def _band_envelopes(x: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(_frames(x, STOI_FRAME // 2), n=STOI_NFFT, axis=1)
    return np.sqrt(third_octave_matrix() @ (np.abs(spec) ** 2).T)


def stoi(reference, estimate, sample_rate: int = 16000) -> float:
    ref, est = _pair(reference, estimate)
    ref = _resample_to_stoi(ref, sample_rate)
    est = _resample_to_stoi(est, sample_rate)
    ref, est = _remove_silent_frames(ref, est)
    x_env, y_env = _band_envelopes(ref), _band_envelopes(est)
    n_frames = x_env.shape[1]
    if n_frames < STOI_SEGMENT:
        raise ValueError("signal too short for STOI: need at least 384 ms of non-silent audio")

    # all 30-frame segments at once: (segments, bands, frames)
    idx = np.arange(STOI_SEGMENT, n_frames + 1)[:, None] + np.arange(-STOI_SEGMENT, 0)[None, :]
    x_seg = x_env[:, idx].transpose(1, 0, 2)
    y_seg = y_env[:, idx].transpose(1, 0, 2)
    gain = np.linalg.norm(x_seg, axis=2, keepdims=True) / (np.linalg.norm(y_seg, axis=2, keepdims=True) + EPS)
    y_norm = y_seg * gain
    clip = 10 ** (-STOI_BETA_DB / 20)
    y_prime = np.minimum(y_norm, x_seg * (1 + clip))

    x_c = x_seg - x_seg.mean(axis=2, keepdims=True)
    y_c = y_prime - y_prime.mean(axis=2, keepdims=True)
    x_c /= np.linalg.norm(x_c, axis=2, keepdims=True) + EPS
    y_c /= np.linalg.norm(y_c, axis=2, keepdims=True) + EPS
    return float(np.mean(np.sum(x_c * y_c, axis=2)))


# --- mel spectrogram ---------------------------------------------------------


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 16000
    fft_size: int = 1024
    hop: int = 256
    mel_bands: int = 80
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-5

    def __post_init__(self):
        if self.fft_size < 1 or self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two")
        if self.mel_bands < 1:
            raise ValueError("mel_bands must be >= 1")
        if not self.fmin < self.upper:
            raise ValueError("fmin must be below fmax")

    @property
    def upper(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else self.fmax


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(cfg: MelConfig) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.upper), cfg.mel_bands + 2))
    return edges[1:-1]


@lru_cache(maxsize=16)
def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular HTK-mel filters over rFFT bins, each summing to one."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.upper), cfg.mel_bands + 2))
    freqs = np.fft.rfftfreq(cfg.fft_size, 1.0 / cfg.sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    area = fb.sum(axis=1, keepdims=True)
    return np.divide(fb, area, out=np.zeros_like(fb), where=area > 0)


def stft_magnitude(audio, cfg: MelConfig) -> np.ndarray:
    audio = np.asarray(audio, dtype=np.float64)
    if audio.size < cfg.fft_size:
        raise ValueError(f"audio shorter than fft_size ({cfg.fft_size})")
    n = (audio.size - cfg.fft_size) // cfg.hop + 1
    idx = np.arange(n)[:, None] * cfg.hop + np.arange(cfg.fft_size)[None, :]
    win = get_window("hann", cfg.fft_size)
    return np.abs(np.fft.rfft(audio[idx] * win, axis=1))


def mel_spectrogram(audio, cfg: MelConfig = MelConfig()) -> np.ndarray:
    mel = stft_magnitude(audio, cfg) @ mel_filterbank(cfg).T
    return np.log10(np.maximum(mel, cfg.log_floor))


def mel_mse(reference, estimate, cfg: MelConfig = MelConfig()) -> float:
    ref, est = _pair(reference, estimate)
    diff = mel_spectrogram(ref, cfg) - mel_spectrogram(est, cfg)
    return float(np.mean(diff**2))
