"""STFT/iSTFT with a square-root Hann window, mel analysis and Griffin-Lim mel inversion."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .audio import AudioBuffer

DB_FLOOR = -100.0
_POWER_FLOOR = 10.0 ** (DB_FLOOR / 10.0)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Complex STFT, ``bins`` shaped ``[frames, n_fft // 2 + 1]``.

    Frames start ``n_fft - hop`` samples before the first input sample so that
    every input sample is covered by the full ``n_fft / hop`` frames; this keeps
    both perfect reconstruction and Parseval exact at the edges.
    """

    bins: np.ndarray
    n_fft: int
    hop: int
    sample_rate: int
    n_samples: int
    window: str = "sqrt_hann"

    @property
    def n_frames(self) -> int:
        return self.bins.shape[0]

    def with_bins(self, bins) -> "Spectrogram":
        bins = np.asarray(bins)
        if bins.shape != self.bins.shape:
            raise ValueError(f"geometry mismatch: {bins.shape} != {self.bins.shape}")
        return replace(self, bins=bins)


@dataclass(frozen=True)
class MelConfig:
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 128
    f_min: float = 0.0
    f_max: float = 24000.0
    sample_rate: int = 48000


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    """Mel power ``values`` shaped ``[frames, n_mels]`` in linear or dB scale.

    Linear values are power normalised so that a full-scale sinusoid centred on
    a band reads 1.0 (0 dB).
    """

    values: np.ndarray
    config: MelConfig = field(default_factory=MelConfig)
    scale: str = "linear"
    n_samples: int | None = None

    def to_db(self) -> "MelSpectrogram":
        if self.scale == "db":
            return self
        db = 10.0 * np.log10(np.maximum(self.values, _POWER_FLOOR))
        return replace(self, values=db, scale="db")

    def to_linear(self) -> "MelSpectrogram":
        if self.scale == "linear":
            return self
        lin = 10.0 ** (np.maximum(self.values, DB_FLOOR) / 10.0)
        lin = np.where(self.values <= DB_FLOOR, 0.0, lin)
        return replace(self, values=lin, scale="linear")


# ---------------------------------------------------------------------------
# STFT


def sqrt_hann(n_fft: int) -> np.ndarray:
    n = np.arange(n_fft)
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * n / n_fft))


def _check_geometry(n_fft: int, hop: int):
    if n_fft < 4 or n_fft & (n_fft - 1):
        raise ValueError(f"n_fft must be a power of two, got {n_fft}")
    if hop * 4 != n_fft:
        raise ValueError(f"hop must be n_fft / 4, got n_fft={n_fft}, hop={hop}")


def _frame_count(n_samples: int, n_fft: int, hop: int) -> int:
    return -(-n_samples // hop) + n_fft // hop - 1


def stft_samples(x, n_fft: int, hop: int, sample_rate: int = 0) -> Spectrogram:
    x = np.asarray(x, dtype=np.float64)
    _check_geometry(n_fft, hop)
    n = x.shape[0]
    if n < n_fft:
        raise ValueError(f"buffer of {n} samples is shorter than one window ({n_fft})")
    frames = _frame_count(n, n_fft, hop)
    lead = n_fft - hop
    padded = np.zeros((frames - 1) * hop + n_fft)
    padded[lead:lead + n] = x
    idx = hop * np.arange(frames)[:, None] + np.arange(n_fft)[None, :]
    bins = np.fft.rfft(padded[idx] * sqrt_hann(n_fft), axis=1)
    return Spectrogram(bins, n_fft, hop, sample_rate, n)


def stft(buffer: AudioBuffer, window_ms: float = 32.0, hop_ms: float = 8.0) -> Spectrogram:
    """STFT with window and hop given in milliseconds (32 ms / 8 ms at 16 kHz: 512 / 128)."""
    n_fft = int(round(window_ms * buffer.sample_rate / 1000.0))
    hop = int(round(hop_ms * buffer.sample_rate / 1000.0))
    return stft_samples(buffer.samples, n_fft, hop, buffer.sample_rate)


def _overlap_add(frames_td: np.ndarray, n_fft: int, hop: int, n_samples: int) -> np.ndarray:
    n_frames = frames_td.shape[0]
    out = np.zeros((n_frames - 1) * hop + n_fft)
    for k in range(n_fft // hop):
        # frames k, k + r, k + 2r, ... never overlap each other
        block = frames_td[k::n_fft // hop]
        seg = out[k * hop:k * hop + block.shape[0] * n_fft].reshape(block.shape[0], n_fft)
        seg += block
    # sum of squared sqrt-Hann windows at hop n_fft/4 is exactly 2
    lead = n_fft - hop
    return out[lead:lead + n_samples] / 2.0


def istft(spec: Spectrogram) -> AudioBuffer:
    bins = np.asarray(spec.bins)
    _check_geometry(spec.n_fft, spec.hop)
    if bins.ndim != 2 or bins.shape[1] != spec.n_fft // 2 + 1:
        raise ValueError(f"bins shape {bins.shape} inconsistent with n_fft={spec.n_fft}")
    if bins.shape[0] != _frame_count(spec.n_samples, spec.n_fft, spec.hop):
        raise ValueError("frame count inconsistent with n_samples")
    frames_td = np.fft.irfft(bins, n=spec.n_fft, axis=1) * sqrt_hann(spec.n_fft)
    x = _overlap_add(frames_td, spec.n_fft, spec.hop, spec.n_samples)
    return AudioBuffer(x, spec.sample_rate or 1)


def spectrogram_energy(spec: Spectrogram) -> float:
    """Signal energy implied by the STFT coefficients (equals the sum of squared samples)."""
    weights = np.full(spec.n_fft // 2 + 1, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    total = np.sum(weights * np.abs(spec.bins) ** 2)
    window_power = 2.0  # overlap sum of the squared analysis window
    return float(total / (spec.n_fft * window_power))


# ---------------------------------------------------------------------------
# Mel analysis


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate, n_fft, n_mels, f_min=0.0, f_max=None) -> np.ndarray:
    """HTK-scale triangular filterbank, shape ``[n_mels, n_fft // 2 + 1]``, unit peak."""
    if f_max is None:
        f_max = sample_rate / 2.0
    if not 0 <= f_min < f_max <= sample_rate / 2.0:
        raise ValueError(f"invalid mel range [{f_min}, {f_max}]")
    fft_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (fft_freqs[None, :] - lower) / (centre - lower)
    falling = (upper - fft_freqs[None, :]) / (upper - centre)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) == 0)
    for row in empty:
        # band narrower than an FFT bin: give it the nearest bin
        fb[row, np.argmin(np.abs(fft_freqs - centre[row, 0]))] = 1.0
    return fb


def _power_scale(n_fft: int) -> float:
    # |X| of a unit-amplitude sinusoid at a bin centre is sum(window) / 2
    return (sqrt_hann(n_fft).sum() / 2.0) ** 2


def mel_power(samples, sample_rate, n_fft, hop, n_mels, f_min=0.0, f_max=None) -> np.ndarray:
    spec = stft_samples(samples, n_fft, hop, sample_rate)
    fb = mel_filterbank(sample_rate, n_fft, n_mels, f_min, f_max)
    power = np.abs(spec.bins) ** 2 / _power_scale(n_fft)
    return power @ fb.T


def mel_spectrogram(buffer: AudioBuffer, config: MelConfig = MelConfig(), db: bool = False) -> MelSpectrogram:
    if buffer.sample_rate != config.sample_rate:
        raise ValueError(f"mel analysis expects {config.sample_rate} Hz input, got {buffer.sample_rate}")
    values = mel_power(buffer.samples, config.sample_rate, config.n_fft, config.hop,
                       config.n_mels, config.f_min, config.f_max)
    mel = MelSpectrogram(values, config, "linear", len(buffer))
    return mel.to_db() if db else mel


# ---------------------------------------------------------------------------
# Mel inversion


def _nnls_batch(fb: np.ndarray, targets: np.ndarray, iterations: int = 300) -> np.ndarray:
    """Solve min ||P fb^T - targets||^2 over P >= 0 for all rows at once (FISTA)."""
    step = 1.0 / np.linalg.norm(fb, 2) ** 2
    p = np.maximum(targets @ np.linalg.pinv(fb).T, 0.0)
    y, t = p.copy(), 1.0
    for _ in range(iterations):
        grad = (y @ fb.T - targets) @ fb
        p_next = np.maximum(y - step * grad, 0.0)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = p_next + ((t - 1.0) / t_next) * (p_next - p)
        p, t = p_next, t_next
    return p


def mel_to_magnitude(mel: MelSpectrogram) -> np.ndarray:
    values = mel.to_linear().values
    if np.any(values < 0):
        raise ValueError("mel values must be non-negative")
    cfg = mel.config
    fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.f_min, cfg.f_max)
    power = _nnls_batch(fb, values)
    return np.sqrt(power * _power_scale(cfg.n_fft))


def griffin_lim(magnitude, n_fft, hop, n_samples, sample_rate, iterations=60,
                momentum=0.99, seed=0, history=None) -> AudioBuffer:
    """Fast Griffin-Lim phase retrieval for a fixed STFT magnitude.

    If ``history`` is a list, the spectral convergence of each iteration is
    appended to it.
    """
    magnitude = np.asarray(magnitude, dtype=np.float64)
    rng = np.random.default_rng(seed)
    angles = np.exp(2j * np.pi * rng.random(magnitude.shape))
    template = Spectrogram(magnitude * angles, n_fft, hop, sample_rate, n_samples)
    ref_norm = np.linalg.norm(magnitude)
    previous = np.zeros_like(template.bins)
    for _ in range(iterations):
        audio = istft(template.with_bins(magnitude * angles))
        rebuilt = stft_samples(audio.samples, n_fft, hop, sample_rate).bins
        if history is not None and ref_norm > 0:
            history.append(float(np.linalg.norm(np.abs(rebuilt) - magnitude) / ref_norm))
        angles = rebuilt - (momentum / (1.0 + momentum)) * previous
        angles = angles / np.maximum(np.abs(angles), 1e-16)
        previous = rebuilt
    return istft(template.with_bins(magnitude * angles))


def invert_mel(mel: MelSpectrogram, gl_iterations: int = 60, momentum: float = 0.99,
               seed: int = 0, history=None) -> AudioBuffer:
    """Mel spectrogram to waveform: NNLS magnitude estimate, then Griffin-Lim phase."""
    if gl_iterations < 0:
        raise ValueError("gl_iterations must be >= 0")
    cfg = mel.config
    magnitude = mel_to_magnitude(mel)
    n_samples = mel.n_samples
    if n_samples is None:
        n_samples = (magnitude.shape[0] - cfg.n_fft // cfg.hop + 1) * cfg.hop
    if magnitude.shape[0] != _frame_count(n_samples, cfg.n_fft, cfg.hop):
        raise ValueError("mel frame count inconsistent with n_samples")
    return griffin_lim(magnitude, cfg.n_fft, cfg.hop, n_samples, cfg.sample_rate,
                       gl_iterations, momentum, seed, history)
