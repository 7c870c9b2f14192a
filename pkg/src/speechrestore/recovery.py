"""Recovery stage: resample to 16 kHz, normalise loudness, enhance in the STFT domain, invert."""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, stats

from .audio import AudioBuffer, load_wav, resample, save_wav
from .degrade import _run
from .loudness import DEFAULT_TARGET_LUFS, normalize_loudness
from .spectral import Spectrogram, istft, stft

logger = logging.getLogger(__name__)

RECOVERY_RATE = 16000
WINDOW_MS = 32.0
HOP_MS = 8.0


class EnhancerError(RuntimeError):
    pass


class IdentityEnhancer:
    descriptor = "identity"

    def enhance(self, spec: Spectrogram) -> Spectrogram:
        return spec


def noise_floor(magnitude, floor_percentile=10.0, median_bins=15):
    """Stationary noise power per frequency bin.

    The ``floor_percentile`` of each bin's magnitude over frames is converted to
    a mean-power estimate assuming complex Gaussian noise (|X|^2 exponential),
    then median filtered across frequency so that narrowband tones sustained
    over the whole excerpt are not mistaken for noise.
    """
    q = np.percentile(np.asarray(magnitude, dtype=np.float64), floor_percentile, axis=0)
    fraction = floor_percentile / 100.0
    scale = np.full(q.shape, -np.log1p(-fraction))
    # DC and Nyquist bins are real: |X|^2 is chi-square with one degree of freedom
    scale[[0, -1]] = stats.chi2.ppf(fraction, 1)
    power = q ** 2 / scale
    if median_bins > 1:
        power = ndimage.median_filter(power, size=median_bins, mode="reflect")
    return power


def spectral_gate_gain(magnitude, oversubtraction=1.5, floor_percentile=10.0, floor_db=-25.0,
                       smooth_frames=21, smooth_bins=1, presence_threshold=1.75, presence_bins=5):
    """Gain sqrt(max(0, 1 - beta * N_k / P)), clamped to [10^(floor_db/20), 1].

    ``P`` is the observed power averaged over ``smooth_frames`` x ``smooth_bins``;
    ``N_k`` comes from :func:`noise_floor`. Bins whose power over the wider
    ``smooth_frames`` x ``presence_bins`` neighbourhood stays below
    ``presence_threshold * N_k`` are treated as noise only and held at the floor,
    which keeps isolated noise peaks from leaking through the narrow estimate.
    """
    magnitude = np.asarray(magnitude, dtype=np.float64)
    noise = noise_floor(magnitude, floor_percentile)[None, :]
    mag2 = magnitude ** 2
    power = ndimage.uniform_filter(mag2, size=(smooth_frames, smooth_bins), mode="nearest")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(power > 0, noise / power, np.inf)
    floor = 10.0 ** (floor_db / 20.0)
    gain = np.clip(np.sqrt(np.maximum(0.0, 1.0 - oversubtraction * ratio)), floor, 1.0)
    if presence_threshold > 0:
        wide = ndimage.uniform_filter(mag2, size=(smooth_frames, presence_bins), mode="nearest")
        gain = np.where(wide > presence_threshold * noise, gain, floor)
    return gain


def spectral_gate_enhance(spec: Spectrogram, oversubtraction=1.5, floor_percentile=10.0,
                          floor_db=-25.0, **smoothing) -> Spectrogram:
    """Magnitude gating; the phase of every bin is left untouched."""
    gain = spectral_gate_gain(np.abs(spec.bins), oversubtraction, floor_percentile, floor_db, **smoothing)
    return spec.with_bins(spec.bins * gain)


@dataclass(frozen=True)
class SpectralGateEnhancer:
    oversubtraction: float = 1.5
    floor_percentile: float = 10.0
    floor_db: float = -25.0
    smooth_frames: int = 21
    smooth_bins: int = 1
    presence_threshold: float = 1.75
    presence_bins: int = 5

    @property
    def descriptor(self) -> str:
        return f"spectral_gate(beta={self.oversubtraction},p={self.floor_percentile},floor={self.floor_db}dB)"

    def enhance(self, spec: Spectrogram) -> Spectrogram:
        return spectral_gate_enhance(spec, self.oversubtraction, self.floor_percentile, self.floor_db,
                                     smooth_frames=self.smooth_frames, smooth_bins=self.smooth_bins,
                                     presence_threshold=self.presence_threshold,
                                     presence_bins=self.presence_bins)


@dataclass(frozen=True)
class ExternalEnhancer:
    """Runs a ``{input}`` -> ``{output}`` WAV command on the time-domain signal."""

    command: str

    @property
    def descriptor(self) -> str:
        return f"external({self.command})"

    def enhance(self, spec: Spectrogram) -> Spectrogram:
        audio = istft(spec)
        with tempfile.TemporaryDirectory(prefix="enhancer-") as tmp:
            src, dst = os.path.join(tmp, "in.wav"), os.path.join(tmp, "out.wav")
            save_wav(audio, src, "float32")
            try:
                _run(self.command, input=src, output=dst)
            except RuntimeError as exc:
                raise EnhancerError(str(exc)) from exc
            out = load_wav(dst)
        samples = out.samples[:len(audio)]
        samples = np.pad(samples, (0, len(audio) - len(samples)))
        hop_ms = spec.hop * 1000.0 / spec.sample_rate
        win_ms = spec.n_fft * 1000.0 / spec.sample_rate
        return spec.with_bins(stft(AudioBuffer(samples, spec.sample_rate), win_ms, hop_ms).bins)


def make_enhancer(name: str = "spectral_gate", **options):
    if name == "identity":
        return IdentityEnhancer()
    if name == "spectral_gate":
        return SpectralGateEnhancer(**options)
    if name == "external":
        return ExternalEnhancer(options["command"])
    raise ValueError(f"unknown enhancer {name!r}")


@dataclass(frozen=True)
class RecoveryResult:
    buffer: AudioBuffer
    gain: float
    loudness_skipped: bool


def recover(x: AudioBuffer, enhancer=None, target_lufs: float = DEFAULT_TARGET_LUFS) -> RecoveryResult:
    """Produce the 16 kHz intermediate estimate from a degraded input of any rate."""
    if enhancer is None:
        enhancer = SpectralGateEnhancer()
    x16 = resample(x, RECOVERY_RATE)
    try:
        norm = normalize_loudness(x16, target_lufs)
        normalized, gain, skipped = norm.buffer, norm.gain, norm.unmeasurable
    except ValueError:
        logger.warning("input too short for loudness measurement; skipping normalisation")
        normalized, gain, skipped = x16, 1.0, True
    spec = stft(normalized, WINDOW_MS, HOP_MS)
    try:
        enhanced = enhancer.enhance(spec)
    except EnhancerError:
        raise
    except Exception as exc:
        raise EnhancerError(f"{getattr(enhancer, 'descriptor', enhancer)!s} failed: {exc}") from exc
    if enhanced.bins.shape != spec.bins.shape or not np.all(np.isfinite(enhanced.bins)):
        raise EnhancerError("enhancer returned a spectrogram of wrong geometry or with non-finite values")
    return RecoveryResult(istft(enhanced), gain, skipped)
