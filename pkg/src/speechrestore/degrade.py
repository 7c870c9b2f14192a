"""Degradation synthesis: x = d((y + n) * h) with d = codec . lowpass . clip."""

from __future__ import annotations

import logging
import math
import os
import shlex
import subprocess
import tempfile
from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal as sps

from .audio import AudioBuffer, load_wav, save_wav

logger = logging.getLogger(__name__)

LN_1000 = math.log(1000.0)  # amplitude decay of 60 dB
MAX_T60 = 1.0


class CodecError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Room impulse responses


def synth_rir(t60_s: float, duration_s: float | None = None, rate: int = 48000, seed: int = 0,
              drr_db: float = 0.0) -> AudioBuffer:
    """Exponentially decaying white-noise impulse response with a unit direct path.

    The reverberant tail is scaled so that direct-to-reverberant energy ratio is
    ``drr_db``.
    """
    if not 0 < t60_s <= MAX_T60:
        raise ValueError(f"t60 must lie in (0, {MAX_T60}] s, got {t60_s}")
    if duration_s is None:
        duration_s = t60_s
    if duration_s < t60_s:
        raise ValueError("duration must be at least t60")
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    rng = np.random.default_rng(seed)
    tail = rng.standard_normal(n) * np.exp(-LN_1000 * t / t60_s)
    tail[0] = 0.0
    tail *= math.sqrt(10.0 ** (-drr_db / 10.0) / np.sum(tail ** 2))
    tail[0] = 1.0
    return AudioBuffer(tail, rate)


def apply_reverb(speech: AudioBuffer, rir: AudioBuffer) -> AudioBuffer:
    """Linear convolution (FFT overlap-add), truncated to the input length."""
    if speech.sample_rate != rir.sample_rate:
        raise ValueError(f"rate mismatch: speech {speech.sample_rate} Hz, rir {rir.sample_rate} Hz")
    if len(speech) == 0 or len(rir) == 0:
        return speech
    wet = sps.oaconvolve(speech.samples, rir.samples)[:len(speech)]
    return speech.with_samples(wet)


# ---------------------------------------------------------------------------
# Additive noise


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x ** 2))) if x.size else 0.0


def fit_noise(noise: AudioBuffer, length: int, seed: int) -> np.ndarray:
    """Random crop (longer noise) or loop (shorter noise) to ``length`` samples."""
    n = noise.samples
    if len(n) == 0:
        raise ValueError("empty noise buffer")
    if len(n) >= length:
        start = int(np.random.default_rng(seed).integers(0, len(n) - length + 1))
        return n[start:start + length]
    reps = -(-length // len(n))
    return np.tile(n, reps)[:length]


@dataclass(frozen=True, eq=False)
class Mixture:
    buffer: AudioBuffer
    scaled_noise: np.ndarray
    gain: float


def mix_at_snr(speech: AudioBuffer, noise: AudioBuffer, snr_db: float, seed: int = 0) -> Mixture:
    if speech.sample_rate != noise.sample_rate:
        raise ValueError("speech and noise sample rates differ")
    segment = fit_noise(noise, len(speech), seed)
    rms_s, rms_n = rms(speech.samples), rms(segment)
    if rms_s == 0:
        raise ValueError("speech has zero RMS")
    if math.isinf(snr_db) and snr_db > 0:
        scaled = np.zeros(len(speech))
        return Mixture(speech, scaled, 0.0)
    if rms_n == 0:
        raise ValueError("noise has zero RMS")
    gain = rms_s / rms_n * 10.0 ** (-snr_db / 20.0)
    scaled = gain * segment
    return Mixture(speech.with_samples(speech.samples + scaled), scaled, gain)


# ---------------------------------------------------------------------------
# Distortions d(.)


def clip(buffer: AudioBuffer, threshold: float) -> AudioBuffer:
    if not 0 < threshold <= 1:
        raise ValueError(f"clip threshold must be in (0, 1], got {threshold}")
    return buffer.with_samples(np.clip(buffer.samples, -threshold, threshold))


def lowpass(buffer: AudioBuffer, cutoff_hz: float, order: int = 8) -> AudioBuffer:
    """Zero-phase Butterworth low-pass (forward-backward second-order sections)."""
    nyquist = buffer.sample_rate / 2.0
    if not 0 < cutoff_hz < nyquist:
        raise ValueError(f"cutoff {cutoff_hz} Hz outside (0, {nyquist}) Hz")
    if len(buffer) == 0:
        return buffer
    sos = sps.butter(order, cutoff_hz, btype="low", fs=buffer.sample_rate, output="sos")
    return buffer.with_samples(sps.sosfiltfilt(sos, buffer.samples))


MU = 255


def mu_law_quantize(x, mu: int = MU) -> np.ndarray:
    """8-bit mu-law companding round trip (255 mid-tread levels)."""
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    companded = np.sign(x) * np.log1p(mu * np.abs(x)) / math.log1p(mu)
    codes = np.round(companded * 127.0)
    y = codes / 127.0
    return np.sign(y) * np.expm1(np.abs(y) * math.log1p(mu)) / mu


def codec_artifact(buffer: AudioBuffer, mode: str = "proxy", params: dict | None = None,
                   seed: int = 0) -> AudioBuffer:
    """Lossy-codec degradation.

    ``proxy``: band limit at U[4 kHz, 12 kHz] (or ``params['cutoff_hz']``) then
    8-bit mu-law. ``external``: round trip through ``params['encode']`` and
    ``params['decode']`` command templates using ``{input}``, ``{bitstream}``
    and ``{output}`` placeholders.
    """
    params = dict(params or {})
    if mode == "proxy":
        cutoff = params.get("cutoff_hz")
        if cutoff is None:
            cutoff = float(np.random.default_rng(seed).uniform(4000.0, 12000.0))
        cutoff = min(cutoff, 0.45 * buffer.sample_rate)
        if not np.any(buffer.samples):
            return buffer
        band_limited = lowpass(buffer, cutoff).samples
        return buffer.with_samples(mu_law_quantize(band_limited))
    if mode == "external":
        return _external_codec(buffer, params["encode"], params["decode"])
    raise ValueError(f"unknown codec mode {mode!r}")


def _run(template: str, **paths):
    argv = [tok.format(**paths) for tok in shlex.split(template)]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except FileNotFoundError as exc:
        raise CodecError(f"codec command not found: {argv[0]}") from exc
    if proc.returncode != 0:
        raise CodecError(f"codec command {argv[0]} exited with {proc.returncode}: {proc.stderr.strip()}")


def _external_codec(buffer: AudioBuffer, encode: str, decode: str) -> AudioBuffer:
    with tempfile.TemporaryDirectory(prefix="codec-") as tmp:
        paths = {
            "input": os.path.join(tmp, "in.wav"),
            "bitstream": os.path.join(tmp, "stream.bin"),
            "output": os.path.join(tmp, "out.wav"),
        }
        save_wav(buffer, paths["input"], "float32")
        _run(encode, **paths)
        _run(decode, **paths)
        decoded = load_wav(paths["output"])
    n = len(buffer)
    samples = decoded.samples[:n]
    if len(samples) < n:
        samples = np.pad(samples, (0, n - len(samples)))
    if decoded.sample_rate != buffer.sample_rate:
        raise CodecError(f"decoder changed sample rate to {decoded.sample_rate}")
    return buffer.with_samples(samples)


# ---------------------------------------------------------------------------
# Degradation parameters


@dataclass(frozen=True)
class DegradationSpec:
    snr_db: float
    t60_s: float
    apply_reverb: bool
    clip_threshold: float | None
    lowpass_hz: float | None
    codec: str  # "none" | "proxy" | "external"
    seed: int
    codec_cutoff_hz: float | None = None

    def __post_init__(self):
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError("snr_db must be finite or +inf")
        if not 0 < self.t60_s <= MAX_T60:
            raise ValueError(f"t60 {self.t60_s} outside (0, {MAX_T60}]")
        if self.clip_threshold is not None and not 0 < self.clip_threshold <= 1:
            raise ValueError("clip_threshold must be in (0, 1]")
        if self.codec not in ("none", "proxy", "external"):
            raise ValueError(f"unknown codec {self.codec!r}")

    def to_dict(self) -> dict:
        return asdict(self)


PROFILES = {
    "eval": dict(snr=(-5.0, 10.0), t60=(0.1, 0.5), p_reverb=1.0, p_clip=0.0, p_lowpass=0.0, p_codec=0.5),
    "train": dict(snr=(-5.0, 20.0), t60=(0.05, 1.0), p_reverb=0.5, p_clip=0.2, p_lowpass=0.3, p_codec=0.5),
}


def sample_degradation(profile: str = "eval", seed: int = 0, codec_mode: str = "proxy") -> DegradationSpec:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    p = PROFILES[profile]
    rng = np.random.default_rng(seed)
    # draw every variable unconditionally so the stream layout is fixed
    snr = rng.uniform(*p["snr"])
    t60 = rng.uniform(*p["t60"])
    reverb = rng.random() < p["p_reverb"]
    use_clip, clip_at = rng.random() < p["p_clip"], rng.uniform(0.25, 0.9)
    use_lp, lp_at = rng.random() < p["p_lowpass"], rng.uniform(2000.0, 8000.0)
    use_codec, codec_cut = rng.random() < p["p_codec"], rng.uniform(4000.0, 12000.0)
    return DegradationSpec(
        snr_db=float(snr),
        t60_s=float(max(t60, 1e-3)),
        apply_reverb=bool(reverb),
        clip_threshold=float(clip_at) if use_clip else None,
        lowpass_hz=float(lp_at) if use_lp else None,
        codec=codec_mode if use_codec else "none",
        seed=int(seed),
        codec_cutoff_hz=float(codec_cut) if use_codec else None,
    )


def degrade(clean: AudioBuffer, noise: AudioBuffer | None, rir: AudioBuffer | None,
            spec: DegradationSpec, codec_params: dict | None = None) -> AudioBuffer:
    """Mix at the requested SNR, reverberate, then clip, low-pass and codec in that order.

    When reverb is enabled but ``rir`` is None, one is synthesised from ``spec``.
    """
    if noise is not None and math.isfinite(spec.snr_db):
        x = mix_at_snr(clean, noise, spec.snr_db, seed=spec.seed).buffer
    else:
        x = clean
    if spec.apply_reverb:
        if rir is None:
            rir = synth_rir(spec.t60_s, spec.t60_s, clean.sample_rate, seed=spec.seed + 1)
        x = apply_reverb(x, rir)
    if spec.clip_threshold is not None:
        x = clip(x, spec.clip_threshold)
    if spec.lowpass_hz is not None and spec.lowpass_hz < x.sample_rate / 2:
        x = lowpass(x, spec.lowpass_hz)
    if spec.codec != "none":
        params = dict(codec_params or {})
        if spec.codec == "proxy" and spec.codec_cutoff_hz is not None:
            params.setdefault("cutoff_hz", spec.codec_cutoff_hz)
        x = codec_artifact(x, spec.codec, params, seed=spec.seed + 2)
    return x
