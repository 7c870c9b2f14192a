"""Sample-domain containers and utilities: WAV I/O, resampling, chunking, silence trimming."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal as sps

logger = logging.getLogger(__name__)

PIPELINE_RATES = (10000, 16000, 24000, 44100, 48000)

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


class WavFormatError(ValueError):
    """Raised for malformed or unsupported WAV files."""


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono audio: float64 samples plus sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"AudioBuffer is mono, got array of shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioBuffer samples must be finite")
        rate = int(self.sample_rate)
        if rate <= 0 or rate != self.sample_rate:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", rate)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples) -> "AudioBuffer":
        return AudioBuffer(samples, self.sample_rate)


# ---------------------------------------------------------------------------
# WAV I/O


def load_wav(path) -> AudioBuffer:
    """Read a RIFF/WAVE file (PCM16, PCM24, PCM32 or float32), averaging channels to mono.

    Integer PCM is scaled so that the most negative code maps to exactly -1.0.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise WavFormatError(f"{path}: truncated WAVE_FORMAT_EXTENSIBLE chunk")
                (sub_format,) = struct.unpack("<H", body[24:26])
                fmt = (sub_format,) + fmt[1:]
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if payload is None:
        raise WavFormatError(f"{path}: missing data chunk")
    format_tag, channels, rate, _, block_align, bits = fmt
    if channels < 1 or rate < 1:
        raise WavFormatError(f"{path}: invalid channel count or sample rate")
    if len(payload) == 0:
        raise WavFormatError(f"{path}: zero-length data chunk")

    width = bits // 8
    usable = len(payload) - len(payload) % (width * channels)
    raw = payload[:usable]
    if format_tag == _WAVE_FORMAT_PCM and bits == 16:
        frames = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif format_tag == _WAVE_FORMAT_PCM and bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        frames = ints.astype(np.float64) / float(1 << 23)
    elif format_tag == _WAVE_FORMAT_PCM and bits == 32:
        frames = np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    elif format_tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        frames = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    elif format_tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 64:
        frames = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported codec (format tag {format_tag}, {bits} bits)")

    if frames.size == 0:
        raise WavFormatError(f"{path}: zero-length data chunk")
    frames = frames.reshape(-1, channels).mean(axis=1)
    return AudioBuffer(frames, rate)


def save_wav(buffer: AudioBuffer, path, bit_depth=16) -> int:
    """Write ``buffer`` with a canonical 44-byte header.

    ``bit_depth`` is 16, 24 or ``"float32"`` (32 is accepted as an alias).
    Values outside [-1, 1] saturate for integer depths; returns the number of
    saturated samples.
    """
    x = buffer.samples
    saturated = 0
    if bit_depth in ("float32", "f32", 32):
        pcm = x.astype("<f4").tobytes()
        format_tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    elif bit_depth in (16, 24):
        full = float(1 << (bit_depth - 1))
        scaled = np.round(x * full)
        too_big = scaled > full - 1
        too_small = scaled < -full
        saturated = int(np.count_nonzero(too_big | too_small))
        ints = np.clip(scaled, -full, full - 1).astype(np.int32)
        if bit_depth == 16:
            pcm = ints.astype("<i2").tobytes()
        else:
            u = (ints & 0xFFFFFF).astype("<u4")
            pcm = u.view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
        format_tag, bits = _WAVE_FORMAT_PCM, bit_depth
    else:
        raise ValueError(f"unsupported bit depth {bit_depth!r}")
    if saturated:
        logger.warning("save_wav(%s): %d samples saturated", path, saturated)

    block_align = bits // 8
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, format_tag, 1, buffer.sample_rate,
        buffer.sample_rate * block_align, block_align, bits,
    )
    header += b"data" + struct.pack("<I", len(pcm))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pcm)
    return saturated


# ---------------------------------------------------------------------------
# Resampling

_HALF_TAPS_PER_PHASE = 32
_KAISER_BETA = 12.0


def _resample_filter(up: int, down: int) -> np.ndarray:
    # Each output phase sees 2 * _HALF_TAPS_PER_PHASE input samples (>= 64 taps per phase).
    factor = max(up, down)
    half_len = _HALF_TAPS_PER_PHASE * factor
    cutoff = 1.0 / factor
    # resample_poly applies the gain of ``up`` itself
    return sps.firwin(2 * half_len + 1, cutoff, window=("kaiser", _KAISER_BETA))


def resample(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited rational-ratio resampling with a Kaiser windowed-sinc filter."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == buffer.sample_rate:
        return buffer
    ratio = Fraction(target_rate, buffer.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    if len(buffer) == 0:
        return AudioBuffer(np.zeros(0), target_rate)
    taps = _resample_filter(up, down)
    y = sps.resample_poly(buffer.samples, up, down, window=taps)
    return AudioBuffer(y, target_rate)


# ---------------------------------------------------------------------------
# Chunking and silence removal


def chunk(buffer: AudioBuffer, chunk_seconds: float = 5.12, min_remainder_seconds: float = 1.0):
    """Split into consecutive non-overlapping chunks.

    A trailing remainder shorter than ``min_remainder_seconds`` is dropped.
    """
    if chunk_seconds <= 0:
        raise ValueError("chunk_seconds must be positive")
    size = int(round(chunk_seconds * buffer.sample_rate))
    min_tail = int(round(min_remainder_seconds * buffer.sample_rate))
    out = []
    for start in range(0, len(buffer), size):
        piece = buffer.samples[start:start + size]
        if len(piece) < size and len(piece) < min_tail:
            break
        out.append(AudioBuffer(piece, buffer.sample_rate))
    return out


@dataclass(frozen=True)
class TrimResult:
    buffer: AudioBuffer
    all_silent: bool


def trim_silence(
    buffer: AudioBuffer,
    threshold_db: float = -40.0,
    frame_ms: float = 20.0,
    hop_ms: float = 10.0,
    max_gap_s: float = 0.5,
    keep_gap_s: float = 0.2,
) -> TrimResult:
    """Frame-energy silence removal.

    Frames whose energy lies more than ``|threshold_db|`` below the loudest frame
    are silent. Leading and trailing silence is removed and interior silent runs
    longer than ``max_gap_s`` are shortened to ``keep_gap_s``.
    """
    if threshold_db >= 0:
        raise ValueError("threshold_db must be negative")
    rate = buffer.sample_rate
    x = buffer.samples
    frame = max(1, int(round(frame_ms * rate / 1000)))
    hop = max(1, int(round(hop_ms * rate / 1000)))
    if len(x) == 0 or not np.any(x):
        return TrimResult(AudioBuffer(np.zeros(0), rate), True)

    n_frames = max(1, 1 + math.ceil(max(len(x) - frame, 0) / hop))
    padded = np.pad(x, (0, (n_frames - 1) * hop + frame - len(x)))
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    energy = np.sum(padded[idx] ** 2, axis=1)
    with np.errstate(divide="ignore"):
        level = 10 * np.log10(energy)
    active = level >= level.max() + threshold_db

    # sample-level activity: a sample is voiced if any frame containing it is
    mask = np.zeros(len(padded), dtype=bool)
    for i in np.flatnonzero(active):
        mask[i * hop:i * hop + frame] = True
    mask = mask[:len(x)]

    voiced = np.flatnonzero(mask)
    first, last = voiced[0], voiced[-1] + 1
    mask = mask[first:last]
    x = x[first:last]

    keep = np.ones(len(x), dtype=bool)
    max_gap = int(round(max_gap_s * rate))
    keep_gap = int(round(keep_gap_s * rate))
    edges = np.diff(np.concatenate([[1], mask.astype(np.int8), [1]]))
    starts = np.flatnonzero(edges == -1)
    stops = np.flatnonzero(edges == 1)
    for s, e in zip(starts, stops):
        if e - s > max_gap:
            lead = keep_gap // 2
            keep[s + lead:e - (keep_gap - lead)] = False
    return TrimResult(AudioBuffer(x[keep], rate), False)
