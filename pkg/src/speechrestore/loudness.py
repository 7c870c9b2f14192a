"""ITU-R BS.1770-4 integrated loudness and loudness normalisation (mono)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .audio import AudioBuffer, resample

logger = logging.getLogger(__name__)

MEASURE_RATE = 48000
DEFAULT_TARGET_LUFS = -20.0
STREAMING_TARGET_LUFS = -14.0

# K-weighting biquads at 48 kHz as published in BS.1770
_SHELF_B = np.array([1.53512485958697, -2.69169618940638, 1.19839281085285])
_SHELF_A = np.array([1.0, -1.69065929318241, 0.73248077421585])
_HIGHPASS_B = np.array([1.0, -2.0, 1.0])
_HIGHPASS_A = np.array([1.0, -1.99004745483398, 0.99007225036621])

BLOCK_S = 0.4
STEP_S = 0.1
ABSOLUTE_GATE = -70.0
RELATIVE_GATE = -10.0


@dataclass(frozen=True)
class LoudnessResult:
    integrated_lufs: float  # -inf when every block is gated out
    gated_block_count: int

    @property
    def measurable(self) -> bool:
        return np.isfinite(self.integrated_lufs)


def k_weight(samples: np.ndarray) -> np.ndarray:
    """Apply the K-weighting pre-filter to 48 kHz samples."""
    y = sps.lfilter(_SHELF_B, _SHELF_A, samples)
    return sps.lfilter(_HIGHPASS_B, _HIGHPASS_A, y)


def _block_powers(weighted: np.ndarray, rate: int) -> np.ndarray:
    block = int(round(BLOCK_S * rate))
    step = int(round(STEP_S * rate))
    n_blocks = (len(weighted) - block) // step + 1
    sq = np.concatenate([[0.0], np.cumsum(weighted ** 2)])
    starts = step * np.arange(n_blocks)
    return (sq[starts + block] - sq[starts]) / block


def _to_lufs(power):
    with np.errstate(divide="ignore"):
        return -0.691 + 10.0 * np.log10(power)


def measure_lufs(buffer: AudioBuffer) -> LoudnessResult:
    if buffer.duration < BLOCK_S:
        raise ValueError(f"need at least {BLOCK_S * 1000:.0f} ms of audio, got {buffer.duration * 1000:.1f} ms")
    x = resample(buffer, MEASURE_RATE).samples
    powers = _block_powers(k_weight(x), MEASURE_RATE)
    if powers.size == 0:
        raise ValueError("buffer too short after resampling")
    loudness = _to_lufs(powers)

    gated = powers[loudness > ABSOLUTE_GATE]
    if gated.size == 0:
        return LoudnessResult(float("-inf"), 0)
    relative = _to_lufs(gated.mean()) + RELATIVE_GATE
    gated = powers[(loudness > ABSOLUTE_GATE) & (loudness > relative)]
    if gated.size == 0:
        return LoudnessResult(float("-inf"), 0)
    return LoudnessResult(float(_to_lufs(gated.mean())), int(gated.size))


@dataclass(frozen=True)
class NormalizedAudio:
    buffer: AudioBuffer
    gain: float
    measured_lufs: float
    unmeasurable: bool = False
    over_range_count: int = 0


def normalize_loudness(buffer: AudioBuffer, target_lufs: float = DEFAULT_TARGET_LUFS) -> NormalizedAudio:
    """Scale ``buffer`` by one gain so its integrated loudness becomes ``target_lufs``.

    Silent (unmeasurable) input comes back unchanged with ``unmeasurable`` set.
    Samples pushed outside [-1, 1] are counted, not clipped.
    """
    measured = measure_lufs(buffer).integrated_lufs
    if not np.isfinite(measured):
        logger.warning("loudness unmeasurable; skipping normalisation")
        return NormalizedAudio(buffer, 1.0, measured, unmeasurable=True)
    gain = 10.0 ** ((target_lufs - measured) / 20.0)
    out = buffer.samples * gain
    over = int(np.count_nonzero(np.abs(out) > 1.0))
    if over:
        logger.info("loudness normalisation pushed %d samples beyond full scale", over)
    return NormalizedAudio(buffer.with_samples(out), float(gain), measured, False, over)
