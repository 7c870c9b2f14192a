import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from speechrestore.audio import AudioBuffer
from speechrestore.loudness import measure_lufs, normalize_loudness
from conftest import harmonic_speech, sine


def test_silence_sentinel():
    res = measure_lufs(AudioBuffer(np.zeros(48000), 48000))
    assert res.integrated_lufs == -np.inf and res.gated_block_count == 0
    assert not res.measurable


def test_too_short():
    with pytest.raises(ValueError):
        measure_lufs(AudioBuffer(np.ones(100), 48000))


def test_full_scale_sine():
    assert abs(measure_lufs(sine(997, 48000, 5.0)).integrated_lufs - (-3.01)) <= 0.1


@pytest.mark.parametrize("seed", range(4))
def test_against_reference_meter(seed):
    pyln = pytest.importorskip("pyloudnorm")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(48000 * 3) * rng.uniform(0.01, 0.3)
    x *= np.repeat(rng.uniform(0.05, 1.0, 30), 4800)  # gating-relevant level changes
    ours = measure_lufs(AudioBuffer(x, 48000)).integrated_lufs
    ref = pyln.Meter(48000).integrated_loudness(x)
    assert abs(ours - ref) < 0.1


def test_halving_lowers_by_6db():
    x = harmonic_speech(16000, 3.0)
    a = measure_lufs(x).integrated_lufs
    b = measure_lufs(x.with_samples(0.5 * x.samples)).integrated_lufs
    assert abs((a - b) - 6.02) < 0.05


def test_gain_formula_and_idempotence():
    x = sine(500, 48000, 2.0, 0.3)
    at_minus10 = normalize_loudness(x, -10.0).buffer
    res = normalize_loudness(at_minus10, -20.0)
    assert abs(res.gain - 10 ** (-10 / 20)) < 1e-3
    again = normalize_loudness(res.buffer, -20.0)
    assert 0.999 <= again.gain <= 1.001


def test_silence_unchanged_with_flag():
    buf = AudioBuffer(np.zeros(16000), 16000)
    res = normalize_loudness(buf, -20.0)
    assert res.unmeasurable and res.buffer is buf


def test_over_range_reported_not_clipped():
    x = sine(500, 48000, 1.0, 0.5)
    res = normalize_loudness(x, 0.0)
    assert res.over_range_count > 0
    assert np.max(np.abs(res.buffer.samples)) > 1.0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(-40, -10), st.sampled_from([16000, 44100, 48000]))
def test_normalize_hits_target(seed, target, rate):
    rng = np.random.default_rng(seed)
    x = AudioBuffer(rng.standard_normal(rate) * rng.uniform(0.01, 0.5), rate)
    out = normalize_loudness(x, target).buffer
    assert abs(measure_lufs(out).integrated_lufs - target) <= 0.2


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 4.0))
def test_scale_covariance(a):
    x = harmonic_speech(16000, 1.5, seed=3)
    base = measure_lufs(x).integrated_lufs
    scaled = measure_lufs(x.with_samples(a * x.samples)).integrated_lufs
    assert abs(scaled - base - 20 * np.log10(a)) < 0.05
