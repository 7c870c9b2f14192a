import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from speechrestore.audio import AudioBuffer
from speechrestore.degrade import (CodecError, DegradationSpec, apply_reverb, clip, codec_artifact, degrade,
                                   lowpass, mix_at_snr, sample_degradation, synth_rir)
from speechrestore.metrics import schroeder_t60
from conftest import harmonic_speech, sine


def noise_buffer(n, rate=16000, seed=0, scale=1.0):
    return AudioBuffer(scale * np.random.default_rng(seed).standard_normal(n), rate)


def test_rir_envelope_constant():
    assert abs(20 * np.log10(math.exp(-6.9078)) + 60) < 1e-3


@pytest.mark.parametrize("t60", [0.1, 0.3, 0.5, 0.9])
def test_rir_t60(t60):
    est = schroeder_t60(synth_rir(t60, 1.0, 48000, seed=4))
    assert abs(est.seconds - t60) <= 0.1 * t60


def test_rir_structure_and_errors():
    h = synth_rir(0.3, 0.6, 16000, seed=1)
    assert h.samples[0] == 1.0
    assert abs(np.sum(h.samples[1:] ** 2) - 1.0) < 1e-9  # 0 dB direct-to-reverberant
    for bad in (0.0, -0.1, 1.2):
        with pytest.raises(ValueError):
            synth_rir(bad)


def test_reverb_identity_and_shift():
    x = noise_buffer(2000)
    unit = AudioBuffer(np.array([1.0]), 16000)
    assert np.array_equal(apply_reverb(x, unit).samples, x.samples)
    k = 37
    delta = AudioBuffer(np.eye(1, k + 1, k).ravel(), 16000)
    out = apply_reverb(x, delta).samples
    np.testing.assert_allclose(out[k:], x.samples[:-k], atol=1e-12)
    assert np.max(np.abs(out[:k])) < 1e-12
    with pytest.raises(ValueError):
        apply_reverb(x, AudioBuffer(np.ones(3), 48000))


def test_reverb_matches_direct_convolution():
    x = noise_buffer(1600, seed=1)
    h = synth_rir(0.1, 0.1, 16000, seed=2)
    ref = np.convolve(x.samples, h.samples)[:len(x)]
    out = apply_reverb(x, h).samples
    assert np.linalg.norm(out - ref) / np.linalg.norm(ref) < 1e-6


def test_mix_gain_examples():
    s = AudioBuffer(np.full(100, 0.2) * np.sign(np.sin(np.arange(100) + 0.5)), 16000)
    n = AudioBuffer(np.full(100, 0.1) * np.sign(np.cos(np.arange(100) + 0.5)), 16000)
    assert abs(mix_at_snr(s, n, 20.0).gain - 0.2) < 1e-12
    same = AudioBuffer(np.full(100, 0.2) * np.sign(np.cos(np.arange(100) + 0.5)), 16000)
    assert abs(mix_at_snr(s, same, 0.0).gain - 1.0) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(-10, 30), st.integers(0, 10 ** 6), st.integers(200, 5000))
def test_mix_remeasured_snr(snr, seed, noise_len):
    s = harmonic_speech(16000, 0.3, seed=seed % 7)
    mix = mix_at_snr(s, noise_buffer(noise_len, seed=seed), snr, seed)
    achieved = 10 * np.log10(np.sum(s.samples ** 2) / np.sum(mix.scaled_noise ** 2))
    assert abs(achieved - snr) < 0.01
    np.testing.assert_allclose(mix.buffer.samples, s.samples + mix.scaled_noise)


def test_mix_errors():
    s = noise_buffer(100)
    with pytest.raises(ValueError):
        mix_at_snr(AudioBuffer(np.zeros(100), 16000), s, 0)
    with pytest.raises(ValueError):
        mix_at_snr(s, AudioBuffer(np.zeros(100), 16000), 0)


def test_clip():
    x = sine(100, 16000, 0.5, 0.8)
    assert np.array_equal(clip(x, 1.0).samples, x.samples)
    zeros = AudioBuffer(np.zeros(10), 16000)
    assert not np.any(clip(zeros, 0.3).samples)
    s = sine(250, 16000, 1.0, 1.0)
    out = clip(s, 0.5).samples
    assert np.max(np.abs(out)) == 0.5
    spec = np.abs(np.fft.rfft(out))
    assert 20 * np.log10(spec[750] / spec[250]) > -20


def test_lowpass_response():
    rate, cutoff = 48000, 4000
    pass_tone = sine(cutoff / 4, rate, 1.0)
    stop_tone = sine(2 * cutoff, rate, 1.0)
    a = lowpass(pass_tone, cutoff).samples[4800:-4800]
    b = lowpass(stop_tone, cutoff).samples[4800:-4800]
    ref = pass_tone.samples[4800:-4800]
    assert abs(20 * np.log10(np.sqrt(np.mean(a ** 2) / np.mean(ref ** 2)))) < 0.1
    assert 20 * np.log10(np.sqrt(np.mean(b ** 2) / np.mean(ref ** 2))) <= -48
    dc = lowpass(AudioBuffer(np.full(4800, 0.3), rate), cutoff).samples
    np.testing.assert_allclose(dc, 0.3, atol=1e-9)
    with pytest.raises(ValueError):
        lowpass(pass_tone, 30000)


def test_codec_proxy():
    zeros = AudioBuffer(np.zeros(4800), 48000)
    assert not np.any(codec_artifact(zeros, "proxy").samples)
    x = harmonic_speech(48000, 0.5)
    out = codec_artifact(x, "proxy", seed=3).samples
    for start in range(0, len(out) - 2048, 2048):
        assert len(np.unique(out[start:start + 2048])) <= 256
    assert np.array_equal(out, codec_artifact(x, "proxy", seed=3).samples)


def test_codec_external_identity(tmp_path):
    x = AudioBuffer(np.random.default_rng(0).uniform(-1, 1, 3000).astype(np.float32), 16000)
    params = {"encode": "cp {input} {bitstream}", "decode": "cp {bitstream} {output}"}
    out = codec_artifact(x, "external", params)
    assert np.array_equal(out.samples, x.samples)


def test_codec_external_failures():
    x = AudioBuffer(np.zeros(100), 16000)
    with pytest.raises(CodecError):
        codec_artifact(x, "external", {"encode": "definitely-not-a-binary-xyz {input}", "decode": "true"})
    with pytest.raises(CodecError):
        codec_artifact(x, "external", {"encode": "false", "decode": "true"})


def test_sample_degradation_determinism_and_ranges():
    assert sample_degradation("eval", 5) == sample_degradation("eval", 5)
    specs = [sample_degradation("eval", s) for s in range(10000)]
    snr = np.array([s.snr_db for s in specs])
    t60 = np.array([s.t60_s for s in specs])
    codec = np.mean([s.codec != "none" for s in specs])
    assert abs(snr.mean() - 2.5) < 0.2
    assert abs(codec - 0.5) < 0.02
    assert t60.min() >= 0.1 and t60.max() <= 0.5
    assert snr.min() >= -5 and snr.max() <= 10


def test_train_profile_ranges():
    specs = [sample_degradation("train", s) for s in range(3000)]
    assert max(s.t60_s for s in specs) <= 1.0
    assert max(s.snr_db for s in specs) <= 20
    assert abs(np.mean([s.clip_threshold is not None for s in specs]) - 0.2) < 0.03
    assert abs(np.mean([s.lowpass_hz is not None for s in specs]) - 0.3) < 0.03
    with pytest.raises(ValueError):
        sample_degradation("bogus", 0)


def test_spec_validation():
    with pytest.raises(ValueError):
        DegradationSpec(0.0, 1.5, True, None, None, "none", 0)
    with pytest.raises(ValueError):
        DegradationSpec(0.0, 0.3, True, 1.5, None, "none", 0)
    with pytest.raises(ValueError):
        DegradationSpec(float("nan"), 0.3, True, None, None, "none", 0)


def test_degrade_identity_path():
    clean = harmonic_speech(16000, 0.5)
    spec = DegradationSpec(math.inf, 0.3, False, None, None, "none", 0)
    out = degrade(clean, noise_buffer(len(clean)), None, spec)
    assert np.array_equal(out.samples, clean.samples)


def test_degrade_reverb_only_unit_impulse():
    clean = harmonic_speech(16000, 0.5)
    noise = noise_buffer(len(clean), seed=9)
    spec = DegradationSpec(5.0, 0.3, True, None, None, "none", 1)
    out = degrade(clean, noise, AudioBuffer(np.array([1.0]), 16000), spec)
    expected = mix_at_snr(clean, noise, 5.0, seed=1).buffer
    np.testing.assert_array_equal(out.samples, expected.samples)


def test_convolution_linearity():
    y = harmonic_speech(16000, 0.3).samples
    n = 1e-3 * np.random.default_rng(0).standard_normal(len(y))
    h = synth_rir(0.2, 0.2, 16000, seed=5)
    conv = lambda s: apply_reverb(AudioBuffer(s, 16000), h).samples  # noqa: E731
    assert np.linalg.norm(conv(y + n) - (conv(y) + conv(n))) < 1e-9


def test_degrade_deterministic():
    clean = harmonic_speech(16000, 0.5)
    noise = noise_buffer(len(clean) * 2, seed=4)
    spec = sample_degradation("train", 17)
    a = degrade(clean, noise, None, spec)
    b = degrade(clean, noise, None, spec)
    assert np.array_equal(a.samples, b.samples)
