"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line with the measured values."""

import csv
import os
import time

import numpy as np
import pytest

import conftest
from conftest import harmonic_speech, sine, write_corpus
from oracles import pooled_posterior_coefficients
from speechrestore.audio import AudioBuffer, load_wav
from speechrestore.cli import main as cli_main
from speechrestore.config import PipelineConfig
from speechrestore.degrade import mix_at_snr, synth_rir
from speechrestore.diffusion import (ddpm_sample, fit_linear_denoiser, forward_diffuse, gaussian_mmse_denoiser,
                                     make_schedule)
from speechrestore.latent import CodecConfig, decode_normalized, encode_normalized
from speechrestore.loudness import measure_lufs, normalize_loudness
from speechrestore.metrics import estoi, schroeder_t60, si_snr, spectrogram_ssim, ssim
from speechrestore.pipeline import run_pipeline
from speechrestore.recovery import recover
from speechrestore.spectral import istft, stft_samples


def record(number, title, ok, detail, elapsed, budget):
    in_time = elapsed < budget
    passed = bool(ok and in_time)
    line = f"{title}: {detail}; {elapsed:.2f} s (budget {budget:g} s)"
    conftest.ACCEPTANCE_RESULTS[number] = (passed, line)
    print(f"[{'PASS' if passed else 'FAIL'}] {number}. {line}")
    assert ok, line
    assert in_time, f"criterion {number} exceeded its {budget} s budget ({elapsed:.2f} s)"


def test_01_stft_round_trip():
    rng = np.random.default_rng(1)
    buffers = [rng.standard_normal(int(n)) for n in rng.integers(512, 16000, 100)]
    t0 = time.perf_counter()
    worst = 0.0
    for x in buffers:
        y = istft(stft_samples(x, 512, 128, 16000)).samples
        worst = max(worst, np.linalg.norm(y - x) / np.linalg.norm(x))
    elapsed = time.perf_counter() - t0
    record(1, "STFT round trip", worst < 1e-6, f"max rel. L2 error {worst:.2e} over 100 buffers", elapsed, 1.0)


def test_02_loudness():
    t0 = time.perf_counter()
    sine_lufs = measure_lufs(sine(997, 48000, 5.0)).integrated_lufs
    rng = np.random.default_rng(2)
    worst = 0.0
    for i in range(20):
        rate = [16000, 24000, 44100, 48000][i % 4]
        x = rng.standard_normal(int(rate * rng.uniform(1.0, 3.0))) * rng.uniform(0.005, 0.5)
        if i % 2:
            x *= np.repeat(rng.uniform(0.1, 1.0, 10), -(-len(x) // 10))[:len(x)]
        out = normalize_loudness(AudioBuffer(x, rate), -20.0).buffer
        worst = max(worst, abs(measure_lufs(out).integrated_lufs + 20.0))
    elapsed = time.perf_counter() - t0
    ok = abs(sine_lufs + 3.01) <= 0.1 and worst <= 0.2
    record(2, "Loudness", ok, f"997 Hz sine {sine_lufs:.3f} LUFS; normalisation max error {worst:.4f} LU",
           elapsed, 5.0)


def test_03_snr_mixer():
    speech = harmonic_speech(16000, 2.0)
    noise = AudioBuffer(np.random.default_rng(3).standard_normal(40000), 16000)
    t0 = time.perf_counter()
    worst = 0.0
    for snr in (-5.0, 0.0, 10.0):
        for seed in range(5):
            mix = mix_at_snr(speech, noise, snr, seed)
            achieved = 10 * np.log10(np.sum(speech.samples ** 2) / np.sum(mix.scaled_noise ** 2))
            worst = max(worst, abs(achieved - snr))
    elapsed = time.perf_counter() - t0
    record(3, "SNR mixer", worst < 0.01, f"max |achieved - target| {worst:.2e} dB", elapsed, 1.0)


def test_04_rir_t60():
    t0 = time.perf_counter()
    estimates = {t60: schroeder_t60(synth_rir(t60, 1.0, 48000, seed=0)).seconds for t60 in (0.1, 0.3, 0.5)}
    elapsed = time.perf_counter() - t0
    ok = all(abs(est - t60) <= 0.1 * t60 for t60, est in estimates.items())
    detail = ", ".join(f"{t60}->{est:.4f}" for t60, est in estimates.items())
    record(4, "RIR T60", ok, f"requested->estimated s: {detail}", elapsed, 5.0)


def test_05_forward_process():
    t0 = time.perf_counter()
    sched = make_schedule(1000, 1e-4, 0.02)
    rng = np.random.default_rng(5)
    variances = {}
    for t in (1, 500, 1000):
        z = rng.standard_normal(100000)
        variances[t] = forward_diffuse(z, t, rng.standard_normal(100000), sched).var()
    ab = sched.alpha_bar[1000]
    elapsed = time.perf_counter() - t0
    ok = all(abs(v - 1) <= 0.02 for v in variances.values()) and abs(ab - 4.0e-5) <= 0.05 * 4.0e-5
    detail = ", ".join(f"var(z_{t})={v:.4f}" for t, v in variances.items())
    record(5, "Forward diffusion", ok, f"{detail}, alpha_bar[1000]={ab:.4e}", elapsed, 10.0)


def test_06_gaussian_sampler():
    t0 = time.perf_counter()
    sched = make_schedule()
    den = gaussian_mmse_denoiser(3.0, 0.5, sched)
    full = ddpm_sample(den, None, sched, seed=6, shape=(10000,))
    strided = ddpm_sample(den, None, sched, step_count=50, seed=7, shape=(10000,))
    elapsed = time.perf_counter() - t0
    ok = abs(full.mean() - 3) <= 0.05 and abs(full.var() - 0.25) <= 0.02 and abs(strided.mean() - 3) <= 0.1
    record(6, "Gaussian-world sampler", ok,
           f"1000 steps mean {full.mean():.4f} var {full.var():.4f}; 50 steps mean {strided.mean():.4f}",
           elapsed, 60.0)


def test_07_denoiser_fit():
    t0 = time.perf_counter()
    sched = make_schedule()
    rng = np.random.default_rng(7)
    z_y = rng.standard_normal((100000, 1))
    worst = {}
    for name, tau, tol in (("uninformative", None, 1e-2), ("informative", 0.5, 2e-2)):
        z_0 = np.zeros_like(z_y) if tau is None else z_y + tau * rng.standard_normal(z_y.shape)
        den = fit_linear_denoiser(z_y, z_0, sched, seed=8)
        err = 0.0
        for b, (a, bb, c) in enumerate(den.coefficients):
            a_ref, b_ref = pooled_posterior_coefficients(sched.alpha_bar, den.edges[b], den.edges[b + 1], 1.0, tau)
            err = max(err, abs(a - a_ref), abs(bb - b_ref), abs(c))
        worst[name] = (err, tol)
    elapsed = time.perf_counter() - t0
    ok = all(err <= tol for err, tol in worst.values())
    detail = ", ".join(f"{k} max error {e:.2e} (tol {t:g})" for k, (e, t) in worst.items())
    record(7, "Denoiser fit vs Gaussian posterior", ok, detail, elapsed, 60.0)


def test_08_codec_round_trip():
    t0 = time.perf_counter()
    img = np.random.default_rng(8).uniform(-1, 1, (75, 128))
    full = decode_normalized(encode_normalized(img, CodecConfig(kept=256)))
    exact_err = np.max(np.abs(full - img))
    lat = encode_normalized(img, CodecConfig(kept=64))
    recon_err = np.sum((decode_normalized(lat, crop=False) - np.pad(img, ((0, 5), (0, 0)), mode="edge")) ** 2)
    padded = np.pad(img, ((0, 5), (0, 0)), mode="edge")
    truncated = np.sum(padded ** 2) - np.sum(lat.coeffs ** 2)
    parseval_gap = abs(recon_err - truncated)
    elapsed = time.perf_counter() - t0
    ok = exact_err < 1e-6 and parseval_gap < 1e-6
    record(8, "Codec round trip", ok,
           f"all-kept max error {exact_err:.2e}; kept=64 |err^2 - truncated energy| {parseval_gap:.2e}",
           elapsed, 1.0)


def test_09_recovery_efficacy():
    corpus = []
    for i in range(10):
        clean = harmonic_speech(16000, 2.0, f0=100 + 12 * i, seed=100 + i)
        rng = np.random.default_rng(200 + i)
        noise = rng.standard_normal(len(clean))
        if i % 2:  # coloured stationary noise on odd items
            noise = np.convolve(noise, np.ones(4) / 2.0, mode="same")
        corpus.append((clean, mix_at_snr(clean, AudioBuffer(noise, 16000), 0.0, seed=i).buffer))
    t0 = time.perf_counter()
    gains = []
    for clean, noisy in corpus:
        out = recover(noisy).buffer
        gains.append(si_snr(clean.samples, out.samples) - si_snr(clean.samples, noisy.samples))
    elapsed = time.perf_counter() - t0
    record(9, "Recovery efficacy", min(gains) >= 5.0,
           f"SI-SNR improvement min {min(gains):.2f} dB, mean {np.mean(gains):.2f} dB over 10 items", elapsed, 30.0)


def test_10_end_to_end_shapes(tmp_path):
    manifest = write_corpus(tmp_path, n_speech=3, seconds=1.5)
    cfg = PipelineConfig(manifest=str(manifest), out_dir=str(tmp_path / "runs"), plot=False)
    t0 = time.perf_counter()
    report = run_pipeline(cfg)
    elapsed = time.perf_counter() - t0
    problems = []
    for item in report["items"]:
        d = os.path.join(report["run_dir"], "items", item["item_id"])
        src = item["item_id"].split("_", 1)[1]
        source = load_wav(tmp_path / f"{src}.wav")
        rec = load_wav(os.path.join(d, "recovered.wav"))
        res = load_wav(os.path.join(d, "restored.wav"))
        if rec.sample_rate != 16000 or abs(rec.duration - source.duration) > 128 / 16000:
            problems.append(f"{src} recovered {rec.sample_rate} Hz {rec.duration:.4f} s")
        if res.sample_rate != 48000 or abs(res.duration - source.duration) > 512 / 48000:
            problems.append(f"{src} restored {res.sample_rate} Hz {res.duration:.4f} s")
    ok = report["n_failed"] == 0 and len(report["items"]) == 3 and not problems
    detail = "3 items: recovered 16 kHz, restored 48 kHz, durations within one hop" if ok else "; ".join(problems)
    record(10, "End-to-end shape contract", ok, detail, elapsed, 120.0)


def _metric_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_11_iterative_refinement(tmp_path):
    items = []
    for i in range(2):
        path = tmp_path / f"utt{i}.wav"
        from speechrestore.audio import save_wav
        save_wav(harmonic_speech(16000, 1.0, seed=i), path, "float32")
        items.append(path)
    t0 = time.perf_counter()
    identity_ok, full_ok = True, True
    for path in items:
        out = tmp_path / f"id-{path.stem}"
        assert cli_main(["refine", str(path), "--iterations", "5", "--stage", "identity", "--out", str(out),
                         "--no-plot"]) == 0
        rows = _metric_rows(out / "metrics.csv")
        values = {tuple(v for k, v in r.items() if k != "iteration") for r in rows}
        identity_ok &= len(rows) == 5 and len(values) == 1
    out = tmp_path / "full"
    assert cli_main(["refine", str(items[0]), "--iterations", "5", "--stage", "full", "--out", str(out),
                     "--no-plot"]) == 0
    full_rows = _metric_rows(out / "metrics.csv")
    full_ok = len(full_rows) == 5 and [int(r["iteration"]) for r in full_rows] == [1, 2, 3, 4, 5]
    elapsed = time.perf_counter() - t0
    record(11, "Iterative refinement", identity_ok and full_ok,
           "5 rows per item; identity-stage rows identical; full-stage run emits 5 rows", elapsed, 60.0)


def test_12_metric_sanity():
    t0 = time.perf_counter()
    x = harmonic_speech(16000, 3.0, seed=12)
    self_estoi = estoi(x, x)
    img = np.random.default_rng(12).uniform(size=(64, 80))
    self_ssim = ssim(img, img)
    spec_ssim = spectrogram_ssim(x, x, 48000)
    noise = AudioBuffer(np.random.default_rng(13).standard_normal(len(x)), 16000)
    y = mix_at_snr(x, noise, 5.0, 0).buffer.samples
    scale_gap = abs(si_snr(x.samples, 3.0 * y) - si_snr(x.samples, y))
    sweep = [estoi(x, mix_at_snr(x, noise, snr, 0).buffer) for snr in (-5.0, 0.0, 10.0)]
    elapsed = time.perf_counter() - t0
    ok = (abs(self_estoi - 1) <= 1e-6 and self_ssim == pytest.approx(1.0, abs=1e-12)
          and spec_ssim == pytest.approx(1.0, abs=1e-12) and scale_gap < 1e-9
          and sweep[0] < sweep[1] < sweep[2])
    record(12, "Metric sanity", ok,
           f"estoi(x,x)={self_estoi:.8f}, ssim(x,x)={self_ssim:.6f}, SI-SNR scale gap {scale_gap:.1e} dB, "
           f"eSTOI sweep -5/0/10 dB = {sweep[0]:.3f}/{sweep[1]:.3f}/{sweep[2]:.3f}", elapsed, 30.0)


def test_13_determinism(tmp_path):
    manifest = write_corpus(tmp_path, n_speech=2, seconds=1.0)
    t0 = time.perf_counter()
    reports = []
    for root, jobs in (("a", 1), ("b", 2)):
        cfg = PipelineConfig(manifest=str(manifest), out_dir=str(tmp_path / root), seed=13, jobs=jobs,
                             plot=False)
        reports.append(run_pipeline(cfg))
    elapsed = time.perf_counter() - t0
    run_a, run_b = (r["run_dir"] for r in reports)
    compared, differing = 0, []
    for dirpath, _, files in os.walk(run_a):
        for name in files:
            if name.endswith((".wav", ".csv")):
                rel = os.path.relpath(os.path.join(dirpath, name), run_a)
                with open(os.path.join(run_a, rel), "rb") as fa, open(os.path.join(run_b, rel), "rb") as fb:
                    if fa.read() != fb.read():
                        differing.append(rel)
                compared += 1
    ok = compared >= 10 and not differing
    record(13, "Determinism", ok,
           f"{compared} WAV/CSV files compared across two runs (jobs 1 and 2), {len(differing)} differ",
           elapsed, 120.0)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
