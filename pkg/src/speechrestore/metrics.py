"""Objective evaluation: eSTOI, mel-spectrogram SSIM, SI-SNR, Schroeder T60, refinement reports."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, fields

import numpy as np
from scipy import ndimage

from .audio import AudioBuffer, resample
from .spectral import DB_FLOOR, mel_power

SSIM_RATES = (16000, 24000, 44100, 48000)
SI_SNR_CAP_DB = 60.0
_EPS = np.finfo(np.float64).eps


# ---------------------------------------------------------------------------
# eSTOI

ESTOI_RATE = 10000
_FRAME = 256
_NFFT = 512
_N_BANDS = 15
_MIN_FREQ = 150.0
_SEGMENT = 30  # frames, 384 ms at 10 kHz
_DYN_RANGE = 40.0


def third_octave_bands(rate=ESTOI_RATE, n_fft=_NFFT, n_bands=_N_BANDS, min_freq=_MIN_FREQ):
    """One-third-octave band matrix ``[n_bands, n_fft // 2 + 1]`` snapped to FFT bins."""
    f = np.linspace(0, rate, n_fft + 1)[:n_fft // 2 + 1]
    k = np.arange(n_bands, dtype=np.float64)
    low = min_freq * 2.0 ** ((2 * k - 1) / 6)
    high = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((n_bands, len(f)))
    for i in range(n_bands):
        lo = int(np.argmin((f - low[i]) ** 2))
        hi = int(np.argmin((f - high[i]) ** 2))
        obm[i, lo:hi] = 1.0
    return obm


def _frames(x, frame, hop, window):
    starts = range(0, len(x) - frame + 1, hop)
    return np.array([window * x[i:i + frame] for i in starts]).reshape(-1, frame)


def _remove_silent_frames(x, y, dyn_range=_DYN_RANGE, frame=_FRAME, hop=_FRAME // 2):
    w = np.hanning(frame + 2)[1:-1]
    xf, yf = _frames(x, frame, hop, w), _frames(y, frame, hop, w)
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > energy.max() - dyn_range
    xf, yf = xf[keep], yf[keep]

    def ola(frames):
        out = np.zeros((len(frames) - 1) * hop + frame) if len(frames) else np.zeros(0)
        for i, fr in enumerate(frames):
            out[i * hop:i * hop + frame] += fr
        return out

    return ola(xf), ola(yf)


def _band_envelopes(x):
    w = np.hanning(_FRAME + 2)[1:-1]
    starts = range(0, len(x) - _FRAME, _FRAME // 2)
    spec = np.array([np.fft.rfft(w * x[i:i + _FRAME], n=_NFFT) for i in starts]).reshape(-1, _NFFT // 2 + 1)
    return np.sqrt(third_octave_bands() @ (np.abs(spec) ** 2).T)  # [bands, frames]


def _normalise(seg, axis):
    seg = seg - seg.mean(axis=axis, keepdims=True)
    norm = np.sqrt(np.sum(seg ** 2, axis=axis, keepdims=True))
    return seg / np.maximum(norm, _EPS)


def estoi(clean: AudioBuffer, processed: AudioBuffer) -> float:
    """Extended STOI at 10 kHz; both inputs are resampled internally and truncated to the shorter."""
    x = resample(clean, ESTOI_RATE).samples
    y = resample(processed, ESTOI_RATE).samples
    n = min(len(x), len(y))
    x, y = _remove_silent_frames(x[:n], y[:n])
    x_env, y_env = _band_envelopes(x), _band_envelopes(y)
    n_frames = x_env.shape[1]
    if n_frames < _SEGMENT:
        raise ValueError(f"need at least {_SEGMENT} active frames for eSTOI, got {n_frames}")
    idx = np.arange(_SEGMENT)[None, :] + np.arange(n_frames - _SEGMENT + 1)[:, None]
    x_seg = x_env[:, idx].transpose(1, 0, 2)  # [segments, bands, frames]
    y_seg = y_env[:, idx].transpose(1, 0, 2)
    x_n = _normalise(_normalise(x_seg, axis=2), axis=1)
    y_n = _normalise(_normalise(y_seg, axis=2), axis=1)
    return float(np.sum(x_n * y_n) / (_SEGMENT * x_seg.shape[0]))


# ---------------------------------------------------------------------------
# SSIM

SSIM_N_FFT = 1024
SSIM_HOP = 256
SSIM_N_MELS = 64
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2
_SIGMA = 1.5
_TRUNCATE = 3.5  # radius int(3.5 * 1.5 + 0.5) = 5, an 11x11 window


def _local_mean(img):
    return ndimage.gaussian_filter(img, _SIGMA, truncate=_TRUNCATE, mode="reflect")


def ssim_terms(a, b):
    """Per-pixel luminance and contrast-structure maps for images in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mu_a, mu_b = _local_mean(a), _local_mean(b)
    var_a = _local_mean(a * a) - mu_a ** 2
    var_b = _local_mean(b * b) - mu_b ** 2
    cov = _local_mean(a * b) - mu_a * mu_b
    luminance = (2 * mu_a * mu_b + _C1) / (mu_a ** 2 + mu_b ** 2 + _C1)
    contrast_structure = (2 * cov + _C2) / (var_a + var_b + _C2)
    return luminance, contrast_structure


def ssim(a, b) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5) between two equally shaped images."""
    if np.shape(a) != np.shape(b):
        raise ValueError(f"image shapes differ: {np.shape(a)} vs {np.shape(b)}")
    if np.size(a) == 0:
        raise ValueError("empty images")
    lum, cs = ssim_terms(a, b)
    return float(np.mean(lum * cs))


def mel_image(buffer: AudioBuffer, rate: int) -> np.ndarray:
    """dB mel spectrogram at ``rate`` mapped from [-100, 0] dB to [0, 1]."""
    x = resample(buffer, rate).samples
    if len(x) < SSIM_N_FFT:
        x = np.pad(x, (0, SSIM_N_FFT - len(x)))
    power = mel_power(x, rate, SSIM_N_FFT, SSIM_HOP, SSIM_N_MELS, 0.0, rate / 2.0)
    db = 10 * np.log10(np.maximum(power, 10 ** (DB_FLOOR / 10)))
    return np.clip((db - DB_FLOOR) / -DB_FLOOR, 0.0, 1.0)


def spectrogram_ssim(clean: AudioBuffer, processed: AudioBuffer, rate: int) -> float:
    x = resample(clean, rate)
    y = resample(processed, rate)
    n = min(len(x), len(y))
    if n == 0:
        raise ValueError("no overlapping samples")
    return ssim(mel_image(x.with_samples(x.samples[:n]), rate),
                mel_image(y.with_samples(y.samples[:n]), rate))


# ---------------------------------------------------------------------------
# SI-SNR


def si_snr(reference, estimate) -> float:
    """Scale-invariant SNR in dB, reported within +/-60 dB."""
    r = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    e = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    n = min(len(r), len(e))
    r, e = r[:n] - r[:n].mean(), e[:n] - e[:n].mean()
    ref_energy = np.dot(r, r)
    if ref_energy == 0:
        raise ValueError("reference has zero energy")
    target = np.dot(e, r) / ref_energy * r
    residual = e - target
    num, den = np.dot(target, target), np.dot(residual, residual)
    if den <= num * 10 ** (-SI_SNR_CAP_DB / 10):
        return SI_SNR_CAP_DB
    if num <= den * 10 ** (-SI_SNR_CAP_DB / 10):
        return -SI_SNR_CAP_DB
    return float(10 * np.log10(num / den))


# ---------------------------------------------------------------------------
# Reverberation time


@dataclass(frozen=True)
class T60Estimate:
    seconds: float
    flagged: bool = False  # decay too short to resolve the -5..-25 dB range


def energy_decay_curve(rir) -> np.ndarray:
    x = np.asarray(getattr(rir, "samples", rir), dtype=np.float64)
    edc = np.cumsum((x ** 2)[::-1])[::-1]
    if edc[0] == 0:
        raise ValueError("impulse response has no energy")
    with np.errstate(divide="ignore"):
        return 10 * np.log10(edc / edc[0])


def schroeder_t60(rir: AudioBuffer, fit_range=(-5.0, -25.0)) -> T60Estimate:
    """Schroeder backward integration; line fit of the decay curve between ``fit_range`` dB."""
    edc = energy_decay_curve(rir)
    hi, lo = fit_range
    idx = np.flatnonzero((edc <= hi) & (edc >= lo))
    if idx.size < 2:
        if np.all(edc[1:] < lo):
            return T60Estimate(0.0, flagged=True)
        raise ValueError("impulse response does not decay through the fit range")
    t = idx / rir.sample_rate
    slope, _ = np.polyfit(t, edc[idx], 1)
    if slope >= 0:
        raise ValueError("impulse response does not decay")
    return T60Estimate(float(-60.0 / slope), flagged=False)


# ---------------------------------------------------------------------------
# Metric rows and reports

CSV_COLUMNS = ("item_id", "iteration", "estoi", "ssim_16k", "ssim_24k", "ssim_44k", "ssim_48k",
               "si_snr_db", "external_mos")
_RATE_COLUMN = {16000: "ssim_16k", 24000: "ssim_24k", 44100: "ssim_44k", 48000: "ssim_48k"}
METRIC_COLUMNS = CSV_COLUMNS[2:]


@dataclass(frozen=True)
class MetricRow:
    item_id: str
    iteration: int
    estoi: float | None = None
    ssim_16k: float | None = None
    ssim_24k: float | None = None
    ssim_44k: float | None = None
    ssim_48k: float | None = None
    si_snr_db: float | None = None
    external_mos: float | None = None


def evaluate_pair(clean: AudioBuffer, processed: AudioBuffer, item_id: str, iteration: int = 0,
                  rates=SSIM_RATES, external_mos=None, reference: AudioBuffer | None = None) -> MetricRow:
    """All intrusive metrics for one (clean, processed) pair.

    SI-SNR is taken against ``reference`` (default: ``clean``) at the processed rate.
    """
    values = {}
    try:
        values["estoi"] = estoi(clean, processed)
    except ValueError:
        values["estoi"] = None
    for rate in rates:
        values[_RATE_COLUMN[rate]] = spectrogram_ssim(clean, processed, rate)
    ref = resample(reference if reference is not None else clean, processed.sample_rate)
    values["si_snr_db"] = si_snr(ref, processed)
    return MetricRow(item_id, iteration, external_mos=external_mos, **values)


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metric_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, c)) for c in CSV_COLUMNS])


def read_metric_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kwargs = {"item_id": rec["item_id"], "iteration": int(rec["iteration"])}
            for col in METRIC_COLUMNS:
                kwargs[col] = float(rec[col]) if rec.get(col) not in (None, "") else None
            rows.append(MetricRow(**kwargs))
    return rows


def summarise(rows):
    """Mean/std per iteration for every metric, plus a least-squares slope per metric."""
    if not rows:
        raise ValueError("no metric rows")
    iterations = sorted({r.iteration for r in rows})
    summary = []
    for it in iterations:
        entry = {"iteration": it}
        subset = [r for r in rows if r.iteration == it]
        for col in METRIC_COLUMNS:
            vals = [getattr(r, col) for r in subset if getattr(r, col) is not None]
            entry[f"{col}_mean"] = float(np.mean(vals)) if vals else None
            entry[f"{col}_std"] = float(np.std(vals)) if vals else None
        summary.append(entry)
    slopes = {}
    for col in METRIC_COLUMNS:
        pts = [(e["iteration"], e[f"{col}_mean"]) for e in summary if e[f"{col}_mean"] is not None]
        if len(pts) >= 2:
            its, means = np.array(pts).T
            slope = float(np.polyfit(its, means, 1)[0])
            slopes[col] = 0.0 if np.ptp(means) == 0 else slope
        else:
            slopes[col] = None
    return summary, slopes


def refinement_report(rows, out_dir, plot: bool = True) -> dict:
    """Write metrics.csv, summary.csv, trend.json and (optionally) trend.svg under ``out_dir``."""
    rows = list(rows)
    if not rows:
        raise ValueError("refinement_report needs at least one row")
    os.makedirs(out_dir, exist_ok=True)
    paths = {"metrics": os.path.join(out_dir, "metrics.csv"),
             "summary": os.path.join(out_dir, "summary.csv"),
             "trend": os.path.join(out_dir, "trend.json")}
    write_metric_csv(rows, paths["metrics"])
    summary, slopes = summarise(rows)
    with open(paths["summary"], "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summary[0]))
        writer.writeheader()
        for entry in summary:
            writer.writerow({k: _fmt(v) for k, v in entry.items()})
    with open(paths["trend"], "w") as fh:
        json.dump({"slope_per_iteration": slopes}, fh, indent=2, sort_keys=True)
    if plot:
        paths["plot"] = os.path.join(out_dir, "trend.svg")
        _plot_trend(summary, paths["plot"])
    return paths


def _plot_trend(summary, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "refinement"
    its = [e["iteration"] for e in summary]
    fig, ax = plt.subplots(figsize=(6, 4))
    for col in ("estoi", "ssim_16k", "ssim_48k"):
        means = [e[f"{col}_mean"] for e in summary]
        if all(m is not None for m in means):
            ax.plot(its, means, marker="o", label=col)
    ax.set_xlabel("iteration")
    ax.set_ylabel("score")
    ax.legend()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def row_fields():
    return [f.name for f in fields(MetricRow)]
