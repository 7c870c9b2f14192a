"""Latent DDPM with x0 (clean-latent) prediction and conditioning on the recovered latent."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .audio import AudioBuffer, resample
from .latent import CodecConfig, Latent, decode, encode
from .spectral import MelConfig, invert_mel, mel_spectrogram

logger = logging.getLogger(__name__)

RESTORE_RATE = 48000
SIDECAR_FORMAT = "speechrestore.linear_denoiser"
SIDECAR_VERSION = 1


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Linear beta schedule; arrays are indexed by t = 0..T with ``alpha_bar[0] = 1``."""

    T: int
    beta_1: float
    beta_T: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray


def make_schedule(T: int = 1000, beta_1: float = 1e-4, beta_T: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < beta_1 < beta_T < 1:
        raise ValueError(f"need 0 < beta_1 < beta_T < 1, got {beta_1}, {beta_T}")
    beta = np.concatenate([[0.0], np.linspace(beta_1, beta_T, T)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T, beta_1, beta_T, beta, alpha, alpha_bar)


def forward_diffuse(z_y, t, eta, schedule: NoiseSchedule):
    """z_t = sqrt(alpha_bar_t) z_y + sqrt(1 - alpha_bar_t) eta.

    ``t`` may be a scalar or one step per leading-axis row of ``z_y``.
    """
    z_y = np.asarray(z_y, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    if z_y.shape != eta.shape:
        raise ValueError(f"shape mismatch: z_y {z_y.shape} vs eta {eta.shape}")
    ab = schedule.alpha_bar[np.asarray(t)]
    if np.ndim(ab):
        ab = ab.reshape(ab.shape + (1,) * (z_y.ndim - ab.ndim))
    return np.sqrt(ab) * z_y + np.sqrt(1.0 - ab) * eta


class Denoiser(Protocol):
    def predict(self, z_t, z_0, t): ...


def training_loss(denoiser, z_y, z_0, t, eta, schedule: NoiseSchedule) -> float:
    """Mean squared error between z_y and the denoiser's estimate from (z_t, z_0, t)."""
    z_y = np.asarray(z_y, dtype=np.float64)
    z_0 = np.asarray(z_0, dtype=np.float64)
    if z_y.size == 0:
        raise ValueError("empty batch")
    if z_y.shape != z_0.shape:
        raise ValueError(f"shape mismatch: z_y {z_y.shape} vs z_0 {z_0.shape}")
    z_t = forward_diffuse(z_y, t, eta, schedule)
    return float(np.mean((z_y - denoiser.predict(z_t, z_0, t)) ** 2))


# ---------------------------------------------------------------------------
# Denoisers


class ZeroDenoiser:
    def predict(self, z_t, z_0, t):
        return np.zeros_like(np.asarray(z_t, dtype=np.float64))


class ConditioningPassthrough:
    """Predicts the conditioning latent itself; the sampler then collapses onto z_0."""

    def predict(self, z_t, z_0, t):
        return np.asarray(z_0, dtype=np.float64)


@dataclass(frozen=True)
class GaussianMMSEDenoiser:
    """Posterior mean E[z_y | z_t] when z_y ~ N(mu, sigma^2 I); ignores the conditioning."""

    mu: float
    sigma: float
    schedule: NoiseSchedule

    def predict(self, z_t, z_0, t):
        ab = self.schedule.alpha_bar[t]
        var = self.sigma ** 2
        return (np.sqrt(ab) * var * np.asarray(z_t) + (1.0 - ab) * self.mu) / (ab * var + 1.0 - ab)


def gaussian_mmse_denoiser(mu: float, sigma: float, schedule: NoiseSchedule) -> GaussianMMSEDenoiser:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return GaussianMMSEDenoiser(float(mu), float(sigma), schedule)


def log_bucket_edges(T: int, n_buckets: int = 32) -> np.ndarray:
    """Integer edges of log-spaced buckets over [1, T]; bucket b is [edges[b], edges[b + 1])."""
    edges = np.unique(np.round(np.geomspace(1, T + 1, n_buckets + 1)).astype(int))
    edges[0], edges[-1] = 1, T + 1
    return edges


@dataclass(frozen=True, eq=False)
class LinearDenoiser:
    """z_y estimate = A_b z_t + B_b z_0 + c_b with scalars shared across coordinates per bucket."""

    edges: np.ndarray
    coefficients: np.ndarray  # [buckets, 3] -> (A, B, c)
    schedule: NoiseSchedule

    def __post_init__(self):
        if self.edges[0] != 1 or self.edges[-1] != self.schedule.T + 1:
            raise ValueError("bucket edges must cover [1, T]")
        if self.coefficients.shape != (len(self.edges) - 1, 3):
            raise ValueError("need one (A, B, c) triple per bucket")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("non-finite denoiser coefficients")

    def bucket(self, t) -> int:
        return int(np.searchsorted(self.edges, t, side="right") - 1)

    def predict(self, z_t, z_0, t):
        if t == 0:
            return np.asarray(z_t, dtype=np.float64)
        a, b, c = self.coefficients[self.bucket(t)]
        return a * np.asarray(z_t) + b * np.asarray(z_0) + c

    def to_dict(self) -> dict:
        return {
            "format": SIDECAR_FORMAT,
            "version": SIDECAR_VERSION,
            "schedule": {"T": self.schedule.T, "beta_1": self.schedule.beta_1, "beta_T": self.schedule.beta_T},
            "bucket_edges": [int(e) for e in self.edges],
            "coefficients": [[float(v) for v in row] for row in self.coefficients],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LinearDenoiser":
        if data.get("format") != SIDECAR_FORMAT:
            raise ValueError("not a linear denoiser sidecar")
        if data.get("version") != SIDECAR_VERSION:
            raise ValueError(f"unsupported sidecar version {data.get('version')}")
        sched = make_schedule(**data["schedule"])
        return cls(np.array(data["bucket_edges"], dtype=int), np.array(data["coefficients"], dtype=np.float64), sched)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "LinearDenoiser":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _stack(latents) -> np.ndarray:
    if isinstance(latents, np.ndarray):
        return latents.astype(np.float64).reshape(len(latents), -1)
    return np.stack([np.asarray(getattr(z, "coeffs", z), dtype=np.float64).ravel() for z in latents])


def fit_linear_denoiser(z_y, z_0, schedule: NoiseSchedule, ridge_lambda: float = 1e-4, seed: int = 0,
                        n_buckets: int = 32) -> LinearDenoiser:
    """Closed-form ridge fit of the x0-prediction objective, one 3x3 system per bucket.

    ``z_y`` and ``z_0`` are paired arrays ``[N, ...]`` (or sequences of latents of
    equal size). For every bucket each pair receives a step drawn uniformly from
    the bucket and fresh Gaussian noise; features are (z_t, z_0, 1) per coordinate.
    """
    zy, z0 = _stack(z_y), _stack(z_0)
    if zy.shape != z0.shape:
        raise ValueError(f"paired latents differ in shape: {zy.shape} vs {z0.shape}")
    if zy.size < 1000:
        raise ValueError(f"need at least 1000 coordinate pairs to fit, got {zy.size}")
    rng = np.random.default_rng(seed)
    edges = log_bucket_edges(schedule.T, n_buckets)
    coefs = np.zeros((len(edges) - 1, 3))
    count = zy.size
    for b in range(len(edges) - 1):
        t = rng.integers(edges[b], edges[b + 1], size=zy.shape[0])
        eta = rng.standard_normal(zy.shape)
        zt = forward_diffuse(zy, t, eta, schedule)
        s_t, s_0 = zt.sum(), z0.sum()
        gram = np.array([
            [np.sum(zt * zt), np.sum(zt * z0), s_t],
            [np.sum(zt * z0), np.sum(z0 * z0), s_0],
            [s_t, s_0, count],
        ]) / count
        gram[0, 0] += ridge_lambda
        gram[1, 1] += ridge_lambda
        rhs = np.array([np.sum(zt * zy), np.sum(z0 * zy), zy.sum()]) / count
        if np.linalg.cond(gram) > 1e12:
            raise np.linalg.LinAlgError(f"normal matrix for bucket {b} is singular; raise ridge_lambda")
        coefs[b] = np.linalg.solve(gram, rhs)
    return LinearDenoiser(edges, coefs, schedule)


# ---------------------------------------------------------------------------
# Sampling


def sampling_steps(T: int, step_count: int) -> np.ndarray:
    """Evenly spaced, strictly increasing steps in [1, T] that always include 1."""
    if step_count < 1:
        raise ValueError("step_count must be >= 1")
    if step_count > T:
        raise ValueError(f"step_count {step_count} exceeds T={T}")
    return np.unique(np.round(np.linspace(1, T, step_count)).astype(int))


def ddpm_sample(denoiser, cond, schedule: NoiseSchedule, step_count: int | None = None, seed: int = 0,
                shape=None):
    """Ancestral DDPM sampling with an x0-predicting denoiser conditioned on ``cond``.

    ``cond`` may be an array or a :class:`Latent`; the result has the same type.
    With ``cond=None`` an explicit ``shape`` is required.
    """
    latent = cond if isinstance(cond, Latent) else None
    cond_arr = None if cond is None else np.asarray(getattr(cond, "coeffs", cond), dtype=np.float64)
    if shape is None:
        if cond_arr is None:
            raise ValueError("shape is required without conditioning")
        shape = cond_arr.shape
    if cond_arr is None:
        cond_arr = np.zeros(shape)
    steps = sampling_steps(schedule.T, step_count or schedule.T)
    rng = np.random.default_rng(seed)
    ab = schedule.alpha_bar

    z = rng.standard_normal(shape)
    for i in range(len(steps) - 1, -1, -1):
        t = int(steps[i])
        s = int(steps[i - 1]) if i > 0 else 0
        if s == t - 1:
            alpha_t, beta_t = schedule.alpha[t], schedule.beta[t]
        else:
            alpha_t = ab[t] / ab[s]
            beta_t = 1.0 - alpha_t
        z0_hat = denoiser.predict(z, cond_arr, t)
        mean = (np.sqrt(ab[s]) * beta_t / (1.0 - ab[t])) * z0_hat \
            + (np.sqrt(alpha_t) * (1.0 - ab[s]) / (1.0 - ab[t])) * z
        if s > 0:
            var = beta_t * (1.0 - ab[s]) / (1.0 - ab[t])
            z = mean + np.sqrt(var) * rng.standard_normal(shape)
        else:
            z = mean
    return latent.with_coeffs(z) if latent is not None else z


# ---------------------------------------------------------------------------
# Restoration stage


@dataclass(frozen=True, eq=False)
class RestoreResult:
    buffer: AudioBuffer
    conditioning: Latent
    restored: Latent


def latent_of(buffer: AudioBuffer, codec_config: CodecConfig = CodecConfig(),
              mel_config: MelConfig = MelConfig()) -> Latent:
    """Resample to 48 kHz, take the mel spectrogram and encode it."""
    x48 = resample(buffer, mel_config.sample_rate)
    return encode(mel_spectrogram(x48, mel_config), codec_config)


def restore(x_prime: AudioBuffer, denoiser, schedule: NoiseSchedule, codec_config: CodecConfig = CodecConfig(),
            seed: int = 0, step_count: int | None = None, gl_iterations: int = 60,
            mel_config: MelConfig = MelConfig()) -> RestoreResult:
    """16 kHz recovered speech -> 48 kHz restored speech through the latent sampler and mel inversion."""
    z0 = latent_of(x_prime, codec_config, mel_config)
    z = ddpm_sample(denoiser, z0, schedule, step_count, seed)
    y48 = invert_mel(decode(z).to_linear(), gl_iterations, seed=seed)
    return RestoreResult(y48, z0, z)


def iterative_refine(buffer: AudioBuffer, stage_fn: Callable[[AudioBuffer], AudioBuffer], iterations: int = 5,
                     metric_fn=None, item_id: str = "item"):
    """Feed each stage output back in; returns ``[(output, metric_row), ...]`` per iteration.

    Metrics compare every output against the original input (iteration 0).
    """
    from .metrics import evaluate_pair

    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if metric_fn is None:
        def metric_fn(ref, out, it):
            return evaluate_pair(ref, out, item_id, it)
    rows = []
    current = buffer
    for it in range(1, iterations + 1):
        current = stage_fn(current)
        rows.append((current, metric_fn(buffer, current, it)))
    return rows
