"""Seeded orchestration: degrade -> recover -> restore -> evaluate, with resumable item outputs."""

from __future__ import annotations

import json
import logging
import os
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .audio import AudioBuffer, load_wav, resample, save_wav
from .config import PipelineConfig
from .degrade import degrade, sample_degradation
from .diffusion import (ConditioningPassthrough, LinearDenoiser, ZeroDenoiser, fit_linear_denoiser,
                        make_schedule, restore)
from .latent import CodecConfig, encode
from .loudness import normalize_loudness
from .manifest import ingest_manifest, select
from .metrics import MetricRow, evaluate_pair, refinement_report, write_metric_csv
from .recovery import make_enhancer, recover
from .spectral import MelConfig, mel_spectrogram

logger = logging.getLogger(__name__)

FULL_BAND_RATE = 48000


def item_seed(master_seed: int, item_id: str) -> int:
    """Per-item seed independent of scheduling order."""
    return int(np.random.SeedSequence([master_seed, zlib.crc32(item_id.encode())]).generate_state(1)[0])


def build_enhancer(cfg: PipelineConfig):
    if cfg.enhancer == "spectral_gate":
        return make_enhancer("spectral_gate", oversubtraction=cfg.oversubtraction,
                             floor_percentile=cfg.floor_percentile, floor_db=cfg.gain_floor_db)
    if cfg.enhancer == "external":
        return make_enhancer("external", command=cfg.enhancer_command)
    return make_enhancer(cfg.enhancer)


def build_denoiser(cfg: PipelineConfig, schedule):
    if cfg.denoiser == "passthrough":
        return ConditioningPassthrough()
    if cfg.denoiser == "zero":
        return ZeroDenoiser()
    den = LinearDenoiser.load(cfg.denoiser)
    if den.schedule.T != schedule.T:
        raise ValueError(f"denoiser was fitted for T={den.schedule.T}, config has T={schedule.T}")
    return den


def codec_params(cfg: PipelineConfig) -> dict:
    if cfg.codec_mode == "external":
        return {"encode": cfg.codec_encode, "decode": cfg.codec_decode}
    return {}


def prepare_clean(buffer: AudioBuffer, target_lufs: float) -> AudioBuffer:
    """Clean reference at 48 kHz, loudness normalised like the training data."""
    x = resample(buffer, FULL_BAND_RATE)
    try:
        return normalize_loudness(x, target_lufs).buffer
    except ValueError:
        return x


def _pick(records, rng):
    if not records:
        return None
    rec = records[int(rng.integers(len(records)))]
    return resample(load_wav(rec.path), FULL_BAND_RATE)


@dataclass
class ItemResult:
    item_id: str
    status: str
    seed: int
    durations: dict = field(default_factory=dict)
    recovered_row: MetricRow | None = None
    restored_row: MetricRow | None = None
    degradation: dict | None = None
    error: str | None = None
    reused: bool = False


class PipelineRunner:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.config_hash = cfg.config_hash()
        self.run_id = self.config_hash[:12]
        self.run_dir = os.path.join(cfg.out_dir, f"run-{self.run_id}")
        self.schedule = make_schedule(cfg.diffusion_steps, cfg.beta_1, cfg.beta_T)
        self.codec = CodecConfig(patch=cfg.patch, kept=cfg.kept)
        self.enhancer = build_enhancer(cfg)
        self.denoiser = build_denoiser(cfg, self.schedule)

    # -- individual stages -------------------------------------------------

    def degrade_item(self, clean48, seed, noises=(), rirs=()):
        rng = np.random.default_rng(seed)
        spec = sample_degradation(self.cfg.degradation_profile, seed, self.cfg.codec_mode)
        noise = _pick(noises, rng)
        if noise is None:
            noise = AudioBuffer(np.random.default_rng(seed + 7).standard_normal(len(clean48)), FULL_BAND_RATE)
        rir = _pick(rirs, rng)
        return degrade(clean48, noise, rir, spec, codec_params(self.cfg)), spec

    def recover(self, x):
        return recover(x, self.enhancer, self.cfg.target_lufs).buffer

    def restore(self, x16, seed):
        return restore(x16, self.denoiser, self.schedule, self.codec, seed=seed,
                       step_count=self.cfg.sample_steps, gl_iterations=self.cfg.gl_iterations).buffer

    def evaluate(self, clean48, processed, item_id, iteration=0, mos=None):
        return evaluate_pair(clean48, processed, item_id, iteration, tuple(self.cfg.ssim_rates), mos)

    # -- one manifest item -------------------------------------------------

    def _item_dir(self, item_id):
        return os.path.join(self.run_dir, "items", item_id)

    def run_item(self, item_id, record, noises, rirs) -> ItemResult:
        seed = item_seed(self.cfg.seed, item_id)
        out = self._item_dir(item_id)
        marker = os.path.join(out, "item.json")
        if os.path.exists(marker):
            with open(marker) as fh:
                done = json.load(fh)
            if done.get("config_hash") == self.config_hash and done.get("status") == "ok":
                return ItemResult(item_id, "ok", seed, done["durations"],
                                  MetricRow(**done["recovered_row"]), MetricRow(**done["restored_row"]),
                                  done["degradation"], reused=True)
        os.makedirs(out, exist_ok=True)
        durations = {}
        try:
            t0 = time.perf_counter()
            clean48 = prepare_clean(load_wav(record.path), self.cfg.target_lufs)
            degraded, spec = self.degrade_item(clean48, seed, noises, rirs)
            t1 = time.perf_counter()
            recovered = self.recover(degraded)
            t2 = time.perf_counter()
            restored = self.restore(recovered, seed)
            t3 = time.perf_counter()
            rec_row = self.evaluate(clean48, recovered, item_id, 0, record.external_mos)
            res_row = self.evaluate(clean48, restored, item_id, 0, record.external_mos)
            t4 = time.perf_counter()
            durations = {"degrade": t1 - t0, "recover": t2 - t1, "restore": t3 - t2, "evaluate": t4 - t3}
            save_wav(clean48, os.path.join(out, "clean.wav"), "float32")
            save_wav(degraded, os.path.join(out, "degraded.wav"), "float32")
            save_wav(recovered, os.path.join(out, "recovered.wav"), "float32")
            save_wav(restored, os.path.join(out, "restored.wav"), "float32")
            with open(os.path.join(out, "degradation.json"), "w") as fh:
                json.dump(spec.to_dict(), fh, indent=1, sort_keys=True)
            result = ItemResult(item_id, "ok", seed, durations, rec_row, res_row, spec.to_dict())
            with open(marker, "w") as fh:
                json.dump({"config_hash": self.config_hash, "status": "ok", "source": record.path,
                           "durations": durations, "degradation": spec.to_dict(),
                           "recovered_row": asdict(rec_row), "restored_row": asdict(res_row)}, fh, indent=1)
            return result
        except Exception as exc:  # per-item failures must not stop the run
            logger.exception("item %s failed", item_id)
            return ItemResult(item_id, "failed", seed, durations, error=f"{type(exc).__name__}: {exc}")

    # -- whole run ---------------------------------------------------------

    def items(self, records):
        speech = select(records, role="speech", split="eval") or select(records, role="speech")
        if self.cfg.max_items is not None:
            speech = speech[:self.cfg.max_items]
        return [(f"{i:04d}_{os.path.splitext(os.path.basename(r.path))[0]}", r) for i, r in enumerate(speech)]

    def run(self) -> dict:
        records = ingest_manifest(self.cfg.manifest)
        noises = select(records, role="noise", split="eval")
        rirs = select(records, role="rir", split="eval")
        items = self.items(records)
        os.makedirs(self.run_dir, exist_ok=True)
        with open(os.path.join(self.run_dir, "config.json"), "w") as fh:
            json.dump({"config": self.cfg.to_dict(), "config_hash": self.config_hash,
                       "version": __version__}, fh, indent=1, sort_keys=True, default=str)

        logger.info("run %s: %d items, %d noise, %d rir, jobs=%d", self.run_id, len(items), len(noises),
                    len(rirs), self.cfg.jobs)
        with ThreadPoolExecutor(max_workers=self.cfg.jobs) as pool:
            futures = [pool.submit(self.run_item, item_id, rec, noises, rirs) for item_id, rec in items]
            results = [f.result() for f in futures]

        ok = [r for r in results if r.status == "ok"]
        for r in ok:
            logger.info("item %s seed %d degradation %s", r.item_id, r.seed, r.degradation)
        paths = {}
        if ok:
            write_metric_csv([r.recovered_row for r in ok], os.path.join(self.run_dir, "metrics_recovered.csv"))
            write_metric_csv([r.restored_row for r in ok], os.path.join(self.run_dir, "metrics.csv"))
            paths["metrics"] = os.path.join(self.run_dir, "metrics.csv")
        report = {
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "run_dir": self.run_dir,
            "n_items": len(results),
            "n_failed": len(results) - len(ok),
            "items": [{
                "item_id": r.item_id, "status": r.status, "seed": r.seed, "reused": r.reused,
                "durations": r.durations, "error": r.error, "degradation": r.degradation,
                "recovered": asdict(r.recovered_row) if r.recovered_row else None,
                "restored": asdict(r.restored_row) if r.restored_row else None,
            } for r in results],
            "paths": paths,
        }
        with open(os.path.join(self.run_dir, "report.json"), "w") as fh:
            json.dump(report, fh, indent=1)
        return report


def run_pipeline(cfg: PipelineConfig) -> dict:
    return PipelineRunner(cfg.validate()).run()


# ---------------------------------------------------------------------------
# Denoiser fitting and refinement


def paired_latents(clean48: AudioBuffer, recovered16: AudioBuffer, codec: CodecConfig,
                   mel_config: MelConfig = MelConfig()):
    """Latents of the clean target and of the recovered estimate, cropped to common frames."""
    target = mel_spectrogram(clean48, mel_config)
    cond = mel_spectrogram(resample(recovered16, mel_config.sample_rate), mel_config)
    frames = min(target.values.shape[0], cond.values.shape[0])
    crop = lambda m: type(m)(m.values[:frames], m.config, m.scale, None)  # noqa: E731
    return encode(crop(target), codec), encode(crop(cond), codec)


def fit_denoiser_from_manifest(cfg: PipelineConfig, ridge_lambda: float = 1e-4) -> LinearDenoiser:
    """Degrade and recover the training speech, then fit the linear denoiser on (z_y, z_0) pairs."""
    cfg = cfg.validate()
    runner = PipelineRunner(cfg)
    records = ingest_manifest(cfg.manifest)
    speech = select(records, role="speech", split="train") or select(records, role="speech")
    noises = select(records, role="noise", split="train")
    rirs = select(records, role="rir", split="train")
    z_y, z_0 = [], []
    for i, rec in enumerate(speech):
        seed = item_seed(cfg.seed, f"train-{i}")
        clean48 = prepare_clean(load_wav(rec.path), cfg.target_lufs)
        degraded, _ = runner.degrade_item(clean48, seed, noises, rirs)
        zy, z0 = paired_latents(clean48, runner.recover(degraded), runner.codec)
        z_y.append(zy.coeffs.ravel())
        z_0.append(z0.coeffs.ravel())
    zy_all = np.concatenate(z_y)[:, None]
    z0_all = np.concatenate(z_0)[:, None]
    return fit_linear_denoiser(zy_all, z0_all, runner.schedule, ridge_lambda, seed=cfg.seed)


def refine(buffer: AudioBuffer, cfg: PipelineConfig, iterations: int, stage: str = "full",
           item_id: str = "item", seed: int = 0):
    """Iterative refinement with one of the stage chains: identity, restore, full (recover + restore)."""
    from .diffusion import iterative_refine

    runner = PipelineRunner(cfg)
    if stage == "identity":
        def stage_fn(x):
            return x
    elif stage == "restore":
        def stage_fn(x):
            return runner.restore(resample(x, 16000), seed)
    elif stage == "full":
        def stage_fn(x):
            return runner.restore(runner.recover(x), seed)
    else:
        raise ValueError(f"unknown refinement stage {stage!r}")

    def metric_fn(ref, out, it):
        return runner.evaluate(ref, out, item_id, it)

    return iterative_refine(buffer, stage_fn, iterations, metric_fn, item_id)


def write_refinement(rows_by_item, out_dir, plot=True) -> dict:
    rows = [row for item_rows in rows_by_item for _, row in item_rows]
    return refinement_report(rows, out_dir, plot=plot)
