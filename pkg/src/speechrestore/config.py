"""Pipeline configuration: YAML key-value file, environment overrides, validation, hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import yaml

ENV_PREFIX = "SPEECHRESTORE_"

# keys that do not change any output and are left out of the config hash
_UNHASHED = {"out_dir", "jobs"}


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    manifest: str | None = None
    out_dir: str = "runs"
    seed: int | None = 0
    jobs: int = 1
    max_items: int | None = None

    # degradation
    degradation_profile: str = "eval"
    codec_mode: str = "proxy"
    codec_encode: str | None = None
    codec_decode: str | None = None

    # recovery
    target_lufs: float = -20.0
    enhancer: str = "spectral_gate"
    enhancer_command: str | None = None
    oversubtraction: float = 1.5
    floor_percentile: float = 10.0
    gain_floor_db: float = -25.0

    # restoration
    denoiser: str = "passthrough"
    diffusion_steps: int = 1000
    beta_1: float = 1e-4
    beta_T: float = 0.02
    sample_steps: int = 1000
    patch: int = 16
    kept: int = 64
    gl_iterations: int = 60

    # evaluation
    ssim_rates: list = field(default_factory=lambda: [16000, 24000, 44100, 48000])
    refine_iterations: int = 5
    plot: bool = True

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        if payload.get("manifest"):
            payload["manifest"] = os.path.abspath(payload["manifest"])
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha1(blob).hexdigest()

    def validate(self, require_manifest: bool = True) -> "PipelineConfig":
        if self.seed is None:
            raise ConfigError("a master seed is required")
        if require_manifest:
            if not self.manifest:
                raise ConfigError("manifest path is not set")
            if not os.path.exists(self.manifest):
                raise ConfigError(f"manifest not found: {self.manifest}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.degradation_profile not in ("train", "eval"):
            raise ConfigError(f"unknown degradation profile {self.degradation_profile!r}")
        if self.codec_mode not in ("proxy", "external"):
            raise ConfigError(f"unknown codec mode {self.codec_mode!r}")
        if self.codec_mode == "external" and not (self.codec_encode and self.codec_decode):
            raise ConfigError("external codec needs codec_encode and codec_decode commands")
        if self.enhancer not in ("identity", "spectral_gate", "external"):
            raise ConfigError(f"unknown enhancer {self.enhancer!r}")
        if self.enhancer == "external" and not self.enhancer_command:
            raise ConfigError("external enhancer needs enhancer_command")
        if self.denoiser not in ("passthrough", "zero") and not os.path.exists(self.denoiser):
            raise ConfigError(f"denoiser sidecar not found: {self.denoiser}")
        if not 1 <= self.sample_steps <= self.diffusion_steps:
            raise ConfigError("sample_steps must lie in [1, diffusion_steps]")
        if not 0 < self.beta_1 < self.beta_T < 1:
            raise ConfigError("need 0 < beta_1 < beta_T < 1")
        if self.refine_iterations < 1:
            raise ConfigError("refine_iterations must be >= 1")
        bad = [r for r in self.ssim_rates if r not in (16000, 24000, 44100, 48000)]
        if bad:
            raise ConfigError(f"unsupported SSIM rates {bad}")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _apply(cfg: PipelineConfig, values: dict, origin: str):
    for key, value in values.items():
        if key not in _FIELDS:
            raise ConfigError(f"{origin}: unknown config key {key!r}")
        setattr(cfg, key, value)


def load_config(path=None, overrides: dict | None = None, environ=None) -> PipelineConfig:
    """Defaults, then the YAML file, then ``SPEECHRESTORE_<KEY>`` variables, then ``overrides``."""
    cfg = PipelineConfig()
    if path is not None:
        try:
            with open(path) as fh:
                values = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a mapping of keys to values")
        base = os.path.dirname(os.path.abspath(path))
        for key in ("manifest", "denoiser"):
            val = values.get(key)
            if isinstance(val, str) and val not in ("passthrough", "zero") and not os.path.isabs(val):
                values[key] = os.path.join(base, val)
        _apply(cfg, values, str(path))

    environ = os.environ if environ is None else environ
    env_values = {}
    for key in _FIELDS:
        raw = environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            env_values[key] = yaml.safe_load(raw)
    _apply(cfg, env_values, "environment")
    _apply(cfg, {k: v for k, v in (overrides or {}).items() if v is not None}, "overrides")
    return cfg
