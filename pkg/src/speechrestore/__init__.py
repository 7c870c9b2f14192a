"""Two-stage speech restoration toolkit: 16 kHz recovery followed by 48 kHz latent diffusion restoration."""

__version__ = "0.1.0"

from .audio import AudioBuffer, chunk, load_wav, resample, save_wav, trim_silence
from .config import ConfigError, PipelineConfig, load_config
from .degrade import DegradationSpec, degrade, mix_at_snr, sample_degradation, synth_rir
from .diffusion import (LinearDenoiser, ddpm_sample, fit_linear_denoiser, forward_diffuse, iterative_refine,
                        make_schedule, restore)
from .latent import CodecConfig, Latent, decode, encode
from .loudness import measure_lufs, normalize_loudness
from .manifest import Record, emit_manifest, filter_by_mos, ingest_manifest, split_assets
from .metrics import estoi, evaluate_pair, schroeder_t60, si_snr, spectrogram_ssim, ssim
from .recovery import make_enhancer, recover
from .spectral import MelConfig, MelSpectrogram, Spectrogram, griffin_lim, istft, mel_spectrogram, stft

__all__ = [
    "AudioBuffer", "chunk", "load_wav", "resample", "save_wav", "trim_silence",
    "ConfigError", "PipelineConfig", "load_config",
    "DegradationSpec", "degrade", "mix_at_snr", "sample_degradation", "synth_rir",
    "LinearDenoiser", "ddpm_sample", "fit_linear_denoiser", "forward_diffuse", "iterative_refine",
    "make_schedule", "restore",
    "CodecConfig", "Latent", "decode", "encode",
    "measure_lufs", "normalize_loudness",
    "Record", "emit_manifest", "filter_by_mos", "ingest_manifest", "split_assets",
    "estoi", "evaluate_pair", "schroeder_t60", "si_snr", "spectrogram_ssim", "ssim",
    "make_enhancer", "recover",
    "MelConfig", "MelSpectrogram", "Spectrogram", "griffin_lim", "istft", "mel_spectrogram", "stft",
]
