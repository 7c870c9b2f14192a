"""Analytic latent codec: per-patch orthonormal 2-D DCT of normalised dB mel spectrograms."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import fft as spfft

from .spectral import MelConfig, MelSpectrogram

_MAGIC = b"SRLT"
_VERSION = 1


@dataclass(frozen=True)
class CodecConfig:
    patch: int = 16
    kept: int = 64
    db_floor: float = -100.0
    db_ceiling: float = 20.0

    def __post_init__(self):
        if self.patch < 1:
            raise ValueError("patch must be >= 1")
        if not 1 <= self.kept <= self.patch ** 2:
            raise ValueError(f"kept must be in [1, {self.patch ** 2}]")
        if self.db_ceiling <= self.db_floor:
            raise ValueError("db_ceiling must exceed db_floor")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:16]


def zigzag_order(n: int) -> np.ndarray:
    """Flat indices of an ``n x n`` block in JPEG zig-zag order."""
    cells = [(i, j) for i in range(n) for j in range(n)]
    cells.sort(key=lambda c: (c[0] + c[1], c[0] if (c[0] + c[1]) % 2 else -c[0]))
    return np.array([i * n + j for i, j in cells])


@dataclass(frozen=True, eq=False)
class Latent:
    coeffs: np.ndarray  # [patch_count, kept]
    config: CodecConfig
    grid: tuple  # (patch rows, patch cols)
    mel_shape: tuple  # (frames, n_mels) before padding
    mel_config: MelConfig = field(default_factory=MelConfig)
    n_samples: int | None = None

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        rows, cols = self.grid
        if coeffs.shape != (rows * cols, self.config.kept):
            raise ValueError(f"coefficient shape {coeffs.shape} does not match grid {self.grid} "
                             f"with {self.config.kept} kept coefficients")
        p = self.config.patch
        frames, mels = self.mel_shape
        if not (0 < frames <= rows * p and 0 < mels <= cols * p):
            raise ValueError("grid does not cover the mel dimensions")
        object.__setattr__(self, "coeffs", coeffs)

    def with_coeffs(self, coeffs) -> "Latent":
        return replace(self, coeffs=np.asarray(coeffs, dtype=np.float64))

    @property
    def kept_indices(self) -> np.ndarray:
        return zigzag_order(self.config.patch)[:self.config.kept]


def normalize_db(values, config: CodecConfig) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=np.float64), config.db_floor, config.db_ceiling)
    return 2.0 * (v - config.db_floor) / (config.db_ceiling - config.db_floor) - 1.0


def denormalize_db(values, config: CodecConfig) -> np.ndarray:
    return (np.asarray(values) + 1.0) * 0.5 * (config.db_ceiling - config.db_floor) + config.db_floor


def pad_to_patches(image, patch: int) -> np.ndarray:
    rows, cols = image.shape
    return np.pad(image, ((0, -rows % patch), (0, -cols % patch)), mode="edge")


def _to_patches(image, patch):
    rows, cols = image.shape[0] // patch, image.shape[1] // patch
    return image.reshape(rows, patch, cols, patch).transpose(0, 2, 1, 3).reshape(-1, patch, patch)


def _from_patches(patches, grid, patch):
    rows, cols = grid
    return patches.reshape(rows, cols, patch, patch).transpose(0, 2, 1, 3).reshape(rows * patch, cols * patch)


def encode_normalized(image, config: CodecConfig = CodecConfig(), **meta) -> Latent:
    """Encode an image already in the normalised [-1, 1] domain."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ValueError("expected a non-empty 2-D mel image")
    p = config.patch
    padded = pad_to_patches(image, p)
    grid = (padded.shape[0] // p, padded.shape[1] // p)
    blocks = spfft.dctn(_to_patches(padded, p), type=2, norm="ortho", axes=(1, 2))
    keep = zigzag_order(p)[:config.kept]
    coeffs = blocks.reshape(blocks.shape[0], -1)[:, keep]
    return Latent(coeffs, config, grid, image.shape, **meta)


def decode_normalized(latent: Latent, crop: bool = True) -> np.ndarray:
    p = latent.config.patch
    full = np.zeros((latent.coeffs.shape[0], p * p))
    full[:, latent.kept_indices] = latent.coeffs
    blocks = spfft.idctn(full.reshape(-1, p, p), type=2, norm="ortho", axes=(1, 2))
    image = _from_patches(blocks, latent.grid, p)
    if crop:
        frames, mels = latent.mel_shape
        image = image[:frames, :mels]
    return image


def encode(mel: MelSpectrogram, config: CodecConfig = CodecConfig()) -> Latent:
    """dB mel spectrogram -> latent coefficients (``config.kept`` per patch)."""
    db = mel.to_db()
    if db.values.size == 0:
        raise ValueError("empty mel spectrogram")
    return encode_normalized(normalize_db(db.values, config), config,
                             mel_config=mel.config, n_samples=mel.n_samples)


def decode(latent: Latent) -> MelSpectrogram:
    """Zero-fill dropped coefficients, inverse DCT, crop padding, map back to dB."""
    image = decode_normalized(latent)
    return MelSpectrogram(denormalize_db(image, latent.config), latent.mel_config, "db", latent.n_samples)


# ---------------------------------------------------------------------------
# Binary container: magic, version, JSON header length, JSON header, float32 LE coefficients


def latent_to_bytes(latent: Latent) -> bytes:
    header = {
        "config": asdict(latent.config),
        "config_hash": latent.config.digest(),
        "grid": list(latent.grid),
        "mel_shape": list(latent.mel_shape),
        "mel_config": asdict(latent.mel_config),
        "n_samples": latent.n_samples,
        "shape": list(latent.coeffs.shape),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    return (_MAGIC + struct.pack("<HI", _VERSION, len(blob)) + blob
            + latent.coeffs.astype("<f4").tobytes())


def latent_from_bytes(data: bytes) -> Latent:
    if data[:4] != _MAGIC:
        raise ValueError("not a latent container")
    version, size = struct.unpack("<HI", data[4:10])
    if version != _VERSION:
        raise ValueError(f"unsupported latent container version {version}")
    header = json.loads(data[10:10 + size])
    config = CodecConfig(**header["config"])
    if config.digest() != header["config_hash"]:
        raise ValueError("latent header config hash mismatch")
    shape = tuple(header["shape"])
    coeffs = np.frombuffer(data[10 + size:], dtype="<f4")
    if coeffs.size != shape[0] * shape[1]:
        raise ValueError("latent payload size does not match header")
    return Latent(coeffs.reshape(shape).astype(np.float64), config, tuple(header["grid"]),
                  tuple(header["mel_shape"]), MelConfig(**header["mel_config"]), header["n_samples"])


def save_latent(latent: Latent, path):
    with open(path, "wb") as fh:
        fh.write(latent_to_bytes(latent))


def load_latent(path) -> Latent:
    with open(path, "rb") as fh:
        return latent_from_bytes(fh.read())
