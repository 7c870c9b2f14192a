"""Dataset manifests (CSV or JSON lines): ingestion, MOS curation and asset splitting."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from .audio import load_wav

logger = logging.getLogger(__name__)

ROLES = ("speech", "noise", "rir")
SPLITS = ("train", "eval")
COLUMNS = ("path", "duration_s", "sample_rate", "external_mos", "split", "role")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    path: str
    duration_s: float
    sample_rate: int
    external_mos: float | None = None
    split: str = "eval"
    role: str = "speech"


def _probe(path):
    buf = load_wav(path)
    return buf.duration, buf.sample_rate


def _parse_row(raw: dict, base: str, where: str) -> Record:
    path = (raw.get("path") or "").strip() if isinstance(raw.get("path"), str) else raw.get("path")
    if not path:
        raise ManifestError(f"{where}: missing path")
    if not os.path.isabs(path):
        path = os.path.normpath(os.path.join(base, path))
    if not os.path.exists(path):
        raise ManifestError(f"{where}: file does not exist: {path}")
    role = raw.get("role") or "speech"
    split = raw.get("split") or "eval"
    if role not in ROLES:
        raise ManifestError(f"{where}: unknown role {role!r}")
    if split not in SPLITS:
        raise ManifestError(f"{where}: unknown split {split!r}")

    def num(key, kind):
        val = raw.get(key)
        if val in (None, ""):
            return None
        try:
            return kind(val)
        except (TypeError, ValueError):
            raise ManifestError(f"{where}: bad {key} value {val!r}") from None

    duration, rate = num("duration_s", float), num("sample_rate", int)
    if duration is None or rate is None:
        try:
            probed_duration, probed_rate = _probe(path)
        except ValueError as exc:
            raise ManifestError(f"{where}: {exc}") from exc
        duration = probed_duration if duration is None else duration
        rate = probed_rate if rate is None else rate
    if duration <= 0:
        raise ManifestError(f"{where}: duration must be positive")
    return Record(path, duration, rate, num("external_mos", float), split, role)


def ingest_manifest(path) -> list:
    """Read and validate a manifest. Relative paths resolve against the manifest's directory."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ManifestError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="") as fh:
        text = fh.read()
    records = []
    if not text.strip():
        logger.warning("manifest %s is empty", path)
        return records

    if path.endswith((".jsonl", ".json")) or text.lstrip().startswith("{"):
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(raw, dict):
                raise ManifestError(f"{path}:{lineno}: expected an object")
            records.append(_parse_row(raw, base, f"{path}:{lineno}"))
    else:
        reader = csv.DictReader(text.splitlines())
        if "path" not in (reader.fieldnames or []):
            raise ManifestError(f"{path}: CSV header must include a 'path' column")
        for lineno, raw in enumerate(reader, start=2):
            if None in raw:
                raise ManifestError(f"{path}:{lineno}: too many fields")
            records.append(_parse_row(raw, base, f"{path}:{lineno}"))

    seen = set()
    for rec in records:
        if rec.path in seen:
            raise ManifestError(f"{path}: duplicate path {rec.path}")
        seen.add(rec.path)
    return records


def emit_manifest(records, path):
    """Write records as JSON lines (``.jsonl``/``.json``) or CSV."""
    if os.fspath(path).endswith((".jsonl", ".json")):
        with open(path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for rec in records:
            row = asdict(rec)
            writer.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                             for c in COLUMNS])


def filter_by_mos(records, threshold: float = 4.0) -> list:
    """Drop speech rows whose external MOS is strictly below ``threshold``.

    Speech rows without a MOS are kept (with a warning); other roles pass untouched.
    """
    kept = []
    missing = 0
    for rec in records:
        if rec.role == "speech":
            if rec.external_mos is None:
                missing += 1
            elif rec.external_mos < threshold:
                continue
        kept.append(rec)
    if missing:
        logger.warning("%d speech rows have no MOS and were kept", missing)
    if records and not kept:
        logger.warning("every row fell below MOS threshold %.2f", threshold)
    return kept


def split_assets(records, train_fraction: float = 0.8, seed: int = 0, roles=("noise", "rir")) -> list:
    """Seeded per-role train/eval split of noise and impulse-response rows."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    assignment = {}
    for role in roles:
        paths = sorted(r.path for r in records if r.role == role)
        if not paths:
            continue
        if len(paths) < 2:
            raise ManifestError(f"role {role!r} needs at least 2 items to split, has {len(paths)}")
        order = np.random.default_rng([seed, ROLES.index(role)]).permutation(len(paths))
        n_train = int(round(train_fraction * len(paths)))
        for rank, idx in enumerate(order):
            assignment[paths[idx]] = "train" if rank < n_train else "eval"
    return [replace(r, split=assignment[r.path]) if r.path in assignment else r for r in records]


def select(records, role=None, split=None) -> list:
    return [r for r in records if (role is None or r.role == role) and (split is None or r.split == split)]
