"""Model-set archives: a JSON manifest plus one little-endian float32 blob per model."""

from __future__ import annotations

import hashlib
import json
import warnings
from pathlib import Path

import numpy as np

from .imia import Candidate, ParetoSet
from .metrics import EvalMetrics
from .mixer import MixerConfig, param_count

FORMAT = "automo-model-set"
VERSION = 1
MANIFEST = "manifest.json"

_TOP_KEYS = {"format", "version", "run", "models"}
_MODEL_KEYS = {"id", "config", "metrics", "weight", "seed", "file", "length", "sha256"}


class ArchiveError(ValueError):
    """A model-set archive is malformed, truncated or from another version."""


def save_model_set(pareto: ParetoSet, weights, directory, run: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    weights = [float(w) for w in weights]
    if len(weights) != len(pareto.models):
        raise ValueError("one weight per model is required")
    entries = []
    for i, (cand, w) in enumerate(zip(pareto.models, weights)):
        blob = np.asarray(cand.params, dtype="<f4").tobytes()
        name = f"model_{i:03d}.f32"
        (directory / name).write_bytes(blob)
        entries.append({
            "id": cand.id,
            "config": cand.config.to_dict(),
            "metrics": cand.metrics.as_dict(),
            "weight": w,
            "seed": cand.seed,
            "file": name,
            "length": int(cand.params.size),
            "sha256": hashlib.sha256(blob).hexdigest(),
        })
    manifest = {"format": FORMAT, "version": VERSION, "run": run or {}, "models": entries}
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _warn_extra(found, known, where):
    extra = sorted(set(found) - known)
    if extra:
        warnings.warn(f"{where}: ignoring unknown fields {extra}", stacklevel=3)


def load_model_set(directory) -> tuple[ParetoSet, list[float], dict]:
    """Load an archive; returns ``(pareto_set, weights, run_info)``."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
    except FileNotFoundError as exc:
        raise ArchiveError(f"{directory}: no {MANIFEST}") from exc
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"{directory / MANIFEST}: invalid JSON ({exc})") from exc
    if manifest.get("format") != FORMAT:
        raise ArchiveError(f"{directory}: not a model-set archive")
    if manifest.get("version") != VERSION:
        raise ArchiveError(f"{directory}: unsupported archive version {manifest.get('version')!r}")
    _warn_extra(manifest, _TOP_KEYS, MANIFEST)
    models, weights = [], []
    for entry in manifest["models"]:
        _warn_extra(entry, _MODEL_KEYS, f"{MANIFEST} model {entry.get('id')}")
        config = MixerConfig(**entry["config"])
        blob_path = directory / entry["file"]
        try:
            blob = blob_path.read_bytes()
        except FileNotFoundError as exc:
            raise ArchiveError(f"missing weight blob {blob_path}") from exc
        expected = 4 * param_count(config)
        if len(blob) != expected or entry["length"] * 4 != expected:
            raise ArchiveError(f"{blob_path}: {len(blob)} bytes, expected {expected}")
        if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise ArchiveError(f"{blob_path}: checksum mismatch")
        params = np.frombuffer(blob, dtype="<f4").astype(np.float32)
        models.append(Candidate(config, params, EvalMetrics(**entry["metrics"]), entry["id"], entry.get("seed")))
        weights.append(float(entry["weight"]))
    return ParetoSet(models), weights, manifest.get("run", {})
