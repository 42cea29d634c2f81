"""
Store - model files, run manifests and CSV tables.

Files:
  rom_model.json   sealed RomModel, schema tag "eigenrom/1", no timestamps
  manifest.json    seeds, h, epsilon, design, regressor counts, wall time
  *.csv            '.' decimals, ',' separators, LF endings, 17 significant digits
"""

import csv
import json
import logging
import math
import os
from datetime import datetime, timezone
from typing import Iterable, List, Optional, Sequence

from eigenrom import SCHEMA_VERSION, __version__
from eigenrom.errors import ConfigError, ModelFormatError
from eigenrom.rom_pipeline import RomModel

logger = logging.getLogger(__name__)

MODEL_FILE = "rom_model.json"
MANIFEST_FILE = "manifest.json"


# ──────────────────── JSON ──────────────────── #

def _dumps(document: dict) -> str:
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def save_model(model: RomModel, path: str) -> str:
    document = {"schema": SCHEMA_VERSION, **model.to_dict()}
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(_dumps(document))
    logger.info("Model written to %s", path)
    return path


def load_model(path: str) -> RomModel:
    """Read and re-verify a model file; any inconsistency raises ModelFormatError."""
    if not os.path.exists(path):
        raise ConfigError(f"Model file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{path} is not valid JSON: {e}") from e

    if not isinstance(document, dict):
        raise ModelFormatError(f"{path} does not hold a model document")
    schema = document.pop("schema", None)
    if schema != SCHEMA_VERSION:
        raise ModelFormatError(f"Unsupported model schema {schema!r} (expected {SCHEMA_VERSION!r})")

    model = RomModel.from_dict(document)
    logger.info("Model loaded from %s: %s, N=%d, %d regressors",
                path, model.problem, model.basis.n_modes, model.n_regressors)
    return model


def write_manifest(path: str, model: Optional[RomModel] = None, config: Optional[dict] = None,
                   wall_time: Optional[float] = None, **extra) -> str:
    manifest = {
        "schema": SCHEMA_VERSION,
        "version": __version__,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "wall_time_s": wall_time,
    }
    if config is not None:
        manifest["config"] = config
    if model is not None:
        manifest.update({
            "problem": model.problem,
            "mode": model.mode.value,
            "eigen_numbers": list(model.eigen_numbers),
            "mesh": model.mesh,
            "provenance": model.provenance,
            "design": model.design.to_dict(),
            "n_modes": model.basis.n_modes,
            "pod_energy": model.basis.energy,
            "singular_values": model.basis.singular_values.tolist(),
            "regressors": model.n_regressors,
            "per_eigenpair_regressors": model.per_eigenpair_regressors,
        })
    manifest.update(extra)
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(_dumps(manifest))
    logger.info("Manifest written to %s", path)
    return path


# ──────────────────── CSV ──────────────────── #

def format_value(value) -> str:
    """17 significant digits for reals; ints and strings verbatim."""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) or hasattr(value, "dtype"):
        x = float(value)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(value)


def write_csv(path: str, fieldnames: Sequence[str], rows: Iterable[dict]) -> str:
    _ensure_parent(path)
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: format_value(v) for k, v in row.items()})
            count += 1
    logger.info("Wrote %d rows to %s", count, path)
    return path


def read_csv(path: str) -> List[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
