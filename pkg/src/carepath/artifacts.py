"""Deterministic artifact input/output.

All pipeline outputs are JSON written in one canonical form (sorted keys,
fixed indentation, trailing newline, no timestamps), so a rerun on identical
inputs produces byte-identical files. Artifacts carry a schema tag and the
SHA-256 digests of their inputs, letting downstream steps detect stale or
mismatched files.
"""

from __future__ import annotations

import enum
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ArtifactError


def jsonify(obj):
    """Recursively convert an object into plain JSON-serializable types."""
    if isinstance(obj, enum.Enum):
        return jsonify(obj.value)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return jsonify(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonify(v) for v in obj]
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    raise ArtifactError(f"cannot serialize object of type {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Canonical JSON text: sorted keys, 2-space indent, trailing newline."""
    return json.dumps(jsonify(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def text_sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(path: str | Path, obj) -> str:
    """Write an object as canonical JSON; returns the content digest."""
    text = canonical_json(obj)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return text_sha256(text)


def read_json(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"artifact not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"artifact {path} is not valid JSON: {exc}") from exc


def expect_schema(obj, schema: str):
    """Check an artifact's schema tag; returns the artifact."""
    if not isinstance(obj, dict) or obj.get("schema") != schema:
        found = obj.get("schema") if isinstance(obj, dict) else type(obj).__name__
        raise ArtifactError(f"expected artifact schema {schema!r}, found {found!r}")
    return obj


def build_header(kind: str, seed: int | None, config: dict, inputs: dict[str, str]) -> dict:
    """Common artifact header: schema tag, seed, config digest, input digests."""
    return {
        "schema": f"carepath.{kind}.v1",
        "seed": seed,
        "config_sha256": text_sha256(canonical_json(config)),
        "inputs": dict(sorted(inputs.items())),
    }
