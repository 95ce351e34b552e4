"""
Content-hashed JSON artifacts and CSV series.

An artifact is a JSON object ``{"format", "kind", "inputs", "payload",
"hash"}``.  ``inputs`` maps upstream artifact kinds to their hashes, so a
result is traceable to the exact upstream files.  ``hash`` is the SHA-256 of
the canonical JSON of ``(format, kind, inputs, payload)``.  Canonical JSON uses
sorted keys and ``repr`` floats, so identical content gives identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

FORMAT = "scatmap-artifact/1"


class ArtifactError(ValueError):
    """Missing, malformed, stale or mismatched artifact."""


def jsonable(obj):
    """Recursively convert numpy values, tuples and non-finite floats to JSON types."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no inf/nan; keep them readable and round-trippable
        return x if math.isfinite(x) else repr(x)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def content_hash(kind: str, inputs: dict, payload: dict) -> str:
    body = {"format": FORMAT, "kind": kind, "inputs": inputs, "payload": payload}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()


def atomic_write(path, text: str) -> Path:
    """Write via a temporary file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_artifact(path, kind: str, payload: dict, inputs: dict | None = None) -> str:
    """Write an artifact and return its hash."""
    inputs = dict(sorted((inputs or {}).items()))
    payload = jsonable(payload)
    h = content_hash(kind, inputs, payload)
    doc = {"format": FORMAT, "kind": kind, "inputs": inputs, "payload": payload, "hash": h}
    atomic_write(path, canonical_json(doc))
    return h


def read_artifact(path, kind: str | None = None) -> dict:
    """
    Load an artifact and verify its hash (and kind, when given).

    Raises
    ------
    ArtifactError
        If the file is missing, not an artifact, of another kind, or its
        content no longer matches the stored hash.
    """
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"artifact not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ArtifactError(f"{path}: not a {FORMAT} artifact")
    if kind is not None and doc.get("kind") != kind:
        raise ArtifactError(f"{path}: expected a {kind!r} artifact, found {doc.get('kind')!r}")
    h = content_hash(doc["kind"], doc.get("inputs", {}), doc.get("payload", {}))
    if h != doc.get("hash"):
        raise ArtifactError(f"{path}: stale or edited artifact (hash mismatch)")
    return doc


def as_float(x) -> float:
    """Inverse of the non-finite encoding used by ``jsonable``."""
    return float(x)


def write_csv(path, columns: list, rows) -> Path:
    """Fixed-column CSV with ``repr`` floats."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return atomic_write(path, buf.getvalue())
