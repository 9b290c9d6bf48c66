"""Self-describing JSON model files.

A file holds a format tag and version, a ``kind`` (``vae``, ``forest``,
``classifier``, ``arima``), free-form metadata, and named arrays stored with
an explicit shape.  Floats are written with ``repr`` precision, so a
save/load round trip is exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import FormatVersionMismatchError, MissingInputError, ShapeMismatchError

FORMAT = "artifact-model"
FORMAT_VERSION = 1


def encode_array(a: np.ndarray) -> dict[str, Any]:
    a = np.asarray(a)
    kind = "int" if np.issubdtype(a.dtype, np.integer) else "float"
    return {"shape": list(a.shape), "dtype": kind, "data": a.ravel().tolist()}


def decode_array(obj: Mapping[str, Any]) -> np.ndarray:
    shape = tuple(obj["shape"])
    dtype = np.int64 if obj.get("dtype") == "int" else np.float64
    data = np.asarray(obj["data"], dtype=dtype)
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise ShapeMismatchError(f"array has {data.size} values but declares shape {shape}")
    return data.reshape(shape)


def dumps(kind: str, metadata: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> str:
    doc = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "metadata": dict(metadata),
        "arrays": {k: encode_array(v) for k, v in arrays.items()},
    }
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def loads(text: str, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    doc = json.loads(text)
    if doc.get("format") != FORMAT:
        raise FormatVersionMismatchError(f"not an {FORMAT} file")
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatVersionMismatchError(
            f"file format version {doc.get('format_version')} != supported {FORMAT_VERSION}"
        )
    if kind is not None and doc.get("kind") != kind:
        raise FormatVersionMismatchError(f"expected a {kind!r} file, found {doc.get('kind')!r}")
    return doc["metadata"], {k: decode_array(v) for k, v in doc["arrays"].items()}


def save(path: str | Path, kind: str, metadata: Mapping[str, Any],
         arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_text(dumps(kind, metadata, arrays))


def load(path: str | Path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"model file not found: {path}")
    return loads(path.read_text(), kind)
