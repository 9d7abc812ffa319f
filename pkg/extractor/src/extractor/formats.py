"""Writers for the engine's interchange files.

The binary layout is the published contract: a 32-byte header (magic
"PACE", format version, row count, dimension, dtype code, zero padding)
followed by row-major little-endian float32 data. The manifest is a
JSON object with a corpus id and a list of item records. Writing the
bytes here, instead of importing the engine, keeps the two packages
coupled only through the file format.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PACE"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0
HEADER_PADDING = 15


def write_matrix(values: np.ndarray, path: str | Path) -> None:
    """Write a float matrix as little-endian float32 with header."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {values.shape}")
    if values.size and not np.all(np.isfinite(values)):
        raise ValueError("refusing to write non-finite values")
    rows, dim = values.shape
    if dim < 1:
        raise ValueError("dimension must be at least 1")
    header = MAGIC + struct.pack(
        "<IIIB", FORMAT_VERSION, rows, dim, DTYPE_FLOAT32
    ) + b"\x00" * HEADER_PADDING
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def write_manifest(corpus_id: str, items: list[dict],
                   path: str | Path) -> None:
    if not corpus_id:
        raise ValueError("corpus id must be non-empty")
    for item in items:
        for key in ("id", "kind", "file", "row_range"):
            if key not in item:
                raise ValueError(f"manifest item missing {key!r}: {item}")
    doc = {"corpus_id": corpus_id, "items": items}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
