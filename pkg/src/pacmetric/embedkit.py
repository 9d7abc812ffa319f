"""Embedding matrices, the binary interchange format, and dense similarity ops.

Everything downstream (scoring, training, evaluation) consumes embeddings
through this module. Matrices are float64 in memory and float32 little-endian
on disk; the file layout is fixed so that independently written files are
bit-exact interchangeable.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PACE"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0
HEADER_SIZE = 32
PAYLOAD_OFFSET = 32

ITEM_KINDS = ("image", "caption", "frame_sequence")


class FormatError(ValueError):
    """Raised when an embedding file does not conform to the binary format."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DegenerateInputError(ValueError):
    """Raised for inputs that are valid in shape but numerically degenerate."""


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Immutable row-major matrix of embedding rows.

    ``values`` is a read-only float64 array of shape (rows, dim). Use
    :func:`matrix_from_values` to construct one with validation.
    """

    values: np.ndarray

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def matrix_from_values(values: np.ndarray) -> EmbeddingMatrix:
    """Validate and freeze a 2-D array into an EmbeddingMatrix.

    Requires dim >= 1 and every value finite. The input is copied to a
    C-contiguous float64 array and marked read-only.
    """
    arr = np.array(values, dtype=np.float64, order="C")
    if arr.ndim != 2:
        raise ValueError(f"embedding matrix must be 2-D, got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise ValueError("embedding dimension must be at least 1")
    if arr.size and not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr).ravel())[0])
        raise ValueError(f"non-finite value at flat index {bad}")
    arr.setflags(write=False)
    return EmbeddingMatrix(arr)


def save_embeddings(m: EmbeddingMatrix, path: str | Path) -> None:
    """Write a matrix in the binary interchange format.

    Values are rounded to nearest float32. Rejects non-finite data before
    touching the file, so a failed save never leaves a partial artifact.
    """
    if m.values.size and not np.all(np.isfinite(m.values)):
        raise ValueError("refusing to save matrix containing non-finite values")
    payload = np.ascontiguousarray(m.values, dtype="<f4")
    header = MAGIC + struct.pack(
        "<IIIB", FORMAT_VERSION, m.rows, m.dim, DTYPE_FLOAT32
    ) + b"\x00" * 15
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload.tobytes())
    except OSError as exc:
        raise OSError(f"failed to write embeddings to {path}: {exc}") from exc


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Read a matrix written by :func:`save_embeddings`.

    The float32 payload is widened to float64, which is exact, so the returned
    values are bit-identical to the file contents.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_SIZE:
        raise FormatError("truncated header", len(raw))
    if raw[0:4] != MAGIC:
        raise FormatError(f"bad magic {raw[0:4]!r}, expected {MAGIC!r}", 0)
    version, rows, dim, dtype = struct.unpack("<IIIB", raw[4:17])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if dim < 1:
        raise FormatError("embedding dimension must be at least 1", 12)
    if dtype != DTYPE_FLOAT32:
        raise FormatError(f"unknown dtype code {dtype}", 16)
    if any(raw[17:32]):
        bad = 17 + next(i for i, b in enumerate(raw[17:32]) if b)
        raise FormatError("reserved header bytes must be zero", bad)
    expected = rows * dim * 4
    if len(raw) - PAYLOAD_OFFSET != expected:
        raise FormatError(
            f"payload has {len(raw) - PAYLOAD_OFFSET} bytes, expected {expected}",
            len(raw),
        )
    data = np.frombuffer(raw, dtype="<f4", count=rows * dim, offset=PAYLOAD_OFFSET)
    finite = np.isfinite(data)
    if not np.all(finite):
        bad = int(np.flatnonzero(~finite)[0])
        raise FormatError("non-finite value in payload", PAYLOAD_OFFSET + bad * 4)
    return matrix_from_values(data.astype(np.float64).reshape(rows, dim))


def l2_normalize(m: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale every row to unit Euclidean norm.

    Zero-norm rows are a hard error rather than being mapped to zero; silent
    zeros would corrupt the clamped scores computed downstream.
    """
    norms = np.linalg.norm(m.values, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateInputError(f"zero-norm row at index {int(zero[0])}")
    return matrix_from_values(m.values / norms[:, None])


def normalize_rows(values: np.ndarray) -> np.ndarray:
    """Row-normalize a plain array; same zero-norm policy as l2_normalize."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    norms = np.linalg.norm(arr, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateInputError(f"zero-norm row at index {int(zero[0])}")
    return arr / norms[:, None]


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity between two vectors of equal dimension."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity undefined for zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def pairwise_sim_matrix(a: EmbeddingMatrix, b: EmbeddingMatrix) -> np.ndarray:
    """All pairwise cosine similarities: entry (i, j) = cos(a_i, b_j)."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    an = normalize_rows(a.values)
    bn = normalize_rows(b.values)
    return np.clip(an @ bn.T, -1.0, 1.0)


@dataclass(frozen=True)
class ItemRecord:
    """One corpus item: where its rows live and what they mean."""

    id: str
    kind: str
    file: str
    row_range: tuple[int, int]
    tokens: tuple[str, ...] | None = None
    refs: tuple[str, ...] | None = None

    @property
    def row_count(self) -> int:
        return self.row_range[1] - self.row_range[0]


@dataclass(frozen=True)
class Manifest:
    corpus_id: str
    items: tuple[ItemRecord, ...] = field(default_factory=tuple)

    def item(self, item_id: str) -> ItemRecord:
        for it in self.items:
            if it.id == item_id:
                return it
        raise KeyError(f"no item with id {item_id!r}")


def _parse_item(obj: dict) -> ItemRecord:
    kind = obj["kind"]
    if kind not in ITEM_KINDS:
        raise ValueError(f"item {obj.get('id')!r}: unknown kind {kind!r}")
    start, end = obj["row_range"]
    if not (0 <= start <= end):
        raise ValueError(f"item {obj.get('id')!r}: bad row range [{start}, {end})")
    tokens = obj.get("tokens")
    if tokens is not None:
        if kind != "caption":
            raise ValueError(f"item {obj.get('id')!r}: tokens only allowed on captions")
        if len(tokens) != end - start:
            raise ValueError(
                f"item {obj.get('id')!r}: {len(tokens)} tokens for {end - start} rows"
            )
    refs = obj.get("refs")
    return ItemRecord(
        id=obj["id"],
        kind=kind,
        file=obj["file"],
        row_range=(int(start), int(end)),
        tokens=tuple(tokens) if tokens is not None else None,
        refs=tuple(refs) if refs is not None else None,
    )


def load_manifest(path: str | Path) -> Manifest:
    """Parse a UTF-8 JSON manifest and check its internal invariants."""
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    items = tuple(_parse_item(it) for it in obj["items"])
    seen: set[str] = set()
    for it in items:
        if it.id in seen:
            raise ValueError(f"duplicate item id {it.id!r}")
        seen.add(it.id)
    return Manifest(corpus_id=obj["corpus_id"], items=items)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    items = []
    for it in manifest.items:
        rec: dict = {
            "id": it.id,
            "kind": it.kind,
            "file": it.file,
            "row_range": list(it.row_range),
        }
        if it.tokens is not None:
            rec["tokens"] = list(it.tokens)
        if it.refs is not None:
            rec["refs"] = list(it.refs)
        items.append(rec)
    payload = {"corpus_id": manifest.corpus_id, "items": items}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")


class EmbeddingStore:
    """Resolves manifest items to their embedding rows.

    Loads each referenced file once and verifies that every row range lies
    inside its file. Matrices are immutable, so cached slices can be shared
    freely across readers.
    """

    def __init__(self, manifest: Manifest, base_dir: str | Path):
        self.manifest = manifest
        self.base_dir = Path(base_dir)
        self._cache: dict[str, EmbeddingMatrix] = {}
        for it in manifest.items:
            matrix = self._load(it.file)
            if it.row_range[1] > matrix.rows:
                raise ValueError(
                    f"item {it.id!r}: row range {it.row_range} exceeds "
                    f"{matrix.rows} rows in {it.file}"
                )

    def _load(self, rel: str) -> EmbeddingMatrix:
        if rel not in self._cache:
            self._cache[rel] = load_embeddings(self.base_dir / rel)
        return self._cache[rel]

    def rows_for(self, item_id: str) -> np.ndarray:
        it = self.manifest.item(item_id)
        start, end = it.row_range
        return self._load(it.file).values[start:end]
