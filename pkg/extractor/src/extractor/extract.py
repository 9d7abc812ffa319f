"""Extraction jobs: images, caption texts, and videos to embedding
files plus a manifest.

Every operation writes to fresh files only, hashes input content for
stable manifest ids, and records what it skipped in a summary file.
Re-running a job with the same checkpoint and inputs reproduces the
outputs byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .backends import load_backend
from .formats import write_manifest, write_matrix

log = logging.getLogger("extractor")


class ExtractError(ValueError):
    """Job misconfiguration or an unmet precondition."""


@dataclass(frozen=True)
class ExtractJob:
    """One extraction run: inputs, checkpoint, and output layout."""

    inputs: tuple[str, ...]
    checkpoint: str
    out_dir: Path
    frame_rate: float = 1.0
    batch_size: int = 8
    pre_projection: bool = False
    corpus_id: str = ""

    def __post_init__(self):
        if not self.inputs:
            raise ExtractError("job needs at least one input")
        if not self.frame_rate > 0:
            raise ExtractError(
                f"frame rate must be positive, got {self.frame_rate}")
        if self.batch_size < 1:
            raise ExtractError("batch size must be at least 1")
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if not self.corpus_id:
            object.__setattr__(self, "corpus_id", self.checkpoint)


@dataclass(frozen=True)
class ExtractSummary:
    written: int
    skipped: tuple[tuple[str, str], ...] = ()
    truncated: tuple[str, ...] = ()
    files: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "written": self.written,
            "skipped": [list(pair) for pair in self.skipped],
            "truncated": list(self.truncated),
            "files": list(self.files),
        }


def _require_fresh(paths: list[Path]) -> None:
    for path in paths:
        if path.exists():
            raise ExtractError(f"refusing to overwrite {path}")


def _content_id(prefix: str, payload: bytes, seen: dict[str, int]) -> str:
    digest = hashlib.sha256(payload).hexdigest()[:16]
    base = f"{prefix}-{digest}"
    count = seen.get(base, 0) + 1
    seen[base] = count
    return base if count == 1 else f"{base}-{count}"


def _finish(job: ExtractJob, rows: list[np.ndarray], items: list[dict],
            matrix_name: str, summary: ExtractSummary,
            extra_matrices: dict[str, np.ndarray] | None = None
            ) -> ExtractSummary:
    if not rows:
        raise ExtractError("no inputs could be extracted")
    job.out_dir.mkdir(parents=True, exist_ok=True)
    targets = [job.out_dir / matrix_name, job.out_dir / "manifest.json",
               job.out_dir / "summary.json"]
    extra_matrices = extra_matrices or {}
    targets.extend(job.out_dir / name for name in extra_matrices)
    _require_fresh(targets)

    write_matrix(np.vstack(rows), job.out_dir / matrix_name)
    for name, values in extra_matrices.items():
        write_matrix(values, job.out_dir / name)
    write_manifest(job.corpus_id, items, job.out_dir / "manifest.json")
    summary = ExtractSummary(
        written=summary.written,
        skipped=summary.skipped,
        truncated=summary.truncated,
        files=tuple(str(t) for t in targets),
    )
    with open(job.out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _encode_images(backend, images: list[Image.Image],
                   batch_size: int, pre_projection: bool) -> np.ndarray:
    chunks = []
    for start in range(0, len(images), batch_size):
        pre, post = backend.encode_image_batch(
            images[start:start + batch_size])
        chunks.append(pre if pre_projection else post)
    return np.vstack(chunks)


def extract_images(job: ExtractJob) -> ExtractSummary:
    """One row per decodable image; undecodable inputs are skipped and
    logged, never fatal."""
    backend = load_backend(job.checkpoint)
    decoded: list[Image.Image] = []
    payloads: list[bytes] = []
    skipped: list[tuple[str, str]] = []
    for path in job.inputs:
        try:
            raw = Path(path).read_bytes()
            with Image.open(Path(path)) as img:
                decoded.append(img.convert("RGB"))
            payloads.append(raw)
        except (OSError, UnidentifiedImageError) as exc:
            log.warning("skipping undecodable image %s: %s", path, exc)
            skipped.append((str(path), "undecodable"))
    items = []
    seen: dict[str, int] = {}
    for i, payload in enumerate(payloads):
        items.append({
            "id": _content_id("img", payload, seen),
            "kind": "image",
            "file": "images.bin",
            "row_range": [i, i + 1],
        })
    rows = []
    if decoded:
        matrix = _encode_images(backend, decoded, job.batch_size,
                                job.pre_projection)
        rows = [matrix]
    return _finish(job, rows, items, "images.bin",
                   ExtractSummary(written=len(decoded),
                                  skipped=tuple(skipped)))


def extract_captions(job: ExtractJob) -> ExtractSummary:
    """Per-token matrices with both markers, plus a pooled file whose
    row per caption is the projected end-marker position."""
    backend = load_backend(job.checkpoint)
    for text in job.inputs:
        if not text.strip():
            raise ExtractError("caption texts must be non-empty")
    rows = []
    pooled = []
    items = []
    truncated = []
    seen: dict[str, int] = {}
    offset = 0
    for text in job.inputs:
        tok = backend.tokenize(text)
        pre, post = backend.encode_tokens(tok.tokens)
        length = len(tok.tokens)
        caption_id = _content_id("cap", text.encode("utf-8"), seen)
        if tok.truncated:
            truncated.append(caption_id)
        rows.append(pre if job.pre_projection else post)
        # the global embedding is the end marker's projected row
        pooled.append(post[-1])
        items.append({
            "id": caption_id,
            "kind": "caption",
            "file": "captions.bin",
            "row_range": [offset, offset + length],
            "tokens": list(tok.tokens),
            "pooled_file": "pooled.bin",
            "pooled_row": len(pooled) - 1,
        })
        offset += length
    return _finish(
        job, rows, items, "captions.bin",
        ExtractSummary(written=len(items), truncated=tuple(truncated)),
        extra_matrices={"pooled.bin": np.vstack(pooled)},
    )


def _sample_video(path: str, frame_rate: float):
    """Decode frames at the requested rate; returns (images, timestamps)
    or None when the file cannot be read."""
    try:
        import cv2
    except ImportError as exc:
        raise ExtractError(
            "video extraction needs opencv-python installed") from exc
    capture = cv2.VideoCapture(str(path))
    if not capture.isOpened():
        return None
    fps = capture.get(cv2.CAP_PROP_FPS)
    if not fps or fps != fps or fps <= 0:
        fps = 30.0
    wanted: list[int] = []
    times: list[float] = []
    total = int(capture.get(cv2.CAP_PROP_FRAME_COUNT))
    duration = total / fps if total > 0 else 0.0
    k = 0
    while True:
        t = k / frame_rate
        if total > 0 and t >= duration:
            break
        index = min(int(round(t * fps)), max(total - 1, 0))
        if total > 0 and wanted and index <= wanted[-1]:
            index = wanted[-1] + 1
            if index >= total:
                break
        wanted.append(index)
        times.append(t)
        k += 1
        if total <= 0 and k > 100000:
            break
    images = []
    stamps = []
    pos = 0
    target = 0
    while target < len(wanted):
        got, frame = capture.read()
        if not got:
            break
        if pos == wanted[target]:
            rgb = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
            images.append(Image.fromarray(rgb))
            stamps.append(times[target])
            target += 1
        pos += 1
    capture.release()
    if not images:
        return None
    return images, stamps


def extract_video_frames(job: ExtractJob) -> ExtractSummary:
    """Frames sampled at job.frame_rate, encoded like images; the
    manifest records each frame's timestamp in seconds."""
    backend = load_backend(job.checkpoint)
    blocks: list[np.ndarray] = []
    items = []
    skipped: list[tuple[str, str]] = []
    seen: dict[str, int] = {}
    offset = 0
    for path in job.inputs:
        try:
            payload = Path(path).read_bytes()
        except OSError as exc:
            log.warning("skipping unreadable video %s: %s", path, exc)
            skipped.append((str(path), "unreadable"))
            continue
        sampled = _sample_video(path, job.frame_rate)
        if sampled is None:
            log.warning("skipping undecodable video %s", path)
            skipped.append((str(path), "undecodable"))
            continue
        images, stamps = sampled
        matrix = _encode_images(backend, images, job.batch_size,
                                job.pre_projection)
        blocks.append(matrix)
        items.append({
            "id": _content_id("vid", payload, seen),
            "kind": "frame_sequence",
            "file": "videos.bin",
            "row_range": [offset, offset + len(images)],
            "timestamps": stamps,
        })
        offset += len(images)
    return _finish(job, blocks, items, "videos.bin",
                   ExtractSummary(written=len(items),
                                  skipped=tuple(skipped)))
