"""Embedding export pipeline.

Turns images, caption texts, and videos into the engine's binary
embedding files plus a JSON manifest, using a pretrained dual-encoder
checkpoint (or a deterministic hashed stand-in when no checkpoint is
available). The engine is consumed purely through its file formats.
"""

from .backends import HashedBackend, TokenizedText, load_backend
from .extract import (
    ExtractError,
    ExtractJob,
    ExtractSummary,
    extract_captions,
    extract_images,
    extract_video_frames,
)
from .formats import write_manifest, write_matrix

__version__ = "0.1.0"

__all__ = [
    "ExtractError",
    "ExtractJob",
    "ExtractSummary",
    "HashedBackend",
    "TokenizedText",
    "extract_captions",
    "extract_images",
    "extract_video_frames",
    "load_backend",
    "write_manifest",
    "write_matrix",
]
