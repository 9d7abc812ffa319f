"""Image and video caption scores over a shared embedding space.

Image side: a clamped, scaled cosine between image and caption embeddings,
optionally harmonic-meaned with the best reference similarity. Video side:
the average of a coarse score (pooled frames vs. the caption's end-marker
embedding) and a fine-grained IDF-weighted token/frame matching F1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .embedkit import DegenerateInputError, cosine_sim, normalize_rows

UNIT_NORM_TOL = 1e-6

# Scale factors chosen per backbone family so scores land in a readable range
# without affecting rankings.
DEFAULT_W = {"base": 2.5, "large": 3.0}


@dataclass(frozen=True)
class ScoreConfig:
    w: float = 2.5
    backbone_tag: str = "base"

    def __post_init__(self):
        if not self.w > 0:
            raise ValueError(f"scaling factor must be positive, got {self.w}")

    @classmethod
    def for_backbone(cls, tag: str) -> "ScoreConfig":
        if tag not in DEFAULT_W:
            raise KeyError(f"no default scaling factor for backbone {tag!r}")
        return cls(w=DEFAULT_W[tag], backbone_tag=tag)


@dataclass(frozen=True)
class TokenizedCaption:
    """Per-token embedding rows with start/end markers.

    The first row is the start marker and the last row the end marker; the
    end-marker row doubles as the caption's global embedding.
    """

    token_embeddings: np.ndarray
    token_strings: tuple[str, ...]

    def __post_init__(self):
        arr = np.asarray(self.token_embeddings, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("token embeddings must be a 2-D matrix")
        if arr.shape[0] < 2:
            raise ValueError("caption needs at least start and end markers")
        if arr.shape[0] != len(self.token_strings):
            raise ValueError(
                f"{len(self.token_strings)} token strings for {arr.shape[0]} rows"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite token embedding")
        arr.setflags(write=False)
        object.__setattr__(self, "token_embeddings", arr)
        object.__setattr__(self, "token_strings", tuple(self.token_strings))

    @property
    def length(self) -> int:
        return self.token_embeddings.shape[0]

    @property
    def sos_index(self) -> int:
        return 0

    @property
    def eos_index(self) -> int:
        return self.length - 1

    @property
    def global_embedding(self) -> np.ndarray:
        return self.token_embeddings[-1]


@dataclass(frozen=True)
class VideoEmbedding:
    """Frame embedding rows, each unit-norm."""

    frame_embeddings: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.frame_embeddings, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError("video needs at least one frame embedding row")
        norms = np.linalg.norm(arr, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            raise ValueError(
                f"frame row {bad} has norm {norms[bad]:.8f}, expected unit"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "frame_embeddings", arr)

    @property
    def frame_count(self) -> int:
        return self.frame_embeddings.shape[0]


def _require_unit_rows(arr: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(arr, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        bad = int(np.argmax(np.abs(norms - 1.0)))
        raise ValueError(f"{what} row {bad} has norm {norms[bad]:.8f}, expected unit")


def pac_score(v: np.ndarray, t: np.ndarray, cfg: ScoreConfig) -> float:
    """Reference-free score: w * max(cos(v, t), 0)."""
    return cfg.w * max(cosine_sim(v, t), 0.0)


def harmonic_mean(x: float, y: float) -> float:
    # Limit value at zero; avoids 0/0 when either side vanishes.
    if x <= 0.0 or y <= 0.0:
        return 0.0
    return 2.0 * x * y / (x + y)


def ref_pac_score(
    v: np.ndarray, t: np.ndarray, refs: Sequence[np.ndarray], cfg: ScoreConfig
) -> float:
    """Reference-based score: harmonic mean of the reference-free score and
    the best caption/reference cosine, the latter clamped at zero.

    The scale asymmetry (w-scaled score vs. unscaled reference cosine) is
    deliberate and kept exactly as defined.
    """
    if len(refs) == 0:
        raise ValueError("refs must be non-empty; use pac_score for reference-free")
    top_r = max(0.0, max(cosine_sim(t, r) for r in refs))
    return harmonic_mean(pac_score(v, t, cfg), top_r)


def coarse_video_embedding(video: VideoEmbedding) -> np.ndarray:
    """Unit-norm mean pool of all frame embeddings."""
    pooled = video.frame_embeddings.mean(axis=0)
    norm = np.linalg.norm(pooled)
    if norm == 0.0:
        raise DegenerateInputError("mean-pooled frame embedding has zero norm")
    return pooled / norm


def coarse_score(video: VideoEmbedding, caption: TokenizedCaption) -> float:
    """Inner product of the pooled video embedding and the caption's
    end-marker embedding."""
    _require_unit_rows(caption.global_embedding[None, :], "caption end-marker")
    return float(coarse_video_embedding(video) @ caption.global_embedding)


@dataclass(frozen=True)
class IdfTable:
    """Smoothed inverse document frequencies over a caption corpus."""

    weights: dict[str, float]
    corpus_size: int

    def weight(self, token: str) -> float:
        # Unseen tokens take df = 0 under the same smoothing.
        return self.weights.get(token, math.log(self.corpus_size + 1))

    def weights_for(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.weight(tok) for tok in tokens], dtype=np.float64)


def build_idf(corpus: Sequence[TokenizedCaption]) -> IdfTable:
    """Document-frequency weights: ln((M+1)/(df+1)) with add-one smoothing.

    Start/end markers are counted like any other token, so ubiquitous markers
    get weight ~0 and contribute nothing to the weighted precision.
    """
    if len(corpus) == 0:
        raise ValueError("cannot build IDF from an empty corpus")
    m = len(corpus)
    df: dict[str, int] = {}
    for caption in corpus:
        for token in set(caption.token_strings):
            df[token] = df.get(token, 0) + 1
    weights = {tok: math.log((m + 1) / (count + 1)) for tok, count in df.items()}
    return IdfTable(weights=weights, corpus_size=m)


class FineGrainedScore(NamedTuple):
    precision: float
    recall: float
    f1: float
    uniform_weights: bool = False


def fine_grained_score(
    video: VideoEmbedding, caption: TokenizedCaption, idf: IdfTable
) -> FineGrainedScore:
    """IDF-weighted precision, frame-averaged recall, and their F1.

    Precision takes, per token, the best-matching frame, weighted by the
    token's IDF; recall takes, per frame, the best-matching token. When every
    token has zero IDF the precision falls back to uniform token weights and
    the result is flagged.
    """
    _require_unit_rows(caption.token_embeddings, "caption token")
    sims = video.frame_embeddings @ caption.token_embeddings.T
    best_frame_per_token = sims.max(axis=0)
    best_token_per_frame = sims.max(axis=1)
    weights = idf.weights_for(caption.token_strings)
    total = weights.sum()
    uniform = total <= 0.0
    if uniform:
        weights = np.full(caption.length, 1.0 / caption.length)
        total = 1.0
    precision = float((weights * best_frame_per_token).sum() / total)
    recall = float(best_token_per_frame.mean())
    if precision + recall <= 0.0:
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return FineGrainedScore(precision, recall, f1, uniform)


def video_score(
    video: VideoEmbedding, caption: TokenizedCaption, idf: IdfTable
) -> float:
    """Average of the coarse score and the fine-grained F1."""
    fine = fine_grained_score(video, caption, idf)
    return (coarse_score(video, caption) + fine.f1) / 2.0


def text_as_video(caption: TokenizedCaption) -> VideoEmbedding:
    """Reinterpret a caption's token rows as frame rows for text-vs-text
    fine-grained matching."""
    return VideoEmbedding(caption.token_embeddings)


def text_score(
    candidate: TokenizedCaption, ref: TokenizedCaption, idf: IdfTable
) -> float:
    """Score a caption against a reference caption.

    The reference's token rows play the frame role in the fine-grained part,
    while its end-marker embedding stands in for the pooled video embedding
    in the coarse part, so a caption scored against itself yields exactly 1.
    """
    coarse = float(ref.global_embedding @ candidate.global_embedding)
    fine = fine_grained_score(text_as_video(ref), candidate, idf)
    return (coarse + fine.f1) / 2.0


def ref_video_score(
    video: VideoEmbedding,
    caption: TokenizedCaption,
    refs: Sequence[TokenizedCaption],
    idf: IdfTable,
) -> float:
    """Average of the reference-free video score and the best per-reference
    text score."""
    if len(refs) == 0:
        raise ValueError("refs must be non-empty; use video_score for reference-free")
    best_text = max(text_score(caption, ref, idf) for ref in refs)
    return (video_score(video, caption, idf) + best_text) / 2.0


@dataclass(frozen=True)
class ScoreRecord:
    """One emitted score line: {id, metric, score, flags[]}."""

    id: str
    metric: str
    score: float
    flags: tuple[str, ...] = field(default_factory=tuple)

    def to_json(self) -> str:
        return json.dumps(
            {"id": self.id, "metric": self.metric, "score": self.score,
             "flags": list(self.flags)},
            sort_keys=False,
        )


def write_score_records(records: Iterable[ScoreRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")
