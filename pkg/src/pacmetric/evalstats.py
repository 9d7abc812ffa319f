"""Evaluation statistics for caption metrics.

Rank correlations against human judgments (Kendall's tau-b, Stuart's tau-c,
Spearman's rho), pairwise-preference accuracy over human-voted caption pairs,
and hallucination detection accuracy over correct/foil caption pairs.

The correlations are computed from exact integer pair counts rather than
delegated to a stats library, so the tie conventions stated here are the ones
actually used.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

PAIRWISE_CATEGORIES = ("HC", "HI", "HM", "MM")

AGGREGATION_MODES = ("raw", "mean_proportion_yes")

# Scorer protocol shared by pairwise and foil evaluation:
# (image_id, caption_id, ref_caption_ids) -> real score.
Scorer = Callable[[str, str, tuple[str, ...]], float]


class UndefinedCorrelationError(ValueError):
    """A correlation is requested on degenerate input (e.g. a constant list)."""


def _as_float_arrays(x: Sequence[float], y: Sequence[float]):
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.ndim != 1 or ya.ndim != 1:
        raise ValueError("inputs must be 1-D sequences")
    if xa.size != ya.size:
        raise ValueError(f"length mismatch: {xa.size} vs {ya.size}")
    if xa.size < 2:
        raise ValueError("need at least 2 observations")
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(ya))):
        raise ValueError("non-finite observation")
    return xa, ya


def _pair_counts(x: np.ndarray, y: np.ndarray):
    """Exact counts over all unordered pairs.

    Returns (concordant, discordant, tied in x only, tied in y only,
    tied in both). All integers; row-at-a-time to keep memory linear.
    """
    n = x.size
    nc = nd = tx = ty = txy = 0
    for i in range(n - 1):
        dx = np.sign(x[i + 1:] - x[i])
        dy = np.sign(y[i + 1:] - y[i])
        prod = dx * dy
        nc += int(np.count_nonzero(prod > 0))
        nd += int(np.count_nonzero(prod < 0))
        both = (dx == 0) & (dy == 0)
        txy += int(np.count_nonzero(both))
        tx += int(np.count_nonzero((dx == 0) & ~both))
        ty += int(np.count_nonzero((dy == 0) & ~both))
    return nc, nd, tx, ty, txy


def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> float:
    """Tau-b: (nc - nd) / sqrt((n0 - n1)(n0 - n2)) with the standard
    tie-pair counts n1 (ties in x) and n2 (ties in y)."""
    xa, ya = _as_float_arrays(x, y)
    n = xa.size
    nc, nd, tx, ty, txy = _pair_counts(xa, ya)
    n0 = n * (n - 1) // 2
    n1 = tx + txy
    n2 = ty + txy
    denom_sq = (n0 - n1) * (n0 - n2)
    if denom_sq <= 0:
        raise UndefinedCorrelationError("tau-b undefined: an input is constant")
    return (nc - nd) / math.sqrt(denom_sq)


def kendall_tau_c(x: Sequence[float], y: Sequence[float]) -> float:
    """Stuart's tau-c: 2m(nc - nd) / (n^2 (m - 1)) with
    m = min(#distinct x, #distinct y)."""
    xa, ya = _as_float_arrays(x, y)
    n = xa.size
    m = min(np.unique(xa).size, np.unique(ya).size)
    if m < 2:
        raise UndefinedCorrelationError("tau-c undefined: fewer than 2 levels")
    nc, nd, _, _, _ = _pair_counts(xa, ya)
    return 2.0 * m * (nc - nd) / (n * n * (m - 1))


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties assigned the average of their positions."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    sorted_v = v[order]
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average-rank vectors."""
    xa, ya = _as_float_arrays(x, y)
    rx = average_ranks(xa)
    ry = average_ranks(ya)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom_sq = float(rx @ rx) * float(ry @ ry)
    if denom_sq <= 0.0:
        raise UndefinedCorrelationError("rho undefined: zero rank variance")
    return float(rx @ ry) / math.sqrt(denom_sq)


@dataclass(frozen=True)
class Judgment:
    item_id: str
    human_score: float
    metric_inputs: Any = None


@dataclass(frozen=True)
class JudgmentSet:
    items: tuple[Judgment, ...]
    aggregation: str = "raw"

    def __post_init__(self):
        if self.aggregation not in AGGREGATION_MODES:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if len(self.items) < 2:
            raise ValueError("need at least 2 judgments")
        for item in self.items:
            if not math.isfinite(item.human_score):
                raise ValueError(f"non-finite human score for {item.item_id!r}")

    def human_scores(self) -> list[float]:
        return [item.human_score for item in self.items]


def mean_proportion_yes(votes: Sequence[int]) -> float:
    """Aggregate binary annotations into the fraction voting yes."""
    if len(votes) == 0:
        raise ValueError("no votes to aggregate")
    if any(v not in (0, 1) for v in votes):
        raise ValueError("votes must be 0 or 1")
    return sum(votes) / len(votes)


@dataclass(frozen=True)
class PairwiseJudgment:
    image_id: str
    caption_a: str
    caption_b: str
    votes_a: int
    votes_b: int
    category: str

    def __post_init__(self):
        if self.votes_a < 0 or self.votes_b < 0:
            raise ValueError("vote counts must be non-negative")
        if self.votes_a + self.votes_b <= 0:
            raise ValueError("pair has no votes")
        if self.category not in PAIRWISE_CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")


@dataclass(frozen=True)
class PairwiseSet:
    pairs: tuple[PairwiseJudgment, ...]
    ref_pool: Mapping[str, tuple[str, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class FoilPair:
    image_id: str
    correct_caption_id: str
    foil_caption_id: str
    refs: tuple[str, ...] = ()

    def __post_init__(self):
        if self.correct_caption_id == self.foil_caption_id:
            raise ValueError("correct and foil captions must differ")


@dataclass(frozen=True)
class FoilSet:
    pairs: tuple[FoilPair, ...]


@dataclass(frozen=True)
class PairwiseAccuracy:
    per_category: dict[str, float]
    mean: float
    draws: int
    seed: int


def pairwise_accuracy(
    pairs: PairwiseSet,
    scorer: Scorer,
    seed: int,
    draws: int = 5,
    refs_per_draw: int = 5,
) -> PairwiseAccuracy:
    """Fraction of pairs where the metric strictly prefers the caption the
    human majority preferred, per category and macro-averaged.

    Human vote ties are re-broken by the seeded RNG on every draw; reference
    captions (when refs_per_draw > 0) are re-sampled per draw without
    replacement. Metric score ties count as incorrect, so the seed influences
    results only through those two random choices; with refs_per_draw = 0 and
    no human vote ties, every seed gives the same answer.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    if refs_per_draw < 0:
        raise ValueError("refs_per_draw must be >= 0")
    rng = np.random.default_rng(seed)
    correct: dict[str, int] = {}
    totals: dict[str, int] = {}
    for _ in range(draws):
        for pair in pairs.pairs:
            if pair.votes_a != pair.votes_b:
                a_wins = pair.votes_a > pair.votes_b
            else:
                a_wins = bool(rng.integers(2))
            if refs_per_draw > 0:
                pool = pairs.ref_pool.get(pair.image_id, ())
                if len(pool) < refs_per_draw:
                    raise ValueError(
                        f"image {pair.image_id!r} has {len(pool)} references, "
                        f"need {refs_per_draw}"
                    )
                picked = rng.choice(len(pool), size=refs_per_draw, replace=False)
                refs = tuple(pool[i] for i in picked)
            else:
                refs = ()
            winner, loser = (
                (pair.caption_a, pair.caption_b)
                if a_wins
                else (pair.caption_b, pair.caption_a)
            )
            hit = scorer(pair.image_id, winner, refs) > scorer(
                pair.image_id, loser, refs
            )
            correct[pair.category] = correct.get(pair.category, 0) + int(hit)
            totals[pair.category] = totals.get(pair.category, 0) + 1
    per_category = {
        cat: correct.get(cat, 0) / totals[cat]
        for cat in PAIRWISE_CATEGORIES
        if cat in totals
    }
    mean = sum(per_category.values()) / len(per_category)
    return PairwiseAccuracy(
        per_category=per_category, mean=mean, draws=draws, seed=seed
    )


def foil_accuracy(pairs: FoilSet, scorer: Scorer) -> float:
    """Fraction of pairs where the correct caption strictly outscores its
    foil. Ties count as failures."""
    if len(pairs.pairs) == 0:
        raise ValueError("no foil pairs")
    hits = 0
    for pair in pairs.pairs:
        correct = scorer(pair.image_id, pair.correct_caption_id, pair.refs)
        foil = scorer(pair.image_id, pair.foil_caption_id, pair.refs)
        hits += int(correct > foil)
    return hits / len(pairs.pairs)


def _read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise ValueError(f"{path}:{lineno}: expected an object")
            records.append(record)
    return records


def load_judgment_set(path: str | Path, aggregation: str = "raw") -> JudgmentSet:
    """Read one judgment per line.

    In "raw" mode each record carries a numeric human_score; in
    "mean_proportion_yes" mode it carries human_votes, a list of 0/1
    annotations that is averaged here.
    """
    items = []
    for record in _read_jsonl(path):
        item_id = record["item_id"]
        if aggregation == "mean_proportion_yes":
            score = mean_proportion_yes(record["human_votes"])
        else:
            score = float(record["human_score"])
        items.append(Judgment(item_id=item_id, human_score=score,
                              metric_inputs=record))
    return JudgmentSet(items=tuple(items), aggregation=aggregation)


def load_pairwise_set(path: str | Path) -> PairwiseSet:
    """Read one voted caption pair per line; per-image reference pools are
    accumulated from optional refs lists in file order."""
    pairs = []
    ref_pool: dict[str, list[str]] = {}
    for record in _read_jsonl(path):
        pairs.append(
            PairwiseJudgment(
                image_id=record["image_id"],
                caption_a=record["caption_a"],
                caption_b=record["caption_b"],
                votes_a=int(record["votes_a"]),
                votes_b=int(record["votes_b"]),
                category=record["category"],
            )
        )
        pool = ref_pool.setdefault(record["image_id"], [])
        for ref in record.get("refs", []):
            if ref not in pool:
                pool.append(ref)
    return PairwiseSet(
        pairs=tuple(pairs),
        ref_pool={k: tuple(v) for k, v in ref_pool.items()},
    )


def load_foil_set(path: str | Path) -> FoilSet:
    pairs = [
        FoilPair(
            image_id=record["image_id"],
            correct_caption_id=record["correct_caption_id"],
            foil_caption_id=record["foil_caption_id"],
            refs=tuple(record.get("refs", [])),
        )
        for record in _read_jsonl(path)
    ]
    return FoilSet(pairs=tuple(pairs))


def make_report(
    metric: str,
    dataset: str,
    statistic: str,
    value: float,
    n: int,
    seed: int | None = None,
) -> dict:
    """Result record emitted by the evaluation commands."""
    return {
        "metric": metric,
        "dataset": dataset,
        "statistic": statistic,
        "value": value,
        "n": n,
        "seed": seed,
    }
