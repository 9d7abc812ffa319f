"""Operator subcommands wiring manifests, scoring, statistics, training,
and the self-critical demo.

Every command is a thin composition of library calls: inputs are
validated up front, results come from the public module functions, and
a single JSON report (plus an optional plot-ready CSV) is written at
the end.  Identical configuration and seed produce identical bytes.
Flag values win over config-file entries, which win over defaults, and
the resolved values are echoed into the report.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import importlib.resources
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import evalstats, paclearn, scst
from .embedkit import (
    DegenerateInputError,
    EmbeddingStore,
    FormatError,
    Manifest,
    load_manifest,
)
from .scoring import (
    IdfTable,
    ScoreConfig,
    ScoreRecord,
    TokenizedCaption,
    VideoEmbedding,
    build_idf,
    pac_score,
    ref_pac_score,
    ref_video_score,
    video_score,
)

__all__ = [
    "CliError",
    "RunConfig",
    "parse_args",
    "validate",
    "run",
    "main",
    "emit_plot_data",
    "bundled_fixture",
]

COMMANDS = (
    "score-image",
    "score-video",
    "eval-corr",
    "eval-pairwise",
    "eval-foil",
    "train-pac",
    "scst-demo",
    "grammar",
)

AGGREGATIONS = ("raw", "mean_proportion_yes")

# knobs reachable only through the config file; flags cover the rest
TRAIN_EXTRA_KEYS = ("lr", "batch_size", "patience_iters", "alpha",
                    "max_iters", "val_every", "weight_decay")
SCST_EXTRA_KEYS = ("lr",)

# defaults for the bundled synthetic training run; the library-level
# TrainConfig defaults stay untouched
DESK_TRAIN = dict(lr=5e-3, batch_size=64, patience_iters=1500,
                  max_iters=600, val_every=100)

DEFAULTS: dict[str, Any] = {
    "manifest": None,
    "embeddings_dir": None,
    "pairs": None,
    "judgments": None,
    "captions": None,
    "stoplist": None,
    "out": None,
    "csv_out": None,
    "config": None,
    "aggregation": "raw",
    "use_refs": False,
    "w": 2.5,
    "seed": 0,
    "draws": 5,
    "refs_per_draw": 5,
    "rank": 4,
    "lambda_v": 0.1,
    "lambda_t": 0.001,
    "tau": 0.07,
    "beam": 5,
    "max_n": 4,
}

PATH_KEYS = ("manifest", "embeddings_dir", "pairs", "judgments",
             "captions", "stoplist", "out", "csv_out")

REQUIRED_FILES = {
    "score-image": ("manifest", "pairs"),
    "score-video": ("manifest", "pairs"),
    "eval-corr": ("manifest", "judgments"),
    "eval-pairwise": ("manifest", "pairs"),
    "eval-foil": ("manifest", "pairs"),
    "train-pac": (),
    "scst-demo": (),
    "grammar": ("captions",),
}


class CliError(Exception):
    """Configuration or input problem surfaced as an error record."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one command invocation."""

    command: str
    manifest: Path | None = None
    embeddings_dir: Path | None = None
    pairs: Path | None = None
    judgments: Path | None = None
    captions: Path | None = None
    stoplist: Path | None = None
    out: Path | None = None
    csv_out: Path | None = None
    aggregation: str = "raw"
    use_refs: bool = False
    w: float = 2.5
    seed: int = 0
    draws: int = 5
    refs_per_draw: int = 5
    rank: int = 4
    lambda_v: float = 0.1
    lambda_t: float = 0.001
    tau: float = 0.07
    beam: int = 5
    max_n: int = 4
    train_extra: dict = field(default_factory=dict)
    scst_extra: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# argument parsing and config-file merge


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pacmetric",
        description="Caption metric engine over precomputed embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", default=None,
                        help="JSON file with default flag values")
        sp.add_argument("--out", default=None,
                        help="path for the JSON report")
        sp.add_argument("--csv", dest="csv_out", default=None,
                        help="path for the plot-ready CSV")
        sp.add_argument("--seed", type=int, default=None)

    def manifest_flags(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--manifest", default=None,
                        help="embedding manifest JSON")
        sp.add_argument("--embeddings-dir", dest="embeddings_dir",
                        default=None,
                        help="base directory for embedding files "
                             "(default: the manifest's directory)")

    def scoring_flags(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--refs", dest="use_refs", action="store_true",
                        default=None,
                        help="score with the reference captions listed "
                             "in the manifest or evaluation file")
        sp.add_argument("--w", type=float, default=None,
                        help="clamped-cosine scale factor")

    sp = sub.add_parser("score-image", help="score captions against images")
    common(sp); manifest_flags(sp); scoring_flags(sp)
    sp.add_argument("--pairs", default=None,
                    help="JSON-lines pairing of image and caption ids")

    sp = sub.add_parser("score-video", help="score captions against videos")
    common(sp); manifest_flags(sp); scoring_flags(sp)
    sp.add_argument("--pairs", default=None,
                    help="JSON-lines pairing of video and caption ids")

    sp = sub.add_parser("eval-corr",
                        help="rank correlations against human judgments")
    common(sp); manifest_flags(sp); scoring_flags(sp)
    sp.add_argument("--judgments", default=None,
                    help="JSON-lines human judgment set")
    sp.add_argument("--aggregation", choices=AGGREGATIONS, default=None)

    sp = sub.add_parser("eval-pairwise",
                        help="voted caption-pair accuracy")
    common(sp); manifest_flags(sp); scoring_flags(sp)
    sp.add_argument("--pairs", default=None,
                    help="JSON-lines voted caption pairs")
    sp.add_argument("--draws", type=int, default=None,
                    help="reference draws per pair")
    sp.add_argument("--refs-per-draw", dest="refs_per_draw", type=int,
                    default=None)

    sp = sub.add_parser("eval-foil",
                        help="correct-vs-altered caption accuracy")
    common(sp); manifest_flags(sp); scoring_flags(sp)
    sp.add_argument("--pairs", default=None,
                    help="JSON-lines correct/altered caption pairs")

    sp = sub.add_parser("train-pac",
                        help="train adapters on the bundled synthetic set")
    common(sp)
    sp.add_argument("--tau", type=float, default=None,
                    help="contrastive temperature for the synthetic run")
    sp.add_argument("--lambda-v", dest="lambda_v", type=float, default=None)
    sp.add_argument("--lambda-t", dest="lambda_t", type=float, default=None)
    sp.add_argument("--rank", type=int, default=None)

    sp = sub.add_parser("scst-demo",
                        help="run the toy self-critical training demo")
    common(sp)
    sp.add_argument("--beam", type=int, default=None)
    sp.add_argument("--w", type=float, default=None)
    sp.add_argument("--stoplist", default=None,
                    help="override the packaged ending stoplist")

    sp = sub.add_parser("grammar", help="caption quality counters")
    common(sp)
    sp.add_argument("--captions", default=None,
                    help="text file with one caption per line")
    sp.add_argument("--stoplist", default=None,
                    help="override the packaged ending stoplist")

    return parser


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"config file not found: {path}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path}: invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise CliError(f"config file {path}: expected a JSON object")
    allowed = (set(DEFAULTS) | {"train", "scst"}) - {"config"}
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise CliError(f"config file {path}: unknown keys {unknown}")
    return obj


def parse_args(argv: Sequence[str] | None = None) -> RunConfig:
    args = _build_parser().parse_args(argv)
    file_cfg = _load_config_file(args.config) if args.config else {}

    def pick(name: str) -> Any:
        flag = getattr(args, name, None)
        if flag is not None:
            return flag
        if name in file_cfg:
            return file_cfg[name]
        return DEFAULTS[name]

    values: dict[str, Any] = {}
    for name in DEFAULTS:
        if name == "config":
            continue
        val = pick(name)
        if name in PATH_KEYS and val is not None:
            val = Path(val)
        values[name] = val
    values["use_refs"] = bool(values["use_refs"])
    train_extra = file_cfg.get("train", {})
    scst_extra = file_cfg.get("scst", {})
    for label, extra, allowed in (("train", train_extra, TRAIN_EXTRA_KEYS),
                                  ("scst", scst_extra, SCST_EXTRA_KEYS)):
        if not isinstance(extra, dict):
            raise CliError(f"config section {label!r} must be an object")
        unknown = sorted(set(extra) - set(allowed))
        if unknown:
            raise CliError(
                f"config section {label!r}: unknown keys {unknown}"
            )
    return RunConfig(command=args.command, train_extra=dict(train_extra),
                     scst_extra=dict(scst_extra), **values)


def validate(cfg: RunConfig) -> list[str]:
    """Every configuration problem, collected before any work starts."""
    errors: list[str] = []
    if cfg.command not in COMMANDS:
        return [f"unknown command {cfg.command!r}"]
    for name in REQUIRED_FILES[cfg.command]:
        val = getattr(cfg, name)
        if val is None:
            errors.append(f"{cfg.command} requires --{name.replace('_', '-')}")
        elif not Path(val).is_file():
            errors.append(f"{name} file not found: {val}")
    if cfg.embeddings_dir is not None and not cfg.embeddings_dir.is_dir():
        errors.append(f"embeddings dir not found: {cfg.embeddings_dir}")
    if cfg.stoplist is not None and not cfg.stoplist.is_file():
        errors.append(f"stoplist file not found: {cfg.stoplist}")
    for name in ("out", "csv_out"):
        val = getattr(cfg, name)
        if val is None:
            continue
        if not val.parent.is_dir():
            errors.append(f"directory for {name} does not exist: {val.parent}")
        elif val.is_dir():
            errors.append(f"{name} path is a directory: {val}")
    if not cfg.w > 0:
        errors.append(f"w must be positive, got {cfg.w}")
    if cfg.aggregation not in AGGREGATIONS:
        errors.append(f"aggregation must be one of {AGGREGATIONS}")
    if cfg.draws < 1:
        errors.append("draws must be at least 1")
    if cfg.refs_per_draw < 1:
        errors.append("refs-per-draw must be at least 1")
    if cfg.beam < 1:
        errors.append("beam must be at least 1")
    if cfg.max_n < 1:
        errors.append("max_n must be at least 1")
    if cfg.command == "train-pac":
        if cfg.rank not in paclearn.VALID_RANKS:
            errors.append(
                f"rank must be one of {paclearn.VALID_RANKS}, got {cfg.rank}"
            )
        if not cfg.tau > 0:
            errors.append(f"tau must be positive, got {cfg.tau}")
        if cfg.lambda_v < 0 or cfg.lambda_t < 0:
            errors.append("lambda-v and lambda-t must be non-negative")
    return errors


# --------------------------------------------------------------------------
# shared plumbing


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CliError(f"{path}:{lineno}: invalid JSON: {exc}") \
                    from None
            if not isinstance(obj, dict):
                raise CliError(f"{path}:{lineno}: expected an object")
            records.append(obj)
    if not records:
        raise CliError(f"{path}: no records")
    return records


def _thread_cap() -> int:
    raw = os.environ.get("PACMETRIC_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise CliError(
            f"PACMETRIC_THREADS must be an integer, got {raw!r}"
        ) from None


def _map(fn: Callable, items: Sequence) -> list:
    """Ordered map over items; fans out when the thread cap allows."""
    items = list(items)
    cap = _thread_cap()
    if cap == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(cap, len(items))) as ex:
        return list(ex.map(fn, items))


class _Corpus:
    """Kind-checked embedding lookups shared by the scoring commands."""

    def __init__(self, manifest: Manifest, store: EmbeddingStore):
        self.manifest = manifest
        self.store = store
        self._idf: IdfTable | None = None

    def _item(self, item_id: str, kind: str):
        try:
            item = self.manifest.item(item_id)
        except KeyError:
            raise CliError(f"manifest has no item {item_id!r}") from None
        if item.kind != kind:
            raise CliError(
                f"item {item_id!r} has kind {item.kind!r}, expected {kind!r}"
            )
        return item

    def image(self, item_id: str) -> np.ndarray:
        self._item(item_id, "image")
        rows = self.store.rows_for(item_id)
        if rows.shape[0] != 1:
            raise CliError(
                f"image item {item_id!r} spans {rows.shape[0]} rows, "
                "expected exactly 1"
            )
        return rows[0]

    def caption(self, item_id: str) -> TokenizedCaption:
        item = self._item(item_id, "caption")
        return TokenizedCaption(self.store.rows_for(item_id), item.tokens)

    def caption_refs(self, item_id: str) -> tuple[str, ...]:
        item = self._item(item_id, "caption")
        return item.refs or ()

    def video(self, item_id: str) -> VideoEmbedding:
        self._item(item_id, "frame_sequence")
        return VideoEmbedding(self.store.rows_for(item_id))

    def idf(self) -> IdfTable:
        if self._idf is None:
            corpus = [self.caption(it.id) for it in self.manifest.items
                      if it.kind == "caption"]
            if not corpus:
                raise CliError("manifest has no caption items to build "
                               "document frequencies from")
            self._idf = build_idf(corpus)
        return self._idf


def _load_corpus(cfg: RunConfig) -> _Corpus:
    manifest = load_manifest(cfg.manifest)
    base = cfg.embeddings_dir or cfg.manifest.parent
    return _Corpus(manifest, EmbeddingStore(manifest, base))


def _require_keys(records: list[dict], keys: Sequence[str],
                  path: Path) -> None:
    for i, rec in enumerate(records):
        missing = [k for k in keys if k not in rec]
        if missing:
            raise CliError(f"{path}: record {i} is missing {missing}")


def _record_dict(record: ScoreRecord) -> dict:
    return {"id": record.id, "metric": record.metric,
            "score": record.score, "flags": list(record.flags)}


def _caption_scorer(corpus: _Corpus, cfg: RunConfig) -> Callable:
    """Image/caption-id scorer used by the voted-pair and foil commands."""
    score_cfg = ScoreConfig(w=cfg.w)

    def scorer(image_id: str, caption_id: str,
               refs: tuple[str, ...]) -> float:
        img = corpus.image(image_id)
        cand = corpus.caption(caption_id).global_embedding
        if cfg.use_refs and refs:
            ref_vecs = [corpus.caption(r).global_embedding for r in refs]
            return ref_pac_score(img, cand, ref_vecs, score_cfg)
        return pac_score(img, cand, score_cfg)

    return scorer


# --------------------------------------------------------------------------
# commands


def _cmd_score_image(cfg: RunConfig):
    corpus = _load_corpus(cfg)
    score_cfg = ScoreConfig(w=cfg.w)
    pairs = _read_jsonl(cfg.pairs)
    _require_keys(pairs, ("item_id", "image_id", "caption_id"), cfg.pairs)

    def one(rec: dict) -> ScoreRecord:
        img = corpus.image(rec["image_id"])
        cand = corpus.caption(rec["caption_id"]).global_embedding
        if cfg.use_refs:
            ref_ids = corpus.caption_refs(rec["caption_id"])
            if not ref_ids:
                raise CliError(
                    f"caption {rec['caption_id']!r} lists no references"
                )
            refs = [corpus.caption(r).global_embedding for r in ref_ids]
            return ScoreRecord(rec["item_id"], "ref_pac_score",
                               ref_pac_score(img, cand, refs, score_cfg))
        return ScoreRecord(rec["item_id"], "pac_score",
                           pac_score(img, cand, score_cfg))

    records = _map(one, pairs)
    results = {"records": [_record_dict(r) for r in records]}
    series = [{"id": r.id, "score": r.score} for r in records]
    return results, series


def _cmd_score_video(cfg: RunConfig):
    corpus = _load_corpus(cfg)
    pairs = _read_jsonl(cfg.pairs)
    _require_keys(pairs, ("item_id", "video_id", "caption_id"), cfg.pairs)
    idf = corpus.idf()

    def one(rec: dict) -> ScoreRecord:
        video = corpus.video(rec["video_id"])
        cand = corpus.caption(rec["caption_id"])
        if cfg.use_refs:
            ref_ids = corpus.caption_refs(rec["caption_id"])
            if not ref_ids:
                raise CliError(
                    f"caption {rec['caption_id']!r} lists no references"
                )
            refs = [corpus.caption(r) for r in ref_ids]
            return ScoreRecord(rec["item_id"], "ref_video_score",
                               ref_video_score(video, cand, refs, idf))
        return ScoreRecord(rec["item_id"], "video_score",
                           video_score(video, cand, idf))

    records = _map(one, pairs)
    results = {"records": [_record_dict(r) for r in records]}
    series = [{"id": r.id, "score": r.score} for r in records]
    return results, series


def _cmd_eval_corr(cfg: RunConfig):
    corpus = _load_corpus(cfg)
    score_cfg = ScoreConfig(w=cfg.w)
    judgments = evalstats.load_judgment_set(cfg.judgments, cfg.aggregation)
    kinds = set()

    def one(j: evalstats.Judgment) -> float:
        rec = j.metric_inputs
        if "video_id" in rec:
            kinds.add("video_score")
            return video_score(corpus.video(rec["video_id"]),
                               corpus.caption(rec["caption_id"]),
                               corpus.idf())
        if "image_id" in rec:
            img = corpus.image(rec["image_id"])
            cand = corpus.caption(rec["caption_id"]).global_embedding
            if cfg.use_refs:
                ref_ids = corpus.caption_refs(rec["caption_id"])
                if not ref_ids:
                    raise CliError(
                        f"caption {rec['caption_id']!r} lists no references"
                    )
                kinds.add("ref_pac_score")
                refs = [corpus.caption(r).global_embedding
                        for r in ref_ids]
                return ref_pac_score(img, cand, refs, score_cfg)
            kinds.add("pac_score")
            return pac_score(img, cand, score_cfg)
        raise CliError(
            f"judgment {j.item_id!r} names neither an image nor a video"
        )

    scores = _map(one, judgments.items)
    human = [j.human_score for j in judgments.items]
    metric = kinds.pop() if len(kinds) == 1 else "mixed"
    dataset = cfg.judgments.stem
    n = len(scores)
    reports = [
        evalstats.make_report(metric, dataset, "kendall_tau_b",
                              evalstats.kendall_tau_b(scores, human), n,
                              cfg.seed),
        evalstats.make_report(metric, dataset, "kendall_tau_c",
                              evalstats.kendall_tau_c(scores, human), n,
                              cfg.seed),
        evalstats.make_report(metric, dataset, "spearman_rho",
                              evalstats.spearman_rho(scores, human), n,
                              cfg.seed),
    ]
    per_item = [
        {"item_id": j.item_id, "metric_score": s, "human_score": h}
        for j, s, h in zip(judgments.items, scores, human)
    ]
    return {"reports": reports, "scores": per_item}, per_item


def _cmd_eval_pairwise(cfg: RunConfig):
    corpus = _load_corpus(cfg)
    pairs = evalstats.load_pairwise_set(cfg.pairs)
    acc = evalstats.pairwise_accuracy(
        pairs, _caption_scorer(corpus, cfg), seed=cfg.seed,
        draws=cfg.draws, refs_per_draw=cfg.refs_per_draw,
    )
    per_category = dict(sorted(acc.per_category.items()))
    results = {"mean": acc.mean, "per_category": per_category,
               "draws": acc.draws, "seed": acc.seed,
               "n": len(pairs.pairs)}
    series = [{"category": k, "accuracy": v}
              for k, v in per_category.items()]
    series.append({"category": "mean", "accuracy": acc.mean})
    return results, series


def _cmd_eval_foil(cfg: RunConfig):
    corpus = _load_corpus(cfg)
    pairs = evalstats.load_foil_set(cfg.pairs)
    value = evalstats.foil_accuracy(pairs, _caption_scorer(corpus, cfg))
    metric = "ref_pac_score" if cfg.use_refs else "pac_score"
    report = evalstats.make_report(metric, cfg.pairs.stem, "foil_accuracy",
                                   value, len(pairs.pairs), cfg.seed)
    series = [{"statistic": "foil_accuracy", "value": value}]
    return {"reports": [report]}, series


def _cmd_train_pac(cfg: RunConfig):
    data = paclearn.synthetic_clusters(seed=cfg.seed)
    d_in = data.train.v.shape[1]
    heads = paclearn.random_heads(d_in, d_in // 2, seed=cfg.seed + 1)
    kwargs = dict(DESK_TRAIN)
    kwargs.update(cfg.train_extra)
    train_cfg = paclearn.TrainConfig(
        tau=cfg.tau, lambda_v=cfg.lambda_v, lambda_t=cfg.lambda_t,
        rank=cfg.rank, seed=cfg.seed + 2, **kwargs,
    )
    result = paclearn.train_adapters(data.train, data.val, heads, train_cfg)
    v_hat = paclearn.encode(data.val.v, heads.visual, result.adapters.visual)
    t_hat = paclearn.encode(data.val.t, heads.text, result.adapters.text)
    r_at_1 = paclearn.retrieval_r_at_1(v_hat, t_hat, labels=data.val_labels)
    results = {
        "best_val_loss": result.best_val_loss,
        "best_iteration": result.best_iteration,
        "stopped_early": result.stopped_early,
        "iterations": len(result.history),
        "val_image_to_text_r_at_1": r_at_1,
        "train_config": dataclasses.asdict(train_cfg),
        "config_hash": paclearn.config_hash(train_cfg),
    }
    series = [
        {"iteration": e.iteration, "train_loss": e.train_loss,
         "val_loss": e.val_loss}
        for e in result.history
    ]
    return results, series


def _cmd_scst_demo(cfg: RunConfig):
    stop = scst.load_stoplist(str(cfg.stoplist) if cfg.stoplist else None)
    grammar = scst.GrammarConfig(stoplist=stop, max_n=cfg.max_n)
    demo_cfg = scst.ScstConfig(
        beam_size=cfg.beam, lr=cfg.scst_extra.get("lr", 0.5), seed=cfg.seed,
    )
    report = scst.run_scst_demo(seed=cfg.seed, cfg=demo_cfg,
                                score_cfg=ScoreConfig(w=cfg.w),
                                grammar=grammar)
    gain = (report.mean_reward_end - report.mean_reward_start) \
        / abs(report.mean_reward_start)
    results = {
        "mean_reward_start": report.mean_reward_start,
        "mean_reward_end": report.mean_reward_end,
        "relative_gain": gain,
        "rep1_start": report.rep1_start,
        "rep1_end": report.rep1_end,
        "pct_bad_endings_start": report.pct_bad_endings_start,
        "pct_bad_endings_end": report.pct_bad_endings_end,
        "captions_start": [" ".join(c) for c in report.captions_start],
        "captions_end": [" ".join(c) for c in report.captions_end],
    }
    series = [{"step": i + 1, "beam_mean_reward": r}
              for i, r in enumerate(report.curve)]
    return results, series


def _cmd_grammar(cfg: RunConfig):
    lines = cfg.captions.read_text(encoding="utf-8").splitlines()
    captions = [ln.strip() for ln in lines if ln.strip()]
    if not captions:
        raise CliError(f"{cfg.captions}: no captions")
    stop = scst.load_stoplist(str(cfg.stoplist) if cfg.stoplist else None)
    grammar = scst.GrammarConfig(stoplist=stop, max_n=cfg.max_n)
    endings = scst.pct_incorrect_endings(captions, grammar)
    reps = {str(n): scst.rep_n(captions, n)
            for n in range(1, grammar.max_n + 1)}
    results = {
        "n_captions": len(captions),
        "rep_n": reps,
        "pct_incorrect_endings": endings.percentage,
        "empty_captions": endings.empty_captions,
    }
    series = [{"n": n, "rep_n": reps[str(n)]}
              for n in range(1, grammar.max_n + 1)]
    return results, series


_IMPLS = {
    "score-image": _cmd_score_image,
    "score-video": _cmd_score_video,
    "eval-corr": _cmd_eval_corr,
    "eval-pairwise": _cmd_eval_pairwise,
    "eval-foil": _cmd_eval_foil,
    "train-pac": _cmd_train_pac,
    "scst-demo": _cmd_scst_demo,
    "grammar": _cmd_grammar,
}


# --------------------------------------------------------------------------
# output plumbing


def _plot_csv_text(series: Sequence[Mapping[str, Any]]) -> str:
    rows = list(series)
    if not rows:
        raise ValueError("series must be non-empty")
    columns = list(rows[0].keys())
    for i, row in enumerate(rows):
        if list(row.keys()) != columns:
            raise ValueError(f"row {i} columns differ from the header")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([
            "" if v is None else (repr(v) if isinstance(v, float)
                                  else str(v))
            for v in row.values()
        ])
    return buf.getvalue()


def emit_plot_data(series: Sequence[Mapping[str, Any]],
                   path: str | Path) -> None:
    """Write a plot-ready CSV with stable column order and headers.

    Columns follow the first row's key order and every row must carry
    the same keys; None becomes an empty cell.  Reruns are
    byte-identical.
    """
    text = _plot_csv_text(series)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _echo_config(cfg: RunConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        if f.name == "command":
            continue
        val = getattr(cfg, f.name)
        out[f.name] = str(val) if isinstance(val, Path) else val
    return out


def _emit_error(kind: str, details: Sequence[str]) -> None:
    sys.stderr.write(json.dumps(
        {"error": kind, "detail": list(details)}, sort_keys=True,
    ) + "\n")


def run(cfg: RunConfig) -> int:
    """Execute one validated command; artifacts land only on success."""
    errors = validate(cfg)
    if errors:
        _emit_error("invalid configuration", errors)
        return 2
    try:
        results, series = _IMPLS[cfg.command](cfg)
        report = {
            "command": cfg.command,
            "config": _echo_config(cfg),
            "results": results,
        }
        text = json.dumps(report, sort_keys=True, indent=2) + "\n"
        csv_text = _plot_csv_text(series) if cfg.csv_out is not None \
            else None
    except (CliError, ValueError, KeyError, OSError, FormatError,
            DegenerateInputError,
            evalstats.UndefinedCorrelationError) as exc:
        _emit_error(type(exc).__name__, [str(exc)])
        return 1
    if cfg.out is not None:
        cfg.out.write_text(text, encoding="utf-8")
    if csv_text is not None:
        with open(cfg.csv_out, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text)
    sys.stdout.write(text)
    return 0


def bundled_fixture(name: str = "eval_corr") -> Path:
    """Directory of a packaged demo fixture (manifest plus inputs)."""
    root = importlib.resources.files("pacmetric.data") / "fixtures" / name
    path = Path(str(root))
    if not path.is_dir():
        raise CliError(f"no bundled fixture named {name!r}")
    return path


def main(argv: Sequence[str] | None = None) -> int:
    try:
        cfg = parse_args(argv)
    except CliError as exc:
        _emit_error("invalid configuration", [str(exc)])
        return 2
    return run(cfg)


if __name__ == "__main__":
    raise SystemExit(main())
