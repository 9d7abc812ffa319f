"""Positive-augmented contrastive training of low-rank projection adapters.

Two frozen linear projection heads (visual and text) map pre-projection
features into a shared space. Training adds a rank-r delta to each head,
optimized with a weighted sum of three symmetric InfoNCE terms: real pairs,
generated images against real captions, and real images against generated
captions. Gradients are exact and hand-derived; the optimizer is AdamW with
decoupled weight decay.

All numerics are float64 and single-threaded deterministic given a seed.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .embedkit import DegenerateInputError

VALID_RANKS = (2, 4, 8, 16)

NORM_TOL = 1e-4

# Parameter dictionary keys, also the checkpoint payload order.
PARAM_KEYS = ("visual_a", "visual_b", "text_a", "text_b")

CHECKPOINT_FORMAT = "pacmetric-adapters-v1"


def _as_batch(name: str, arr) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite values")
    return out


@dataclass(frozen=True)
class DataTuple:
    """One batch of four aligned feature blocks: real images, real captions,
    generated images, generated captions."""

    v: np.ndarray
    t: np.ndarray
    v_gen: np.ndarray
    t_gen: np.ndarray

    def __post_init__(self):
        v = _as_batch("v", self.v)
        t = _as_batch("t", self.t)
        v_gen = _as_batch("v_gen", self.v_gen)
        t_gen = _as_batch("t_gen", self.t_gen)
        if not (v.shape == t.shape == v_gen.shape == t_gen.shape):
            raise ValueError("all four feature blocks must share one shape")
        if v.shape[0] < 1:
            raise ValueError("batch must hold at least one tuple")
        for name, arr in (("v", v), ("t", t), ("v_gen", v_gen), ("t_gen", t_gen)):
            object.__setattr__(self, name, arr)

    @property
    def size(self) -> int:
        return self.v.shape[0]

    def take(self, idx: np.ndarray) -> "DataTuple":
        return DataTuple(self.v[idx], self.t[idx], self.v_gen[idx],
                         self.t_gen[idx])


@dataclass(frozen=True)
class FrozenHeads:
    """The two fixed projection matrices (d_in x d_out per side)."""

    visual: np.ndarray
    text: np.ndarray

    def __post_init__(self):
        visual = _as_batch("visual head", self.visual)
        text = _as_batch("text head", self.text)
        object.__setattr__(self, "visual", visual)
        object.__setattr__(self, "text", text)


@dataclass(frozen=True)
class LoraAdapter:
    """Rank-r delta for one projection head: W_eff = W + (alpha/r) * A @ B.

    B starts at zero so the adapted head reproduces the frozen one exactly.
    The {2, 4, 8, 16} rank grid is enforced where ranks are user-chosen
    (TrainConfig); the type itself admits any r >= 1 so small hand fixtures
    stay expressible.
    """

    a: np.ndarray
    b: np.ndarray
    alpha: float
    rank: int

    def __post_init__(self):
        a = _as_batch("A", self.a)
        b = _as_batch("B", self.b)
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if a.shape[1] != self.rank or b.shape[0] != self.rank:
            raise ValueError(
                f"rank {self.rank} inconsistent with A {a.shape} / B {b.shape}"
            )
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank


@dataclass(frozen=True)
class EncoderAdapters:
    visual: LoraAdapter
    text: LoraAdapter


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.01
    lambda_v: float = 0.1
    lambda_t: float = 0.001
    lr: float = 1e-4
    batch_size: int = 256
    patience_iters: int = 1500
    seed: int = 0
    rank: int = 4
    alpha: float | None = None
    max_iters: int = 2000
    val_every: int = 100
    weight_decay: float = 0.01

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.lambda_v < 0 or self.lambda_t < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1 or self.patience_iters < 1:
            raise ValueError("batch_size and patience_iters must be >= 1")
        if self.rank not in VALID_RANKS:
            raise ValueError(f"rank must be one of {VALID_RANKS}")
        if self.max_iters < 1 or self.val_every < 1:
            raise ValueError("max_iters and val_every must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    @property
    def resolved_alpha(self) -> float:
        # Default scaling of exactly 1: alpha equals the rank.
        return float(self.rank) if self.alpha is None else float(self.alpha)


def config_hash(cfg: TrainConfig) -> str:
    payload = json.dumps(dataclasses.asdict(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Adapter construction and projection.

def init_adapter(
    d_in: int, d_out: int, rank: int, alpha: float, rng: np.random.Generator
) -> LoraAdapter:
    """Seeded Gaussian A (sigma 0.02), zero B."""
    a = rng.normal(0.0, 0.02, size=(d_in, rank))
    b = np.zeros((rank, d_out))
    return LoraAdapter(a=a, b=b, alpha=alpha, rank=rank)


def init_encoder_adapters(
    heads: FrozenHeads, rank: int, alpha: float, rng: np.random.Generator
) -> EncoderAdapters:
    # Draw order is part of the determinism contract: visual A, then text A.
    visual = init_adapter(heads.visual.shape[0], heads.visual.shape[1],
                          rank, alpha, rng)
    text = init_adapter(heads.text.shape[0], heads.text.shape[1],
                        rank, alpha, rng)
    return EncoderAdapters(visual=visual, text=text)


def effective_projection(base: np.ndarray, adapter: LoraAdapter) -> np.ndarray:
    if base.shape != (adapter.a.shape[0], adapter.b.shape[1]):
        raise ValueError(
            f"head shape {base.shape} incompatible with adapter "
            f"{adapter.a.shape} x {adapter.b.shape}"
        )
    return base + adapter.scaling * (adapter.a @ adapter.b)


def lora_forward(base: np.ndarray, adapter: LoraAdapter, x: np.ndarray) -> np.ndarray:
    """Project x through the adapted head: x @ (base + (alpha/r) A B)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != base.shape[0]:
        raise ValueError(f"input dim {x.shape[-1]} vs head rows {base.shape[0]}")
    return x @ effective_projection(base, adapter)


def encode(features: np.ndarray, base: np.ndarray, adapter: LoraAdapter) -> np.ndarray:
    """Project a feature batch and normalize each row to unit length."""
    proj = lora_forward(base, adapter, _as_batch("features", features))
    norms = np.linalg.norm(proj, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        bad = int(np.argmin(norms))
        raise DegenerateInputError(f"projected row {bad} has zero norm")
    return proj / norms


# ---------------------------------------------------------------------------
# Losses.

def _check_normalized(name: str, rows: np.ndarray) -> np.ndarray:
    rows = _as_batch(name, rows)
    norms = np.linalg.norm(rows, axis=1)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        bad = int(np.argmax(np.abs(norms - 1.0)))
        raise ValueError(
            f"{name} row {bad} has norm {norms[bad]:.6f}; rows must be "
            "unit-normalized"
        )
    return rows


def _nce_core(x_hat: np.ndarray, y_hat: np.ndarray, tau: float):
    """Loss and dLoss/dS for the symmetric two-direction InfoNCE.

    S = x_hat @ y_hat.T / tau; the two cross-entropy directions (rows and
    columns, diagonal targets) are averaged.
    """
    n = x_hat.shape[0]
    s = (x_hat @ y_hat.T) / tau
    row_max = s.max(axis=1, keepdims=True)
    row_lse = row_max[:, 0] + np.log(np.exp(s - row_max).sum(axis=1))
    col_max = s.max(axis=0, keepdims=True)
    col_lse = col_max[0, :] + np.log(np.exp(s - col_max).sum(axis=0))
    diag = np.diag(s)
    loss = 0.5 * ((row_lse - diag).mean() + (col_lse - diag).mean())
    p_row = np.exp(s - row_lse[:, None])
    p_col = np.exp(s - col_lse[None, :])
    eye = np.eye(n)
    ds = ((p_row - eye) + (p_col - eye)) / (2.0 * n)
    return float(loss), ds


def info_nce(x_hat: np.ndarray, y_hat: np.ndarray, tau: float) -> float:
    """Symmetric InfoNCE over unit-normalized row batches, the two softmax
    directions averaged. N = 1 collapses to 0."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    x_hat = _check_normalized("x", x_hat)
    y_hat = _check_normalized("y", y_hat)
    if x_hat.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {x_hat.shape} vs {y_hat.shape}")
    loss, _ = _nce_core(x_hat, y_hat, tau)
    return loss


def cross_positive_loss(x_hat: np.ndarray, y_hat: np.ndarray, tau: float) -> float:
    """Same functional form as info_nce, applied to a (real, generated)
    pairing where the generated items act as extra positives."""
    return info_nce(x_hat, y_hat, tau)


def _forward_sides(batch: DataTuple, heads: FrozenHeads, adapters: EncoderAdapters):
    """Project and normalize all four blocks; keep what backward needs."""
    sides = {}
    for key, feats, base, adapter in (
        ("v", batch.v, heads.visual, adapters.visual),
        ("t", batch.t, heads.text, adapters.text),
        ("v_gen", batch.v_gen, heads.visual, adapters.visual),
        ("t_gen", batch.t_gen, heads.text, adapters.text),
    ):
        proj = feats @ effective_projection(base, adapter)
        norms = np.linalg.norm(proj, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise DegenerateInputError(f"{key} has a zero-norm projected row")
        sides[key] = (feats, proj / norms, norms)
    return sides


_LOSS_TERMS = (("v", "t", None), ("v_gen", "t", "lambda_v"), ("v", "t_gen", "lambda_t"))


def combined_loss_and_grads(
    batch: DataTuple,
    heads: FrozenHeads,
    adapters: EncoderAdapters,
    tau: float,
    lambda_v: float,
    lambda_t: float,
):
    """Value and exact adapter gradients of the three-term objective
    L = L(v,t) + lambda_v * L(v_gen,t) + lambda_t * L(v,t_gen)."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    sides = _forward_sides(batch, heads, adapters)
    weights = {None: 1.0, "lambda_v": lambda_v, "lambda_t": lambda_t}
    total = 0.0
    d_hat = {key: np.zeros_like(sides[key][1]) for key in sides}
    for x_key, y_key, weight_name in _LOSS_TERMS:
        weight = weights[weight_name]
        if weight == 0.0:
            continue
        x_hat = sides[x_key][1]
        y_hat = sides[y_key][1]
        loss, ds = _nce_core(x_hat, y_hat, tau)
        total += weight * loss
        d_hat[x_key] += weight * (ds @ y_hat) / tau
        d_hat[y_key] += weight * (ds.T @ x_hat) / tau

    def proj_grad(key):
        feats, hat, norms = sides[key]
        # Through row normalization y = x/|x|: dx = (dy - y (y . dy)) / |x|.
        d_proj = (d_hat[key] - hat * np.sum(hat * d_hat[key], axis=1,
                                            keepdims=True)) / norms
        return feats.T @ d_proj

    dw_visual = proj_grad("v") + proj_grad("v_gen")
    dw_text = proj_grad("t") + proj_grad("t_gen")
    grads = {
        "visual_a": adapters.visual.scaling * (dw_visual @ adapters.visual.b.T),
        "visual_b": adapters.visual.scaling * (adapters.visual.a.T @ dw_visual),
        "text_a": adapters.text.scaling * (dw_text @ adapters.text.b.T),
        "text_b": adapters.text.scaling * (adapters.text.a.T @ dw_text),
    }
    return total, grads


def combined_loss(
    batch: DataTuple,
    heads: FrozenHeads,
    adapters: EncoderAdapters,
    tau: float,
    lambda_v: float,
    lambda_t: float,
) -> float:
    loss, _ = combined_loss_and_grads(batch, heads, adapters, tau,
                                      lambda_v, lambda_t)
    return loss


def combined_loss_grad(
    batch: DataTuple,
    heads: FrozenHeads,
    adapters: EncoderAdapters,
    tau: float,
    lambda_v: float,
    lambda_t: float,
) -> dict[str, np.ndarray]:
    _, grads = combined_loss_and_grads(batch, heads, adapters, tau,
                                       lambda_v, lambda_t)
    return grads


# ---------------------------------------------------------------------------
# Optimizer.

@dataclass(frozen=True)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


def init_adam_state(
    params: Mapping[str, np.ndarray],
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> AdamState:
    zeros = lambda: {k: np.zeros_like(p) for k, p in params.items()}
    return AdamState(m=zeros(), v=zeros(), t=0, beta1=beta1, beta2=beta2,
                     eps=eps, weight_decay=weight_decay)


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
):
    """One decoupled-weight-decay Adam update. Pure: returns new params and
    state; raises (leaving inputs untouched) on any non-finite gradient."""
    if set(params) != set(grads):
        raise ValueError("params and grads must share keys")
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {key!r}")
        if g.shape != params[key].shape:
            raise ValueError(f"gradient shape mismatch for {key!r}")
    t = state.t + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_m, new_v, new_p = {}, {}, {}
    for key, p in params.items():
        g = np.asarray(grads[key], dtype=np.float64)
        m = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[key] + (1.0 - state.beta2) * g * g
        step = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_m[key] = m
        new_v[key] = v
        # Decay is applied to the parameter directly, not through the moments.
        new_p[key] = p - lr * state.weight_decay * p - lr * step
    return new_p, dataclasses.replace(state, m=new_m, v=new_v, t=t)


# ---------------------------------------------------------------------------
# Training loop.

@dataclass(frozen=True)
class TrainHistoryEntry:
    iteration: int
    train_loss: float
    val_loss: float | None


@dataclass(frozen=True)
class TrainResult:
    adapters: EncoderAdapters
    history: tuple[TrainHistoryEntry, ...]
    best_val_loss: float
    best_iteration: int
    stopped_early: bool


def adapters_to_params(adapters: EncoderAdapters) -> dict[str, np.ndarray]:
    return {
        "visual_a": adapters.visual.a.copy(),
        "visual_b": adapters.visual.b.copy(),
        "text_a": adapters.text.a.copy(),
        "text_b": adapters.text.b.copy(),
    }


def params_to_adapters(
    params: Mapping[str, np.ndarray], alpha: float, rank: int
) -> EncoderAdapters:
    return EncoderAdapters(
        visual=LoraAdapter(a=params["visual_a"], b=params["visual_b"],
                           alpha=alpha, rank=rank),
        text=LoraAdapter(a=params["text_a"], b=params["text_b"],
                         alpha=alpha, rank=rank),
    )


def train_adapters(
    train: DataTuple,
    val: DataTuple,
    heads: FrozenHeads,
    cfg: TrainConfig,
) -> TrainResult:
    """Minibatch training with periodic validation and early stopping.

    Validation runs every cfg.val_every iterations (and at the last one);
    training stops once no new validation minimum has appeared for
    cfg.patience_iters iterations. The adapters at the best validation loss
    are returned. Single-threaded runs are bit-reproducible per seed.
    """
    if train.v.shape[1] != heads.visual.shape[0]:
        raise ValueError("feature dim does not match projection heads")
    rng = np.random.default_rng(cfg.seed)
    alpha = cfg.resolved_alpha
    adapters = init_encoder_adapters(heads, cfg.rank, alpha, rng)
    params = adapters_to_params(adapters)
    state = init_adam_state(params, weight_decay=cfg.weight_decay)

    n = train.size
    best_val = math.inf
    best_iter = 0
    best_params = {k: p.copy() for k, p in params.items()}
    history: list[TrainHistoryEntry] = []
    stopped_early = False

    for it in range(1, cfg.max_iters + 1):
        idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        batch = train.take(idx)
        loss, grads = combined_loss_and_grads(
            batch, heads, params_to_adapters(params, alpha, cfg.rank),
            cfg.tau, cfg.lambda_v, cfg.lambda_t,
        )
        params, state = adamw_step(params, grads, state, cfg.lr)

        val_loss = None
        if it % cfg.val_every == 0 or it == cfg.max_iters:
            val_loss = combined_loss(
                val, heads, params_to_adapters(params, alpha, cfg.rank),
                cfg.tau, cfg.lambda_v, cfg.lambda_t,
            )
            if val_loss < best_val:
                best_val = val_loss
                best_iter = it
                best_params = {k: p.copy() for k, p in params.items()}
        history.append(TrainHistoryEntry(it, loss, val_loss))
        if best_iter > 0 and it - best_iter >= cfg.patience_iters:
            stopped_early = True
            break

    return TrainResult(
        adapters=params_to_adapters(best_params, alpha, cfg.rank),
        history=tuple(history),
        best_val_loss=best_val,
        best_iteration=best_iter,
        stopped_early=stopped_early,
    )


def retrieval_r_at_1(
    image_rows: np.ndarray,
    text_rows: np.ndarray,
    labels: np.ndarray | None = None,
) -> float:
    """Image-to-text retrieval accuracy at rank 1.

    Without labels, a query is correct when its own paired caption wins.
    With labels, it is correct when the winning caption carries the query's
    label; that is the right granularity for clustered data where captions
    within a class are interchangeable by construction.
    """
    image_rows = _check_normalized("image rows", image_rows)
    text_rows = _check_normalized("text rows", text_rows)
    sims = image_rows @ text_rows.T
    winners = np.argmax(sims, axis=1)
    if labels is None:
        return float(np.mean(winners == np.arange(image_rows.shape[0])))
    labels = np.asarray(labels)
    return float(np.mean(labels[winners] == labels))


# ---------------------------------------------------------------------------
# Synthetic clustered data for desk-scale training checks.

@dataclass(frozen=True)
class SyntheticData:
    train: DataTuple
    val: DataTuple
    train_labels: np.ndarray
    val_labels: np.ndarray
    anchors: np.ndarray


def synthetic_clusters(
    n_train: int = 512,
    n_val: int = 48,
    d_in: int = 16,
    k_classes: int = 4,
    seed: int = 0,
    noise_real: float = 0.05,
    noise_gen: float = 0.10,
) -> SyntheticData:
    """Well-separated cluster tuples.

    K orthonormal anchors; each tuple draws v and t as its class anchor plus
    Gaussian noise (sigma noise_real) and v_gen / t_gen as independent
    noisier copies (sigma noise_gen). Class labels cycle so every class is
    equally represented.
    """
    if k_classes < 2 or k_classes > d_in:
        raise ValueError("need 2 <= k_classes <= d_in")
    if n_train < 1 or n_val < 1:
        raise ValueError("need at least one train and one val tuple")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(d_in, d_in)))
    anchors = q[:, :k_classes].T

    def block(labels, sigma):
        return anchors[labels] + rng.normal(0.0, sigma,
                                            size=(labels.size, d_in))

    def tuples(n):
        labels = np.arange(n) % k_classes
        return DataTuple(
            v=block(labels, noise_real),
            t=block(labels, noise_real),
            v_gen=block(labels, noise_gen),
            t_gen=block(labels, noise_gen),
        ), labels

    train, train_labels = tuples(n_train)
    val, val_labels = tuples(n_val)
    return SyntheticData(train=train, val=val, train_labels=train_labels,
                         val_labels=val_labels, anchors=anchors)


def random_heads(d_in: int, d_out: int, seed: int) -> FrozenHeads:
    """Two independent random projections; nothing aligns them, so any
    post-training alignment is the adapters' doing."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / math.sqrt(d_in)
    return FrozenHeads(
        visual=rng.normal(0.0, scale, size=(d_in, d_out)),
        text=rng.normal(0.0, scale, size=(d_in, d_out)),
    )


# ---------------------------------------------------------------------------
# Checkpoints and curves.

def save_adapters(
    adapters: EncoderAdapters,
    path: str | Path,
    seed: int,
    cfg_hash: str,
) -> None:
    """Write a checkpoint: little-endian u32 header length, UTF-8 JSON
    header, then float32 LE row-major payloads in PARAM_KEYS order."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "seed": seed,
        "config_hash": cfg_hash,
        "payload_order": list(PARAM_KEYS),
        "sides": {
            "visual": {
                "d_in": adapters.visual.a.shape[0],
                "d_out": adapters.visual.b.shape[1],
                "rank": adapters.visual.rank,
                "alpha": adapters.visual.alpha,
            },
            "text": {
                "d_in": adapters.text.a.shape[0],
                "d_out": adapters.text.b.shape[1],
                "rank": adapters.text.rank,
                "alpha": adapters.text.alpha,
            },
        },
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    params = adapters_to_params(adapters)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for key in PARAM_KEYS:
            fh.write(np.ascontiguousarray(params[key], dtype="<f4").tobytes())


def load_adapters(path: str | Path) -> tuple[EncoderAdapters, dict]:
    """Read a checkpoint; payload values widen from float32 to float64."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ValueError("checkpoint truncated before header length")
    (header_len,) = struct.unpack_from("<I", raw, 0)
    if len(raw) < 4 + header_len:
        raise ValueError("checkpoint truncated inside header")
    try:
        header = json.loads(raw[4:4 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"invalid checkpoint header: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unknown checkpoint format {header.get('format')!r}")
    if header.get("payload_order") != list(PARAM_KEYS):
        raise ValueError("unexpected checkpoint payload order")
    shapes = {}
    for side in ("visual", "text"):
        info = header["sides"][side]
        shapes[f"{side}_a"] = (int(info["d_in"]), int(info["rank"]))
        shapes[f"{side}_b"] = (int(info["rank"]), int(info["d_out"]))
    offset = 4 + header_len
    params = {}
    for key in PARAM_KEYS:
        rows, cols = shapes[key]
        nbytes = rows * cols * 4
        if len(raw) < offset + nbytes:
            raise ValueError(f"checkpoint truncated inside payload {key!r}")
        flat = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=offset)
        params[key] = flat.astype(np.float64).reshape(rows, cols)
        offset += nbytes
    if offset != len(raw):
        raise ValueError(f"{len(raw) - offset} trailing bytes after payloads")
    adapters = EncoderAdapters(
        visual=LoraAdapter(
            a=params["visual_a"], b=params["visual_b"],
            alpha=float(header["sides"]["visual"]["alpha"]),
            rank=int(header["sides"]["visual"]["rank"]),
        ),
        text=LoraAdapter(
            a=params["text_a"], b=params["text_b"],
            alpha=float(header["sides"]["text"]["alpha"]),
            rank=int(header["sides"]["text"]["rank"]),
        ),
    )
    return adapters, header


def write_history_csv(history: Iterable[TrainHistoryEntry], path: str | Path) -> None:
    """Training curves: one row per iteration, val_loss blank off-cadence."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "train_loss", "val_loss"])
        for entry in history:
            writer.writerow([
                entry.iteration,
                repr(entry.train_loss),
                "" if entry.val_loss is None else repr(entry.val_loss),
            ])
