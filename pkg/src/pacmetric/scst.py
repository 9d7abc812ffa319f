"""Toy captioning policy trained with self-critical rewards.

A deliberately small autoregressive model over a word vocabulary, a
beam decoder, cross-entropy pretraining, and a REINFORCE-style update
whose baseline is the mean reward of the decoded beam set.  The module
also carries the caption quality counters (n-gram repetition, bad
sentence endings) used to sanity-check generated text.

Everything is dense numpy in float64 and every gradient is written out
by hand so it can be checked against finite differences.
"""

from __future__ import annotations

import dataclasses
import importlib.resources
import math
import string
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .scoring import ScoreConfig, pac_score, ref_pac_score

__all__ = [
    "ToyPolicy",
    "ScoredSequence",
    "ScstConfig",
    "GrammarConfig",
    "ScstResult",
    "EndingsResult",
    "DemoWorld",
    "DemoReport",
    "step_log_probs",
    "sequence_log_prob",
    "xent_loss",
    "xent_loss_per_token",
    "xent_grad",
    "xent_pretrain",
    "beam_search",
    "strip_end_marker",
    "caption_embedding",
    "reward",
    "baseline",
    "scst_gradient",
    "scst_train",
    "rep_n",
    "pct_incorrect_endings",
    "load_stoplist",
    "demo_world",
    "run_scst_demo",
]


# --------------------------------------------------------------------------
# policy


@dataclass(frozen=True)
class ToyPolicy:
    """Linear next-token model conditioned on an image.

    At each step the context is the mean embedding of the tokens
    emitted so far (a zero vector before the first token).  Logits are
    ``[image ; context] @ theta`` over the whole vocabulary; no entry
    is ever masked.  ``eos_token`` names the end marker when the
    vocabulary has one; a policy without it only stops at ``max_len``.
    """

    vocab: tuple[str, ...]
    token_embed: np.ndarray  # (V, D)
    theta: np.ndarray  # (2D, V)
    max_len: int
    eos_token: str | None = "</s>"

    def __post_init__(self) -> None:
        if len(self.vocab) < 2:
            raise ValueError("vocabulary needs at least two tokens")
        if len(set(self.vocab)) != len(self.vocab):
            raise ValueError("vocabulary entries must be unique")
        emb = np.asarray(self.token_embed, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] != len(self.vocab):
            raise ValueError(
                f"token_embed must be ({len(self.vocab)}, D), got {emb.shape}"
            )
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.shape != (2 * emb.shape[1], len(self.vocab)):
            raise ValueError(
                f"theta must be ({2 * emb.shape[1]}, {len(self.vocab)}), "
                f"got {theta.shape}"
            )
        if not np.all(np.isfinite(emb)) or not np.all(np.isfinite(theta)):
            raise ValueError("policy parameters must be finite")
        if self.max_len < 1:
            raise ValueError("max_len must be at least 1")
        emb.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "token_embed", emb)
        object.__setattr__(self, "theta", theta)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def embed_dim(self) -> int:
        return int(self.token_embed.shape[1])

    @property
    def eos_index(self) -> int | None:
        """Index of the end marker, or None when the vocab lacks one."""
        if self.eos_token is None or self.eos_token not in self.vocab:
            return None
        return self.vocab.index(self.eos_token)

    def token_index(self, token: str) -> int:
        try:
            return self.vocab.index(token)
        except ValueError:
            raise ValueError(f"token {token!r} is not in the vocabulary") from None

    def with_theta(self, theta: np.ndarray) -> "ToyPolicy":
        return dataclasses.replace(self, theta=theta)


class ScoredSequence(NamedTuple):
    tokens: tuple[str, ...]
    log_prob: float


@dataclass(frozen=True)
class ScstConfig:
    """Knobs for the self-critical loop."""

    beam_size: int = 5
    lr: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be at least 1")
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")


def _check_image(policy: ToyPolicy, image_emb: np.ndarray) -> np.ndarray:
    img = np.asarray(image_emb, dtype=np.float64)
    if img.shape != (policy.embed_dim,):
        raise ValueError(
            f"image embedding must have shape ({policy.embed_dim},), got {img.shape}"
        )
    if not np.all(np.isfinite(img)):
        raise ValueError("image embedding must be finite")
    return img


def _context(policy: ToyPolicy, prefix: Sequence[int]) -> np.ndarray:
    if len(prefix) == 0:
        return np.zeros(policy.embed_dim)
    return np.mean(policy.token_embed[list(prefix)], axis=0)


def _step_input(policy: ToyPolicy, image_emb: np.ndarray, prefix: Sequence[int]) -> np.ndarray:
    return np.concatenate([image_emb, _context(policy, prefix)])


def step_log_probs(
    policy: ToyPolicy, image_emb: np.ndarray, prefix: Sequence[int]
) -> np.ndarray:
    """Log-probabilities of the next token given emitted token indices."""
    img = _check_image(policy, image_emb)
    logits = _step_input(policy, img, prefix) @ policy.theta
    # stable log-softmax
    shifted = logits - np.max(logits)
    return shifted - math.log(np.sum(np.exp(shifted)))


def _to_indices(policy: ToyPolicy, tokens: Sequence[str]) -> list[int]:
    return [policy.token_index(t) for t in tokens]


def _validate_sequence(policy: ToyPolicy, idx: Sequence[int]) -> None:
    if len(idx) == 0:
        raise ValueError("token sequence must be non-empty")
    if len(idx) > policy.max_len:
        raise ValueError(
            f"sequence of length {len(idx)} exceeds max_len {policy.max_len}"
        )
    eos = policy.eos_index
    if eos is not None and eos in idx[:-1]:
        raise ValueError("end marker may only appear as the final token")


def sequence_log_prob(
    policy: ToyPolicy, image_emb: np.ndarray, tokens: Sequence[str]
) -> float:
    """Total log-probability of a token sequence under the policy."""
    idx = _to_indices(policy, tokens)
    _validate_sequence(policy, idx)
    total = 0.0
    for k, v in enumerate(idx):
        total += float(step_log_probs(policy, image_emb, idx[:k])[v])
    return total


def _sequence_log_prob_grad(
    policy: ToyPolicy, image_emb: np.ndarray, idx: Sequence[int]
) -> tuple[float, np.ndarray]:
    """Log-probability and its gradient with respect to theta.

    Per step k with input x_k and probabilities p_k, the contribution
    to d log p / d theta is outer(x_k, onehot(v_k) - p_k).
    """
    img = _check_image(policy, image_emb)
    total = 0.0
    grad = np.zeros_like(policy.theta)
    for k, v in enumerate(idx):
        x = _step_input(policy, img, idx[:k])
        logits = x @ policy.theta
        shifted = logits - np.max(logits)
        probs = np.exp(shifted)
        probs /= np.sum(probs)
        total += float(np.log(probs[v]))
        dlogits = -probs
        dlogits[v] += 1.0
        grad += np.outer(x, dlogits)
    return total, grad


# --------------------------------------------------------------------------
# cross-entropy training


def xent_loss(
    policy: ToyPolicy, image_emb: np.ndarray, gt_tokens: Sequence[str]
) -> float:
    """Teacher-forced negative log-likelihood, summed over positions.

    The ground-truth caption must end with the policy's end marker so
    the model is trained to stop.
    """
    idx = _to_indices(policy, gt_tokens)
    _validate_sequence(policy, idx)
    eos = policy.eos_index
    if eos is None:
        raise ValueError("cross-entropy training needs an end marker in the vocab")
    if idx[-1] != eos:
        raise ValueError("ground-truth caption must end with the end marker")
    return -sequence_log_prob(policy, image_emb, gt_tokens)


def xent_loss_per_token(
    policy: ToyPolicy, image_emb: np.ndarray, gt_tokens: Sequence[str]
) -> float:
    return xent_loss(policy, image_emb, gt_tokens) / len(gt_tokens)


def xent_grad(
    policy: ToyPolicy, image_emb: np.ndarray, gt_tokens: Sequence[str]
) -> np.ndarray:
    """Gradient of xent_loss with respect to theta."""
    idx = _to_indices(policy, gt_tokens)
    _validate_sequence(policy, idx)
    eos = policy.eos_index
    if eos is None:
        raise ValueError("cross-entropy training needs an end marker in the vocab")
    if idx[-1] != eos:
        raise ValueError("ground-truth caption must end with the end marker")
    _, grad = _sequence_log_prob_grad(policy, image_emb, idx)
    return -grad


def xent_pretrain(
    policy: ToyPolicy,
    examples: Sequence[tuple[np.ndarray, Sequence[str]]],
    lr: float,
    steps: int,
) -> ToyPolicy:
    """Full-batch gradient descent on the mean caption loss."""
    if len(examples) == 0:
        raise ValueError("need at least one training example")
    if not lr > 0 or steps < 0:
        raise ValueError("lr must be positive and steps non-negative")
    for _ in range(steps):
        grad = np.zeros_like(policy.theta)
        for img, tokens in examples:
            grad += xent_grad(policy, img, tokens)
        policy = policy.with_theta(policy.theta - lr * grad / len(examples))
    return policy


# --------------------------------------------------------------------------
# decoding


def beam_search(
    policy: ToyPolicy, image_emb: np.ndarray, beam_size: int
) -> list[ScoredSequence]:
    """Top sequences by total log-probability.

    Sequences end at the end marker or at ``max_len``, whichever comes
    first, and finished sequences keep competing with live ones on
    total log-probability with no length normalization.  Exact ties
    are broken lexicographically on the token strings, so the result
    is deterministic.  ``beam_size`` of 1 is greedy decoding; a width
    at least the number of possible sequences enumerates all of them.
    Fewer than ``beam_size`` sequences come back when the instance has
    fewer sequences than that.
    """
    img = _check_image(policy, image_emb)
    if beam_size < 1:
        raise ValueError("beam_size must be at least 1")
    eos = policy.eos_index

    def sort_key(entry: tuple[tuple[int, ...], float, bool]):
        tokens, logp, _ = entry
        return (-logp, tuple(policy.vocab[i] for i in tokens))

    beams: list[tuple[tuple[int, ...], float, bool]] = [((), 0.0, False)]
    for _ in range(policy.max_len):
        candidates: list[tuple[tuple[int, ...], float, bool]] = []
        alive = False
        for tokens, logp, finished in beams:
            if finished:
                candidates.append((tokens, logp, True))
                continue
            alive = True
            lp = step_log_probs(policy, img, tokens)
            for v in range(policy.vocab_size):
                candidates.append(
                    (tokens + (v,), logp + float(lp[v]), v == eos)
                )
        if not alive:
            break
        candidates.sort(key=sort_key)
        beams = candidates[:beam_size]
    beams.sort(key=sort_key)
    return [
        ScoredSequence(tuple(policy.vocab[i] for i in tokens), logp)
        for tokens, logp, _ in beams
    ]


# --------------------------------------------------------------------------
# reward and the self-critical update


def strip_end_marker(policy: ToyPolicy, tokens: Sequence[str]) -> tuple[str, ...]:
    """Content tokens of a decoded sequence (trailing end marker dropped)."""
    toks = tuple(tokens)
    if policy.eos_token is not None and toks and toks[-1] == policy.eos_token:
        toks = toks[:-1]
    return toks


def caption_embedding(policy: ToyPolicy, tokens: Sequence[str]) -> np.ndarray:
    """Unit-norm mean embedding of a caption's content tokens."""
    content = strip_end_marker(policy, tokens)
    if len(content) == 0:
        raise ValueError("caption has no content tokens")
    idx = _to_indices(policy, content)
    mean = np.mean(policy.token_embed[idx], axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        raise ValueError("caption embedding has zero norm")
    return mean / norm


def reward(
    policy: ToyPolicy,
    image_emb: np.ndarray,
    tokens: Sequence[str],
    cfg: ScoreConfig,
    refs: Sequence[Sequence[str]] | None = None,
) -> float:
    """Caption score against the image, reference-augmented when refs given."""
    img = _check_image(policy, image_emb)
    cand = caption_embedding(policy, tokens)
    if refs is None:
        return pac_score(img, cand, cfg)
    ref_vecs = [caption_embedding(policy, r) for r in refs]
    return ref_pac_score(img, cand, ref_vecs, cfg)


def baseline(rewards: Sequence[float]) -> float:
    """Arithmetic mean of the beam rewards."""
    if len(rewards) == 0:
        raise ValueError("need at least one reward")
    vals = np.asarray(rewards, dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise ValueError("rewards must be finite")
    return float(np.mean(vals))


def scst_gradient(
    policy: ToyPolicy,
    image_emb: np.ndarray,
    beams: Sequence[Sequence[str]],
    rewards: Sequence[float],
    base: float,
) -> np.ndarray:
    """Gradient of the self-critical loss with respect to theta.

    loss = -(1/l) * sum_i (r_i - base) * log p(beam_i), treating the
    advantages as constants, so the gradient is
    -(1/l) * sum_i (r_i - base) * d log p(beam_i) / d theta.
    """
    if len(beams) == 0:
        raise ValueError("need at least one beam")
    if len(beams) != len(rewards):
        raise ValueError(
            f"got {len(beams)} beams but {len(rewards)} rewards"
        )
    if not math.isfinite(base):
        raise ValueError("baseline must be finite")
    grad = np.zeros_like(policy.theta)
    for tokens, r in zip(beams, rewards):
        if not math.isfinite(r):
            raise ValueError("rewards must be finite")
        idx = _to_indices(policy, tokens)
        _validate_sequence(policy, idx)
        _, glp = _sequence_log_prob_grad(policy, image_emb, idx)
        grad += (r - base) * glp
    return -grad / len(beams)


RewardFn = Callable[[np.ndarray, tuple[str, ...]], float]


@dataclass(frozen=True)
class ScstResult:
    policy: ToyPolicy
    curve: tuple[float, ...]  # mean beam reward, one entry per step


def scst_train(
    policy: ToyPolicy,
    images: Sequence[np.ndarray],
    cfg: ScstConfig,
    reward_fn: RewardFn,
    steps: int,
) -> ScstResult:
    """Plain-SGD self-critical training over a round-robin image stream.

    Each step decodes one image with the configured beam width, scores
    every beam with ``reward_fn`` on its content tokens, subtracts the
    mean-beam baseline, and takes one gradient step.  A sequence with
    no content tokens gets reward 0 rather than calling ``reward_fn``.
    The returned curve holds the per-step baseline, which doubles as
    the training signal to plot.
    """
    if len(images) == 0:
        raise ValueError("need at least one image")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    imgs = [_check_image(policy, img) for img in images]
    curve: list[float] = []
    for step in range(steps):
        img = imgs[step % len(imgs)]
        beams = beam_search(policy, img, cfg.beam_size)
        rewards = []
        for seq in beams:
            content = strip_end_marker(policy, seq.tokens)
            rewards.append(0.0 if len(content) == 0 else float(reward_fn(img, content)))
        base = baseline(rewards)
        curve.append(base)
        grad = scst_gradient(
            policy, img, [seq.tokens for seq in beams], rewards, base
        )
        policy = policy.with_theta(policy.theta - cfg.lr * grad)
    return ScstResult(policy=policy, curve=tuple(curve))


# --------------------------------------------------------------------------
# caption quality counters


@dataclass(frozen=True)
class GrammarConfig:
    """Settings for the caption quality counters."""

    stoplist: frozenset[str]
    max_n: int = 4

    def __post_init__(self) -> None:
        if len(self.stoplist) == 0:
            raise ValueError("stoplist must not be empty")
        if any(w != w.lower() or w == "" for w in self.stoplist):
            raise ValueError("stoplist entries must be non-empty and lowercase")
        if self.max_n < 1:
            raise ValueError("max_n must be at least 1")


class EndingsResult(NamedTuple):
    percentage: float
    empty_captions: int


def _caption_words(caption: str | Sequence[str]) -> list[str]:
    if isinstance(caption, str):
        return caption.split()
    return [str(w) for w in caption]


def rep_n(captions: Sequence[str | Sequence[str]], n: int) -> float:
    """Mean per-caption count of repeated n-grams.

    For each caption this is the number of n-grams minus the number of
    distinct n-grams; captions shorter than n contribute 0.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if len(captions) == 0:
        raise ValueError("need at least one caption")
    total = 0
    for caption in captions:
        words = _caption_words(caption)
        grams = [tuple(words[i : i + n]) for i in range(len(words) - n + 1)]
        total += len(grams) - len(set(grams))
    return total / len(captions)


def pct_incorrect_endings(
    captions: Sequence[str | Sequence[str]], cfg: GrammarConfig
) -> EndingsResult:
    """Percentage of captions whose final word is on the stoplist.

    Trailing punctuation is stripped before the check (so "next to."
    ends with "to").  A caption with no words left counts as incorrect
    and is tallied in ``empty_captions``.
    """
    if len(captions) == 0:
        raise ValueError("need at least one caption")
    incorrect = 0
    empty = 0
    for caption in captions:
        words = _caption_words(caption)
        # drop trailing punctuation, including punctuation-only tokens
        while words:
            stripped = words[-1].rstrip(string.punctuation)
            if stripped:
                words[-1] = stripped
                break
            words.pop()
        if not words:
            incorrect += 1
            empty += 1
        elif words[-1].lower() in cfg.stoplist:
            incorrect += 1
    return EndingsResult(100.0 * incorrect / len(captions), empty)


def load_stoplist(path: str | None = None) -> frozenset[str]:
    """Stoplist words from a file, or the packaged default list.

    The file is newline-separated UTF-8; blank lines and '#' comments
    are ignored and words are lowercased.
    """
    if path is None:
        text = (
            importlib.resources.files("pacmetric.data")
            .joinpath("stoplist.txt")
            .read_text(encoding="utf-8")
        )
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    words = set()
    for line in text.splitlines():
        word = line.strip()
        if word and not word.startswith("#"):
            words.add(word.lower())
    if not words:
        raise ValueError("stoplist file contains no words")
    return frozenset(words)


# --------------------------------------------------------------------------
# demo world


@dataclass(frozen=True)
class DemoWorld:
    policy: ToyPolicy
    train_images: tuple[np.ndarray, ...]
    heldout_images: tuple[np.ndarray, ...]
    train_topics: tuple[tuple[str, str], ...]  # two topic tokens per image
    heldout_topics: tuple[tuple[str, str], ...]
    xe_examples: tuple[tuple[np.ndarray, tuple[str, ...]], ...]


@dataclass(frozen=True)
class DemoReport:
    mean_reward_start: float
    mean_reward_end: float
    rep1_start: float
    rep1_end: float
    pct_bad_endings_start: float
    pct_bad_endings_end: float
    curve: tuple[float, ...]
    captions_start: tuple[tuple[str, ...], ...]
    captions_end: tuple[tuple[str, ...], ...]


def demo_world(
    seed: int = 0, n_pairs: int = 5, noise: float = 0.1
) -> DemoWorld:
    """Small synthetic captioning task with held-out images.

    Each scene is a pair of topic tokens; an image is the normalized
    sum of their two orthonormal embeddings plus instance noise.  The
    best caption names both topics: it embeds almost exactly to the
    image and earns nearly the full reward w.  The cross-entropy
    corpus gives the training view of each scene two single-word
    reference captions, one per topic, so the pretrained policy names
    one topic and stops, worth about 71% of the reward (cos 1/sqrt(2)).
    Reward training has to combine the topics into one caption,
    something no reference shows.  Generation has two slots, so the
    only way up is naming the second topic; repeating the first leaves
    the embedding, and the reward, exactly where it was.  Held-out
    images are fresh noisy views of the same scenes, never touched by
    training.
    """
    if n_pairs < 2:
        raise ValueError("need at least two topic pairs")
    if not 0 <= noise < 1:
        raise ValueError("noise must be in [0, 1)")
    rng = np.random.default_rng(seed)
    n_topics = 2 * n_pairs
    vocab = tuple(f"tok{i}" for i in range(n_topics)) + ("</s>",)
    dim = len(vocab)
    # rows orthonormal via QR of a square random matrix
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    embed = q.T.copy()

    def noisy_view(a: int, b: int) -> np.ndarray:
        # view noise lives outside the topic plane: it is everything
        # about the image that is not the two topics, and it keeps the
        # two topics exactly interchangeable for the reward
        g = rng.standard_normal(dim)
        g -= (g @ embed[a]) * embed[a] + (g @ embed[b]) * embed[b]
        img = embed[a] + embed[b] + noise * g
        return img / np.linalg.norm(img)

    train_images = []
    heldout_images = []
    topics = []
    xe_examples = []
    for i in range(n_pairs):
        a, b = 2 * i, 2 * i + 1
        topics.append((vocab[a], vocab[b]))
        img = noisy_view(a, b)
        train_images.append(img)
        heldout_images.append(noisy_view(a, b))
        xe_examples.append((img, (vocab[a], "</s>")))
        xe_examples.append((img, (vocab[b], "</s>")))
    theta = 0.01 * rng.standard_normal((2 * dim, len(vocab)))
    policy = ToyPolicy(
        vocab=vocab, token_embed=embed, theta=theta, max_len=2, eos_token="</s>"
    )
    return DemoWorld(
        policy=policy,
        train_images=tuple(train_images),
        heldout_images=tuple(heldout_images),
        train_topics=tuple(topics),
        heldout_topics=tuple(topics),
        xe_examples=tuple(xe_examples),
    )


def _demo_metrics(
    policy: ToyPolicy,
    images: Sequence[np.ndarray],
    cfg: ScstConfig,
    reward_fn: RewardFn,
    grammar: GrammarConfig,
) -> tuple[float, float, float, tuple[tuple[str, ...], ...]]:
    # reward is measured on the caption the model actually outputs
    # (the top beam); the training curve tracks the beam-mean baseline
    total = 0.0
    captions = []
    for img in images:
        best = beam_search(policy, img, cfg.beam_size)[0]
        content = strip_end_marker(policy, best.tokens)
        total += 0.0 if len(content) == 0 else float(reward_fn(img, content))
        captions.append(content)
    rep = rep_n(captions, 1)
    endings = pct_incorrect_endings(captions, grammar)
    return total / len(images), rep, endings.percentage, tuple(captions)


def run_scst_demo(
    seed: int = 0,
    scst_steps: int = 200,
    xe_steps: int = 300,
    xe_lr: float = 0.5,
    cfg: ScstConfig | None = None,
    score_cfg: ScoreConfig | None = None,
    grammar: GrammarConfig | None = None,
) -> DemoReport:
    """Pretrain with cross-entropy, then improve the reward with SCST.

    Self-critical training sees only the training images; the reported
    reward, repetition, and bad-ending numbers are measured on the
    held-out images before and after that phase, with the per-step
    training curve alongside.
    """
    score_cfg = score_cfg if score_cfg is not None else ScoreConfig(w=2.5)
    grammar = grammar if grammar is not None else GrammarConfig(stoplist=load_stoplist())
    world = demo_world(seed=seed)
    if cfg is None:
        # a narrow beam keeps the baseline tracking the captions the
        # policy actually favours, so a repeated topic scores below it
        # and gets pushed back down instead of reinforced
        cfg = ScstConfig(beam_size=5, lr=0.5, seed=seed)
    policy = xent_pretrain(world.policy, world.xe_examples, lr=xe_lr, steps=xe_steps)

    # the token table never trains, so embedding captions with the
    # pretrained policy stays valid across theta updates
    def reward_fn(img: np.ndarray, content: tuple[str, ...]) -> float:
        return reward(policy, img, content, score_cfg)

    start_reward, rep1_start, bad_start, caps_start = _demo_metrics(
        policy, world.heldout_images, cfg, reward_fn, grammar
    )
    result = scst_train(policy, world.train_images, cfg, reward_fn, scst_steps)
    end_reward, rep1_end, bad_end, caps_end = _demo_metrics(
        result.policy, world.heldout_images, cfg, reward_fn, grammar
    )
    return DemoReport(
        mean_reward_start=start_reward,
        mean_reward_end=end_reward,
        rep1_start=rep1_start,
        rep1_end=rep1_end,
        pct_bad_endings_start=bad_start,
        pct_bad_endings_end=bad_end,
        curve=result.curve,
        captions_start=caps_start,
        captions_end=caps_end,
    )
