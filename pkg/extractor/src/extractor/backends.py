"""Encoder backends.

`HashedBackend` is a deterministic stand-in encoder: features are
seeded by content hashes, mixed through a causal recurrence, layer
normalization, and a fixed projection. It exercises every pipeline
contract (marker layout, end-position pooling, pre/post projection
export) without downloading a checkpoint.

`ClipBackend` wraps a real dual-encoder checkpoint through the
transformers library; it is imported lazily so the stand-in works in
fully offline environments.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TokenizedText:
    """Marker-wrapped token sequence with a truncation flag."""

    tokens: tuple[str, ...]
    truncated: bool


def _seed_from(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8],
                          "little")


def _l2_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero feature row")
    return rows / norms


class HashedBackend:

    SOS = "<|startoftext|>"
    EOS = "<|endoftext|>"

    def __init__(self, checkpoint: str, dim: int = 32, pre_dim: int = 48,
                 context_limit: int = 16):
        if context_limit < 3:
            raise ValueError("context limit must fit the two markers "
                             "plus one token")
        self.checkpoint = checkpoint
        self.dim = dim
        self.pre_dim = pre_dim
        self.context_limit = context_limit
        rng = np.random.default_rng(_seed_from(checkpoint))
        self._projection = rng.normal(size=(pre_dim, dim)) / np.sqrt(pre_dim)
        self._ln_gain = 1.0 + 0.1 * rng.normal(size=pre_dim)
        self._ln_bias = 0.05 * rng.normal(size=pre_dim)

    def _layer_norm(self, rows: np.ndarray) -> np.ndarray:
        mean = rows.mean(axis=-1, keepdims=True)
        std = rows.std(axis=-1, keepdims=True)
        return (rows - mean) / (std + 1e-6) * self._ln_gain + self._ln_bias

    def _project(self, pre: np.ndarray) -> np.ndarray:
        return _l2_rows(self._layer_norm(pre) @ self._projection)

    def _hash_feature(self, payload: bytes) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")
        return np.random.default_rng(seed).normal(size=self.pre_dim)

    # -- text ------------------------------------------------------------

    def tokenize(self, text: str) -> TokenizedText:
        words = text.lower().split()
        if not words:
            raise ValueError("cannot tokenize an empty text")
        limit = self.context_limit - 2
        truncated = len(words) > limit
        return TokenizedText(
            tokens=(self.SOS, *words[:limit], self.EOS),
            truncated=truncated,
        )

    def encode_tokens(self, tokens: tuple[str, ...]):
        """Per-position features: causally mixed, so the end marker row
        summarizes the whole sequence."""
        if len(tokens) < 2:
            raise ValueError("token sequence must include both markers")
        pre = np.zeros((len(tokens), self.pre_dim))
        state = np.zeros(self.pre_dim)
        for i, token in enumerate(tokens):
            base = self._hash_feature(f"tok:{token}".encode("utf-8"))
            state = np.tanh(base + 0.6 * state)
            pre[i] = state
        return pre, self._project(pre)

    # -- images ----------------------------------------------------------

    def encode_image_batch(self, images):
        """Images arrive as PIL objects; features depend only on the
        decoded pixels at a fixed preprocessing size."""
        pre = np.zeros((len(images), self.pre_dim))
        for i, image in enumerate(images):
            small = image.convert("RGB").resize((32, 32))
            pre[i] = self._hash_feature(b"img:" + small.tobytes())
        return pre, self._project(pre)


class ClipBackend:
    """Real dual-encoder checkpoint via the transformers library.

    Post-projection rows match the model's similarity space (projected,
    normalized); pre-projection rows are the transformer features
    before the final layer norm, which adapter training consumes.
    """

    SOS = "<|startoftext|>"
    EOS = "<|endoftext|>"

    def __init__(self, checkpoint: str):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise RuntimeError(
                "the clip backend needs torch and transformers installed; "
                "use a hashed:* checkpoint for offline work"
            ) from exc
        try:
            self._model = CLIPModel.from_pretrained(checkpoint)
            self._processor = CLIPProcessor.from_pretrained(checkpoint)
        except Exception as exc:
            raise RuntimeError(
                f"could not load checkpoint {checkpoint!r} (offline or "
                f"unknown id): {exc}"
            ) from exc
        self._torch = torch
        self._model.eval()
        self.checkpoint = checkpoint
        self.dim = int(self._model.config.projection_dim)
        self.pre_dim = int(self._model.config.text_config.hidden_size)
        self.context_limit = int(
            self._model.config.text_config.max_position_embeddings)

    def tokenize(self, text: str) -> TokenizedText:
        if not text.strip():
            raise ValueError("cannot tokenize an empty text")
        tokenizer = self._processor.tokenizer
        ids = tokenizer(text, truncation=True,
                        max_length=self.context_limit)["input_ids"]
        full = tokenizer(text, truncation=False)["input_ids"]
        return TokenizedText(
            tokens=tuple(tokenizer.convert_ids_to_tokens(ids)),
            truncated=len(full) > len(ids),
        )

    def encode_tokens(self, tokens: tuple[str, ...]):
        tokenizer = self._processor.tokenizer
        ids = tokenizer.convert_tokens_to_ids(list(tokens))
        batch = self._torch.tensor([ids])
        with self._torch.no_grad():
            out = self._model.text_model(input_ids=batch,
                                         output_hidden_states=True)
            # hidden_states[-1] precedes the final layer norm
            pre = out.hidden_states[-1][0]
            post = self._model.text_projection(out.last_hidden_state[0])
        post = post / post.norm(dim=-1, keepdim=True)
        return pre.numpy().astype(np.float64), \
            post.numpy().astype(np.float64)

    def encode_image_batch(self, images):
        inputs = self._processor(images=list(images), return_tensors="pt")
        with self._torch.no_grad():
            out = self._model.vision_model(**inputs)
            pre = out.last_hidden_state[:, 0]
            pooled = self._model.vision_model.post_layernorm(pre)
            post = self._model.visual_projection(pooled)
        post = post / post.norm(dim=-1, keepdim=True)
        return pre.numpy().astype(np.float64), \
            post.numpy().astype(np.float64)


def load_backend(checkpoint: str):
    """hashed:* ids build the offline stand-in; anything else is
    treated as a real checkpoint id."""
    if checkpoint.startswith("hashed:"):
        return HashedBackend(checkpoint)
    return ClipBackend(checkpoint)
