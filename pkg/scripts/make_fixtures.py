"""Regenerate the packaged demo fixture.

Builds a ten-item synthetic corpus (images, captions, human judgments)
under src/pacmetric/data/fixtures/eval_corr.  Deterministic: rerunning
produces byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from pacmetric.embedkit import (
    ItemRecord,
    Manifest,
    matrix_from_values,
    normalize_rows,
    save_embeddings,
    save_manifest,
)

OUT = Path(__file__).resolve().parents[1] / "src" / "pacmetric" / "data" \
    / "fixtures" / "eval_corr"

N_ITEMS = 10
DIM = 8
TOKENS_PER_CAPTION = 4

WORDS = ("dog", "cat", "park", "ball", "tree", "car", "road", "hat",
         "boat", "lake")


def main() -> None:
    rng = np.random.default_rng(0)
    OUT.mkdir(parents=True, exist_ok=True)

    images = normalize_rows(rng.normal(size=(N_ITEMS, DIM)))
    # alignment sweep gives the metric a spread to correlate against
    mix = np.linspace(0.05, 0.95, N_ITEMS)

    caption_rows = np.zeros((N_ITEMS * TOKENS_PER_CAPTION, DIM))
    items: list[ItemRecord] = []
    judgments: list[dict] = []
    pairs: list[dict] = []

    for i in range(N_ITEMS):
        rows = normalize_rows(rng.normal(size=(TOKENS_PER_CAPTION, DIM)))
        noise = rng.normal(size=DIM)
        noise /= np.linalg.norm(noise)
        pooled = mix[i] * images[i] + (1.0 - mix[i]) * noise
        rows[-1] = pooled / np.linalg.norm(pooled)
        caption_rows[i * TOKENS_PER_CAPTION:(i + 1) * TOKENS_PER_CAPTION] = \
            rows

        tokens = ("<sos>", WORDS[i], WORDS[(i + 3) % N_ITEMS], "<eos>")
        items.append(ItemRecord(f"img{i}", "image", "images.bin",
                                (i, i + 1)))
        items.append(ItemRecord(
            f"cap{i}", "caption", "captions.bin",
            (i * TOKENS_PER_CAPTION, (i + 1) * TOKENS_PER_CAPTION),
            tokens=tokens,
            refs=(f"cap{(i + 1) % N_ITEMS}", f"cap{(i + 2) % N_ITEMS}"),
        ))
        # rounding the sweep to five levels leaves deliberate ties
        human = float(int(round(mix[i] * 4)))
        judgments.append({"item_id": f"j{i}", "human_score": human,
                          "image_id": f"img{i}", "caption_id": f"cap{i}"})
        pairs.append({"item_id": f"p{i}", "image_id": f"img{i}",
                      "caption_id": f"cap{i}"})

    save_embeddings(matrix_from_values(images), OUT / "images.bin")
    save_embeddings(matrix_from_values(caption_rows), OUT / "captions.bin")
    save_manifest(Manifest("synthetic-judgments-v1", tuple(items)),
                  OUT / "manifest.json")
    with open(OUT / "judgments.jsonl", "w", encoding="utf-8") as fh:
        for rec in judgments:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(OUT / "pairs.jsonl", "w", encoding="utf-8") as fh:
        for rec in pairs:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote fixture to {OUT}")


if __name__ == "__main__":
    main()
