"""Command-line entry point for extraction jobs."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .extract import (
    ExtractError,
    ExtractJob,
    extract_captions,
    extract_images,
    extract_video_frames,
)

OPERATIONS = {
    "images": extract_images,
    "captions": extract_captions,
    "videos": extract_video_frames,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extract-embeddings",
        description="Export embeddings into the engine's binary format.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("images", "one pooled row per image file"),
        ("captions", "per-token rows plus a pooled row per text"),
        ("videos", "rows for frames sampled from each video"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("inputs", nargs="*",
                         help="image/video paths, or caption texts")
        cmd.add_argument("--checkpoint", default="hashed:demo",
                         help="model id, or hashed:<tag> for the "
                              "deterministic offline backend")
        cmd.add_argument("--out", required=True, type=Path,
                         help="output directory (files must not exist)")
        cmd.add_argument("--batch-size", type=int, default=8)
        cmd.add_argument("--pre-projection", action="store_true",
                         help="export pre-layernorm features instead of "
                              "projected embeddings")
        cmd.add_argument("--corpus-id", default="",
                         help="manifest corpus id (default: checkpoint)")
        if name == "captions":
            cmd.add_argument("--from-file", type=Path, default=None,
                             help="read caption texts from a file, one "
                                  "per line")
        if name == "videos":
            cmd.add_argument("--frame-rate", type=float, default=1.0,
                             help="frames per second to sample")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    inputs = list(args.inputs)
    if getattr(args, "from_file", None) is not None:
        try:
            text = args.from_file.read_text(encoding="utf-8")
        except OSError as exc:
            print(f"error: cannot read {args.from_file}: {exc}",
                  file=sys.stderr)
            return 1
        inputs.extend(line for line in text.splitlines() if line.strip())
    try:
        job = ExtractJob(
            inputs=tuple(inputs),
            checkpoint=args.checkpoint,
            out_dir=args.out,
            frame_rate=getattr(args, "frame_rate", 1.0),
            batch_size=args.batch_size,
            pre_projection=args.pre_projection,
            corpus_id=args.corpus_id,
        )
        summary = OPERATIONS[args.command](job)
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    json.dump(summary.as_dict(), sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
