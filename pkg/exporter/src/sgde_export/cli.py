"""Command-line entry point: sgde-export [export] --manifest ... --out ..."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .exporter import ENCODERS, ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgde-export",
        description="Export pretrained encoder embeddings of primitive "
                    "crops to an SGDE file")
    parser.add_argument("--manifest", type=Path, required=True,
                        help="crop manifest (image_id primitive_id path)")
    parser.add_argument("--encoder", choices=ENCODERS, required=True)
    parser.add_argument("--weights", default="auto",
                        help="checkpoint path, or 'auto' (supervised only)")
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--device", default="cpu")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # tolerate an explicit leading "export" subcommand token
    if argv and argv[0] == "export":
        argv = argv[1:]
    args = build_parser().parse_args(argv)
    job = ExportJob(manifest=args.manifest, encoder=args.encoder,
                    weights=args.weights, out=args.out, batch=args.batch,
                    device=args.device)
    try:
        export(job)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
