"""Command line for the embedding exporter.

Exit codes: 0 success, 1 usage error, 2 data/model error.
"""

from __future__ import annotations

import argparse
import sys

from embed_export.export import ExportError, ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ufin-embed-export",
        description="Encode rendered prompts with a pretrained model into a UFEC cache.",
    )
    parser.add_argument("--prompts", required=True, help="TSV prompt dump (row_id, prompt)")
    parser.add_argument(
        "--model",
        default="google/flan-t5-base",
        help="model identifier, or stub:<width> for the deterministic test encoder",
    )
    parser.add_argument("--out", required=True, help="UFEC cache path to write")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--device", default="cpu", help="device hint for the model")
    parser.add_argument(
        "--expect-dv",
        type=int,
        help="fail unless the model hidden size equals this value",
    )
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    job = ExportJob(
        prompts_path=args.prompts,
        model_id=args.model,
        out_path=args.out,
        batch_size=args.batch_size,
        device=args.device,
        expect_d_v=args.expect_dv,
    )
    try:
        count = export(job)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {count} embeddings to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
