"""Command-line entry point.

    python -m factor_bridge export-embeddings --config bridge.json --out embeddings.json
    python -m factor_bridge export-detections --config bridge.json \
        --images images/ --out detections.jsonl --view original|counterfactual

Exit codes: 0 success, 1 configuration / input / model error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import BridgeError, load_config
from .export import export_detections, export_embeddings
from .interchange_out import VIEW_COUNTERFACTUAL, VIEW_ORIGINAL


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factor_bridge")
    sub = parser.add_subparsers(dest="command", required=True)

    emb = sub.add_parser(
        "export-embeddings", help="write text embeddings for attributes and categories"
    )
    emb.add_argument("--config", required=True, help="bridge config JSON path")
    emb.add_argument("--out", required=True, help="output embeddings.json path")

    det = sub.add_parser(
        "export-detections", help="run the detector over a directory of images"
    )
    det.add_argument("--config", required=True, help="bridge config JSON path")
    det.add_argument("--images", required=True, help="input image directory")
    det.add_argument("--out", required=True, help="output detections.jsonl path")
    det.add_argument(
        "--view",
        required=True,
        choices=(VIEW_ORIGINAL, VIEW_COUNTERFACTUAL),
        help="pipeline role of the directory",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("FACTOR_LOG", "INFO"),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help, 2 for usage errors; fold the latter to 1
        return 0 if e.code == 0 else 1
    try:
        config = load_config(args.config)
        if args.command == "export-embeddings":
            summary = export_embeddings(config, args.out)
        else:
            summary = export_detections(args.images, config, args.out, args.view)
    except BridgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
