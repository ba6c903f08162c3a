"""Command line entry point: load a checkpoint and serve it."""

from __future__ import annotations

import argparse
import sys

from .app import create_app
from .config import BridgeConfig, ConfigError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmbridge",
        description="serve a causal LM's logits over HTTP",
    )
    parser.add_argument("--model", required=True, help="model path or hub id")
    parser.add_argument("--device", default="cpu", help="torch device (default cpu)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8731)
    parser.add_argument("--heads", default=None,
                        help="retrieval-heads JSON file to advertise and validate")
    parser.add_argument("--layers", default=None,
                        help="comma-separated layer indices to serve (default all)")
    parser.add_argument("--template", default="plain",
                        help="chat template id to advertise")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    served = None
    if args.layers:
        served = tuple(int(part) for part in args.layers.split(","))
    config = BridgeConfig(
        model_path=args.model,
        device=args.device,
        served_layers=served,
        heads_path=args.heads,
        chat_template_id=args.template,
    )
    try:
        app = create_app(config)
    except ConfigError as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1

    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
