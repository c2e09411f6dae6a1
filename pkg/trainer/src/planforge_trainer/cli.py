"""Train / serve entry points."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .train import PRESETS, config_for_dialect, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="planforge-train")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fine-tune adapters on an exported dataset")
    t.add_argument("--dataset", required=True, help="train.jsonl path")
    t.add_argument("--out", required=True, help="artifacts output directory")
    t.add_argument("--dialect", default="spine", choices=sorted(PRESETS))
    t.add_argument("--base", default="tiny-256x2",
                   help="builtin spec (tiny-<dim>x<layers>) or checkpoint path")
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--max-seq", type=int, default=4096)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, help="override the dialect preset")
    t.add_argument("--learning-rate", type=float, help="override the dialect preset")

    s = sub.add_parser("serve", help="serve tuned artifacts as a chat endpoint")
    s.add_argument("--artifacts", required=True)
    s.add_argument("--port", type=int, default=8700)
    s.add_argument("--host", default="127.0.0.1")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.command == "train":
        overrides = {
            "base_model": args.base,
            "batch_size": args.batch_size,
            "max_seq": args.max_seq,
            "seed": args.seed,
        }
        if args.epochs is not None:
            overrides["epochs"] = args.epochs
        if args.learning_rate is not None:
            overrides["learning_rate"] = args.learning_rate
        result = train(
            config_for_dialect(args.dialect, Path(args.dataset), Path(args.out), **overrides)
        )
        print(f"initial loss {result.initial_loss:.4f} -> final {result.final_loss:.4f} "
              f"({result.final_loss / result.initial_loss:.3f}x) -> {result.output_dir}")
        return 0
    from .serve import serve_adapter

    serve_adapter(Path(args.artifacts), args.port, args.host)
    return 0


if __name__ == "__main__":
    sys.exit(main())
