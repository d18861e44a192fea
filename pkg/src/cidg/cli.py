"""argparse front end for the pipeline stages."""

from __future__ import annotations

import argparse
import sys

from .pipeline import (
    GENERATION_MODES,
    cmd_chat,
    cmd_eval,
    cmd_generate,
    cmd_label,
    cmd_train_dialog,
    cmd_train_instgen,
    format_report_table,
    load_config,
)


def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="PATH", help="flat key = value config file")
    shared.add_argument("--seed", type=int, help="override the run seed")
    shared.add_argument(
        "--mode",
        choices=[m.replace("_", "-") for m in GENERATION_MODES],
        help="instruction mode for training/generation",
    )

    parser = argparse.ArgumentParser(
        prog="cidg",
        description="context-based instruction tuning for multi-turn dialogue, desk scale",
        parents=[shared],
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train-instgen", parents=[shared], help="train the instruction generator")
    sub.add_parser("label", parents=[shared], help="label a dialogue corpus with instructions")
    sub.add_parser("train-dialog", parents=[shared], help="multi-task train the dialogue model")
    sub.add_parser("generate", parents=[shared], help="generate responses for the test corpus")
    sub.add_parser("eval", parents=[shared], help="score a generations file")
    sub.add_parser("chat", parents=[shared], help="interactive chat against a checkpoint")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode is not None:
        overrides["instruction_mode"] = args.mode.replace("-", "_")
    try:
        config = load_config(args.config, overrides)
        if args.command == "train-instgen":
            path = cmd_train_instgen(config)
            print(f"wrote {path}")
        elif args.command == "label":
            path = cmd_label(config)
            print(f"wrote {path}")
        elif args.command == "train-dialog":
            path = cmd_train_dialog(config)
            print(f"wrote {path}")
        elif args.command == "generate":
            path = cmd_generate(config)
            print(f"wrote {path}")
        elif args.command == "eval":
            report = cmd_eval(config)
            print(format_report_table(report, config.instruction_mode))
            print(f"wrote {config.resolve('report_path')}")
        elif args.command == "chat":
            cmd_chat(config)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
