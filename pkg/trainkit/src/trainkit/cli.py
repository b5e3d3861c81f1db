"""trainkit CLI: train, export, verify."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigRangeError, TrainingConfig


def _load_config(path: str | None) -> TrainingConfig:
    if path is None:
        return TrainingConfig()
    return TrainingConfig.from_dict(json.loads(Path(path).read_text()))


def cmd_train(args) -> int:
    from .data import read_manifest, read_split_ids
    from .train import train

    config = _load_config(args.config)
    samples = read_manifest(args.manifest, args.labels_dir, args.images_root)
    train_ids = read_split_ids(args.split_dir, "train")
    val_ids = read_split_ids(args.split_dir, "val")
    report = train(
        config,
        [s for s in samples if s.id in train_ids],
        [s for s in samples if s.id in val_ids],
        weights_out=args.weights_out,
        base_checkpoint=args.base_checkpoint,
    )
    report_path = args.report_out or str(Path(args.weights_out).with_suffix(".report.json"))
    Path(report_path).write_text(report.to_json() + "\n")
    print(
        f"best epoch {report.best_epoch} (val macro-F1 {report.best_metric:.4f}) "
        f"-> {args.weights_out}",
        file=sys.stderr,
    )
    return 0


def cmd_export(args) -> int:
    from .export import export

    config = _load_config(args.config)
    export(args.weights, args.out, args.image_size or config.image_size, config.channels)
    print(f"bundle -> {args.out}", file=sys.stderr)
    return 0


def cmd_verify(args) -> int:
    from .data import read_manifest
    from .verify import verify_export

    config = _load_config(args.config)
    samples = read_manifest(args.manifest, args.labels_dir, args.images_root)
    if args.limit:
        samples = samples[: args.limit]
    report = verify_export(
        args.weights, args.bundle, samples, config, work_dir=args.work_dir, cli=args.cli
    )
    print(report.to_json())
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trainkit", description="Fine-tune and export bargewatch detector bundles"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fine-tune on a manifest + split")
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels-dir", required=True)
    p.add_argument("--images-root")
    p.add_argument("--split-dir", required=True)
    p.add_argument("--weights-out", required=True)
    p.add_argument("--report-out")
    p.add_argument("--base-checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export", help="weights -> serving bundle")
    p.add_argument("--config")
    p.add_argument("--weights", required=True)
    p.add_argument("--image-size", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("verify", help="native vs exported inference parity")
    p.add_argument("--config")
    p.add_argument("--weights", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels-dir", required=True)
    p.add_argument("--images-root")
    p.add_argument("--limit", type=int)
    p.add_argument("--work-dir", default="verify-work")
    p.add_argument("--cli", default="bargewatch")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigRangeError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
