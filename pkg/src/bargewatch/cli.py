"""Command-line entry point: every workflow as a subcommand.

Exit codes: 0 success, 1 validation/config error, 2 runtime or I/O error.
Diagnostics go to stderr; machine-readable results to stdout or --out.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path

from . import __version__

logger = logging.getLogger("bargewatch")


def _write_result(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text + ("" if text.endswith("\n") else "\n"))
    else:
        print(text)


def _load_scene_file(path: str, role: str) -> dict:
    """Read id -> scene from a scenes or pairs JSONL file.

    Accepts records with a ``scene`` field, or pair records carrying
    ``observed``/``predicted`` (picked by ``role``).
    """
    from .scene import SceneClass

    scenes = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        value = obj.get("scene", obj.get(role))
        if value is None:
            raise ValueError(f"{path}:{line_no}: record has neither 'scene' nor {role!r}")
        scenes[obj["id"]] = SceneClass(value)
    return scenes


def cmd_split(args) -> int:
    from .dataset import load_manifest, save_split, stratified_group_split

    manifest = load_manifest(args.manifest, labels_dir=args.labels_dir)
    ratios = tuple(float(r) for r in args.ratios.split(","))
    if len(ratios) != 3:
        raise ValueError("--ratios wants three comma-separated values")
    split = stratified_group_split(manifest, ratios=ratios, seed=args.seed)
    save_split(split, args.out)
    train, val, test = split.sizes()
    print(f"train={train} val={val} test={test} -> {args.out}", file=sys.stderr)
    return 0


def cmd_augment(args) -> int:
    from .augment import load_augment_config, pipeline
    from .dataset import load_manifest, save_manifest

    manifest = load_manifest(args.manifest, labels_dir=args.labels_dir)
    recipes = load_augment_config(args.config)
    for recipe in recipes:
        manifest = pipeline(
            recipe["specs"],
            manifest,
            recipe["per_image_count"],
            images_dir=args.images_dir,
            out_dir=Path(args.out) / recipe["name"],
            seed=args.seed,
            weather_override=recipe["weather"],
            tag=recipe["name"],
        )
    out_manifest = args.out_manifest or str(Path(args.out) / "manifest.jsonl")
    save_manifest(manifest, out_manifest)
    print(f"{len(manifest)} records -> {out_manifest}", file=sys.stderr)
    return 0


def cmd_detect(args) -> int:
    import numpy as np
    from PIL import Image

    from .detector import DetectorConfig, load_backend, write_predictions_file
    from .monitor import IMAGE_SUFFIXES

    config = DetectorConfig(
        model_path=args.model or "",
        input_size=args.input_size,
        confidence_threshold=args.confidence_threshold,
        nms_iou_threshold=args.nms_iou_threshold,
    )
    backend = load_backend(config, stub_fixture=args.stub)
    paths = sorted(
        p for p in Path(args.images).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    predictions = {}
    for path in paths:
        frame = np.asarray(Image.open(path).convert("RGB"))
        predictions[path.stem] = backend.detect(frame, path.stem)
    write_predictions_file(args.out, predictions)
    print(f"{len(paths)} images -> {args.out}", file=sys.stderr)
    return 0


def cmd_classify(args) -> int:
    from .detector import load_predictions_file
    from .scene import classify_scene

    fixture = load_predictions_file(args.pred)
    lines = []
    for image_id in sorted(fixture):
        scene = classify_scene(d.label for d in fixture[image_id])
        lines.append(json.dumps({"id": image_id, "scene": scene.value}))
    _write_result("\n".join(lines), args.out)
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import metrics_from_confusion, scene_confusion, throughput

    gt = _load_scene_file(args.gt, "observed")
    pred = _load_scene_file(args.pred, "predicted")

    ids = set(gt)
    slice_name = None
    if args.manifest:
        from .dataset import filter_manifest, load_manifest

        manifest = load_manifest(args.manifest)
        fields = dict(w.split("=", 1) for w in args.where or [])
        sliced = filter_manifest(manifest, **fields)
        ids = {r.id for r in sliced.records}
        if fields:
            slice_name = ",".join(f"{k}={v}" for k, v in sorted(fields.items()))
    missing = sorted(i for i in ids if i not in gt or i not in pred)
    if missing:
        raise ValueError(f"{len(missing)} id(s) lack scenes: {missing[:10]}")

    report = metrics_from_confusion(
        scene_confusion((gt[i], pred[i]) for i in sorted(ids))
    )
    report.slice_name = slice_name
    if args.fps_frames and args.fps_seconds:
        report.fps = throughput(args.fps_frames, args.fps_seconds)
    _write_result(
        report.to_json() if args.format == "json" else report.format_table(), args.out
    )
    return 0


def cmd_bgsub(args) -> int:
    from .background import process_directory

    count = process_directory(
        args.input, args.out, alpha=args.alpha, tau=args.tau, emit=args.emit
    )
    print(f"{count} frames -> {args.out}", file=sys.stderr)
    return 0


def _pipelines(config, event_log, statuses, max_frames):
    from .detector import load_backend
    from .monitor import CameraStatus, run_camera

    threads = []
    for camera in config.cameras:
        if not camera.enabled:
            continue
        backend = load_backend(config.detector, stub_fixture=config.stub_fixture)
        statuses[camera.id] = statuses.get(camera.id) or CameraStatus(camera_id=camera.id)
        thread = threading.Thread(
            target=run_camera,
            kwargs=dict(
                camera=camera,
                backend=backend,
                event_log=event_log,
                status=statuses[camera.id],
                min_consecutive=config.monitor.min_consecutive,
                gap_tolerance=config.monitor.gap_tolerance,
                max_frames=max_frames,
            ),
            daemon=True,
            name=f"camera-{camera.id}",
        )
        threads.append(thread)
    return threads


def cmd_monitor(args) -> int:
    from .config import load_config
    from .monitor import EventLog

    config = load_config(args.config)
    if args.log_dir:
        config.log_dir = args.log_dir
    event_log = EventLog(config.log_dir, fsync=config.monitor.fsync)
    statuses: dict = {}
    threads = _pipelines(config, event_log, statuses, args.max_frames)
    if not threads:
        raise ValueError("no enabled cameras in config")
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    total = sum(s.frames_seen for s in statuses.values())
    print(f"processed {total} frames across {len(threads)} camera(s)", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .config import load_config
    from .monitor import EventLog
    from .server import create_app

    config = load_config(args.config)
    if args.log_dir:
        config.log_dir = args.log_dir
    if args.bind:
        from .config import ServerSettings

        config.server = ServerSettings(
            bind=args.bind, port=args.port or config.server.port,
            bearer_token=config.server.bearer_token,
        )
    elif args.port:
        from .config import ServerSettings

        config.server = ServerSettings(
            bind=config.server.bind, port=args.port,
            bearer_token=config.server.bearer_token,
        )
    event_log = EventLog(config.log_dir, fsync=config.monitor.fsync)
    statuses: dict = {}
    if not args.no_pipeline:
        for thread in _pipelines(config, event_log, statuses, None):
            thread.start()
    app = create_app(config, event_log, statuses)
    uvicorn.run(app, host=config.server.bind, port=config.server.port, log_level="warning")
    return 0


def cmd_version(args) -> int:
    print(__version__)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bargewatch",
        description="Barge and vessel traffic monitoring from waterway traffic cameras",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="stratified leakage-safe train/val/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels-dir")
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", default="0.70,0.15,0.15")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("augment", help="emit augmented images, labels, manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels-dir")
    p.add_argument("--images-dir", required=True)
    p.add_argument("--config", required=True, help="augmentation recipes YAML")
    p.add_argument("--out", required=True)
    p.add_argument("--out-manifest")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("detect", help="run a detection backend over images")
    backend_group = p.add_mutually_exclusive_group(required=True)
    backend_group.add_argument("--model", help="model bundle path")
    backend_group.add_argument("--stub", help="stub fixture path (replaces the model)")
    p.add_argument("--images", required=True, help="image directory")
    p.add_argument("--input-size", type=int, default=640)
    p.add_argument("--confidence-threshold", type=float, default=0.25)
    p.add_argument("--nms-iou-threshold", type=float, default=0.7)
    p.add_argument("--out", required=True, help="predictions JSONL")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("classify", help="scene classes from a predictions file")
    p.add_argument("--pred", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="scene metrics from observed/predicted scenes")
    p.add_argument("--gt", required=True, help="scenes or pairs JSONL (observed)")
    p.add_argument("--pred", required=True, help="scenes or pairs JSONL (predicted)")
    p.add_argument("--manifest", help="manifest for slicing")
    p.add_argument("--where", action="append", metavar="FIELD=VALUE")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--fps-frames", type=int)
    p.add_argument("--fps-seconds", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bgsub", help="background-subtract a frame directory")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.02)
    p.add_argument("--tau", type=float, default=25.0)
    p.add_argument("--emit", choices=("normalized", "masks", "both"), default="both")
    p.set_defaults(func=cmd_bgsub)

    p = sub.add_parser("monitor", help="run camera pipelines, write event logs")
    p.add_argument("--config", required=True)
    p.add_argument("--log-dir")
    p.add_argument("--max-frames", type=int)
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("serve", help="serve the read-only JSON API")
    p.add_argument("--config", required=True)
    p.add_argument("--bind")
    p.add_argument("--port", type=int)
    p.add_argument("--log-dir")
    p.add_argument("--no-pipeline", action="store_true", help="serve logs only")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("version", help="print the version")
    p.set_defaults(func=cmd_version)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; the contract wants 1
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surface anything else as runtime
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
