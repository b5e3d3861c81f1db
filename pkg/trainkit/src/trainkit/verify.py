"""Inference-parity check between native weights and an exported bundle.

Native detections come from the torch model; exported detections come
from the serving pipeline's own CLI (``bargewatch detect``), so a PASS
certifies the actual handoff, not a simulation of it. PASS requires the
same detection count per image and, for every greedily matched pair,
IoU at or above 0.9 with confidence delta at most 0.05.
"""

from __future__ import annotations

import json
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .config import TrainingConfig
from .data import Sample
from .metrics import box_iou
from .model import GridDetector
from .train import infer

IOU_FLOOR = 0.9
CONFIDENCE_TOLERANCE = 0.05

LABEL_TO_INDEX = {"vessel_with_barge": 0, "vessel_without_barge": 1, "barge": 2}


@dataclass
class ParityReport:
    passed: bool
    images: int = 0
    matched: int = 0
    min_iou: float | None = None
    max_confidence_delta: float | None = None
    mismatches: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "result": "PASS" if self.passed else "FAIL",
                "images": self.images,
                "matched_boxes": self.matched,
                "min_iou": self.min_iou,
                "max_confidence_delta": self.max_confidence_delta,
                "mismatches": self.mismatches,
            },
            indent=2,
        )


def _exported_detections(
    bundle_path: Path,
    images_dir: Path,
    config: TrainingConfig,
    out_path: Path,
    cli: str,
) -> dict[str, list[dict]]:
    """Run the serving CLI over the sample images, parse its predictions."""
    executable = shutil.which(cli)
    if executable is None:
        raise RuntimeError(f"serving CLI {cli!r} not found on PATH")
    result = subprocess.run(
        [
            executable, "detect",
            "--model", str(bundle_path),
            "--images", str(images_dir),
            "--input-size", str(config.image_size),
            "--confidence-threshold", str(config.confidence_threshold),
            "--nms-iou-threshold", str(config.iou),
            "--out", str(out_path),
        ],
        capture_output=True,
        text=True,
    )
    if result.returncode != 0:
        raise RuntimeError(
            f"serving CLI rejected the bundle (exit {result.returncode}): "
            f"{result.stderr.strip()}"
        )
    detections: dict[str, list[dict]] = {}
    for line in out_path.read_text().splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        detections[record["image_id"]] = [
            {
                "class": LABEL_TO_INDEX[d["label"]],
                "confidence": float(d["confidence"]),
                "box": tuple(d["box"]),
            }
            for d in record["detections"]
        ]
    return detections


def verify_export(
    weights_path: str | Path,
    bundle_path: str | Path,
    samples: list[Sample],
    config: TrainingConfig,
    work_dir: str | Path,
    cli: str = "bargewatch",
) -> ParityReport:
    """Compare native and exported inference on sample images."""
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)

    model = GridDetector(config.channels)
    model.load_state_dict(torch.load(weights_path, weights_only=True))
    model.eval()

    images_dir = work_dir / "samples"
    images_dir.mkdir(exist_ok=True)
    for sample in samples:
        target = images_dir / f"{sample.id}{Path(sample.path).suffix}"
        if not target.exists():
            shutil.copy(sample.path, target)

    try:
        exported = _exported_detections(
            Path(bundle_path), images_dir, config, work_dir / "exported.jsonl", cli
        )
    except RuntimeError as exc:
        return ParityReport(passed=False, mismatches=[str(exc)])

    report = ParityReport(passed=True, images=len(samples))
    for sample in samples:
        native = infer(
            model, sample, config.image_size, config.confidence_threshold, config.iou
        )
        served = exported.get(sample.id, [])
        if len(native) != len(served):
            report.mismatches.append(
                f"{sample.id}: native {len(native)} box(es), exported {len(served)}"
            )
            continue
        remaining = list(served)
        for det in sorted(native, key=lambda d: -d["confidence"]):
            candidates = [s for s in remaining if s["class"] == det["class"]]
            if not candidates:
                report.mismatches.append(f"{sample.id}: unmatched class {det['class']}")
                continue
            best = max(candidates, key=lambda s: box_iou(det["box"], s["box"]))
            overlap = box_iou(det["box"], best["box"])
            delta = abs(det["confidence"] - best["confidence"])
            remaining.remove(best)
            report.matched += 1
            report.min_iou = overlap if report.min_iou is None else min(report.min_iou, overlap)
            report.max_confidence_delta = (
                delta
                if report.max_confidence_delta is None
                else max(report.max_confidence_delta, delta)
            )
            if overlap < IOU_FLOOR or delta > CONFIDENCE_TOLERANCE:
                report.mismatches.append(
                    f"{sample.id}: matched box IoU {overlap:.3f}, "
                    f"confidence delta {delta:.3f}"
                )
    report.passed = not report.mismatches
    return report
