"""Detection backends: model-bundle inference and a fixture-driven stub.

Both backends return detections in source pixel coordinates. The bundle
backend letterboxes the frame to the model's square input, runs the numpy
forward pass, and decodes candidates back through the inverse mapping;
the stub backend replays canned detections keyed by image id and exists
so every downstream pipeline is testable without a trained model.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from PIL import Image

from .geometry import Box, Detection, Space, clip_to_space, convert, nms
from .modelfile import DetectorBundle, load_bundle
from .scene import DEFAULT_LABEL_MAP, ObjectLabel

logger = logging.getLogger(__name__)

ALLOWED_INPUT_SIZES = (320, 512, 640, 896, 1024, 1216)
PAD_VALUE = 114  # letterbox gray


@dataclass(frozen=True)
class DetectorConfig:
    model_path: str = ""
    input_size: int = 640
    confidence_threshold: float = 0.25
    nms_iou_threshold: float = 0.7
    label_map: dict[int, ObjectLabel] = field(
        default_factory=lambda: dict(DEFAULT_LABEL_MAP)
    )

    def __post_init__(self) -> None:
        if self.input_size not in ALLOWED_INPUT_SIZES:
            raise ValueError(
                f"input_size must be one of {ALLOWED_INPUT_SIZES}, got {self.input_size}"
            )
        if not (0 < self.confidence_threshold < 1):
            raise ValueError(f"confidence_threshold out of (0, 1): {self.confidence_threshold}")
        if not (0 < self.nms_iou_threshold < 1):
            raise ValueError(f"nms_iou_threshold out of (0, 1): {self.nms_iou_threshold}")


@dataclass(frozen=True)
class LetterboxMapping:
    """Invertible mapping from source pixels to a padded square input."""

    scale: float
    pad_x: int
    pad_y: int
    source_dims: tuple[int, int]  # (width, height)
    target_size: int

    def to_model(self, x: float, y: float) -> tuple[float, float]:
        return x * self.scale + self.pad_x, y * self.scale + self.pad_y

    def to_source(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.pad_x) / self.scale, (y - self.pad_y) / self.scale


@dataclass(frozen=True)
class RawPrediction:
    """One candidate: center-form box in model-input pixels plus class scores."""

    cx: float
    cy: float
    w: float
    h: float
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(not (0 <= s <= 1) for s in self.scores):
            raise ValueError(f"scores must lie in [0, 1]: {self.scores}")


def letterbox(image_dims: tuple[int, int], target_size: int) -> LetterboxMapping:
    """Aspect-preserving mapping of (width, height) onto a square input.

    The longer side scales to ``target_size``; padding splits evenly on
    the short axis with any odd pixel going to the trailing side.
    """
    w, h = image_dims
    if w <= 0 or h <= 0:
        raise ValueError(f"image dims must be positive, got {image_dims}")
    scale = target_size / max(w, h)
    scaled_w = round(w * scale)
    scaled_h = round(h * scale)
    return LetterboxMapping(
        scale=scale,
        pad_x=(target_size - scaled_w) // 2,
        pad_y=(target_size - scaled_h) // 2,
        source_dims=(w, h),
        target_size=target_size,
    )


def apply_letterbox(image: np.ndarray, mapping: LetterboxMapping) -> np.ndarray:
    """Resize and pad a uint8 RGB frame into the model input square."""
    w, h = mapping.source_dims
    scaled_w = round(w * mapping.scale)
    scaled_h = round(h * mapping.scale)
    resized = Image.fromarray(image, "RGB").resize((scaled_w, scaled_h), Image.BILINEAR)
    canvas = Image.new("RGB", (mapping.target_size, mapping.target_size), (PAD_VALUE,) * 3)
    canvas.paste(resized, (mapping.pad_x, mapping.pad_y))
    return np.asarray(canvas, dtype=np.uint8)


def decode(
    raw: list[RawPrediction],
    mapping: LetterboxMapping,
    config: DetectorConfig,
    diagnostics: dict | None = None,
) -> list[Detection]:
    """Candidates -> thresholded, frame-space, NMS-filtered detections.

    Per candidate: argmax class score, drop below the confidence
    threshold, invert the letterbox into source pixels, clip to the
    frame (dropping boxes entirely outside, tallied in ``diagnostics``),
    then class-wise NMS.
    """
    w, h = mapping.source_dims
    space = Space(w, h)
    kept: list[Detection] = []
    dropped_outside = 0
    for cand in raw:
        best = int(np.argmax(cand.scores))
        confidence = float(cand.scores[best])
        if confidence < config.confidence_threshold:
            continue
        x1, y1 = mapping.to_source(cand.cx - cand.w / 2, cand.cy - cand.h / 2)
        x2, y2 = mapping.to_source(cand.cx + cand.w / 2, cand.cy + cand.h / 2)
        box = clip_to_space(x1, y1, x2, y2, space)
        if box is None:
            dropped_outside += 1
            continue
        kept.append(Detection(box, config.label_map[best], confidence))
    if diagnostics is not None:
        diagnostics["dropped_outside_frame"] = (
            diagnostics.get("dropped_outside_frame", 0) + dropped_outside
        )
    return nms(kept, config.nms_iou_threshold)


class Backend(Protocol):
    """Minimal detection backend: load once, detect per frame, describe."""

    def detect(self, image: np.ndarray, image_id: str | None = None) -> list[Detection]:
        ...

    def describe(self) -> dict:
        ...


class BundleBackend:
    """Neural inference from a portable model bundle."""

    def __init__(self, config: DetectorConfig):
        self.config = config
        self.bundle: DetectorBundle = load_bundle(config.model_path, config.input_size)
        if self.bundle.meta.num_classes != len(config.label_map):
            raise ValueError(
                f"model has {self.bundle.meta.num_classes} classes, "
                f"label map has {len(config.label_map)}"
            )
        self.diagnostics: dict = {}

    def detect(self, image: np.ndarray, image_id: str | None = None) -> list[Detection]:
        h, w = image.shape[:2]
        mapping = letterbox((w, h), self.config.input_size)
        tensor = apply_letterbox(image, mapping).astype(np.float32) / 255.0
        tensor = tensor.transpose(2, 0, 1)[None]  # HWC -> 1CHW
        candidates = self.bundle.forward(tensor)[0]
        raw = [
            RawPrediction(
                cx=float(row[0]),
                cy=float(row[1]),
                w=float(row[2]),
                h=float(row[3]),
                scores=tuple(float(np.clip(s, 0.0, 1.0)) for s in row[4:]),
            )
            for row in candidates
        ]
        return decode(raw, mapping, self.config, self.diagnostics)

    def describe(self) -> dict:
        return {
            "backend": "bundle",
            "model_path": self.config.model_path,
            "input_size": self.config.input_size,
            "num_classes": self.bundle.meta.num_classes,
        }


class StubBackend:
    """Replays fixture detections keyed by image id; unknown ids are empty."""

    def __init__(self, fixture: dict[str, list[Detection]]):
        self._fixture = fixture

    @classmethod
    def from_file(
        cls, path: str | Path, label_map: dict[int, ObjectLabel] | None = None
    ) -> "StubBackend":
        """Load the stub fixture: one JSON record per line, normalized boxes."""
        return cls(load_predictions_file(path))

    def detect(self, image: np.ndarray, image_id: str | None = None) -> list[Detection]:
        entries = self._fixture.get(image_id or "", [])
        h, w = image.shape[:2]
        space = Space(w, h)
        return [
            Detection(convert(d.box, space), d.label, d.confidence)
            if d.box.space.is_normalized
            else d
            for d in entries
        ]

    def describe(self) -> dict:
        return {"backend": "stub", "images": len(self._fixture)}


def load_predictions_file(path: str | Path) -> dict[str, list[Detection]]:
    """Read image_id -> detections records (normalized boxes) from JSONL."""
    by_name = {label.value: label for label in ObjectLabel}
    fixture: dict[str, list[Detection]] = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            dets = [
                Detection(Box(*d["box"]), by_name[d["label"]], float(d["confidence"]))
                for d in obj["detections"]
            ]
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{path}:{line_no}: bad fixture record: {exc}") from exc
        fixture[obj["image_id"]] = dets
    return fixture


def write_predictions_file(
    path: str | Path, predictions: dict[str, list[Detection]]
) -> None:
    """Write detections in the stub-fixture format (normalized boxes)."""
    with open(path, "w") as fh:
        for image_id in sorted(predictions):
            dets = []
            for d in predictions[image_id]:
                norm = d.box if d.box.space.is_normalized else convert(d.box, Space())
                dets.append(
                    {
                        "label": d.label.value,
                        "box": [round(v, 6) for v in norm.corners()],
                        "confidence": round(d.confidence, 6),
                    }
                )
            fh.write(json.dumps({"image_id": image_id, "detections": dets}) + "\n")


def load_backend(config: DetectorConfig, stub_fixture: str | Path | None = None) -> Backend:
    """Build the configured backend; a fixture path selects the stub."""
    if stub_fixture is not None:
        return StubBackend.from_file(stub_fixture, config.label_map)
    if not config.model_path:
        raise ValueError("detector config needs model_path (or use a stub fixture)")
    try:
        return BundleBackend(config)
    except Exception as exc:
        logger.error("model load failed: %s", exc)
        raise


def detect(backend: Backend, image: np.ndarray, image_id: str | None = None) -> list[Detection]:
    """Run one frame through a backend; detections are frame-pixel space."""
    return backend.detect(image, image_id)
