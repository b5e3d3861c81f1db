"""Axis-aligned box arithmetic, IoU, and non-maximum suppression.

Boxes carry an explicit coordinate space so that normalized and pixel
coordinates cannot be mixed by accident. All operations here are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .scene import ObjectLabel

#: Order used to break confidence ties in NMS.
_LABEL_ORDER = {label: i for i, label in enumerate(ObjectLabel)}


@dataclass(frozen=True)
class Space:
    """Coordinate space tag: normalized unit square, or a pixel frame.

    ``Space()`` is the normalized space; ``Space(width, height)`` is the
    pixel space of a width x height frame.
    """

    width: float | None = None
    height: float | None = None

    def __post_init__(self) -> None:
        if (self.width is None) != (self.height is None):
            raise ValueError("pixel space needs both width and height")
        if self.width is not None and (self.width <= 0 or self.height <= 0):
            raise ValueError(f"pixel dimensions must be positive, got {self.width}x{self.height}")

    @property
    def is_normalized(self) -> bool:
        return self.width is None

    @property
    def bounds(self) -> tuple[float, float]:
        if self.is_normalized:
            return 1.0, 1.0
        return float(self.width), float(self.height)


NORMALIZED = Space()


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with corner coordinates in a tagged space."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    space: Space = NORMALIZED

    def __post_init__(self) -> None:
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise ValueError(f"box coordinates must be finite, got {self}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"degenerate box: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )
        w, h = self.space.bounds
        if not (0 <= self.x_min and self.x_max <= w and 0 <= self.y_min and self.y_max <= h):
            raise ValueError(
                f"box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max}) "
                f"outside space bounds {w}x{h}"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Detection:
    """A detected object: box, label, and confidence in [0, 1]."""

    box: Box
    label: ObjectLabel
    confidence: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes in the same coordinate space.

    Returns 0 for disjoint boxes; symmetric; clamped to [0, 1].
    """
    if a.space != b.space:
        raise ValueError(f"mismatched coordinate spaces: {a.space} vs {b.space}")
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def nms(dets: list[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy per-label non-maximum suppression.

    Detections are visited confidence-descending; one is kept iff its IoU
    with every already-kept detection of the same label is <= the
    threshold. Confidence ties break by (label order, x_min, y_min) for
    determinism. Output stays confidence-descending.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    ordered = sorted(
        dets,
        key=lambda d: (-d.confidence, _LABEL_ORDER[d.label], d.box.x_min, d.box.y_min),
    )
    kept: list[Detection] = []
    for det in ordered:
        if all(
            iou(det.box, k.box) <= iou_threshold
            for k in kept
            if k.label == det.label
        ):
            kept.append(det)
    return kept


def convert(box: Box, target_space: Space) -> Box:
    """Re-express a box in another coordinate space.

    Round-tripping normalized -> pixel -> normalized reproduces the input
    within 1e-9 relative tolerance.
    """
    if box.space == target_space:
        return box
    sw, sh = box.space.bounds
    tw, th = target_space.bounds
    fx = tw / sw
    fy = th / sh
    return Box(
        x_min=box.x_min * fx,
        y_min=box.y_min * fy,
        x_max=box.x_max * fx,
        y_max=box.y_max * fy,
        space=target_space,
    )


def clip_to_space(
    x_min: float, y_min: float, x_max: float, y_max: float, space: Space = NORMALIZED
) -> Box | None:
    """Build a box from raw corners clipped to the space; None if empty.

    Accepts out-of-bounds corners (arithmetic outputs of coordinate
    transforms), unlike the Box constructor which rejects them.
    """
    w, h = space.bounds
    x_min = max(0.0, min(x_min, w))
    y_min = max(0.0, min(y_min, h))
    x_max = max(0.0, min(x_max, w))
    y_max = max(0.0, min(y_max, h))
    if x_min >= x_max or y_min >= y_max:
        return None
    return Box(x_min, y_min, x_max, y_max, space)
