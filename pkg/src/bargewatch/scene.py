"""Scene classification: map detected object labels to the five-class traffic scheme.

Each frame is summarized by which object kinds are present, yielding one of
five scene classes A-E plus an anomalous class F that only a detector can
produce (a towing vessel reported with no accompanying barge detection).
"""

from __future__ import annotations

from enum import Enum
from typing import TYPE_CHECKING, Iterable

if TYPE_CHECKING:
    from .dataset import ImageRecord


class ObjectLabel(Enum):
    """Detector object vocabulary: towing vessels, free vessels, and barges."""

    VESSEL_WITH_BARGE = "vessel_with_barge"
    VESSEL_WITHOUT_BARGE = "vessel_without_barge"
    BARGE = "barge"

    def __str__(self) -> str:
        return self.value


#: Default index mapping used by label files and model class channels.
DEFAULT_LABEL_MAP: dict[int, ObjectLabel] = {
    0: ObjectLabel.VESSEL_WITH_BARGE,
    1: ObjectLabel.VESSEL_WITHOUT_BARGE,
    2: ObjectLabel.BARGE,
}


class SceneClass(Enum):
    """Per-frame traffic scene classes.

    A: nothing detected. B: free vessel only. C: free vessel plus barge.
    D: towing vessel plus barge. E: barge only. F: towing vessel without
    any barge detection (anomalous, prediction-only).
    """

    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E = "E"
    F = "F"

    def __str__(self) -> str:
        return self.value


def classify_scene(labels_present: Iterable[ObjectLabel]) -> SceneClass:
    """Classify a frame from the set of object labels present in it.

    Total over all 2^3 presence combinations. Mixed scenes resolve by
    precedence D > F > C > B > E > A: towing activity dominates the
    frame's traffic meaning, and a towing vessel without a barge is the
    anomalous class F.
    """
    present = set(labels_present)
    vwb = ObjectLabel.VESSEL_WITH_BARGE in present
    vwo = ObjectLabel.VESSEL_WITHOUT_BARGE in present
    barge = ObjectLabel.BARGE in present

    if vwb and barge:
        return SceneClass.D
    if vwb:
        return SceneClass.F
    if vwo and barge:
        return SceneClass.C
    if vwo:
        return SceneClass.B
    if barge:
        return SceneClass.E
    return SceneClass.A


def ground_truth_scene(record: "ImageRecord") -> SceneClass:
    """Scene class implied by a record's ground-truth annotations.

    Background images (no annotations) are class A. Valid ground truth
    never yields F: an annotated towing vessel always comes with a barge
    annotation, so F from this function signals a labeling problem.
    """
    return classify_scene(ann.label for ann in record.annotations)
