"""Validation-side scoring: box IoU, greedy NMS, scene macro-F1.

Independent re-implementation of the serving side's conventions so
trainkit can early-stop on the same headline metric without importing
the serving package.
"""

from __future__ import annotations

SCENES = ("A", "B", "C", "D", "E", "F")


def box_iou(a: tuple, b: tuple) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def greedy_nms(dets: list[dict], iou_threshold: float) -> list[dict]:
    """Per-class suppression, confidence-descending, keep at IoU <= threshold."""
    ordered = sorted(dets, key=lambda d: (-d["confidence"], d["class"], d["box"]))
    kept: list[dict] = []
    for det in ordered:
        if all(
            box_iou(det["box"], k["box"]) <= iou_threshold
            for k in kept
            if k["class"] == det["class"]
        ):
            kept.append(det)
    return kept


def scene_of(class_indices: set[int]) -> str:
    """Scene class from present object classes (0 towing, 1 free, 2 barge)."""
    vwb, vwo, barge = 0 in class_indices, 1 in class_indices, 2 in class_indices
    if vwb and barge:
        return "D"
    if vwb:
        return "F"
    if vwo and barge:
        return "C"
    if vwo:
        return "B"
    if barge:
        return "E"
    return "A"


def scene_macro_f1(pairs: list[tuple[str, str]]) -> float:
    """Macro-F1 over scene classes with at least one observed sample."""
    f1s = []
    for scene in SCENES:
        support = sum(1 for obs, _ in pairs if obs == scene)
        if support == 0:
            continue
        tp = sum(1 for obs, pred in pairs if obs == pred == scene)
        fp = sum(1 for obs, pred in pairs if pred == scene and obs != scene)
        fn = support - tp
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / (tp + fn) if tp + fn else 1.0
        f1s.append(
            2 * precision * recall / (precision + recall) if precision + recall else 0.0
        )
    return sum(f1s) / len(f1s) if f1s else 0.0


def should_stop(history: list[float], patience: int) -> bool:
    """True once the metric has not improved for ``patience`` epochs."""
    if not history:
        return False
    best_epoch = max(range(len(history)), key=lambda i: (history[i], -i))
    return (len(history) - 1 - best_epoch) >= patience
