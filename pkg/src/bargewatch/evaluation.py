"""Detection matching, precision/recall/F1, scene confusion, and slicing.

The headline aggregate is macro-F1 over scene classes with at least one
observed sample: the unweighted mean of per-class F1 scores. Support-
weighted averaging gives a different number on the reference benchmark
(about 93 instead of 95.5); see README for the derivation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .dataset import DatasetManifest, GroundTruthBox, ImageRecord, filter_manifest
from .geometry import Detection, iou
from .scene import ObjectLabel, SceneClass, ground_truth_scene

SCENE_ORDER = list(SceneClass)


class EvaluationError(RuntimeError):
    """Evaluation cannot proceed (e.g. records without predictions)."""


@dataclass(frozen=True)
class ClassCounts:
    """Per-class true-positive / false-positive / false-negative tallies."""

    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError(f"counts must be non-negative: {self}")

    def __add__(self, other: "ClassCounts") -> "ClassCounts":
        return ClassCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def precision_recall_f1(c: ClassCounts) -> tuple[float, float, float]:
    """Precision, recall and F1 from class counts.

    Zero-denominator conventions: with no predictions, precision is
    vacuously 1.0; with no ground truth, recall is vacuously 1.0; F1 is 0
    when precision + recall is 0.
    """
    p = c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else 1.0
    r = c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else 1.0
    f1 = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
    return p, r, f1


def match_detections(
    gt: Sequence[GroundTruthBox],
    pred: Sequence[Detection],
    iou_threshold: float,
) -> dict[ObjectLabel, ClassCounts]:
    """Greedy one-to-one matching of predictions to ground truth per label.

    Predictions are visited confidence-descending; each takes the unmatched
    same-label ground-truth box with the highest IoU at or above the
    threshold (IoU ties go to the earlier ground-truth index). Matched
    pairs count as tp, leftover predictions as fp, leftover ground truth
    as fn.
    """
    counts = {label: ClassCounts() for label in ObjectLabel}
    matched_gt: set[int] = set()
    order = sorted(range(len(pred)), key=lambda i: (-pred[i].confidence, i))
    for pi in order:
        p = pred[pi]
        best_iou = 0.0
        best_gi = None
        for gi, g in enumerate(gt):
            if gi in matched_gt or g.label != p.label:
                continue
            overlap = iou(p.box, g.box)
            if overlap >= iou_threshold and overlap > best_iou:
                best_iou = overlap
                best_gi = gi
        if best_gi is not None:
            matched_gt.add(best_gi)
            counts[p.label] += ClassCounts(tp=1)
        else:
            counts[p.label] += ClassCounts(fp=1)
    for gi, g in enumerate(gt):
        if gi not in matched_gt:
            counts[g.label] += ClassCounts(fn=1)
    return counts


class ConfusionMatrix:
    """Scene-level cross-classification counts, observed rows x predicted columns."""

    def __init__(self) -> None:
        self._cells = {
            (obs, prd): 0 for obs in SCENE_ORDER for prd in SCENE_ORDER
        }

    def add(self, observed: SceneClass, predicted: SceneClass, count: int = 1) -> None:
        if count < 0:
            raise ValueError("count must be non-negative")
        self._cells[(observed, predicted)] += count

    def cell(self, observed: SceneClass, predicted: SceneClass) -> int:
        return self._cells[(observed, predicted)]

    def row_total(self, observed: SceneClass) -> int:
        return sum(self._cells[(observed, prd)] for prd in SCENE_ORDER)

    def col_total(self, predicted: SceneClass) -> int:
        return sum(self._cells[(obs, predicted)] for obs in SCENE_ORDER)

    @property
    def total(self) -> int:
        return sum(self._cells.values())

    @property
    def diagonal(self) -> int:
        return sum(self._cells[(c, c)] for c in SCENE_ORDER)

    def counts_for(self, c: SceneClass) -> ClassCounts:
        tp = self.cell(c, c)
        return ClassCounts(tp=tp, fp=self.col_total(c) - tp, fn=self.row_total(c) - tp)

    @classmethod
    def from_cells(cls, cells: Mapping[tuple[SceneClass, SceneClass], int]) -> "ConfusionMatrix":
        m = cls()
        for (obs, prd), count in cells.items():
            m.add(obs, prd, count)
        return m

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ConfusionMatrix) and self._cells == other._cells


def scene_confusion(
    pairs: Iterable[tuple[SceneClass, SceneClass]],
) -> ConfusionMatrix:
    """Accumulate (observed, predicted) scene pairs into a confusion matrix."""
    m = ConfusionMatrix()
    for observed, predicted in pairs:
        m.add(observed, predicted)
    return m


@dataclass(frozen=True)
class PerClassMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float | None  # row-diagonal fraction; None without observations
    support: int  # observed sample count
    vacuous: bool  # no tp, fp or fn at all
    in_macro: bool


@dataclass
class MetricsReport:
    """Per-class and aggregate metrics for one evaluation run."""

    per_class: dict[SceneClass, PerClassMetrics]
    macro_f1: float
    overall_accuracy: float
    total: int
    fps: float | None = None
    slice_name: str | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "slice": self.slice_name,
            "total": self.total,
            "macro_f1": self.macro_f1,
            "overall_accuracy": self.overall_accuracy,
            "fps": self.fps,
            "per_class": {
                c.value: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "accuracy": m.accuracy,
                    "support": m.support,
                    "vacuous": m.vacuous,
                    "in_macro": m.in_macro,
                }
                for c, m in self.per_class.items()
            },
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format_table(self) -> str:
        """Human-readable table: one row per class plus aggregates."""
        lines = []
        if self.slice_name:
            lines.append(f"slice: {self.slice_name}")
        lines.append(f"{'class':<6}{'F1 (%)':>8}{'prec':>8}{'rec':>8}{'acc':>8}{'n':>6}")
        for c in SCENE_ORDER:
            m = self.per_class[c]
            if m.vacuous:
                lines.append(f"{c.value:<6}{'-':>8}{'-':>8}{'-':>8}{'-':>8}{m.support:>6}")
                continue
            acc = f"{100 * m.accuracy:.1f}" if m.accuracy is not None else "-"
            lines.append(
                f"{c.value:<6}{100 * m.f1:>8.1f}{100 * m.precision:>8.2f}"
                f"{100 * m.recall:>8.2f}{acc:>8}{m.support:>6}"
            )
        lines.append(
            f"macro-F1 {100 * self.macro_f1:.1f}%   "
            f"overall accuracy {100 * self.overall_accuracy:.1f}%   n={self.total}"
        )
        if self.fps is not None:
            lines.append(f"throughput {self.fps:.1f} fps")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)


def metrics_from_confusion(m: ConfusionMatrix) -> MetricsReport:
    """Derive per-class and aggregate metrics from a scene confusion matrix.

    Per class: tp is the diagonal cell, fp the rest of its column, fn the
    rest of its row; accuracy is the row-diagonal fraction. Macro-F1
    averages F1 over classes with at least one observed sample.
    """
    per_class: dict[SceneClass, PerClassMetrics] = {}
    macro_terms = []
    for c in SCENE_ORDER:
        counts = m.counts_for(c)
        p, r, f1 = precision_recall_f1(counts)
        support = m.row_total(c)
        vacuous = counts.tp == counts.fp == counts.fn == 0
        in_macro = support >= 1
        if in_macro:
            macro_terms.append(f1)
        per_class[c] = PerClassMetrics(
            precision=p,
            recall=r,
            f1=f1,
            accuracy=(counts.tp / support) if support else None,
            support=support,
            vacuous=vacuous,
            in_macro=in_macro,
        )
    total = m.total
    return MetricsReport(
        per_class=per_class,
        macro_f1=sum(macro_terms) / len(macro_terms) if macro_terms else 0.0,
        overall_accuracy=m.diagonal / total if total else 0.0,
        total=total,
    )


def slice_eval(
    manifest: DatasetManifest,
    predictions: Mapping[str, SceneClass],
    slicer: Callable[[ImageRecord], bool] | None = None,
    slice_name: str | None = None,
    **fields: str,
) -> MetricsReport:
    """Metrics over the manifest subset selected by a slicing predicate.

    ``predictions`` maps record id to predicted scene class and must cover
    every sliced record. Keyword filters work like filter_manifest.
    """
    sliced = filter_manifest(manifest, slicer, **fields)
    missing = [r.id for r in sliced.records if r.id not in predictions]
    if missing:
        raise EvaluationError(
            f"{len(missing)} sliced record(s) lack predictions: {sorted(missing)[:10]}"
        )
    confusion = scene_confusion(
        (ground_truth_scene(r), predictions[r.id]) for r in sliced.records
    )
    report = metrics_from_confusion(confusion)
    if slice_name is None and fields:
        slice_name = ",".join(f"{k}={v}" for k, v in sorted(fields.items()))
    report.slice_name = slice_name
    return report


def transferability_protocol(
    manifest: DatasetManifest, holdout_location: str
) -> tuple[DatasetManifest, DatasetManifest]:
    """Leave-one-location-out split for cross-location generalization.

    Test gets all original records at the holdout location; train gets
    everything else, with augmented records derived from holdout originals
    dropped entirely.
    """
    if holdout_location not in {r.location for r in manifest.records}:
        raise ValueError(f"location {holdout_location!r} not present in manifest")
    holdout_original_ids = {
        r.id
        for r in manifest.records
        if r.location == holdout_location and r.origin == "original"
    }
    test_records = [r for r in manifest.records if r.id in holdout_original_ids]
    train_records = [
        r
        for r in manifest.records
        if r.id not in holdout_original_ids
        and r.parent_id not in holdout_original_ids
    ]
    label_map = dict(manifest.label_map)
    return (
        DatasetManifest(records=train_records, label_map=label_map),
        DatasetManifest(records=test_records, label_map=label_map),
    )


def throughput(n_frames: int, elapsed_seconds: float) -> float:
    """Frames per second over a measured interval."""
    if elapsed_seconds <= 0:
        raise ValueError(f"elapsed_seconds must be positive, got {elapsed_seconds}")
    return n_frames / elapsed_seconds
