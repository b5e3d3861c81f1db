"""Annotations, manifests, and the stratified leakage-safe dataset split.

Label files are plain-text detection exports: one object per line,
``class_index x_center y_center width height`` with normalized floats.
The manifest is a newline-delimited JSON sidecar carrying per-image
metadata that the label format cannot hold (location, weather, time of
day, augmentation lineage).
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .geometry import Box
from .scene import DEFAULT_LABEL_MAP, ObjectLabel, SceneClass, ground_truth_scene

logger = logging.getLogger(__name__)

WEATHERS = ("clear", "rain", "fog")
TIMES_OF_DAY = ("day", "night")
PARTITIONS = ("train", "val", "test")


class LabelParseError(ValueError):
    """Malformed label-file line; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class LabelSchemaError(ValueError):
    """Class index not resolvable through the label map."""


class ManifestError(ValueError):
    """Structurally invalid manifest."""


@dataclass(frozen=True)
class GroundTruthBox:
    """An annotated object: label plus normalized box."""

    label: ObjectLabel
    box: Box

    def __post_init__(self) -> None:
        if not self.box.space.is_normalized:
            raise ValueError("ground-truth boxes must be normalized")


@dataclass(frozen=True)
class ImageRecord:
    """One image with collection metadata and ground-truth annotations.

    ``origin`` is "original" or "augmented"; augmented records name their
    source image via ``parent_id``. An empty annotation list marks a
    background image.
    """

    id: str
    path: str
    location: str
    weather: str
    time_of_day: str
    origin: str = "original"
    parent_id: str | None = None
    annotations: tuple[GroundTruthBox, ...] = ()

    def __post_init__(self) -> None:
        if self.weather not in WEATHERS:
            raise ValueError(f"unknown weather {self.weather!r}")
        if self.time_of_day not in TIMES_OF_DAY:
            raise ValueError(f"unknown time_of_day {self.time_of_day!r}")
        if self.origin not in ("original", "augmented"):
            raise ValueError(f"unknown origin {self.origin!r}")
        if self.origin == "augmented" and not self.parent_id:
            raise ValueError(f"augmented record {self.id} has no parent_id")
        if self.origin == "original" and self.parent_id:
            raise ValueError(f"original record {self.id} must not have a parent_id")

    @property
    def is_background(self) -> bool:
        return not self.annotations


@dataclass
class DatasetManifest:
    """Collection of image records plus the class-index mapping."""

    records: list[ImageRecord]
    label_map: dict[int, ObjectLabel] = field(
        default_factory=lambda: dict(DEFAULT_LABEL_MAP)
    )

    def __post_init__(self) -> None:
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate record ids: {dupes[:5]}")

    def validate_lineage(self) -> None:
        """Check that every augmented record's parent exists.

        Enforced on full-dataset loads; filtered manifests may legitimately
        exclude a kept child's parent.
        """
        known = {r.id for r in self.records}
        for r in self.records:
            if r.parent_id is not None and r.parent_id not in known:
                raise ManifestError(f"record {r.id} references unknown parent {r.parent_id}")

    def warn_anomalous_annotations(self) -> list[str]:
        """Ids whose ground truth classifies as scene F (towing vessel with
        no barge annotation): F is a prediction-only class, so ground-truth
        F marks a labeling problem. Warns and returns the offenders."""
        offenders = [
            r.id for r in self.records if ground_truth_scene(r) == SceneClass.F
        ]
        if offenders:
            logger.warning(
                "%d record(s) have anomalous ground truth (towing vessel without "
                "a barge annotation): %s",
                len(offenders),
                offenders[:10],
            )
        return offenders

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self, record_id: str) -> ImageRecord:
        for r in self.records:
            if r.id == record_id:
                return r
        raise KeyError(record_id)

    @property
    def originals(self) -> list[ImageRecord]:
        return [r for r in self.records if r.origin == "original"]

    def children_of(self, parent_id: str) -> list[ImageRecord]:
        return [r for r in self.records if r.parent_id == parent_id]

    def locations(self) -> list[str]:
        return sorted({r.location for r in self.records})


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint, exhaustive partition of record ids into train/val/test."""

    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]

    def partition_of(self, record_id: str) -> str:
        for name in PARTITIONS:
            if record_id in getattr(self, name):
                return name
        raise KeyError(record_id)

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def parse_label_file(
    text: str, label_map: dict[int, ObjectLabel] | None = None
) -> list[GroundTruthBox]:
    """Parse a plain-text detection label file into ground-truth boxes.

    Each nonempty line holds five whitespace-separated fields:
    ``class_index x_center y_center width height``, all normalized.
    An empty file is a background image.
    """
    if label_map is None:
        label_map = DEFAULT_LABEL_MAP
    boxes: list[GroundTruthBox] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 5:
            raise LabelParseError(line_no, f"expected 5 fields, got {len(fields)}")
        try:
            idx = int(fields[0])
            xc, yc, w, h = (float(v) for v in fields[1:])
        except ValueError as exc:
            raise LabelParseError(line_no, f"non-numeric field: {exc}") from exc
        if idx not in label_map:
            raise LabelSchemaError(f"line {line_no}: unknown class index {idx}")
        if not (0 < w <= 1 and 0 < h <= 1):
            raise ValueError(f"line {line_no}: width/height out of (0, 1]: {w}, {h}")
        x_min, x_max = xc - w / 2, xc + w / 2
        y_min, y_max = yc - h / 2, yc + h / 2
        eps = 1e-9
        if x_min < -eps or y_min < -eps or x_max > 1 + eps or y_max > 1 + eps:
            raise ValueError(
                f"line {line_no}: box ({x_min:.6f}, {y_min:.6f}, {x_max:.6f}, {y_max:.6f}) "
                "outside the unit square"
            )
        box = Box(max(0.0, x_min), max(0.0, y_min), min(1.0, x_max), min(1.0, y_max))
        boxes.append(GroundTruthBox(label=label_map[idx], box=box))
    return boxes


def emit_label_file(
    boxes: Sequence[GroundTruthBox], label_map: dict[int, ObjectLabel] | None = None
) -> str:
    """Inverse of parse_label_file; values kept to 6 decimal places."""
    if label_map is None:
        label_map = DEFAULT_LABEL_MAP
    index_of = {label: idx for idx, label in label_map.items()}
    lines = []
    for gt in boxes:
        b = gt.box
        xc, yc = (b.x_min + b.x_max) / 2, (b.y_min + b.y_max) / 2
        lines.append(
            f"{index_of[gt.label]} {xc:.6f} {yc:.6f} {b.width:.6f} {b.height:.6f}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def load_manifest(
    manifest_path: str | Path,
    labels_dir: str | Path | None = None,
    label_map: dict[int, ObjectLabel] | None = None,
) -> DatasetManifest:
    """Load a newline-delimited JSON manifest, optionally with label files.

    When ``labels_dir`` is given, each record's annotations are read from
    ``<labels_dir>/<id>.txt``; a missing or empty file means background.
    """
    if label_map is None:
        label_map = DEFAULT_LABEL_MAP
    records = []
    path = Path(manifest_path)
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
        annotations: tuple[GroundTruthBox, ...] = ()
        if labels_dir is not None:
            label_path = Path(labels_dir) / f"{obj['id']}.txt"
            if label_path.exists():
                annotations = tuple(parse_label_file(label_path.read_text(), label_map))
        try:
            records.append(
                ImageRecord(
                    id=obj["id"],
                    path=obj["path"],
                    location=obj["location"],
                    weather=obj["weather"],
                    time_of_day=obj["time_of_day"],
                    origin=obj.get("origin", "original"),
                    parent_id=obj.get("parent_id"),
                    annotations=annotations,
                )
            )
        except (KeyError, ValueError) as exc:
            raise ManifestError(f"{path}:{line_no}: {exc}") from exc
    manifest = DatasetManifest(records=records, label_map=label_map)
    manifest.validate_lineage()
    if labels_dir is not None:
        manifest.warn_anomalous_annotations()
    return manifest


def save_manifest(manifest: DatasetManifest, manifest_path: str | Path) -> None:
    """Write the manifest as one JSON record per line."""
    with open(manifest_path, "w") as fh:
        for r in manifest.records:
            fh.write(
                json.dumps(
                    {
                        "id": r.id,
                        "path": r.path,
                        "location": r.location,
                        "weather": r.weather,
                        "time_of_day": r.time_of_day,
                        "origin": r.origin,
                        "parent_id": r.parent_id,
                    }
                )
                + "\n"
            )


def _largest_remainder(total: int, ratios: Sequence[float]) -> list[int]:
    """Apportion ``total`` into integer shares that sum exactly to it.

    Largest-remainder rounding; remainder ties break by earlier position
    (train before val before test) for determinism.
    """
    raw = [total * r for r in ratios]
    shares = [int(v) for v in raw]
    leftover = total - sum(shares)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - shares[i]), i))
    for i in order[:leftover]:
        shares[i] += 1
    return shares


def _stratum_key(record: ImageRecord) -> tuple[str, SceneClass]:
    return (record.location, ground_truth_scene(record))


@dataclass
class _Group:
    """An original plus its augmented children, split as a unit."""

    leader: ImageRecord
    member_ids: list[str]
    can_test: bool


def stratified_group_split(
    manifest: DatasetManifest,
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> SplitAssignment:
    """Stratified 70:15:15 split keeping augmented lineage leakage-safe.

    Strata are (location, scene class) of the original images; each
    stratum's record count (originals plus their augmented children) is
    apportioned by largest remainder. The test share is filled with
    originals only; children follow their parent except that a child of a
    test original goes to train. Deterministic for a fixed seed.
    """
    if any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")

    rng = random.Random(seed)
    known_ids = {r.id for r in manifest.records}
    children: dict[str, list[str]] = {}
    orphans: list[ImageRecord] = []
    for r in manifest.records:
        if r.parent_id is None:
            continue
        if r.parent_id in known_ids:
            children.setdefault(r.parent_id, []).append(r.id)
        else:
            orphans.append(r)  # filtered manifest; treat as its own group

    groups = [
        _Group(o, [o.id] + sorted(children.get(o.id, ())), can_test=True)
        for o in manifest.originals
    ]
    groups += [_Group(o, [o.id], can_test=False) for o in orphans]

    strata: dict[tuple[str, SceneClass], list[_Group]] = {}
    for g in groups:
        strata.setdefault(_stratum_key(g.leader), []).append(g)

    train: set[str] = set()
    val: set[str] = set()
    test: set[str] = set()

    for key in sorted(strata, key=lambda k: (k[0], k[1].value)):
        stratum = sorted(strata[key], key=lambda g: g.leader.id)
        rng.shuffle(stratum)
        n_records = sum(len(g.member_ids) for g in stratum)
        t_train, t_val, t_test = _largest_remainder(n_records, ratios)
        if n_records < len(ratios):
            logger.warning(
                "stratum %s has %d record(s); best-effort assignment", key, n_records
            )

        # Test takes whole originals, one record each; their children train.
        pool: list[_Group] = []
        n_test = 0
        for g in stratum:
            if g.can_test and n_test < t_test:
                test.add(g.leader.id)
                train.update(g.member_ids[1:])
                n_test += 1
            else:
                pool.append(g)
        if n_test < t_test:
            logger.warning(
                "stratum %s: want %d test originals, only %d available", key, t_test, n_test
            )

        # Fill validation toward its target with whole groups; group
        # granularity makes this best-effort.
        val_count = 0
        for g in pool:
            size = len(g.member_ids)
            closer = abs(val_count + size - t_val) < abs(val_count - t_val)
            if val_count < t_val and closer:
                val.update(g.member_ids)
                val_count += size
            else:
                train.update(g.member_ids)

    # Never an empty test set while originals exist and a test share was asked.
    if not test and ratios[2] > 0 and manifest.originals:
        fallback = min(manifest.originals, key=lambda r: r.id)
        for bucket in (train, val):
            bucket.discard(fallback.id)
        test.add(fallback.id)
        for child in children.get(fallback.id, ()):  # keep lineage out of test
            val.discard(child)
            train.add(child)
        logger.warning("test share was empty; moved original %s into test", fallback.id)

    return SplitAssignment(train=frozenset(train), val=frozenset(val), test=frozenset(test))


def filter_manifest(
    manifest: DatasetManifest,
    predicate: Callable[[ImageRecord], bool] | None = None,
    **fields: str,
) -> DatasetManifest:
    """Records satisfying a predicate and/or exact metadata field values.

    Keyword filters match ``location``, ``weather``, ``time_of_day`` and
    ``origin`` exactly, e.g. ``filter_manifest(m, weather="rain")``.
    """
    allowed = {"location", "weather", "time_of_day", "origin"}
    unknown = set(fields) - allowed
    if unknown:
        raise ValueError(f"unknown filter fields: {sorted(unknown)}")

    def keep(record: ImageRecord) -> bool:
        if predicate is not None and not predicate(record):
            return False
        return all(getattr(record, name) == value for name, value in fields.items())

    kept = [r for r in manifest.records if keep(r)]
    return DatasetManifest(records=kept, label_map=dict(manifest.label_map))


def save_split(split: SplitAssignment, out_dir: str | Path) -> None:
    """Write train/val/test id-list files, one id per line, sorted."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in PARTITIONS:
        ids = sorted(getattr(split, name))
        (out / f"{name}.txt").write_text("\n".join(ids) + ("\n" if ids else ""))


def load_split(split_dir: str | Path) -> SplitAssignment:
    """Read the three id-list files written by save_split."""
    parts = {}
    for name in PARTITIONS:
        text = (Path(split_dir) / f"{name}.txt").read_text()
        parts[name] = frozenset(line.strip() for line in text.splitlines() if line.strip())
    return SplitAssignment(train=parts["train"], val=parts["val"], test=parts["test"])
