"""Golden fixtures: the reference benchmark confusion and shaped manifests.

The reference benchmark is a 116-image five-class evaluation whose
confusion matrix the metric suite must reproduce exactly (per-class F1 of
100/100/100/92.6/85.0 and macro-F1 95.5). The manifest builders produce
synthetic datasets shaped like the five-camera collection campaign for
split and slicing tests.
"""

from __future__ import annotations

import random

from .dataset import DatasetManifest, GroundTruthBox, ImageRecord
from .evaluation import ConfusionMatrix, scene_confusion
from .geometry import Box
from .scene import ObjectLabel, SceneClass

#: Original image counts per camera location in the reference campaign.
LOCATION_COUNTS = {"ERB": 48, "LRB": 55, "SLA": 60, "MRB": 142, "CCB": 26}

#: (observed, predicted, count) cells of the reference benchmark confusion.
REFERENCE_CELLS: list[tuple[SceneClass, SceneClass, int]] = [
    (SceneClass.A, SceneClass.A, 13),
    (SceneClass.B, SceneClass.B, 12),
    (SceneClass.C, SceneClass.C, 1),
    (SceneClass.D, SceneClass.D, 63),
    (SceneClass.D, SceneClass.E, 3),
    (SceneClass.D, SceneClass.F, 4),
    (SceneClass.E, SceneClass.D, 3),
    (SceneClass.E, SceneClass.E, 17),
]


def reference_confusion() -> ConfusionMatrix:
    """The reference benchmark confusion matrix (116 samples)."""
    m = ConfusionMatrix()
    for observed, predicted, count in REFERENCE_CELLS:
        m.add(observed, predicted, count)
    return m


def reference_scene_pairs() -> list[tuple[SceneClass, SceneClass]]:
    """The benchmark as individual (observed, predicted) pairs."""
    pairs = []
    for observed, predicted, count in REFERENCE_CELLS:
        pairs.extend([(observed, predicted)] * count)
    assert scene_confusion(pairs) == reference_confusion()
    return pairs


#: Rain-robustness slice: 74 samples over classes A/B/D/E, macro-F1 90.8.
RAIN_SLICE_CELLS: list[tuple[SceneClass, SceneClass, int]] = [
    (SceneClass.A, SceneClass.A, 8),
    (SceneClass.A, SceneClass.D, 1),
    (SceneClass.B, SceneClass.B, 25),
    (SceneClass.D, SceneClass.D, 33),
    (SceneClass.D, SceneClass.A, 1),
    (SceneClass.D, SceneClass.E, 1),
    (SceneClass.E, SceneClass.E, 4),
    (SceneClass.E, SceneClass.D, 1),
]

#: Fog-robustness slice: 19 samples over classes A/B/D/E, macro-F1 81.9.
FOG_SLICE_CELLS: list[tuple[SceneClass, SceneClass, int]] = [
    (SceneClass.A, SceneClass.A, 4),
    (SceneClass.B, SceneClass.B, 3),
    (SceneClass.D, SceneClass.D, 7),
    (SceneClass.D, SceneClass.E, 1),
    (SceneClass.D, SceneClass.F, 2),
    (SceneClass.E, SceneClass.E, 1),
    (SceneClass.E, SceneClass.D, 1),
]


def _scene_annotations(scene: SceneClass) -> tuple[GroundTruthBox, ...]:
    """A minimal annotation set whose ground-truth scene is ``scene``."""
    vwb = GroundTruthBox(ObjectLabel.VESSEL_WITH_BARGE, Box(0.1, 0.1, 0.3, 0.3))
    vwo = GroundTruthBox(ObjectLabel.VESSEL_WITHOUT_BARGE, Box(0.4, 0.1, 0.6, 0.3))
    barge = GroundTruthBox(ObjectLabel.BARGE, Box(0.1, 0.5, 0.5, 0.8))
    return {
        SceneClass.A: (),
        SceneClass.B: (vwo,),
        SceneClass.C: (vwo, barge),
        SceneClass.D: (vwb, barge),
        SceneClass.E: (barge,),
    }[scene]


def table1_manifest(seed: int = 0) -> DatasetManifest:
    """331 original records shaped like the five-camera campaign.

    Location counts follow LOCATION_COUNTS; roughly 12% are background
    images (scene A); the rest mix scenes B-E with D dominating, echoing
    the observed traffic composition.
    """
    rng = random.Random(seed)
    scene_weights = [
        (SceneClass.A, 12),  # background share
        (SceneClass.B, 10),
        (SceneClass.C, 2),
        (SceneClass.D, 58),
        (SceneClass.E, 18),
    ]
    scenes, weights = zip(*scene_weights)
    records = []
    for location, count in LOCATION_COUNTS.items():
        for i in range(count):
            scene = rng.choices(scenes, weights=weights)[0]
            records.append(
                ImageRecord(
                    id=f"{location.lower()}-{i:04d}",
                    path=f"images/{location.lower()}-{i:04d}.jpg",
                    location=location,
                    weather="clear",
                    time_of_day="day" if rng.random() < 0.8 else "night",
                    annotations=_scene_annotations(scene),
                )
            )
    return DatasetManifest(records=records)


def paper_scale_manifest(
    seed: int = 0, n_augmented: int = 440, rain_total: int = 74, fog_total: int = 19
) -> DatasetManifest:
    """Campaign-scale manifest: 331 originals plus augmented children.

    ``n_augmented`` children are attached round-robin to originals; the
    whole manifest carries exactly ``rain_total`` rain and ``fog_total``
    fog records (weather assigned to augmented records first, spilling
    over to originals), so weather slices match the robustness analyses.
    """
    manifest = table1_manifest(seed)
    rng = random.Random(seed + 1)
    records = list(manifest.records)
    originals = list(records)
    rng.shuffle(originals)
    for k in range(n_augmented):
        parent = originals[k % len(originals)]
        records.append(
            ImageRecord(
                id=f"{parent.id}-aug{k // len(originals):02d}",
                path=f"images/{parent.id}-aug{k // len(originals):02d}.jpg",
                location=parent.location,
                weather=parent.weather,
                time_of_day=parent.time_of_day,
                origin="augmented",
                parent_id=parent.id,
                annotations=parent.annotations,
            )
        )

    # Retag weather so the rain/fog totals come out exactly as asked.
    augmented_first = sorted(records, key=lambda r: (r.origin == "original", r.id))
    rain_ids = {r.id for r in augmented_first[:rain_total]}
    fog_ids = {r.id for r in augmented_first[rain_total : rain_total + fog_total]}
    retagged = []
    for r in records:
        weather = "rain" if r.id in rain_ids else "fog" if r.id in fog_ids else "clear"
        retagged.append(
            ImageRecord(
                id=r.id,
                path=r.path,
                location=r.location,
                weather=weather,
                time_of_day=r.time_of_day,
                origin=r.origin,
                parent_id=r.parent_id,
                annotations=r.annotations,
            )
        )
    out = DatasetManifest(records=retagged, label_map=dict(manifest.label_map))
    out.validate_lineage()
    return out
