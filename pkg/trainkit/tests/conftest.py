import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

# Synthetic scenes: one or two bright rectangles on a dark background,
# labeled with the three-class vocabulary.
SCENES = [
    ("D", [(0, 0.35, 0.45, 0.25, 0.3), (2, 0.65, 0.5, 0.3, 0.35)]),
    ("E", [(2, 0.5, 0.5, 0.4, 0.35)]),
    ("B", [(1, 0.4, 0.45, 0.3, 0.3)]),
    ("A", []),
    ("D", [(0, 0.3, 0.5, 0.25, 0.3), (2, 0.6, 0.45, 0.3, 0.3)]),
    ("E", [(2, 0.45, 0.55, 0.35, 0.3)]),
    ("B", [(1, 0.55, 0.5, 0.3, 0.25)]),
    ("A", []),
    ("D", [(0, 0.4, 0.4, 0.3, 0.3), (2, 0.7, 0.55, 0.25, 0.3)]),
    ("E", [(2, 0.55, 0.45, 0.3, 0.3)]),
    ("B", [(1, 0.45, 0.55, 0.25, 0.3)]),
    ("A", []),
]


def render(boxes, size=96, seed=0):
    rng = np.random.default_rng(seed)
    image = rng.integers(20, 60, (size, size, 3), dtype=np.uint8)
    fills = {0: (220, 80, 80), 1: (80, 220, 80), 2: (80, 80, 220)}
    for class_index, xc, yc, w, h in boxes:
        x1 = int((xc - w / 2) * size)
        y1 = int((yc - h / 2) * size)
        x2 = int((xc + w / 2) * size)
        y2 = int((yc + h / 2) * size)
        image[y1:y2, x1:x2] = fills[class_index]
    return image


@pytest.fixture(scope="session")
def smoke_dataset(tmp_path_factory):
    """12 synthetic images + labels + manifest + a trivial split."""
    root = tmp_path_factory.mktemp("smoke")
    (root / "images").mkdir()
    (root / "labels").mkdir()
    (root / "splits").mkdir()
    manifest_lines = []
    ids = []
    for i, (_, boxes) in enumerate(SCENES):
        rid = f"smoke-{i:03d}"
        ids.append(rid)
        Image.fromarray(render(boxes, seed=i)).save(root / "images" / f"{rid}.png")
        (root / "labels" / f"{rid}.txt").write_text(
            "".join(
                f"{c} {xc:.6f} {yc:.6f} {w:.6f} {h:.6f}\n" for c, xc, yc, w, h in boxes
            )
        )
        manifest_lines.append(
            json.dumps(
                {
                    "id": rid,
                    "path": f"images/{rid}.png",
                    "location": "MRB",
                    "weather": "clear",
                    "time_of_day": "day",
                    "origin": "original",
                    "parent_id": None,
                }
            )
        )
    (root / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n")
    (root / "splits" / "train.txt").write_text("\n".join(ids[:8]) + "\n")
    (root / "splits" / "val.txt").write_text("\n".join(ids[8:10]) + "\n")
    (root / "splits" / "test.txt").write_text("\n".join(ids[10:]) + "\n")
    return root
