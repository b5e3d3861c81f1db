"""Readers for the monitoring pipeline's dataset files, plus input prep.

These parse the documented interchange formats (JSONL manifest, one
plain-text label file per image, train/val/test id lists) independently;
trainkit talks to the serving side only through files and its CLI.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

PAD_VALUE = 114
LABEL_NAMES = ("vessel_with_barge", "vessel_without_barge", "barge")


@dataclass(frozen=True)
class Sample:
    """One training sample: image path plus (class_index, cx, cy, w, h) rows."""

    id: str
    path: str
    boxes: tuple[tuple[int, float, float, float, float], ...]


def read_label_file(path: Path) -> tuple[tuple[int, float, float, float, float], ...]:
    """Rows of ``class xc yc w h`` (normalized); missing file = background."""
    if not path.exists():
        return ()
    rows = []
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise ValueError(f"{path}: malformed label line {line!r}")
        rows.append((int(parts[0]),) + tuple(float(v) for v in parts[1:]))
    return tuple(rows)


def read_manifest(
    manifest_path: str | Path,
    labels_dir: str | Path,
    images_root: str | Path | None = None,
) -> list[Sample]:
    """Samples from a manifest plus its sidecar label files."""
    manifest_path = Path(manifest_path)
    root = Path(images_root) if images_root else manifest_path.parent
    samples = []
    for line in manifest_path.read_text().splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        samples.append(
            Sample(
                id=record["id"],
                path=str(root / record["path"]),
                boxes=read_label_file(Path(labels_dir) / f"{record['id']}.txt"),
            )
        )
    return samples


def read_split_ids(split_dir: str | Path, name: str) -> set[str]:
    path = Path(split_dir) / f"{name}.txt"
    return {line.strip() for line in path.read_text().splitlines() if line.strip()}


def letterbox_params(width: int, height: int, target: int) -> tuple[float, int, int]:
    """(scale, pad_x, pad_y) for the shared square-input convention."""
    scale = target / max(width, height)
    scaled_w = round(width * scale)
    scaled_h = round(height * scale)
    return scale, (target - scaled_w) // 2, (target - scaled_h) // 2


def load_input(path: str, target: int) -> tuple[np.ndarray, float, int, int, int, int]:
    """Letterboxed (3, S, S) float32 tensor in [0, 1] plus mapping params."""
    image = Image.open(path).convert("RGB")
    width, height = image.size
    scale, pad_x, pad_y = letterbox_params(width, height, target)
    resized = image.resize((round(width * scale), round(height * scale)), Image.BILINEAR)
    canvas = Image.new("RGB", (target, target), (PAD_VALUE,) * 3)
    canvas.paste(resized, (pad_x, pad_y))
    tensor = np.asarray(canvas, dtype=np.float32).transpose(2, 0, 1) / 255.0
    return tensor, scale, pad_x, pad_y, width, height
