"""Write trained weights as a serving bundle and compare bundle contents.

The bundle layout follows the serving side's published format: a single
``.npz`` with a JSON ``meta`` entry plus float32 ``conv{i}.weight/.bias``
and ``head.weight/.bias`` arrays.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .config import ALLOWED_IMAGE_SIZES
from .model import GridDetector

FORMAT_NAME = "bargewatch-detector-bundle"
FORMAT_VERSION = 1


class ExportError(ValueError):
    """Weights cannot be expressed in the bundle contract."""


def export(
    weights_path: str | Path,
    bundle_path: str | Path,
    image_size: int,
    channels: tuple[int, ...] = (8, 16, 32, 32),
) -> None:
    """Convert a checkpoint into a serving bundle for ``image_size`` inputs."""
    if image_size not in ALLOWED_IMAGE_SIZES:
        raise ExportError(f"image_size must be one of {ALLOWED_IMAGE_SIZES}, got {image_size}")
    model = GridDetector(channels)
    try:
        state = torch.load(weights_path, weights_only=True)
        model.load_state_dict(state)
    except (RuntimeError, FileNotFoundError) as exc:
        raise ExportError(f"cannot load weights {weights_path}: {exc}") from exc
    if image_size % model.stride != 0:
        raise ExportError(f"image_size {image_size} not divisible by stride {model.stride}")

    arrays = {}
    for i, block in enumerate(model.blocks):
        arrays[f"conv{i}.weight"] = block.weight.detach().numpy().astype(np.float32)
        arrays[f"conv{i}.bias"] = block.bias.detach().numpy().astype(np.float32)
    arrays["head.weight"] = model.head.weight.detach().numpy().astype(np.float32)
    arrays["head.bias"] = model.head.bias.detach().numpy().astype(np.float32)
    arrays["meta"] = np.array(
        json.dumps(
            {
                "format": FORMAT_NAME,
                "version": FORMAT_VERSION,
                "input_size": image_size,
                "num_classes": model.num_classes,
                "stride": model.stride,
                "channels": list(channels),
            }
        )
    )
    np.savez(bundle_path, **arrays)


def bundles_identical(path_a: str | Path, path_b: str | Path) -> bool:
    """Content equality: same entries, same metadata, equal arrays."""
    with np.load(path_a, allow_pickle=False) as a, np.load(path_b, allow_pickle=False) as b:
        if set(a.files) != set(b.files):
            return False
        for key in a.files:
            va, vb = a[key], b[key]
            if va.shape != vb.shape or not (va == vb).all():
                return False
    return True
