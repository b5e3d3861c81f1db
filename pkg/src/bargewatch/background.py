"""Running-average background model, foreground masking, normalization.

One model per camera stream suppresses that location's static appearance
(water tint, banks, structures) so frames from different sites become
comparable: moving objects stay, the scene behind them washes out.

Frames are uint8 arrays, grayscale (H, W) or color (H, W, C); the model
accumulates in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_ALPHA = 0.02
DEFAULT_TAU = 25.0


@dataclass
class BackgroundModel:
    """Exponential running average of the scene, per pixel."""

    alpha: float = DEFAULT_ALPHA
    mean: np.ndarray | None = None
    frames_seen: int = 0

    def __post_init__(self) -> None:
        if not (0 < self.alpha <= 1):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")

    def _check_dims(self, frame: np.ndarray) -> None:
        if self.mean is not None and frame.shape != self.mean.shape:
            raise ValueError(
                f"frame shape {frame.shape} does not match model {self.mean.shape}"
            )


def update(model: BackgroundModel, frame: np.ndarray) -> BackgroundModel:
    """Fold one frame into the model: mean' = (1 - alpha) * mean + alpha * frame.

    The first frame initializes the mean. The model is updated in place
    and returned for chaining.
    """
    model._check_dims(frame)
    frame64 = frame.astype(np.float64)
    if model.mean is None:
        model.mean = frame64
    else:
        model.mean = (1.0 - model.alpha) * model.mean + model.alpha * frame64
    model.frames_seen += 1
    return model


def _pixel_difference(model: BackgroundModel, frame: np.ndarray) -> np.ndarray:
    """Per-pixel absolute difference, max over channels for color frames."""
    if model.mean is None:
        raise ValueError("model has seen no frames")
    model._check_dims(frame)
    diff = np.abs(frame.astype(np.float64) - model.mean)
    if diff.ndim == 3:
        diff = diff.max(axis=2)
    return diff


def foreground_mask(model: BackgroundModel, frame: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Binary mask of pixels whose difference from the background exceeds tau."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return (_pixel_difference(model, frame) > tau).astype(np.uint8)


def normalize(model: BackgroundModel, frame: np.ndarray) -> np.ndarray:
    """Background-suppressed frame: |frame - mean| stretched to full range.

    An all-zero difference returns an all-zero image rather than dividing
    by zero. Output dtype is uint8.
    """
    if model.mean is None:
        raise ValueError("model has seen no frames")
    model._check_dims(frame)
    diff = np.abs(frame.astype(np.float64) - model.mean)
    peak = diff.max()
    if peak == 0:
        return np.zeros(frame.shape, dtype=np.uint8)
    stretched = diff * (255.0 / peak)
    return np.clip(np.rint(stretched), 0, 255).astype(np.uint8)


def process_directory(
    input_dir: str | Path,
    output_dir: str | Path,
    alpha: float = DEFAULT_ALPHA,
    tau: float = DEFAULT_TAU,
    emit: str = "both",
) -> int:
    """Run the model over a directory of frames in lexicographic order.

    Writes ``normalized/`` and/or ``masks/`` subdirectories depending on
    ``emit`` ("normalized", "masks", or "both"). Returns the frame count.
    """
    from PIL import Image

    if emit not in ("normalized", "masks", "both"):
        raise ValueError(f"emit must be normalized|masks|both, got {emit!r}")
    in_dir = Path(input_dir)
    out_dir = Path(output_dir)
    frames = sorted(
        p for p in in_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")
    )
    if emit in ("normalized", "both"):
        (out_dir / "normalized").mkdir(parents=True, exist_ok=True)
    if emit in ("masks", "both"):
        (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    model = BackgroundModel(alpha=alpha)
    for path in frames:
        frame = np.asarray(Image.open(path).convert("RGB"))
        update(model, frame)
        if emit in ("normalized", "both"):
            Image.fromarray(normalize(model, frame)).save(out_dir / "normalized" / f"{path.stem}.png")
        if emit in ("masks", "both"):
            mask = foreground_mask(model, frame, tau) * 255
            Image.fromarray(mask, "L").save(out_dir / "masks" / f"{path.stem}.png")
    return len(frames)
