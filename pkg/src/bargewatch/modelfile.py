"""Portable detector model bundle: format check, loading, numpy inference.

A bundle is a single ``.npz`` archive holding a JSON metadata entry plus
float32 weight arrays for a small fixed-vocabulary convolutional detector.
Inference here is pure numpy, so serving needs no training framework.

Format v1 ("bargewatch-detector-bundle"):

* ``meta``: JSON string with ``format``, ``version``, ``input_size`` (S),
  ``num_classes`` (C), ``stride`` (16) and ``channels`` (backbone widths).
* ``conv{i}.weight`` (C_out, C_in, 3, 3) / ``conv{i}.bias``: backbone
  blocks, each 3x3 stride-2 pad-1 convolution followed by ReLU.
* ``head.weight`` (5 + C, C_last, 1, 1) / ``head.bias``: 1x1 projection to
  per-cell (tx, ty, tw, th, obj, cls_1..cls_C).

The forward pass consumes (1, 3, S, S) float32 RGB scaled to [0, 1] and
returns (1, N, 4 + C) candidates: center-form boxes in model-input pixels
followed by per-class scores ``sigmoid(obj) * sigmoid(cls_k)``. Cell
(i, j) decodes as ``cx = (j + sigmoid(tx)) * stride`` (same for cy) and
``w = exp(tw) * stride`` with tw clamped to [-8, 8] (same for h).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_NAME = "bargewatch-detector-bundle"
FORMAT_VERSION = 1
STRIDE = 16
LOG_SIZE_CLAMP = 8.0


class ModelFormatError(ValueError):
    """Bundle fails the metadata or shape contract."""


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Plain NCHW convolution via im2col."""
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    if c != c_in:
        raise ModelFormatError(f"channel mismatch: input {c}, kernel expects {c_in}")
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (x.shape[2] - kh) // stride + 1
    ow = (x.shape[3] - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (n, c, oh, ow, kh, kw)
    out = np.einsum("nchwij,ocij->nohw", windows, weight, optimize=True)
    return (out + bias[None, :, None, None]).astype(np.float32)


@dataclass(frozen=True)
class BundleMeta:
    input_size: int
    num_classes: int
    stride: int
    channels: tuple[int, ...]


class DetectorBundle:
    """A loaded model bundle ready for numpy inference."""

    def __init__(self, meta: BundleMeta, arrays: dict[str, np.ndarray]):
        self.meta = meta
        self.arrays = arrays

    @property
    def grid(self) -> int:
        return self.meta.input_size // self.meta.stride

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Raw candidates (1, N, 4 + C) from a (1, 3, S, S) input in [0, 1]."""
        s = self.meta.input_size
        if x.shape != (1, 3, s, s):
            raise ValueError(f"expected input (1, 3, {s}, {s}), got {x.shape}")
        x = x.astype(np.float32)
        for i in range(len(self.meta.channels)):
            x = _conv2d(x, self.arrays[f"conv{i}.weight"], self.arrays[f"conv{i}.bias"], 2, 1)
            x = np.maximum(x, 0.0)
        y = _conv2d(x, self.arrays["head.weight"], self.arrays["head.bias"], 1, 0)
        return decode_head(y, self.meta.stride)


def decode_head(y: np.ndarray, stride: int) -> np.ndarray:
    """Map head output (1, 5+C, G, G) to candidates (1, G*G, 4+C)."""
    _, depth, gh, gw = y.shape
    num_classes = depth - 5
    if num_classes < 1:
        raise ModelFormatError(f"head depth {depth} leaves no class channels")
    jj, ii = np.meshgrid(np.arange(gw), np.arange(gh))
    cx = (jj + _sigmoid(y[0, 0])) * stride
    cy = (ii + _sigmoid(y[0, 1])) * stride
    w = np.exp(np.clip(y[0, 2], -LOG_SIZE_CLAMP, LOG_SIZE_CLAMP)) * stride
    h = np.exp(np.clip(y[0, 3], -LOG_SIZE_CLAMP, LOG_SIZE_CLAMP)) * stride
    obj = _sigmoid(y[0, 4])
    scores = _sigmoid(y[0, 5:]) * obj[None, :, :]
    stacked = np.concatenate(
        [cx[None], cy[None], w[None], h[None], scores], axis=0
    )  # (4+C, G, G)
    return stacked.reshape(4 + num_classes, gh * gw).T[None].astype(np.float32)


def save_bundle(
    path: str | Path,
    meta: BundleMeta,
    arrays: dict[str, np.ndarray],
) -> None:
    """Write a bundle; arrays are cast to float32."""
    payload = {k: np.asarray(v, dtype=np.float32) for k, v in arrays.items()}
    payload["meta"] = np.array(
        json.dumps(
            {
                "format": FORMAT_NAME,
                "version": FORMAT_VERSION,
                "input_size": meta.input_size,
                "num_classes": meta.num_classes,
                "stride": meta.stride,
                "channels": list(meta.channels),
            }
        )
    )
    np.savez(path, **payload)


def load_bundle(path: str | Path, expected_input_size: int | None = None) -> DetectorBundle:
    """Load and validate a bundle against the format contract."""
    path = Path(path)
    if not path.exists():
        raise ModelFormatError(f"model file not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if "meta" not in data:
            raise ModelFormatError(f"{path}: missing metadata entry")
        try:
            meta_dict = json.loads(str(data["meta"]))
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: unreadable metadata: {exc}") from exc
        if meta_dict.get("format") != FORMAT_NAME:
            raise ModelFormatError(f"{path}: not a {FORMAT_NAME} file")
        if meta_dict.get("version") != FORMAT_VERSION:
            raise ModelFormatError(
                f"{path}: unsupported format version {meta_dict.get('version')}"
            )
        meta = BundleMeta(
            input_size=int(meta_dict["input_size"]),
            num_classes=int(meta_dict["num_classes"]),
            stride=int(meta_dict["stride"]),
            channels=tuple(int(c) for c in meta_dict["channels"]),
        )
        arrays = {k: data[k] for k in data.files if k != "meta"}

    if meta.stride != 2 ** len(meta.channels):
        raise ModelFormatError(
            f"{path}: stride {meta.stride} inconsistent with {len(meta.channels)} blocks"
        )
    if meta.input_size % meta.stride != 0:
        raise ModelFormatError(f"{path}: input_size {meta.input_size} not divisible by stride")
    if expected_input_size is not None and meta.input_size != expected_input_size:
        raise ModelFormatError(
            f"{path}: model input size {meta.input_size} != configured {expected_input_size}"
        )

    widths = (3,) + meta.channels
    for i in range(len(meta.channels)):
        _expect_shape(path, arrays, f"conv{i}.weight", (widths[i + 1], widths[i], 3, 3))
        _expect_shape(path, arrays, f"conv{i}.bias", (widths[i + 1],))
    head_depth = 5 + meta.num_classes
    _expect_shape(path, arrays, "head.weight", (head_depth, meta.channels[-1], 1, 1))
    _expect_shape(path, arrays, "head.bias", (head_depth,))
    return DetectorBundle(meta, arrays)


def _expect_shape(path, arrays, key, shape):
    if key not in arrays:
        raise ModelFormatError(f"{path}: missing array {key!r}")
    if arrays[key].shape != shape:
        raise ModelFormatError(
            f"{path}: array {key!r} has shape {arrays[key].shape}, expected {shape}"
        )
