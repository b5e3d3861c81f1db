"""Label-preserving image augmentations that move pixels and boxes together.

Geometric kinds (crop, hflip, scale, rotate, shear) transform box
coordinates consistently with the pixels; photometric kinds (blur,
saturation, brightness, exposure, cutout, noise) leave boxes untouched.
Every application is deterministic for a fixed (spec, seed, image).

Images are uint8 RGB numpy arrays of shape (H, W, 3).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageEnhance, ImageFilter

from .dataset import (
    DatasetManifest,
    GroundTruthBox,
    ImageRecord,
    emit_label_file,
)
from .geometry import Box, clip_to_space

GEOMETRIC_KINDS = {"crop", "hflip", "scale", "rotate", "shear"}
PHOTOMETRIC_KINDS = {
    "gaussian_blur",
    "saturation",
    "brightness",
    "exposure",
    "cutout",
    "noise",
}
ALL_KINDS = GEOMETRIC_KINDS | PHOTOMETRIC_KINDS

#: Boxes keeping less than this fraction of their transformed area are dropped.
DEFAULT_MIN_VISIBILITY = 0.3

PAD_VALUE = 114  # gray fill for exposed canvas, matching detector letterbox


@dataclass(frozen=True)
class AugmentSpec:
    """One augmentation: a kind plus its parameter ranges and a seed.

    Range parameters are (low, high) pairs sampled uniformly per
    application; see _validate for the per-kind schema.
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        _validate(self.kind, self.params)


def _range(params: dict, key: str, lo_ok, hi_ok, kind: str) -> tuple[float, float]:
    value = params.get(key)
    if (
        not isinstance(value, (tuple, list))
        or len(value) != 2
        or not all(isinstance(v, (int, float)) for v in value)
    ):
        raise ValueError(f"{kind}: parameter {key!r} must be a (low, high) pair")
    lo, hi = float(value[0]), float(value[1])
    if lo > hi or not lo_ok(lo) or not hi_ok(hi):
        raise ValueError(f"{kind}: parameter {key!r} range ({lo}, {hi}) invalid")
    return lo, hi


def _validate(kind: str, params: dict) -> None:
    if kind not in ALL_KINDS:
        raise ValueError(f"unknown augmentation kind {kind!r}")
    if kind == "crop":
        _range(params, "fraction", lambda v: 0 < v, lambda v: v <= 1, kind)
    elif kind == "gaussian_blur":
        _range(params, "sigma", lambda v: v > 0, lambda v: v > 0, kind)
    elif kind == "scale":
        _range(params, "factor", lambda v: v > 0, lambda v: v > 0, kind)
    elif kind == "rotate":
        _range(params, "degrees", lambda v: True, lambda v: True, kind)
    elif kind == "shear":
        _range(params, "degrees", lambda v: -90 < v, lambda v: v < 90, kind)
    elif kind in ("saturation", "brightness"):
        _range(params, "factor", lambda v: v >= 0, lambda v: True, kind)
    elif kind == "exposure":
        _range(params, "stops", lambda v: True, lambda v: True, kind)
    elif kind == "cutout":
        count = params.get("count", 1)
        if not isinstance(count, int) or count < 1:
            raise ValueError(f"cutout: count must be a positive integer, got {count}")
        _range(params, "size", lambda v: 0 < v, lambda v: v < 1, kind)
    elif kind == "noise":
        _range(params, "stddev", lambda v: v >= 0, lambda v: True, kind)
    # hflip takes no parameters


def _sample(rng: np.random.Generator, lo: float, hi: float) -> float:
    return lo if lo == hi else float(rng.uniform(lo, hi))


def _affine_boxes(
    boxes: Sequence[GroundTruthBox],
    transform,
    min_visibility: float,
) -> list[GroundTruthBox]:
    """Map box corners through a point transform, take the axis-aligned
    envelope, clip to the unit square, and drop low-visibility leftovers."""
    out = []
    for gt in boxes:
        b = gt.box
        corners = [
            transform(b.x_min, b.y_min),
            transform(b.x_max, b.y_min),
            transform(b.x_min, b.y_max),
            transform(b.x_max, b.y_max),
        ]
        xs = [c[0] for c in corners]
        ys = [c[1] for c in corners]
        envelope_area = (max(xs) - min(xs)) * (max(ys) - min(ys))
        clipped = clip_to_space(min(xs), min(ys), max(xs), max(ys))
        if clipped is None or envelope_area <= 0:
            continue
        if clipped.area < min_visibility * envelope_area:
            continue
        out.append(GroundTruthBox(gt.label, clipped))
    return out


def _to_pil(image: np.ndarray) -> Image.Image:
    return Image.fromarray(image, mode="RGB")


def _from_pil(img: Image.Image) -> np.ndarray:
    return np.asarray(img, dtype=np.uint8)


def _check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected uint8 RGB (H, W, 3) image, got {image.shape} {image.dtype}")


def apply(
    spec: AugmentSpec,
    image: np.ndarray,
    boxes: Sequence[GroundTruthBox],
    min_visibility: float = DEFAULT_MIN_VISIBILITY,
) -> tuple[np.ndarray, list[GroundTruthBox]]:
    """Apply one augmentation to an image and its normalized boxes."""
    _check_image(image)
    rng = np.random.default_rng(spec.seed)
    h, w = image.shape[:2]
    kind, params = spec.kind, spec.params

    if kind == "hflip":
        flipped = image[:, ::-1, :].copy()
        out_boxes = [
            GroundTruthBox(
                gt.label,
                Box(1 - gt.box.x_max, gt.box.y_min, 1 - gt.box.x_min, gt.box.y_max),
            )
            for gt in boxes
        ]
        return flipped, out_boxes

    if kind == "crop":
        lo, hi = params["fraction"]
        fraction = _sample(rng, lo, hi)
        cw = max(1, round(w * fraction))
        ch = max(1, round(h * fraction))
        x0 = int(rng.integers(0, w - cw + 1))
        y0 = int(rng.integers(0, h - ch + 1))
        window = image[y0 : y0 + ch, x0 : x0 + cw].copy()
        # Window in normalized source coordinates
        nx0, ny0 = x0 / w, y0 / h
        nw, nh = cw / w, ch / h

        def to_window(x, y):
            return ((x - nx0) / nw, (y - ny0) / nh)

        resized = _from_pil(_to_pil(window).resize((w, h), Image.BILINEAR))
        return resized, _affine_boxes(boxes, to_window, min_visibility)

    if kind == "scale":
        lo, hi = params["factor"]
        factor = _sample(rng, lo, hi)

        def zoom(x, y):
            return ((x - 0.5) * factor + 0.5, (y - 0.5) * factor + 0.5)

        sw, sh = max(1, round(w * factor)), max(1, round(h * factor))
        content = _to_pil(image).resize((sw, sh), Image.BILINEAR)
        canvas = Image.new("RGB", (w, h), (PAD_VALUE,) * 3)
        canvas.paste(content, ((w - sw) // 2, (h - sh) // 2))
        return _from_pil(canvas), _affine_boxes(boxes, zoom, min_visibility)

    if kind == "rotate":
        lo, hi = params["degrees"]
        degrees = _sample(rng, lo, hi)
        rotated = _to_pil(image).rotate(
            degrees, resample=Image.BILINEAR, fillcolor=(PAD_VALUE,) * 3
        )
        rad = math.radians(degrees)
        cos, sin = math.cos(rad), math.sin(rad)

        def rot(x, y):
            # Counterclockwise visual rotation about the image center,
            # in pixel units to respect the aspect ratio.
            dx, dy = x * w - w / 2, y * h - h / 2
            px = dx * cos + dy * sin + w / 2
            py = -dx * sin + dy * cos + h / 2
            return px / w, py / h

        return _from_pil(rotated), _affine_boxes(boxes, rot, min_visibility)

    if kind == "shear":
        lo, hi = params["degrees"]
        degrees = _sample(rng, lo, hi)
        m = math.tan(math.radians(degrees))
        # x' = x + m * (y - cy): horizontal shear about the vertical center
        sheared = _to_pil(image).transform(
            (w, h),
            Image.AFFINE,
            # PIL takes the inverse map (output -> input)
            (1, -m, m * h / 2, 0, 1, 0),
            resample=Image.BILINEAR,
            fillcolor=(PAD_VALUE,) * 3,
        )

        def shear_pt(x, y):
            px = x * w + m * (y * h - h / 2)
            return px / w, y

        return _from_pil(sheared), _affine_boxes(boxes, shear_pt, min_visibility)

    # Photometric kinds: pixels change, boxes never do.
    out_boxes = list(boxes)

    if kind == "gaussian_blur":
        lo, hi = params["sigma"]
        sigma = _sample(rng, lo, hi)
        blurred = _to_pil(image).filter(ImageFilter.GaussianBlur(radius=sigma))
        return _from_pil(blurred), out_boxes

    if kind == "saturation":
        lo, hi = params["factor"]
        factor = _sample(rng, lo, hi)
        return _from_pil(ImageEnhance.Color(_to_pil(image)).enhance(factor)), out_boxes

    if kind == "brightness":
        lo, hi = params["factor"]
        factor = _sample(rng, lo, hi)
        return (
            _from_pil(ImageEnhance.Brightness(_to_pil(image)).enhance(factor)),
            out_boxes,
        )

    if kind == "exposure":
        lo, hi = params["stops"]
        stops = _sample(rng, lo, hi)
        scaled = np.clip(image.astype(np.float64) * (2.0**stops), 0, 255)
        return scaled.astype(np.uint8), out_boxes

    if kind == "noise":
        lo, hi = params["stddev"]
        stddev = _sample(rng, lo, hi)
        noisy = image.astype(np.float64) + rng.normal(0.0, stddev, image.shape)
        return np.clip(noisy, 0, 255).astype(np.uint8), out_boxes

    if kind == "cutout":
        count = params.get("count", 1)
        lo, hi = params["size"]
        out = image.copy()
        for _ in range(count):
            placed = _place_cutout(rng, out, boxes, _sample(rng, lo, hi))
            if placed is not None:
                x0, y0, x1, y1 = placed
                out[y0:y1, x0:x1] = PAD_VALUE
        return out, out_boxes

    raise AssertionError(f"unhandled kind {kind!r}")


def _place_cutout(rng, image, boxes, size_fraction, max_tries=20):
    """Pick a cutout window erasing at most half of any ground-truth box."""
    h, w = image.shape[:2]
    cw = max(1, round(w * size_fraction))
    ch = max(1, round(h * size_fraction))
    for _ in range(max_tries):
        x0 = int(rng.integers(0, w - cw + 1))
        y0 = int(rng.integers(0, h - ch + 1))
        window = (x0 / w, y0 / h, (x0 + cw) / w, (y0 + ch) / h)
        if all(_erased_fraction(gt.box, window) <= 0.5 for gt in boxes):
            return x0, y0, x0 + cw, y0 + ch
    return None


def _erased_fraction(box: Box, window: tuple[float, float, float, float]) -> float:
    ix = min(box.x_max, window[2]) - max(box.x_min, window[0])
    iy = min(box.y_max, window[3]) - max(box.y_min, window[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    return (ix * iy) / box.area


#: Weather-simulation composites; parameters are repo defaults, tunable in config.
FOG_RECIPE = (
    AugmentSpec("gaussian_blur", {"sigma": (2.0, 4.0)}),
    AugmentSpec("brightness", {"factor": (1.15, 1.35)}),
    AugmentSpec("saturation", {"factor": (0.4, 0.7)}),
)
RAIN_RECIPE = (
    AugmentSpec("noise", {"stddev": (10.0, 18.0)}),
    AugmentSpec("exposure", {"stops": (-0.7, -0.3)}),
)


def per_image_seed(global_seed: int, image_id: str, spec_index: int) -> int:
    """Stable per-application seed derived from (seed, image, spec position)."""
    digest = hashlib.sha256(f"{global_seed}:{image_id}:{spec_index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def pipeline(
    specs: Sequence[AugmentSpec],
    manifest: DatasetManifest,
    per_image_count: int,
    images_dir: str | Path,
    out_dir: str | Path,
    seed: int = 0,
    weather_override: str | None = None,
    min_visibility: float = DEFAULT_MIN_VISIBILITY,
    tag: str = "aug",
) -> DatasetManifest:
    """Emit augmented variants of every original record in the manifest.

    Each variant applies all ``specs`` in order, reseeded per
    (seed, image, variant); images and label files are written under
    ``out_dir`` and the returned manifest includes the new records with
    ``origin="augmented"``. Metadata is inherited from the parent unless
    ``weather_override`` retags the simulated condition. ``tag`` keeps ids
    from different recipes distinct.
    """
    if per_image_count < 0:
        raise ValueError("per_image_count must be >= 0")
    if per_image_count == 0:
        return manifest
    tag = "".join(c if c.isalnum() or c == "-" else "-" for c in tag) or "aug"

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "labels").mkdir(exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create augmentation output directory {out}: {exc}") from exc

    new_records = list(manifest.records)
    for record in manifest.originals:
        source = np.asarray(Image.open(Path(images_dir) / record.path).convert("RGB"))
        for variant in range(per_image_count):
            image = source
            boxes = list(record.annotations)
            for spec_index, spec in enumerate(specs):
                reseeded = AugmentSpec(
                    spec.kind,
                    spec.params,
                    per_image_seed(seed, f"{record.id}#{tag}#{variant}", spec_index),
                )
                image, boxes = apply(reseeded, image, boxes, min_visibility)
            aug_id = f"{record.id}-{tag}{variant:03d}"
            rel_path = f"{aug_id}.png"
            Image.fromarray(image).save(out / rel_path)
            (out / "labels" / f"{aug_id}.txt").write_text(
                emit_label_file(boxes, manifest.label_map)
            )
            new_records.append(
                ImageRecord(
                    id=aug_id,
                    path=str(Path(out_dir) / rel_path),
                    location=record.location,
                    weather=weather_override or record.weather,
                    time_of_day=record.time_of_day,
                    origin="augmented",
                    parent_id=record.id,
                    annotations=tuple(boxes),
                )
            )
    return DatasetManifest(records=new_records, label_map=dict(manifest.label_map))


def load_augment_config(path: str | Path) -> list[dict]:
    """Read the pipeline config: a list of recipes with specs and counts.

    Each recipe is ``{name, per_image_count, weather (optional),
    transforms: [{kind, params...}]}``.
    """
    import yaml

    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict) or "recipes" not in data:
        raise ValueError(f"{path}: expected a top-level 'recipes' list")
    recipes = []
    for i, entry in enumerate(data["recipes"]):
        transforms = entry.get("transforms")
        if not transforms:
            raise ValueError(f"{path}: recipe {i} has no transforms")
        specs = [
            AugmentSpec(t["kind"], {k: v for k, v in t.items() if k != "kind"})
            for t in transforms
        ]
        weather = entry.get("weather")
        if weather is not None and weather not in ("rain", "fog", "clear"):
            raise ValueError(f"{path}: recipe {i} has unknown weather {weather!r}")
        recipes.append(
            {
                "name": entry.get("name", f"recipe-{i}"),
                "specs": specs,
                "per_image_count": int(entry.get("per_image_count", 1)),
                "weather": weather,
            }
        )
    return recipes
