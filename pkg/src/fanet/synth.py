"""Procedural cluttered-scene generator with paired segmentation masks.

Scenes stress three failure modes of segmentation models: translucent
objects (alpha-composited foregrounds whose ground truth stays opaque),
background clutter (random-hue texture patches that imitate object colors),
and scale variation (log-uniform object sizes). Every sample is a pure
function of (spec.seed, sample index) through the pinned PRNG in
:mod:`fanet.rng`, so datasets regenerate bit-identically.
"""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError
from .netpbm import pgm_read, pgm_write, ppm_read, ppm_write
from .rng import Rng

_SCENE_STREAM = 0x5343454E  # per-sample stream label

# Object classes 1..4 carry well-separated hue families; clutter may land
# anywhere on the hue wheel but stays lower in saturation.
CLASS_HUES = (0.00, 0.25, 0.52, 0.78)
HUE_JITTER = 0.04
OBJECT_SAT = (0.65, 1.0)
OBJECT_VAL = (0.65, 1.0)
CLUTTER_SAT = (0.0, 0.5)
CLUTTER_VAL = (0.15, 0.6)
BASE_SAT = (0.0, 0.25)
BASE_VAL = (0.25, 0.5)
NOISE_AMP = (0.02, 0.08)

SHAPES = ("ellipse", "rectangle", "polygon")


@dataclass
class SceneSpec:
    seed: int = 0
    size: int = 64
    num_classes: int = 5
    objects_min: int = 3
    objects_max: int = 8
    translucent_fraction: float = 0.4
    alpha_min: float = 0.2
    alpha_max: float = 0.6
    scale_min: float = 0.1
    scale_max: float = 0.6
    clutter_patches: int = 20

    def __post_init__(self):
        if self.num_classes != 5:
            raise ConfigError("SceneSpec: num_classes is fixed at 5 (background + 4 materials)")
        if self.size < 8:
            raise ConfigError("SceneSpec: size must be >= 8")
        if not 0 <= self.objects_min <= self.objects_max:
            raise ConfigError("SceneSpec: invalid objects_per_scene range")
        if not (0.0 < self.alpha_min <= self.alpha_max < 1.0):
            raise ConfigError("SceneSpec: alpha range must lie strictly inside (0, 1)")
        if not (0.0 < self.scale_min <= self.scale_max <= 1.0):
            raise ConfigError("SceneSpec: scale range must lie in (0, 1]")
        if not 0.0 <= self.translucent_fraction <= 1.0:
            raise ConfigError("SceneSpec: translucent_fraction must lie in [0, 1]")
        if self.clutter_patches < 0:
            raise ConfigError("SceneSpec: clutter_patches must be >= 0")


@dataclass
class SceneSample:
    image: np.ndarray  # (H, W, 3) float64 in [0, 1]
    mask: np.ndarray  # (H, W) uint8 class ids
    meta: list[dict] = field(default_factory=list)


def _hsv(rng: Rng, hue, sat_range, val_range):
    h = hue % 1.0
    s = rng.uniform(*sat_range)
    v = rng.uniform(*val_range)
    return np.array(colorsys.hsv_to_rgb(h, s, v))


def _rotated_coords(size: int, cx: float, cy: float, theta: float):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx = xx - cx
    dy = yy - cy
    ct, st = math.cos(theta), math.sin(theta)
    return ct * dx + st * dy, -st * dx + ct * dy


def _footprint_ellipse(size, cx, cy, rx, ry, theta):
    u, v = _rotated_coords(size, cx, cy, theta)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _footprint_rectangle(size, cx, cy, rx, ry, theta):
    u, v = _rotated_coords(size, cx, cy, theta)
    return (np.abs(u) <= rx) & (np.abs(v) <= ry)


def _footprint_polygon(size, cx, cy, radius, rng: Rng):
    """Star-shaped blob: piecewise-linear radius over vertex angles."""
    n_vertices = 5 + rng.randint(4)
    offset = rng.uniform(0.0, 2.0 * math.pi)
    angles = np.array(
        [offset + 2.0 * math.pi * i / n_vertices for i in range(n_vertices)]
    )
    radii = np.array([radius * rng.uniform(0.55, 1.0) for _ in range(n_vertices)])
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    pixel_angle = np.arctan2(yy - cy, xx - cx)
    pixel_radius = np.hypot(yy - cy, xx - cx)
    # interpolate the boundary radius at each pixel angle (periodic)
    rel = (pixel_angle - offset) % (2.0 * math.pi)
    seg = rel / (2.0 * math.pi / n_vertices)
    idx = np.minimum(seg.astype(np.intp), n_vertices - 1)
    frac = seg - idx
    r0 = radii[idx]
    r1 = radii[(idx + 1) % n_vertices]
    boundary = r0 + frac * (r1 - r0)
    return pixel_radius <= boundary


def _noise_field(rng: Rng, count: int, amp: float) -> np.ndarray:
    return np.array([rng.uniform(-amp, amp) for _ in range(count)])


def _paint_clutter(canvas: np.ndarray, rng: Rng, spec: SceneSpec) -> None:
    size = spec.size
    for _ in range(spec.clutter_patches):
        color = _hsv(rng, rng.uniform(), CLUTTER_SAT, CLUTTER_VAL)
        cx = rng.uniform(0, size - 1)
        cy = rng.uniform(0, size - 1)
        rx = rng.uniform(0.05, 0.25) * size
        ry = rng.uniform(0.05, 0.25) * size
        theta = rng.uniform(0.0, math.pi)
        if rng.chance(0.5):
            fp = _footprint_rectangle(size, cx, cy, rx, ry, theta)
        else:
            fp = _footprint_ellipse(size, cx, cy, rx, ry, theta)
        count = int(fp.sum())
        if count == 0:
            continue
        amp = rng.uniform(*NOISE_AMP)
        noise = _noise_field(rng, count, amp)
        canvas[fp] = np.clip(color[None, :] + noise[:, None], 0.0, 1.0)


def alpha_composite(canvas: np.ndarray, footprint: np.ndarray, color: np.ndarray, alpha: float) -> None:
    """In-place ``alpha * color + (1 - alpha) * canvas`` on footprint pixels."""
    canvas[footprint] = alpha * color[None, :] + (1.0 - alpha) * canvas[footprint]


def _draw_object(canvas, mask, rng: Rng, spec: SceneSpec) -> dict | None:
    size = spec.size
    cls = 1 + rng.randint(4)
    shape = SHAPES[rng.randint(3)]
    scale = rng.log_uniform(spec.scale_min, spec.scale_max)
    radius = 0.5 * scale * size
    cx = rng.uniform(0, size - 1)
    cy = rng.uniform(0, size - 1)
    hue = CLASS_HUES[cls - 1] + rng.uniform(-HUE_JITTER, HUE_JITTER)
    color = _hsv(rng, hue, OBJECT_SAT, OBJECT_VAL)
    translucent = rng.chance(spec.translucent_fraction)
    alpha = rng.uniform(spec.alpha_min, spec.alpha_max) if translucent else 1.0
    if shape == "polygon":
        fp = _footprint_polygon(size, cx, cy, radius, rng)
    else:
        aspect = rng.uniform(0.6, 1.0)
        theta = rng.uniform(0.0, math.pi)
        rx, ry = radius, radius * aspect
        if shape == "ellipse":
            fp = _footprint_ellipse(size, cx, cy, rx, ry, theta)
        else:
            fp = _footprint_rectangle(size, cx, cy, rx, ry, theta)
    if not fp.any():
        return None
    alpha_composite(canvas, fp, color, alpha)
    mask[fp] = cls
    ys, xs = np.nonzero(fp)
    return {
        "class": cls,
        "shape": shape,
        "center": (cx, cy),
        "scale": scale,
        "alpha": alpha,
        "translucent": translucent,
        "color": color.tolist(),
        "bbox": (int(ys.min()), int(xs.min()), int(ys.max()), int(xs.max())),
    }


def generate_scene(spec: SceneSpec, index: int) -> SceneSample:
    """Render one scene; fully determined by (spec.seed, index)."""
    rng = Rng(spec.seed, _SCENE_STREAM, index)
    size = spec.size
    canvas = np.empty((size, size, 3), dtype=np.float64)
    canvas[:] = _hsv(rng, rng.uniform(), BASE_SAT, BASE_VAL)
    mask = np.zeros((size, size), dtype=np.uint8)
    _paint_clutter(canvas, rng, spec)
    span = spec.objects_max - spec.objects_min + 1
    n_objects = spec.objects_min + rng.randint(span)
    meta = []
    for _ in range(n_objects):
        record = _draw_object(canvas, mask, rng, spec)
        if record is not None:
            meta.append(record)
    return SceneSample(image=np.clip(canvas, 0.0, 1.0), mask=mask, meta=meta)


def _split_ranges(n_train: int, n_val: int, n_test: int) -> dict[str, range]:
    return {
        "train": range(0, n_train),
        "val": range(n_train, n_train + n_val),
        "test": range(n_train + n_val, n_train + n_val + n_test),
    }


def generate_split(spec: SceneSpec, out_dir, n_train: int, n_val: int, n_test: int) -> dict:
    """Write train/val/test directories of paired PPM/PGM files plus a manifest.

    Sample indices are globally unique, so no scene appears in two splits.
    Returns the manifest dictionary.
    """
    for name, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        if count < 1:
            raise ValidationError(f"{name} count must be >= 1")
    out_dir = Path(out_dir)
    manifest: dict = {"spec": asdict(spec), "splits": {}}
    for split, indices in _split_ranges(n_train, n_val, n_test).items():
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        images, masks = [], []
        for idx in indices:
            sample = generate_scene(spec, idx)
            image_name = f"image_{idx:04d}.ppm"
            mask_name = f"mask_{idx:04d}.pgm"
            ppm_write(split_dir / image_name, sample.image)
            pgm_write(split_dir / mask_name, sample.mask)
            images.append(image_name)
            masks.append(mask_name)
        manifest["splits"][split] = {"count": len(images), "images": images, "masks": masks}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return manifest


def load_split(data_dir, split: str) -> tuple[np.ndarray, np.ndarray]:
    """Load one split as (images (N,3,H,W) float32 in [0,1], masks (N,H,W) uint8)."""
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(f"no manifest.json under {data_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if split not in manifest["splits"]:
        raise ValidationError(f"split {split!r} not in manifest (have {sorted(manifest['splits'])})")
    entry = manifest["splits"][split]
    images, masks = [], []
    for image_name, mask_name in zip(entry["images"], entry["masks"]):
        rgb = ppm_read(data_dir / split / image_name).astype(np.float32) / 255.0
        images.append(rgb.transpose(2, 0, 1))
        masks.append(pgm_read(data_dir / split / mask_name))
    return np.stack(images), np.stack(masks)
