"""Procedural shape scenes with exact boxes and foreground masks.

A scene is a 64x64 grayscale canvas holding 1-5 filled shapes (square, disk,
triangle).  The binary foreground mask is exact and plays the role of an
offline class-agnostic segmentation prior.  A :class:`DomainShift` adds fog,
low-intensity clutter blobs and a brightness offset to build the target domain.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

CANVAS = 64
SQUARE, DISK, TRIANGLE = 0, 1, 2
CLASS_NAMES = ("square", "disk", "triangle")
MASK64 = (1 << 64) - 1


def mix_seed(base: int, index: int) -> int:
    """splitmix64 finaliser over ``base`` and ``index``; fixed across platforms."""
    z = (int(base) * 0x9E3779B97F4A7C15 + int(index) + 0x632BE59BD9B4E019) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class SceneSpec:
    canvas: int = CANVAS
    min_objects: int = 1
    max_objects: int = 5
    num_classes: int = 3
    min_size: int = 8
    max_size: int = 24
    min_intensity: float = 0.6
    max_intensity: float = 1.0
    background: float = 0.1
    class_probs: tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    max_iou: float = 0.3

    def __post_init__(self):
        if not 1 <= self.min_objects <= self.max_objects:
            raise ValueError("invalid object count range")
        if len(self.class_probs) != self.num_classes:
            raise ValueError("class_probs must have one entry per class")
        if not 0 < self.min_size <= self.max_size <= self.canvas:
            raise ValueError("invalid object size range")


# target domain: rare third class so the imbalance terms have something to do
TARGET_CLASS_PROBS = (0.45, 0.45, 0.10)


@dataclass(frozen=True)
class DomainShift:
    fog_alpha: float = 0.5
    clutter_count: int = 8
    clutter_intensity: tuple[float, float] = (0.2, 0.4)
    clutter_size: tuple[int, int] = (3, 8)
    brightness_offset: float = -0.05


@dataclass
class Scene:
    image: np.ndarray          # (64, 64) in [0, 1]
    boxes: np.ndarray          # (n, 4) unit-square (x0, y0, x1, y1)
    classes: np.ndarray        # (n,) int
    fg_mask: np.ndarray        # (64, 64) in {0, 1}
    flipped: bool = field(default=False, compare=False)

    def __eq__(self, other):
        return (isinstance(other, Scene)
                and np.array_equal(self.image, other.image)
                and np.array_equal(self.boxes, other.boxes)
                and np.array_equal(self.classes, other.classes)
                and np.array_equal(self.fg_mask, other.fg_mask))


def shape_support(cls: int, x: int, y: int, size: int, canvas: int = CANVAS) -> np.ndarray:
    """Boolean mask of the pixels whose centres fall inside the shape."""
    yy, xx = np.mgrid[0:canvas, 0:canvas]
    px, py = xx + 0.5, yy + 0.5
    if cls == SQUARE:
        return (xx >= x) & (xx < x + size) & (yy >= y) & (yy < y + size)
    if cls == DISK:
        r = size / 2.0
        return (px - (x + r)) ** 2 + (py - (y + r)) ** 2 <= r * r
    if cls == TRIANGLE:
        # upright isoceles triangle with base on the bottom edge of the size x size box
        apex_x, top, bottom = x + size / 2.0, y, y + size
        inside_y = (py >= top) & (py <= bottom)
        half = (py - top) / size * (size / 2.0)
        return inside_y & (np.abs(px - apex_x) <= half)
    raise ValueError(f"unknown class {cls}")


def tight_box(mask: np.ndarray) -> np.ndarray:
    """Unit-square corner box tightly enclosing the true pixels of ``mask``."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("empty support")
    h, w = mask.shape
    return np.array([cols[0] / w, rows[0] / h, (cols[-1] + 1) / w, (rows[-1] + 1) / h])


def box_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def _paint_clutter(image: np.ndarray, shift: DomainShift, rng: np.random.Generator) -> None:
    n = image.shape[0]
    lo, hi = shift.clutter_size
    for _ in range(shift.clutter_count):
        size = int(rng.integers(lo, hi + 1))
        x = int(rng.integers(0, n - size + 1))
        y = int(rng.integers(0, n - size + 1))
        kind = SQUARE if rng.random() < 0.5 else DISK
        sup = shape_support(kind, x, y, size, n)
        image[sup] = rng.uniform(*shift.clutter_intensity)


def generate_scene(seed: int, spec: SceneSpec = SceneSpec(),
                   shift: DomainShift | None = None) -> Scene:
    """Render one scene; deterministic in ``(seed, spec, shift)``."""
    rng = np.random.default_rng(int(seed) & MASK64)
    n = spec.canvas
    count = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    probs = np.asarray(spec.class_probs, dtype=np.float64)
    probs = probs / probs.sum()

    objects = []  # (cls, support, box, intensity)
    attempts = 0
    while len(objects) < count:
        attempts += 1
        if attempts > 1000:
            raise RuntimeError("unsatisfiable spec")
        cls = int(rng.choice(spec.num_classes, p=probs))
        size = int(rng.integers(spec.min_size, spec.max_size + 1))
        x = int(rng.integers(0, n - size + 1))
        y = int(rng.integers(0, n - size + 1))
        sup = shape_support(cls, x, y, size, n)
        box = tight_box(sup)
        if any(box_iou(box, o[2]) > spec.max_iou for o in objects):
            continue
        objects.append((cls, sup, box, float(rng.uniform(spec.min_intensity, spec.max_intensity))))

    image = np.full((n, n), spec.background)
    if shift is not None:
        _paint_clutter(image, shift, rng)
    mask = np.zeros((n, n))
    for cls, sup, _, inten in objects:
        image[sup] = inten
        mask[sup] = 1.0
    if shift is not None:
        image = (1.0 - shift.fog_alpha) * image + shift.fog_alpha * 0.5
        image = np.clip(image + shift.brightness_offset, 0.0, 1.0)

    return Scene(
        image=image,
        boxes=np.array([o[2] for o in objects]).reshape(-1, 4),
        classes=np.array([o[0] for o in objects], dtype=np.int64),
        fg_mask=mask,
    )


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------


def flip_boxes(boxes: np.ndarray) -> np.ndarray:
    out = boxes.copy()
    out[:, 0] = 1.0 - boxes[:, 2]
    out[:, 2] = 1.0 - boxes[:, 0]
    return out


def apply_weak(scene: Scene, flip: bool, jitter: float) -> Scene:
    """Deterministic core of :func:`weak_augment`."""
    image, mask, boxes = scene.image, scene.fg_mask, scene.boxes
    if flip:
        image, mask, boxes = image[:, ::-1], mask[:, ::-1], flip_boxes(boxes)
    image = np.clip(image + jitter, 0.0, 1.0) if jitter else image.copy()
    return Scene(image=np.ascontiguousarray(image), boxes=boxes.copy(),
                 classes=scene.classes.copy(), fg_mask=np.ascontiguousarray(mask),
                 flipped=scene.flipped ^ bool(flip))


def _weak_draws(rng: np.random.Generator) -> tuple[bool, float]:
    return bool(rng.random() < 0.5), float(rng.uniform(-0.02, 0.02))


def weak_augment(scene: Scene, seed: int) -> Scene:
    """Horizontal flip with probability 0.5 plus brightness jitter in +-0.02."""
    rng = np.random.default_rng(int(seed) & MASK64)
    return apply_weak(scene, *_weak_draws(rng))


def strong_augment(scene: Scene, seed: int, noise_sigma: float = 0.05,
                   max_erase: int = 10, background: float = 0.1) -> Scene:
    """Weak view (same flip coin for the same seed) + Gaussian noise + one erased patch."""
    rng = np.random.default_rng(int(seed) & MASK64)
    out = apply_weak(scene, *_weak_draws(rng))
    n = out.image.shape[0]
    img = out.image + rng.normal(0.0, noise_sigma, size=out.image.shape)
    eh = int(rng.integers(1, max_erase + 1))
    ew = int(rng.integers(1, max_erase + 1))
    y = int(rng.integers(0, n - eh + 1))
    x = int(rng.integers(0, n - ew + 1))
    img[y:y + eh, x:x + ew] = background
    out.image = np.clip(img, 0.0, 1.0)
    return out


def pool_prior(fg_mask: np.ndarray, target: tuple[int, int] = (16, 16)) -> np.ndarray:
    """Area-average the 64x64 mask down to the feature grid."""
    h, w = fg_mask.shape
    th, tw = target
    if h % th or w % tw:
        raise ValueError(f"mask of shape {fg_mask.shape} is not divisible into {target}")
    return fg_mask.reshape(th, h // th, tw, w // tw).mean(axis=(1, 3))


def corrupt_mask(mask: np.ndarray, p: float, seed: int) -> np.ndarray:
    """Flip every mask pixel independently with probability ``p``."""
    if p <= 0:
        return mask
    rng = np.random.default_rng(int(seed) & MASK64)
    flips = rng.random(mask.shape) < p
    return np.where(flips, 1.0 - mask, mask)


# --------------------------------------------------------------------------
# disk layout: <root>/{source,target}/{train,val}/{img,mask,ann}_%05d.*
# --------------------------------------------------------------------------


def write_pgm(path, array01: np.ndarray) -> None:
    data = np.round(np.clip(array01, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    # header: magic, width, height, maxval separated by whitespace
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return data.astype(np.float64) / maxval


def quantize(scene: Scene) -> Scene:
    """The scene exactly as it reads back from disk (8-bit image)."""
    return replace(scene, image=np.round(np.clip(scene.image, 0, 1) * 255.0) / 255.0)


def save_scene(directory, index: int, scene: Scene) -> None:
    d = Path(directory)
    write_pgm(d / f"img_{index:05d}.pgm", scene.image)
    write_pgm(d / f"mask_{index:05d}.pgm", scene.fg_mask)
    ann = {"boxes": [[float(v) for v in b] for b in scene.boxes],
           "classes": [int(c) for c in scene.classes]}
    (d / f"ann_{index:05d}.json").write_text(json.dumps(ann, sort_keys=True) + "\n")


def load_scene(directory, index: int) -> Scene:
    d = Path(directory)
    ann = json.loads((d / f"ann_{index:05d}.json").read_text())
    return Scene(
        image=read_pgm(d / f"img_{index:05d}.pgm"),
        boxes=np.array(ann["boxes"], dtype=np.float64).reshape(-1, 4),
        classes=np.array(ann["classes"], dtype=np.int64),
        fg_mask=(read_pgm(d / f"mask_{index:05d}.pgm") > 0.5).astype(np.float64),
    )


def load_split(directory) -> list[Scene]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset split not found: {d}")
    n = len(list(d.glob("ann_*.json")))
    if n == 0:
        raise FileNotFoundError(f"no scenes in {d}")
    return [load_scene(d, i) for i in range(n)]


SPLIT_OFFSETS = {("source", "train"): 0, ("source", "val"): 1,
                 ("target", "train"): 2, ("target", "val"): 3}


def split_seed(base_seed: int, domain: str, split: str) -> int:
    return mix_seed(base_seed, 1_000_003 * (SPLIT_OFFSETS[(domain, split)] + 1))


def generate_split(base_seed: int, domain: str, split: str, count: int,
                   spec: SceneSpec, shift: DomainShift | None) -> list[Scene]:
    s = split_seed(base_seed, domain, split)
    return [generate_scene(mix_seed(s, i), spec, shift) for i in range(count)]


def write_dataset(root, base_seed: int, counts: dict, source_spec: SceneSpec,
                  target_spec: SceneSpec, shift: DomainShift) -> Path:
    """Generate and write all four splits.

    ``counts`` maps ``"train"``/``"val"`` or ``(domain, split)`` to a size.
    """
    root = Path(root)
    for domain in ("source", "target"):
        spec = source_spec if domain == "source" else target_spec
        sh = None if domain == "source" else shift
        for split in ("train", "val"):
            d = root / domain / split
            os.makedirs(d, exist_ok=True)
            for old in d.glob("*_*.*"):
                old.unlink()
            n = counts[(domain, split)] if (domain, split) in counts else counts[split]
            for i, sc in enumerate(generate_split(base_seed, domain, split, n, spec, sh)):
                save_scene(d, i, sc)
    return root
