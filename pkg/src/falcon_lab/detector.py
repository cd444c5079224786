"""Anchor-free grid detector with a hand-written backward pass.

Backbone: a stack of zero-padded strided convolutions (ReLU between layers,
the last layer left linear).  Its output ``a`` is the feature tensor; the
activation map compared with the foreground prior is ``sigmoid(mean_c(a))``.
Both heads are 1x1 convolutions on ``relu(a)``: class logits over ``K+1``
classes (index ``K`` = background) and four raw box offsets per cell.

Flat parameter layout, in order: for every backbone layer ``conv{i}.w``
(kh, kw, cin, cout) then ``conv{i}.b`` (cout,); then ``cls.w`` (C, K+1),
``cls.b`` (K+1,), ``reg.w`` (C, 4), ``reg.b`` (4,).  EMA, finite differences
and checkpoints all address this one vector.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx

# (kernel, stride, out_channels) per backbone layer
DEFAULT_ARCH = ((5, 2, 8), (5, 2, 16), (5, 1, 16))
# two 3x3 stride-2 layers: 7 px receptive field, kept for comparison runs
COMPACT_ARCH = ((3, 2, 8), (3, 2, 16))

NUM_CLASSES = 3
IMAGE_SIZE = 64
CKPT_MAGIC = b"FALCONCK"
CKPT_VERSION = 1


def arch_shapes(arch=DEFAULT_ARCH, num_classes: int = NUM_CLASSES) -> list[tuple[str, tuple]]:
    shapes = []
    cin = 1
    for i, (k, _, cout) in enumerate(arch, start=1):
        shapes.append((f"conv{i}.w", (k, k, cin, cout)))
        shapes.append((f"conv{i}.b", (cout,)))
        cin = cout
    shapes += [("cls.w", (cin, num_classes + 1)), ("cls.b", (num_classes + 1,)),
               ("reg.w", (cin, 4)), ("reg.b", (4,))]
    return shapes


class DetectorParams:
    """All learnable weights, stored in one flat float64 vector with named views."""

    def __init__(self, flat: np.ndarray, arch=DEFAULT_ARCH, num_classes: int = NUM_CLASSES):
        self.arch = tuple(tuple(int(v) for v in layer) for layer in arch)
        self.num_classes = int(num_classes)
        self.shapes = arch_shapes(self.arch, self.num_classes)
        size = sum(int(np.prod(s)) for _, s in self.shapes)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (size,):
            raise ValueError(f"flat vector has length {flat.size}, layout needs {size}")
        self.flat = flat
        self._views = {}
        off = 0
        for name, shape in self.shapes:
            n = int(np.prod(shape))
            self._views[name] = self.flat[off:off + n].reshape(shape)
            off += n

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def __len__(self) -> int:
        return self.flat.size

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.shapes]

    def copy(self) -> "DetectorParams":
        return DetectorParams(self.flat.copy(), self.arch, self.num_classes)

    def with_flat(self, flat: np.ndarray) -> "DetectorParams":
        return DetectorParams(flat, self.arch, self.num_classes)

    @classmethod
    def zeros(cls, arch=DEFAULT_ARCH, num_classes: int = NUM_CLASSES) -> "DetectorParams":
        size = sum(int(np.prod(s)) for _, s in arch_shapes(arch, num_classes))
        return cls(np.zeros(size), arch, num_classes)

    @classmethod
    def init(cls, seed: int, arch=DEFAULT_ARCH, num_classes: int = NUM_CLASSES) -> "DetectorParams":
        """He-normal convolutions, small head weights, background-leaning class bias."""
        rng = np.random.default_rng(seed)
        p = cls.zeros(arch, num_classes)
        for name, shape in p.shapes:
            if name.startswith("conv") and name.endswith(".w"):
                fan_in = shape[0] * shape[1] * shape[2]
                p[name][...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            elif name in ("cls.w", "reg.w"):
                p[name][...] = rng.normal(0.0, 0.01, size=shape)
        p["cls.b"][-1] = 2.0
        return p


# --------------------------------------------------------------------------
# forward / backward
# --------------------------------------------------------------------------


@dataclass
class ForwardTrace:
    features: np.ndarray     # (B, G, G, C) = a
    mean_map: np.ndarray     # (B, G, G) = sigmoid(mean_c(a))
    cls_logits: np.ndarray   # (B, G, G, K+1)
    probs: np.ndarray        # softmax(cls_logits)
    reg_raw: np.ndarray      # (B, G, G, 4)
    boxes: np.ndarray        # (B, G, G, 4) decoded corner boxes, clipped to [0, 1]
    caches: list = field(repr=False, default_factory=list)
    pre_relu: list = field(repr=False, default_factory=list)
    head_in: np.ndarray | None = field(repr=False, default=None)

    @property
    def grid(self) -> int:
        return self.features.shape[1]

    @property
    def batch(self) -> int:
        return self.features.shape[0]


def _as_batch(image) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    return x[..., None]


def decode_boxes(reg_raw: np.ndarray) -> np.ndarray:
    """Cell-relative offsets to clipped unit-square corner boxes."""
    G = reg_raw.shape[-2]
    s = nx.sigmoid(reg_raw)
    cols = np.arange(G)[None, :]
    rows = np.arange(G)[:, None]
    cx = (cols + s[..., 0]) / G
    cy = (rows + s[..., 1]) / G
    w, h = s[..., 2], s[..., 3]
    boxes = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)
    return np.clip(boxes, 0.0, 1.0)


def decode_boxes_backward(reg_raw: np.ndarray, grad_boxes: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``reg_raw`` of a gradient on decoded boxes (zero where clipped)."""
    G = reg_raw.shape[-2]
    s = nx.sigmoid(reg_raw)
    cols = np.arange(G)[None, :]
    rows = np.arange(G)[:, None]
    cx = (cols + s[..., 0]) / G
    cy = (rows + s[..., 1]) / G
    w, h = s[..., 2], s[..., 3]
    raw = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)
    g = np.where((raw > 0.0) & (raw < 1.0), grad_boxes, 0.0)
    d_cx = (g[..., 0] + g[..., 2])
    d_cy = (g[..., 1] + g[..., 3])
    d_w = 0.5 * (g[..., 2] - g[..., 0])
    d_h = 0.5 * (g[..., 3] - g[..., 1])
    ds = np.stack([d_cx / G, d_cy / G, d_w, d_h], axis=-1)
    return ds * s * (1.0 - s)


def forward(params: DetectorParams, image) -> ForwardTrace:
    """Run the detector on one ``(64, 64)`` image or a ``(B, 64, 64)`` batch."""
    x = _as_batch(image)
    caches, pre = [], []
    n_layers = len(params.arch)
    for i, (_, stride, _) in enumerate(params.arch, start=1):
        z, cache = nx.conv2d_forward(x, params[f"conv{i}.w"], params[f"conv{i}.b"], stride)
        caches.append(cache)
        pre.append(z)
        x = nx.relu(z) if i < n_layers else z
    a = x
    head_in = nx.relu(a)
    logits = head_in @ params["cls.w"] + params["cls.b"]
    reg_raw = head_in @ params["reg.w"] + params["reg.b"]
    return ForwardTrace(
        features=a,
        mean_map=nx.sigmoid(nx.channel_mean(a)),
        cls_logits=logits,
        probs=nx.softmax(logits),
        reg_raw=reg_raw,
        boxes=decode_boxes(reg_raw),
        caches=caches,
        pre_relu=pre,
        head_in=head_in,
    )


def backward(params: DetectorParams, trace: ForwardTrace, d_cls_logits=None,
             d_reg_raw=None, d_mean_map=None) -> np.ndarray:
    """Adjoint of :func:`forward`; returns a gradient laid out like ``params.flat``."""
    grads = DetectorParams.zeros(params.arch, params.num_classes)
    B, G, _, C = trace.features.shape
    d_head = np.zeros_like(trace.head_in)
    if d_cls_logits is not None:
        d2 = d_cls_logits.reshape(-1, d_cls_logits.shape[-1])
        h2 = trace.head_in.reshape(-1, C)
        grads["cls.w"][...] = h2.T @ d2
        grads["cls.b"][...] = d2.sum(axis=0)
        d_head += d_cls_logits @ params["cls.w"].T
    if d_reg_raw is not None:
        d2 = d_reg_raw.reshape(-1, 4)
        h2 = trace.head_in.reshape(-1, C)
        grads["reg.w"][...] = h2.T @ d2
        grads["reg.b"][...] = d2.sum(axis=0)
        d_head += d_reg_raw @ params["reg.w"].T
    d_a = d_head * (trace.features > 0)
    if d_mean_map is not None:
        m = trace.mean_map
        d_a = d_a + nx.channel_mean_backward(d_mean_map * m * (1.0 - m), C)

    dz = d_a
    for i in range(len(params.arch), 0, -1):
        dx, dw, db = nx.conv2d_backward(dz, trace.caches[i - 1], params[f"conv{i}.w"],
                                        need_dx=i > 1)
        grads[f"conv{i}.w"][...] = dw
        grads[f"conv{i}.b"][...] = db
        if i > 1:
            dz = dx * (trace.pre_relu[i - 2] > 0)
    return grads.flat


# --------------------------------------------------------------------------
# boxes, decoding, NMS
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]
    cls: int
    score: float
    cell: tuple[int, int] = (-1, -1)


def iou(a, b) -> float:
    """Intersection over union of two corner boxes; 0 when the union is empty."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = max(0.0, a[2] - a[0]) * max(0.0, a[3] - a[1]) \
        + max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    iy = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = ix * iy
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def nms(detections: list[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Greedy per-class suppression; input order defines priority."""
    kept: list[Detection] = []
    for det in detections:
        if all(k.cls != det.cls or iou(k.box, det.box) < iou_threshold for k in kept):
            kept.append(det)
    return kept


def decode_and_filter(trace: ForwardTrace, score_threshold: float = 0.8,
                      nms_iou: float = 0.5, index: int = 0) -> list[Detection]:
    """Confident cells of image ``index`` in the trace, after per-class NMS.

    Score is the best foreground probability; candidates are ordered by
    descending score, ties broken by row-major cell index.
    """
    probs = trace.probs[index]
    K = probs.shape[-1] - 1
    fg = probs[..., :K]
    scores = fg.max(axis=-1)
    classes = fg.argmax(axis=-1)
    G = scores.shape[0]
    flat_scores = scores.ravel()
    cand = np.flatnonzero(flat_scores >= score_threshold)
    order = cand[np.lexsort((cand, -flat_scores[cand]))]
    boxes = trace.boxes[index]
    dets = []
    for idx in order:
        r, c = divmod(int(idx), G)
        dets.append(Detection(box=tuple(float(v) for v in boxes[r, c]),
                              cls=int(classes[r, c]), score=float(scores[r, c]), cell=(r, c)))
    return nms(dets, nms_iou)


# --------------------------------------------------------------------------
# target assignment
# --------------------------------------------------------------------------


@dataclass
class CellTargets:
    pos_cells: np.ndarray    # (P, 2) row, col
    pos_boxes: np.ndarray    # (P, 4)
    pos_classes: np.ndarray  # (P,)
    bg_cells: np.ndarray     # (N, 2)

    @property
    def cells(self) -> np.ndarray:
        return np.concatenate([self.pos_cells, self.bg_cells]).reshape(-1, 2)

    def labels(self, num_classes: int) -> np.ndarray:
        return np.concatenate([self.pos_classes,
                               np.full(len(self.bg_cells), num_classes, dtype=np.int64)])


def assign_targets(boxes, classes, grid: int = 16, bg_sample_count: int = 16,
                   rng: np.random.Generator | int | None = 0) -> CellTargets:
    """Centre-cell assignment plus uniformly sampled background cells.

    A box is assigned to the cell holding its centre; in a shared cell the
    larger box wins.  Background cells are drawn without replacement from the
    remaining cells.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    classes = np.asarray(classes, dtype=np.int64).reshape(-1)
    owner: dict[tuple[int, int], int] = {}
    area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    for j, b in enumerate(boxes):
        r = min(grid - 1, max(0, int(np.floor((b[1] + b[3]) / 2 * grid))))
        c = min(grid - 1, max(0, int(np.floor((b[0] + b[2]) / 2 * grid))))
        prev = owner.get((r, c))
        if prev is None or area[j] > area[prev]:
            owner[(r, c)] = j
    keys = sorted(owner)
    pos_cells = np.array(keys, dtype=np.int64).reshape(-1, 2)
    idx = np.array([owner[k] for k in keys], dtype=np.int64)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    taken = {r * grid + c for r, c in keys}
    free = np.array([i for i in range(grid * grid) if i not in taken], dtype=np.int64)
    n_bg = min(bg_sample_count, free.size)
    chosen = np.sort(rng.choice(free, size=n_bg, replace=False)) if n_bg else np.zeros(0, np.int64)
    bg_cells = np.stack([chosen // grid, chosen % grid], axis=1).reshape(-1, 2)
    return CellTargets(pos_cells=pos_cells, pos_boxes=boxes[idx].reshape(-1, 4),
                       pos_classes=classes[idx], bg_cells=bg_cells)


# --------------------------------------------------------------------------
# checkpoints: magic, version byte, u32 header length, JSON header, f64 LE vector
# --------------------------------------------------------------------------


def save_checkpoint(path, params: DetectorParams, extra: dict | None = None) -> None:
    header = {"arch": [list(layer) for layer in params.arch],
              "num_classes": params.num_classes,
              "shapes": [[n, list(s)] for n, s in params.shapes],
              "length": len(params)}
    if extra:
        header["extra"] = extra
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(bytes([CKPT_VERSION]))
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(params.flat.astype("<f8").tobytes())


def load_checkpoint(path) -> DetectorParams:
    raw = Path(path).read_bytes()
    if raw[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a detector checkpoint")
    pos = len(CKPT_MAGIC)
    if raw[pos] != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {raw[pos]}")
    (hlen,) = struct.unpack("<I", raw[pos + 1:pos + 5])
    header = json.loads(raw[pos + 5:pos + 5 + hlen])
    flat = np.frombuffer(raw, dtype="<f8", offset=pos + 5 + hlen).astype(np.float64)
    return DetectorParams(flat, tuple(tuple(l) for l in header["arch"]), header["num_classes"])
