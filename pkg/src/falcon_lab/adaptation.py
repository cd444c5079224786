"""Source pretraining, mean-teacher adaptation and mAP evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy import ndimage

from . import detector as dt
from .losses import IrplConfig, SparConfig, ce_loss_batch, irpl_loss, spar_loss
from .numerics import softmax_backward
from .scenes import Scene, corrupt_mask, mix_seed, pool_prior, strong_augment, weak_augment

log = logging.getLogger(__name__)

MetricsSink = Callable[[dict], None]


@dataclass(frozen=True)
class TrainConfig:
    lr_source: float = 0.04
    lr_adapt: float = 0.0025
    batch: int = 4
    ema_delta: float = 0.9996
    score_threshold: float = 0.8
    steps_source: int = 2000
    steps_adapt: int = 2000
    seed: int = 0
    nms_iou: float = 0.5
    bg_sample_count: int = 16
    mask_iou: float = 0.5
    eval_score_threshold: float = 0.05
    grad_clip: float = 10.0
    ema_per_epoch: bool = False
    noisy_prior: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.ema_delta <= 1.0:
            raise ValueError("ema_delta must lie in [0, 1]")
        if not (self.lr_source > 0 and self.lr_adapt > 0):
            raise ValueError("learning rates must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


@dataclass(frozen=True)
class AblationSwitches:
    use_spar: bool = True
    use_irpl: bool = True
    use_peak_adjust: bool = True
    use_fgbg_weighting: bool = True
    use_kl: bool = True
    mask_filter_only: bool = False

    def __post_init__(self):
        if self.mask_filter_only and self.use_spar:
            raise ValueError("mask_filter_only requires use_spar = False")


PRESETS = {
    "baseline": AblationSwitches(use_spar=False, use_irpl=False),
    "spar": AblationSwitches(use_spar=True, use_irpl=False),
    "irpl": AblationSwitches(use_spar=False, use_irpl=True),
    "full": AblationSwitches(),
    "mask_only": AblationSwitches(use_spar=False, use_irpl=False, mask_filter_only=True),
}


# --------------------------------------------------------------------------
# losses over a batch
# --------------------------------------------------------------------------


@dataclass
class LossParts:
    cls: float = 0.0
    spar: float = 0.0
    reg: float = 0.0

    @property
    def total(self) -> float:
        return self.cls + self.spar + self.reg


def batch_loss(params: dt.DetectorParams, images: np.ndarray,
               targets: list[dt.CellTargets | None], priors: np.ndarray | None = None,
               switches: AblationSwitches = AblationSwitches(use_spar=False, use_irpl=False),
               irpl_cfg: IrplConfig = IrplConfig(), spar_cfg: SparConfig = SparConfig(),
               trace: dt.ForwardTrace | None = None) -> tuple[LossParts, np.ndarray]:
    """Batch-mean of classification + box L1 (+ SPAR) and its flat gradient.

    ``targets[i] is None`` drops the supervised terms for image ``i``.
    Classification is IRPL when ``switches.use_irpl`` else plain CE; SPAR is
    added when ``priors`` is given and ``switches.use_spar``.
    """
    if trace is None:
        trace = dt.forward(params, images)
    B = trace.batch
    K = params.num_classes
    parts = LossParts()
    d_probs = np.zeros_like(trace.probs)
    d_boxes = np.zeros_like(trace.boxes)
    d_map = None
    for i, tg in enumerate(targets):
        if tg is None:
            continue
        cells = tg.cells
        labels = tg.labels(K)
        if len(labels):
            p = trace.probs[i, cells[:, 0], cells[:, 1]]
            if switches.use_irpl:
                res = irpl_loss(p, irpl_cfg, K, labels,
                                use_peak_adjust=switches.use_peak_adjust,
                                use_fgbg_weighting=switches.use_fgbg_weighting,
                                use_kl=switches.use_kl)
                loss, g = res.loss, res.grad
            else:
                loss, g = ce_loss_batch(p, labels)
            parts.cls += loss / B
            np.add.at(d_probs[i], (cells[:, 0], cells[:, 1]), g / B)
        pc = tg.pos_cells
        if len(pc):
            pred = trace.boxes[i, pc[:, 0], pc[:, 1]]
            diff = pred - tg.pos_boxes
            parts.reg += float(np.abs(diff).sum()) / B
            np.add.at(d_boxes[i], (pc[:, 0], pc[:, 1]), np.sign(diff) / B)
    if priors is not None and switches.use_spar:
        d_map = np.zeros_like(trace.mean_map)
        for i in range(B):
            loss, g = spar_loss(trace.mean_map[i], priors[i], spar_cfg)
            parts.spar += loss / B
            d_map[i] = g / B
    d_logits = softmax_backward(trace.probs, d_probs)
    d_reg = dt.decode_boxes_backward(trace.reg_raw, d_boxes)
    grad = dt.backward(params, trace, d_logits, d_reg, d_map)
    return parts, grad


def _clip(grad: np.ndarray, max_norm: float) -> np.ndarray:
    if max_norm and max_norm > 0:
        n = float(np.linalg.norm(grad))
        if n > max_norm:
            return grad * (max_norm / n)
    return grad


# --------------------------------------------------------------------------
# EMA and pseudo labels
# --------------------------------------------------------------------------


def ema_update(teacher: dt.DetectorParams, student: dt.DetectorParams,
               delta: float) -> dt.DetectorParams:
    """``delta * teacher + (1 - delta) * student``, element-wise."""
    if len(teacher) != len(student):
        raise ValueError(f"parameter length mismatch: {len(teacher)} vs {len(student)}")
    return teacher.with_flat(delta * teacher.flat + (1.0 - delta) * student.flat)


def mask_component_boxes(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Connected components of a binary mask: label image and tight unit-square boxes."""
    labels, n = ndimage.label(mask > 0.5)
    h, w = mask.shape
    boxes = np.zeros((n, 4))
    for k, sl in enumerate(ndimage.find_objects(labels)):
        boxes[k] = (sl[1].start / w, sl[0].start / h, sl[1].stop / w, sl[0].stop / h)
    return labels, boxes


def filter_with_mask(dets: list[dt.Detection], mask: np.ndarray,
                     iou_threshold: float = 0.5) -> list[dt.Detection]:
    """Keep detections that agree with the prior mask component they overlap most."""
    labels, comp_boxes = mask_component_boxes(mask)
    if not len(comp_boxes):
        return []
    h, w = mask.shape
    kept = []
    for d in dets:
        x0, y0 = int(np.floor(d.box[0] * w)), int(np.floor(d.box[1] * h))
        x1, y1 = int(np.ceil(d.box[2] * w)), int(np.ceil(d.box[3] * h))
        window = labels[y0:y1, x0:x1]
        counts = np.bincount(window.ravel(), minlength=len(comp_boxes) + 1)[1:]
        if counts.sum() == 0:
            continue
        comp = int(np.argmax(counts))
        if dt.iou(d.box, comp_boxes[comp]) >= iou_threshold:
            kept.append(d)
    return kept


def make_pseudo_labels(teacher: dt.DetectorParams, scene: Scene, cfg: TrainConfig = TrainConfig(),
                       switches: AblationSwitches = AblationSwitches(), seed: int = 0,
                       prior_mask: np.ndarray | None = None) -> list[dt.Detection]:
    """Teacher detections on the weak view of ``scene`` (in weak-view coordinates)."""
    weak = weak_augment(scene, seed)
    trace = dt.forward(teacher, weak.image)
    dets = dt.decode_and_filter(trace, cfg.score_threshold, cfg.nms_iou)
    if switches.mask_filter_only:
        mask = weak.fg_mask if prior_mask is None else (
            prior_mask[:, ::-1] if weak.flipped else prior_mask)
        dets = filter_with_mask(dets, mask, cfg.mask_iou)
    return dets


def _targets_from_dets(dets, grid, bg_count, rng) -> dt.CellTargets:
    boxes = np.array([d.box for d in dets]).reshape(-1, 4)
    classes = np.array([d.cls for d in dets], dtype=np.int64)
    return dt.assign_targets(boxes, classes, grid, bg_count, rng)


# --------------------------------------------------------------------------
# training loops
# --------------------------------------------------------------------------


def pretrain_source(cfg: TrainConfig, dataset: list[Scene], init: dt.DetectorParams | None = None,
                    metrics: MetricsSink | None = None, arch=dt.DEFAULT_ARCH) -> dt.DetectorParams:
    """Supervised CE + box-L1 training on labelled source scenes with plain SGD."""
    if not dataset:
        raise ValueError("source dataset is empty")
    params = (init.copy() if init is not None
              else dt.DetectorParams.init(mix_seed(cfg.seed, 17), arch))
    rng = np.random.default_rng(mix_seed(cfg.seed, 23))
    n = len(dataset)
    B = min(cfg.batch, n)
    for step in range(cfg.steps_source):
        idx = rng.choice(n, size=B, replace=False)
        views = [weak_augment(dataset[i], mix_seed(cfg.seed, 1_000_000 + step * B + j))
                 for j, i in enumerate(idx)]
        images = np.stack([v.image for v in views])
        targets = [dt.assign_targets(v.boxes, v.classes, 16, cfg.bg_sample_count, rng) for v in views]
        parts, grad = batch_loss(params, images, targets)
        params.flat -= cfg.lr_source * _clip(grad, cfg.grad_clip)
        if not np.all(np.isfinite(params.flat)):
            raise FloatingPointError(f"source training diverged at step {step}")
        if metrics is not None:
            metrics({"step": step, "loss_total": parts.total, "loss_cls": parts.cls,
                     "loss_reg": parts.reg})
    return params


@dataclass
class AdaptState:
    student: dt.DetectorParams
    teacher: dt.DetectorParams
    empty_images: int = 0
    history: list = field(default_factory=list)


def adapt(source_params: dt.DetectorParams, cfg: TrainConfig, switches: AblationSwitches,
          target_dataset: list[Scene], irpl_cfg: IrplConfig = IrplConfig(),
          spar_cfg: SparConfig = SparConfig(), metrics: MetricsSink | None = None,
          teacher_hook: Callable[[int, AdaptState], None] | None = None) -> tuple[dt.DetectorParams, dt.DetectorParams]:
    """Mean-teacher source-free adaptation; returns ``(student, teacher)``.

    Per step: weak/strong views -> teacher pseudo labels -> student forward on
    the strong view -> classification (IRPL or CE) + SPAR + box L1 -> one SGD
    step -> EMA teacher update.  Weak and strong views share the flip coin so
    pseudo boxes are valid on both.
    """
    if not target_dataset:
        raise ValueError("target dataset is empty")
    state = AdaptState(student=source_params.copy(), teacher=source_params.copy())
    grid = dt.forward(source_params, target_dataset[0].image).grid
    # priors are computed once before the loop
    full_priors = [corrupt_mask(s.fg_mask, cfg.noisy_prior, mix_seed(cfg.seed, 7_000_000 + i))
                   for i, s in enumerate(target_dataset)]
    pooled = [pool_prior(m, (grid, grid)) for m in full_priors]

    rng = np.random.default_rng(mix_seed(cfg.seed, 29))
    n = len(target_dataset)
    B = min(cfg.batch, n)
    ema_every = max(1, -(-n // B)) if cfg.ema_per_epoch else 1
    for step in range(cfg.steps_adapt):
        idx = rng.choice(n, size=B, replace=False)
        seeds = [mix_seed(cfg.seed, 2_000_000 + step * B + j) for j in range(B)]
        weak = [weak_augment(target_dataset[i], s) for i, s in zip(idx, seeds)]
        strong = [strong_augment(target_dataset[i], s) for i, s in zip(idx, seeds)]
        t_trace = dt.forward(state.teacher, np.stack([w.image for w in weak]))

        targets: list[dt.CellTargets | None] = []
        priors = np.zeros((B, grid, grid))
        n_pseudo = 0
        for j, i in enumerate(idx):
            flipped = weak[j].flipped
            prior_full = full_priors[i][:, ::-1] if flipped else full_priors[i]
            priors[j] = pooled[i][:, ::-1] if flipped else pooled[i]
            dets = dt.decode_and_filter(t_trace, cfg.score_threshold, cfg.nms_iou, index=j)
            if switches.mask_filter_only:
                dets = filter_with_mask(dets, prior_full, cfg.mask_iou)
            n_pseudo += len(dets)
            if dets:
                targets.append(_targets_from_dets(dets, grid, cfg.bg_sample_count, rng))
            else:
                state.empty_images += 1
                targets.append(None)

        images = np.stack([s.image for s in strong])
        parts, grad = batch_loss(state.student, images, targets, priors, switches, irpl_cfg,
                                 spar_cfg)
        state.student.flat -= cfg.lr_adapt * _clip(grad, cfg.grad_clip)
        if not np.all(np.isfinite(state.student.flat)):
            raise FloatingPointError(f"adaptation diverged at step {step}")
        if (step + 1) % ema_every == 0:
            state.teacher = ema_update(state.teacher, state.student, cfg.ema_delta)
        if metrics is not None:
            metrics({"step": step, "loss_total": parts.cls + parts.spar + parts.reg,
                     "loss_irpl": parts.cls, "loss_spar": parts.spar, "loss_reg": parts.reg,
                     "n_pseudo": n_pseudo})
        if teacher_hook is not None:
            teacher_hook(step, state)
    if cfg.ema_per_epoch and cfg.steps_adapt % ema_every:
        state.teacher = ema_update(state.teacher, state.student, cfg.ema_delta)
    return state.student, state.teacher


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------


@dataclass
class MapResult:
    ap: dict[int, float]
    mAP: float


def average_precision(scores: np.ndarray, matched: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP from score-sorted true/false-positive flags."""
    if n_gt == 0:
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    tp = matched[order].astype(np.float64)
    fp = 1.0 - tp
    ctp, cfp = np.cumsum(tp), np.cumsum(fp)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, np.finfo(float).tiny)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def evaluate_detections(all_dets: list[list[dt.Detection]], scenes: Iterable[Scene],
                        num_classes: int = dt.NUM_CLASSES, iou_threshold: float = 0.5) -> MapResult:
    """Greedy score-ordered matching to unmatched ground truth of the same class."""
    scenes = list(scenes)
    ap = {}
    for c in range(num_classes):
        gts = [s.boxes[s.classes == c] for s in scenes]
        n_gt = sum(len(g) for g in gts)
        if n_gt == 0:
            continue
        cand = [(d.score, img, k, d) for img, dets in enumerate(all_dets)
                for k, d in enumerate(dets) if d.cls == c]
        cand.sort(key=lambda t: (-t[0], t[1], t[2]))
        used = [np.zeros(len(g), dtype=bool) for g in gts]
        flags = np.zeros(len(cand), dtype=bool)
        for n, (_, img, _, d) in enumerate(cand):
            g = gts[img]
            if not len(g):
                continue
            ious = dt.iou_matrix(np.array([d.box]), g)[0]
            ious[used[img]] = -1.0
            best = int(np.argmax(ious))
            if ious[best] >= iou_threshold:
                used[img][best] = True
                flags[n] = True
        scores = np.array([t[0] for t in cand])
        ap[c] = average_precision(scores, flags, n_gt)
    mAP = float(np.mean(list(ap.values()))) if ap else 0.0
    return MapResult(ap=ap, mAP=mAP)


def detect(params: dt.DetectorParams, scenes: list[Scene], score_threshold: float = 0.05,
           nms_iou: float = 0.5, chunk: int = 25) -> list[list[dt.Detection]]:
    out = []
    for start in range(0, len(scenes), chunk):
        part = scenes[start:start + chunk]
        trace = dt.forward(params, np.stack([s.image for s in part]))
        out += [dt.decode_and_filter(trace, score_threshold, nms_iou, index=j) for j in range(len(part))]
    return out


def evaluate_map(params: dt.DetectorParams, dataset: list[Scene], iou_threshold: float = 0.5,
                 score_threshold: float = 0.05) -> MapResult:
    """Per-class AP and mAP (mean over classes present in the ground truth)."""
    dets = detect(params, dataset, score_threshold)
    return evaluate_detections(dets, dataset, params.num_classes, iou_threshold)
