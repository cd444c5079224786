"""Classification, regression and spatial-prior losses with analytic gradients.

Class index ``K`` (the last one) is background throughout; foreground classes
are ``0..K-1``.  Every loss returns its value together with the gradient with
respect to its first (student-side) argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import softmax_backward

PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class SparConfig:
    lambda1: float = 1.0
    lambda2: float = 2.0
    epsilon: float = 1e-7

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("SPAR weights must be non-negative")
        if not self.epsilon > 0:
            raise ValueError("SPAR epsilon must be positive")


@dataclass(frozen=True)
class IrplConfig:
    m: float = 1e4
    alpha: float = 0.1
    beta: float = 2.0
    gamma: float = 0.01
    w_fg: float = 2.0
    w_bg: float = 1.0

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("non-positive margin")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("alpha, beta and gamma must be non-negative")
        if not (self.w_fg > 0 and self.w_bg > 0):
            raise ValueError("class weights must be positive")


@dataclass(frozen=True)
class BoxLossTerm:
    """One supervised box: the student's class distribution and its pseudo class."""

    probs: np.ndarray
    pseudo_class: int


@dataclass
class IrplResult:
    loss: float
    grad: np.ndarray  # (n_boxes, K+1), d loss / d probs
    kl_skipped: bool = False
    kl: float = 0.0


def peak_index(p: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return np.argmax(p, axis=-1)


def peak_adjust(p, m: float) -> np.ndarray:
    """Add margin ``m`` to the largest probability and renormalise by ``1 + m``.

    Works row-wise on ``(..., K+1)`` arrays.
    """
    if not m > 0:
        raise ValueError("non-positive margin")
    p = np.asarray(p, dtype=np.float64)
    t = peak_index(p)
    out = p / (1.0 + m)
    np.put_along_axis(out, np.expand_dims(t, -1),
                      (np.take_along_axis(p, np.expand_dims(t, -1), -1) + m) / (1.0 + m), -1)
    return out


def _as_batch(boxes, pseudo_classes):
    if pseudo_classes is None:
        probs = np.stack([np.asarray(b.probs, dtype=np.float64) for b in boxes])
        labels = np.array([int(b.pseudo_class) for b in boxes], dtype=np.int64)
    else:
        probs = np.atleast_2d(np.asarray(boxes, dtype=np.float64))
        labels = np.atleast_1d(np.asarray(pseudo_classes, dtype=np.int64))
    return probs, labels


def irpl_loss(boxes, cfg: IrplConfig = IrplConfig(), num_fg_classes: int | None = None,
              pseudo_classes=None, *, use_peak_adjust: bool = True,
              use_fgbg_weighting: bool = True, use_kl: bool = True) -> IrplResult:
    """Imbalance-aware noise-robust pseudo-label loss for the boxes of one image.

    ``boxes`` is either a list of :class:`BoxLossTerm` or an ``(n, K+1)`` array
    of probabilities, in which case ``pseudo_classes`` holds the labels.

    Per box: ``w_c * [alpha * -log p'_c + beta * (1 - p_c)]`` with ``p'`` the
    peak-adjusted distribution; plus ``gamma * KL(p_bar || uniform)`` over the
    foreground classes, where ``p_bar`` pools foreground mass over all boxes.
    The argmax inside the peak adjustment is treated as locally constant.
    The three switches reproduce the component ablation.
    """
    probs, labels = _as_batch(boxes, pseudo_classes)
    if probs.shape[0] == 0:
        raise ValueError("irpl_loss needs at least one box")
    n, c = probs.shape
    K = c - 1 if num_fg_classes is None else int(num_fg_classes)
    if K != c - 1:
        raise ValueError(f"probabilities have {c} entries, expected K+1 = {K + 1}")
    if labels.min() < 0 or labels.max() > K:
        raise ValueError("pseudo class out of range")

    rows = np.arange(n)
    p_lab = probs[rows, labels]
    grad = np.zeros_like(probs)

    if use_fgbg_weighting:
        w = np.where(labels < K, cfg.w_fg, cfg.w_bg)
    else:
        w = np.ones(n)

    if use_peak_adjust:
        t = peak_index(probs)
        agree = labels == t
        # -log p'_c = log(1+m) - log(p_c + m) on agreement, log(1+m) - log(p_c) otherwise
        shifted = np.where(agree, p_lab + cfg.m, np.maximum(p_lab, PROB_FLOOR))
        ce_term = np.log1p(cfg.m) - np.log(shifted)
        dce = -1.0 / shifted
    else:
        safe = np.maximum(p_lab, PROB_FLOOR)
        ce_term = -np.log(safe)
        dce = -1.0 / safe

    loss = float(np.sum(w * (cfg.alpha * ce_term + cfg.beta * (1.0 - p_lab))))
    grad[rows, labels] += w * (cfg.alpha * dce - cfg.beta)

    result = IrplResult(loss=loss, grad=grad)
    if use_kl and cfg.gamma > 0:
        fg_mass = probs[:, :K].sum(axis=0)
        Z = fg_mass.sum()
        if Z <= 0:
            result.kl_skipped = True
            return result
        p_bar = fg_mass / Z
        logp = np.log(np.maximum(p_bar, PROB_FLOOR))
        ent = float(np.sum(p_bar * logp))
        kl = float(np.log(K) + ent)
        result.kl = kl
        result.loss += cfg.gamma * kl
        # d KL / d fg_mass_j = (log p_bar_j - sum_k p_bar_k log p_bar_k) / Z
        d_mass = (logp - ent) / Z
        grad[:, :K] += cfg.gamma * d_mass[None, :]
    return result


def irpl_logit_grad(probs: np.ndarray, pseudo_classes, **kwargs) -> tuple[float, np.ndarray]:
    """IRPL value and gradient pulled back through the softmax to the logits."""
    res = irpl_loss(probs, pseudo_classes=pseudo_classes, **kwargs)
    return res.loss, softmax_backward(np.atleast_2d(probs), res.grad)


def irpl_grad_regime_check(p, pseudo_class: int, m: float) -> tuple[float, str]:
    """Return the gradient scaling of the peak-adjusted CE term and its regime.

    In agreement (``pseudo_class == argmax p``) the logit gradient of
    ``-log p'_c`` equals ``p_c / (p_c + m)`` times the plain CE logit gradient;
    in disagreement it equals the plain CE gradient.  Both identities are
    evaluated and an ``AssertionError`` is raised if either fails.
    """
    p = np.asarray(p, dtype=np.float64)
    c = int(pseudo_class)
    t = int(peak_index(p))
    onehot = np.zeros_like(p)
    onehot[c] = 1.0
    ce_grad = p - onehot
    if c == t:
        factor = p[c] / (p[c] + m)
        dprob = np.zeros_like(p)
        dprob[c] = -1.0 / (p[c] + m)
        got = softmax_backward(p, dprob)
        np.testing.assert_allclose(got, factor * ce_grad, rtol=0, atol=1e-10)
        return float(factor), "agree"
    dprob = np.zeros_like(p)
    dprob[c] = -1.0 / p[c]
    got = softmax_backward(p, dprob)
    np.testing.assert_allclose(got, ce_grad, rtol=0, atol=1e-12)
    return 1.0, "disagree"


def spar_loss(student_map, prior_mask, cfg: SparConfig = SparConfig()):
    """Mean l1 plus Dice disagreement between an activation map and a binary prior.

    Returns ``(loss, grad_wrt_student_map)``; the l1 subgradient at equality is 0.
    """
    s = np.asarray(student_map, dtype=np.float64)
    g = np.asarray(prior_mask, dtype=np.float64)
    if s.shape != g.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {g.shape}")
    n = s.size
    diff = s - g
    l1 = cfg.lambda1 / n * float(np.abs(diff).sum())
    inter = float((s * g).sum())
    denom = float(s.sum() + g.sum()) + cfg.epsilon
    dice = cfg.lambda2 * (1.0 - 2.0 * inter / denom)
    grad = cfg.lambda1 / n * np.sign(diff)
    grad += cfg.lambda2 * (-2.0 * g / denom + 2.0 * inter / denom ** 2)
    return l1 + dice, grad


def ce_loss(probs, label: int):
    """Cross entropy on probabilities: ``(loss, grad_wrt_probs, clamped)``."""
    p = np.asarray(probs, dtype=np.float64)
    pl = p[label]
    clamped = bool(pl <= PROB_FLOOR)
    pl = max(pl, PROB_FLOOR)
    grad = np.zeros_like(p)
    grad[label] = -1.0 / pl
    return float(-np.log(pl)), grad, clamped


def ce_loss_batch(probs: np.ndarray, labels) -> tuple[float, np.ndarray]:
    probs = np.atleast_2d(probs)
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(labels))
    pl = np.maximum(probs[rows, labels], PROB_FLOOR)
    grad = np.zeros_like(probs)
    grad[rows, labels] = -1.0 / pl
    return float(-np.log(pl).sum()), grad


def l1_box_loss(pred, target):
    """Sum of absolute coordinate differences; subgradient 0 where they agree."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.abs(d).sum()), np.sign(d)
