"""Numerical checks of the pseudo-label risk bounds.

Covers the classification bound under a class-conditional transition matrix
(clean risk <= noisy risk / lambda), the regression bound with teacher misses,
their composition into a detection-risk bound, and the additive term
``2*delta + 2*w*delta/a`` that replaces the ``1/lambda`` factor for the
peak-adjusted loss.  Monte-Carlo estimates pair clean and noisy risks on the
same samples; per-sample algebraic steps are checked with no tolerance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .detector import iou_matrix
from .losses import IrplConfig, peak_index
from .numerics import softmax

# sup of ||u - v||_1 over corner boxes (x0<x1, y0<y1) inside the unit square
CORNER_BOX_DIAMETER = 4.0


@dataclass(frozen=True)
class TransitionMatrix:
    T: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.T, dtype=np.float64)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise ValueError("transition matrix must be square")
        if np.any(T < 0):
            raise ValueError("transition matrix has negative entries")
        if np.any(np.abs(T.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("transition matrix rows must sum to 1")
        object.__setattr__(self, "T", T)

    @property
    def lam(self) -> float:
        return float(np.min(np.diag(self.T)))

    @property
    def num_classes(self) -> int:
        return self.T.shape[0]

    @classmethod
    def identity(cls, n: int) -> "TransitionMatrix":
        return cls(np.eye(n))

    @classmethod
    def symmetric(cls, n: int, noise: float) -> "TransitionMatrix":
        T = np.full((n, n), noise / (n - 1))
        np.fill_diagonal(T, 1.0 - noise)
        return cls(T)

    @classmethod
    def random(cls, n: int, lam: float, rng: np.random.Generator) -> "TransitionMatrix":
        """Random asymmetric matrix whose smallest diagonal entry is exactly ``lam``."""
        diag = rng.uniform(lam, 1.0, size=n)
        diag[rng.integers(n)] = lam
        T = np.zeros((n, n))
        for j in range(n):
            off = rng.dirichlet(np.ones(n - 1)) * (1.0 - diag[j])
            # absorb rounding in the largest off-diagonal entry so the diagonal stays exact
            k = int(np.argmax(off))
            off[k] = max(0.0, (1.0 - diag[j]) - (off.sum() - off[k]))
            T[j] = np.insert(off, j, diag[j])
        return cls(T)


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    standard_error: float
    samples: int
    per_sample_violations: int = 0
    details: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + 3.0 * self.standard_error

    @property
    def per_sample_ok(self) -> bool:
        return self.per_sample_violations == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holds"] = self.holds
        d["per_sample_ok"] = self.per_sample_ok
        return d


@dataclass(frozen=True)
class RegressionNoiseStats:
    eta_reg: float
    zeta: float
    tau: float


@dataclass(frozen=True)
class Theorem2Terms:
    delta: float
    w: float
    a: float
    epsilon: float
    lam: float

    @property
    def additive(self) -> float:
        return 2.0 * self.delta + 2.0 * self.w * self.delta / self.a

    @property
    def multiplicative_factor(self) -> float:
        return 1.0 / self.lam


def _se(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0


# --------------------------------------------------------------------------
# classification
# --------------------------------------------------------------------------


def sample_noisy_labels(true_classes, T: TransitionMatrix, rng: np.random.Generator) -> np.ndarray:
    """Vectorised categorical draws from the rows ``T[c]``."""
    c = np.asarray(true_classes, dtype=np.int64)
    cum = np.cumsum(T.T[c], axis=-1)
    u = rng.random(c.shape)[..., None]
    out = (u >= cum).sum(axis=-1)
    return np.minimum(out, T.num_classes - 1)


def sample_noisy_label(true_class: int, T: TransitionMatrix, rng: np.random.Generator) -> int:
    return int(sample_noisy_labels(np.array([true_class]), T, rng)[0])


def verify_lemma1(classifier: Callable[[np.ndarray], np.ndarray],
                  sampler: Callable[[int, np.random.Generator], tuple[np.ndarray, np.ndarray]],
                  T: TransitionMatrix, n_samples: int, seed: int = 0,
                  assume_lambda: float | None = None) -> BoundReport:
    """Paired Monte-Carlo check of ``R_clean <= R_noisy / lambda`` for cross entropy.

    Also checks, for every sample, ``lambda * l_c <= sum_i T_ci * l_i`` (the
    per-sample step of the proof, written without division so it is exact in
    floating point).  ``assume_lambda`` replaces the true minimum diagonal,
    which is only useful for exercising the failure path.
    """
    lam = T.lam if assume_lambda is None else float(assume_lambda)
    if not lam > 0:
        raise ValueError("unidentifiable noise")
    rng = np.random.default_rng(seed)
    x, c = sampler(n_samples, rng)
    probs = np.asarray(classifier(x), dtype=np.float64)
    if np.any(probs <= 0):
        raise ValueError("classifier must output strictly positive probabilities")
    losses = -np.log(probs)
    noisy = sample_noisy_labels(c, T, rng)
    rows = np.arange(len(c))
    l_clean = losses[rows, c]
    l_noisy = losses[rows, noisy]
    expected_noisy = np.sum(T.T[c] * losses, axis=1)
    violations = int(np.sum(lam * l_clean > expected_noisy))
    r_clean = float(l_clean.mean())
    r_noisy = float(l_noisy.mean())
    return BoundReport(
        lhs=r_clean, rhs=r_noisy / lam, standard_error=_se(l_clean - l_noisy / lam),
        samples=len(c), per_sample_violations=violations,
        details={"r_clean": r_clean, "r_noisy": r_noisy, "lambda": lam},
    )


# --------------------------------------------------------------------------
# regression
# --------------------------------------------------------------------------


def _check_boxes(*arrays):
    for a in arrays:
        if np.any(a < 0.0) or np.any(a > 1.0):
            raise ValueError("unnormalized box")


def _l1(a, b) -> np.ndarray:
    return np.abs(a - b).sum(axis=1)


def _exact_l1(u, v) -> Fraction:
    return sum((abs(Fraction(float(p)) - Fraction(float(q))) for p, q in zip(u, v)), Fraction(0))


def verify_lemma2(student_boxes, teacher_boxes, gt_boxes, tau: float = 0.5,
                  diameter: float = CORNER_BOX_DIAMETER) -> tuple[BoundReport, RegressionNoiseStats]:
    """Check ``R_clean <= R_noisy + eta_reg + diameter * zeta`` on box triples.

    ``diameter`` bounds ``||u - v||_1`` between any two admissible boxes; it
    is the miss penalty.  Per sample both case inequalities are checked;
    floating-point violations are re-checked in exact rational arithmetic.
    """
    f = np.asarray(student_boxes, dtype=np.float64).reshape(-1, 4)
    bh = np.asarray(teacher_boxes, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    _check_boxes(f, bh, b)
    ious = _rowwise_iou(bh, b)
    M = (ious >= tau).astype(np.float64)
    d_clean = _l1(f, b)
    d_noisy = _l1(f, bh)
    d_teacher = _l1(bh, b)

    violations = 0
    tri = np.flatnonzero((M == 1) & (d_clean > d_noisy + d_teacher))
    for i in tri:
        if _exact_l1(f[i], b[i]) > _exact_l1(f[i], bh[i]) + _exact_l1(bh[i], b[i]):
            violations += 1
    miss = np.flatnonzero((M == 0) & (d_clean > diameter))
    violations += len(miss)

    clean = d_clean
    bound = M * d_noisy + M * d_teacher + diameter * (1.0 - M)
    stats = RegressionNoiseStats(eta_reg=float(np.mean(M * d_teacher)),
                                 zeta=float(np.mean(1.0 - M)), tau=tau)
    r_noisy = float(np.mean(M * d_noisy))
    report = BoundReport(
        lhs=float(clean.mean()), rhs=r_noisy + stats.eta_reg + diameter * stats.zeta,
        standard_error=_se(clean - bound), samples=len(f), per_sample_violations=violations,
        details={"r_noisy": r_noisy, "eta_reg": stats.eta_reg, "zeta": stats.zeta,
                 "diameter": diameter},
    )
    return report, stats


def _rowwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ix = np.clip(np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0]), 0, None)
    iy = np.clip(np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1]), 0, None)
    inter = ix * iy
    union = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1]) + (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1]) - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def random_boxes(n: int, rng: np.random.Generator, min_size: float = 0.0) -> np.ndarray:
    """Uniform corner boxes inside the unit square."""
    xs = np.sort(rng.random((n, 2)), axis=1)
    ys = np.sort(rng.random((n, 2)), axis=1)
    if min_size > 0:
        xs[:, 1] = np.minimum(1.0, np.maximum(xs[:, 1], xs[:, 0] + min_size))
        ys[:, 1] = np.minimum(1.0, np.maximum(ys[:, 1], ys[:, 0] + min_size))
    return np.stack([xs[:, 0], ys[:, 0], xs[:, 1], ys[:, 1]], axis=1)


def jitter_boxes(boxes: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Perturb corners with Gaussian noise, keeping boxes valid and inside [0, 1]."""
    out = np.clip(boxes + rng.normal(0.0, scale, size=boxes.shape), 0.0, 1.0)
    x = np.sort(out[:, [0, 2]], axis=1)
    y = np.sort(out[:, [1, 3]], axis=1)
    return np.stack([x[:, 0], y[:, 0], x[:, 1], y[:, 1]], axis=1)


def verify_theorem1(lemma1: BoundReport, lemma2: BoundReport) -> BoundReport:
    """Sum the classification and regression bounds into the detection-risk bound.

    The standard errors add linearly, so the composed report holds whenever
    both lemma reports hold.
    """
    report = BoundReport(
        lhs=lemma1.lhs + lemma2.lhs, rhs=lemma1.rhs + lemma2.rhs,
        standard_error=lemma1.standard_error + lemma2.standard_error,
        samples=min(lemma1.samples, lemma2.samples),
        per_sample_violations=lemma1.per_sample_violations + lemma2.per_sample_violations,
        details={"cls": lemma1.to_dict(), "reg": lemma2.to_dict()},
    )
    if lemma1.holds and lemma2.holds and not report.holds:
        raise AssertionError("composition failed although both component bounds hold")
    return report


# --------------------------------------------------------------------------
# additive bound for the peak-adjusted loss
# --------------------------------------------------------------------------


def irpl_class_losses(u: np.ndarray, cfg: IrplConfig = IrplConfig()) -> np.ndarray:
    """``L(u, k) = alpha * -log p'_k + beta * (1 - u_k)`` for every class ``k``."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    t = peak_index(u)
    rows = np.arange(u.shape[0])
    adj = u.copy()
    adj[rows, t] += cfg.m
    return cfg.alpha * (np.log1p(cfg.m) - np.log(adj)) + cfg.beta * (1.0 - u)


def noise_terms(T: TransitionMatrix, class_prior=None) -> tuple[float, float]:
    """Closed-form ``(w, a)`` for instance-independent noise ``eta_{x,k} = T[c, k]``."""
    n = T.num_classes
    prior = np.full(n, 1.0 / n) if class_prior is None else np.asarray(class_prior, dtype=np.float64)
    prior = prior / prior.sum()
    diag = np.diag(T.T)
    # a convex combination of probabilities; clamp the last-ulp rounding
    w = float(min(1.0, np.dot(prior, diag)))
    off = T.T.copy()
    np.fill_diagonal(off, -np.inf)
    a = float(np.min(diag - off.max(axis=1)))
    return w, a


def _simplex_directions(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    d = rng.normal(size=(n, dim))
    d -= d.mean(axis=1, keepdims=True)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def measure_delta(loss_sum: Callable[[np.ndarray], np.ndarray], probe_points: np.ndarray,
                  epsilons, n_pairs: int = 10_000, seed: int = 0) -> dict[float, float]:
    """Largest sampled ``|sum_k L(u1,k) - sum_k L(u2,k)|`` with ``||u1-u2||_2 <= eps``.

    ``n_pairs`` pairs are drawn inside the simplex at every radius in
    ``epsilons``; the estimate for ``eps`` maximises over all drawn pairs whose
    distance is at most ``eps``, so the estimates are nested (monotone).
    """
    rng = np.random.default_rng(seed)
    P = np.atleast_2d(np.asarray(probe_points, dtype=np.float64))
    dim = P.shape[1]
    dists, gaps = [], []
    for eps in epsilons:
        got = 0
        for _ in range(100):
            need = n_pairs - got
            if need <= 0:
                break
            u1 = P[rng.integers(len(P), size=2 * need)]
            # pairs sit on the eps-sphere, where a smooth gap is largest
            r = np.full(2 * need, float(eps))
            u2 = u1 + r[:, None] * _simplex_directions(2 * need, dim, rng)
            ok = np.all(u2 > 0, axis=1)
            u1, u2, r = u1[ok][:need], u2[ok][:need], r[ok][:need]
            gaps.append(np.abs(loss_sum(u1) - loss_sum(u2)))
            dists.append(np.linalg.norm(u1 - u2, axis=1))
            got += len(r)
    dists = np.concatenate(dists)
    gaps = np.concatenate(gaps)
    return {float(e): float(gaps[dists <= e].max(initial=0.0)) for e in epsilons}


def compute_theorem2_terms(T: TransitionMatrix, probe_points: np.ndarray, epsilons=(0.1, 0.05, 0.01),
                           cfg: IrplConfig = IrplConfig(), class_prior=None, n_pairs: int = 10_000,
                           seed: int = 0) -> list[Theorem2Terms]:
    w, a = noise_terms(T, class_prior)
    if not a > 0:
        raise ValueError("Theorem 2 precondition violated (a must be positive)")
    deltas = measure_delta(lambda u: irpl_class_losses(u, cfg).sum(axis=1), probe_points,
                           epsilons, n_pairs, seed)
    return [Theorem2Terms(delta=deltas[float(e)], w=w, a=a, epsilon=float(e), lam=T.lam)
            for e in epsilons]


# --------------------------------------------------------------------------
# synthetic classification task
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BlobTask:
    """Balanced classes, each uniform on a disk of radius ``spread``.

    Class centres sit evenly on a circle of radius ``radius``.  Bounded
    support keeps a trained linear model's outputs away from the simplex
    boundary, where the per-class losses have unbounded slope.
    """

    num_classes: int = 2
    radius: float = 0.5
    spread: float = 2.0

    def centers(self) -> np.ndarray:
        ang = 2 * np.pi * np.arange(self.num_classes) / self.num_classes
        return self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        c = rng.permutation(np.arange(n) % self.num_classes)
        ang = rng.uniform(0.0, 2 * np.pi, n)
        rad = self.spread * np.sqrt(rng.random(n))
        x = self.centers()[c] + np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        return x, c


@dataclass
class LinearSoftmax:
    W: np.ndarray
    b: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return softmax(x @ self.W + self.b)


def train_peak_adjusted(x: np.ndarray, labels: np.ndarray, num_classes: int,
                        cfg: IrplConfig = IrplConfig(), steps: int = 2000, lr: float = 1.0,
                        seed: int = 0) -> LinearSoftmax:
    """Full-batch gradient descent of a linear softmax model under the peak-adjusted loss."""
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, 0.01, size=(x.shape[1], num_classes))
    b = np.zeros(num_classes)
    n = len(labels)
    rows = np.arange(n)
    trace = []
    for step in range(steps):
        p = softmax(x @ W + b)
        pl = p[rows, labels]
        agree = peak_index(p) == labels
        shifted = np.where(agree, pl + cfg.m, pl)
        loss = float(np.mean(cfg.alpha * (np.log1p(cfg.m) - np.log(shifted)) + cfg.beta * (1 - pl)))
        trace.append(loss)
        if not np.isfinite(loss):
            raise FloatingPointError(f"training diverged at step {step}; loss trace tail {trace[-10:]}")
        dpl = (-cfg.alpha / shifted - cfg.beta) / n
        dp = np.zeros_like(p)
        dp[rows, labels] = dpl
        dz = p * (dp - np.sum(dp * p, axis=1, keepdims=True))
        W -= lr * (x.T @ dz)
        b -= lr * dz.sum(axis=0)
    return LinearSoftmax(W, b)


@dataclass
class Theorem2Report:
    lam: float
    clean_risk: float
    clean_error: float
    noisy_risk: float
    multiplicative_bound: float
    terms: list
    additive_bound: float
    additive_below_multiplicative: bool
    clean_within_additive: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["terms"] = [dict(asdict(t), additive=t.additive) for t in self.terms]
        return d


def empirical_theorem2_check(T: TransitionMatrix, task: BlobTask | None = None,
                             train_budget: int = 2000, n_train: int = 4000, n_test: int = 4000,
                             epsilons=(0.1, 0.05, 0.01), cfg: IrplConfig = IrplConfig(),
                             n_pairs: int = 10_000, seed: int = 0) -> Theorem2Report:
    """Train under the peak-adjusted loss on noisy labels and compare the two bounds.

    The additive bound uses delta at the smallest epsilon.  Whether the clean
    risk actually falls under the additive bound is reported, not asserted.
    """
    task = task or BlobTask(num_classes=T.num_classes)
    rng = np.random.default_rng(seed)
    x_tr, c_tr = task.sample(n_train, rng)
    y_tr = sample_noisy_labels(c_tr, T, rng)
    model = train_peak_adjusted(x_tr, y_tr, T.num_classes, cfg, train_budget, seed=seed)
    x_te, c_te = task.sample(n_test, rng)
    y_te = sample_noisy_labels(c_te, T, rng)
    p = model(x_te)
    rows = np.arange(n_test)
    clean = float(np.mean(-np.log(p[rows, c_te])))
    clean_error = float(np.mean(np.argmax(p, axis=1) != c_te))
    noisy = float(np.mean(-np.log(p[rows, y_te])))
    terms = compute_theorem2_terms(T, p, epsilons, cfg, n_pairs=n_pairs, seed=seed + 1)
    smallest = min(terms, key=lambda t: t.epsilon)
    mult = noisy / T.lam
    return Theorem2Report(
        lam=T.lam, clean_risk=clean, clean_error=clean_error, noisy_risk=noisy, multiplicative_bound=mult, terms=terms,
        additive_bound=smallest.additive,
        additive_below_multiplicative=bool(smallest.additive < mult),
        clean_within_additive=bool(clean <= smallest.additive),
    )


# --------------------------------------------------------------------------
# the full suite
# --------------------------------------------------------------------------


def random_linear_classifier(num_classes: int, rng: np.random.Generator,
                             scale: float = 1.0) -> LinearSoftmax:
    return LinearSoftmax(rng.normal(0.0, scale, size=(2, num_classes)),
                         rng.normal(0.0, scale, size=num_classes))


def lemma1_configs(n_configs: int, noise_rate: float, seed: int) -> list[TransitionMatrix]:
    """Identity, symmetric and random asymmetric channels with lambda in {1, 1-noise, 0.5}."""
    rng = np.random.default_rng(seed)
    mats = [TransitionMatrix.identity(2), TransitionMatrix.symmetric(2, noise_rate),
            TransitionMatrix.random(3, 0.5, rng)]
    lams = (1.0 - noise_rate, 0.5, 0.7, 0.9)
    while len(mats) < n_configs:
        n = int(rng.integers(2, 5))
        mats.append(TransitionMatrix.random(n, lams[len(mats) % len(lams)], rng))
    return mats


def box_triples(n: int, rng: np.random.Generator, teacher_noise: float = 0.03,
                miss_rate: float = 0.2, adversarial: bool = False):
    """Ground truth, a jittered teacher with some boxes missed, and a student."""
    gt = random_boxes(n, rng, min_size=0.05)
    teacher = jitter_boxes(gt, teacher_noise, rng)
    miss = rng.random(n) < miss_rate
    teacher[miss] = random_boxes(int(miss.sum()), rng)
    student = random_boxes(n, rng) if adversarial else jitter_boxes(teacher, teacher_noise, rng)
    return student, teacher, gt


def bound_suite(noise_rate: float = 0.2, n_samples: int = 100_000, n_configs: int = 10,
                box_samples: int = 100_000, epsilons=(0.1, 0.05, 0.01), n_pairs: int = 10_000,
                tau: float = 0.5, seed: int = 0, assume_lambda: float | None = None,
                cfg: IrplConfig = IrplConfig()) -> dict:
    """Run every check and return a JSON-ready report with an overall ``ok`` flag."""
    failures = []
    rng = np.random.default_rng(seed)

    lemma1 = []
    for i, T in enumerate(lemma1_configs(n_configs, noise_rate, seed)):
        task = BlobTask(num_classes=T.num_classes)
        clf = random_linear_classifier(T.num_classes, rng)
        rep = verify_lemma1(clf, task.sample, T, n_samples, seed=seed + i,
                            assume_lambda=assume_lambda)
        lemma1.append({"T": T.T.tolist(), **rep.to_dict()})
        if not (rep.holds and rep.per_sample_ok):
            failures.append(f"lemma1 config {i}")

    lemma2 = []
    cases = {"perfect_teacher": dict(teacher_noise=0.0, miss_rate=0.0),
             "noisy_teacher": dict(teacher_noise=0.03, miss_rate=0.2),
             "adversarial_student": dict(teacher_noise=0.05, miss_rate=0.3, adversarial=True)}
    reports2 = {}
    for name, kw in cases.items():
        f, bh, b = box_triples(box_samples, rng, **kw)
        rep, stats = verify_lemma2(f, bh, b, tau)
        reports2[name] = rep
        lemma2.append({"case": name, **rep.to_dict(), "eta_reg": stats.eta_reg, "zeta": stats.zeta})
        if not (rep.holds and rep.per_sample_ok):
            failures.append(f"lemma2 {name}")

    theorem1 = []
    for name, rep2 in reports2.items():
        # the noiseless channel goes with the perfect teacher so every noise term vanishes
        cls_rep = lemma1[0] if name == "perfect_teacher" else lemma1[1]
        rep = verify_theorem1(_lemma1_for_theorem(cls_rep), rep2)
        theorem1.append({"case": name, **rep.to_dict()})
        if not rep.holds:
            failures.append(f"theorem1 {name}")

    T2 = TransitionMatrix.symmetric(2, noise_rate)
    t2 = empirical_theorem2_check(T2, epsilons=epsilons, cfg=cfg, n_pairs=n_pairs, seed=seed)
    deltas = [t.delta for t in sorted(t2.terms, key=lambda t: -t.epsilon)]
    monotone = all(a >= b for a, b in zip(deltas, deltas[1:]))
    if not monotone:
        failures.append("theorem2 delta not monotone in epsilon")
    if T2.lam < 1 and not t2.additive_below_multiplicative:
        failures.append("theorem2 additive bound not below multiplicative bound")

    return {"lemma1": lemma1, "lemma2": lemma2, "theorem1": theorem1,
            "theorem2": {**t2.to_dict(), "delta_monotone": monotone},
            "failures": failures, "ok": not failures}


def _lemma1_for_theorem(d: dict) -> BoundReport:
    return BoundReport(lhs=d["lhs"], rhs=d["rhs"], standard_error=d["standard_error"],
                       samples=d["samples"], per_sample_violations=d["per_sample_violations"])
