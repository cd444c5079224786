"""Flat ``key = value`` experiment configuration.

Every key has a default, so an empty file is a valid config.  Lines starting
with ``#`` (and anything after a ``#`` on a line) are comments.  Floats are
written with ``repr`` so a write/read cycle is lossless.
"""

from __future__ import annotations

import dataclasses
import itertools
import typing
from dataclasses import dataclass
from pathlib import Path

from .adaptation import AblationSwitches, TrainConfig
from .losses import IrplConfig, SparConfig
from .scenes import TARGET_CLASS_PROBS, DomainShift, SceneSpec


@dataclass(frozen=True)
class ExperimentConfig:
    # paths and seeds
    data_dir: str = "data"
    out_dir: str = "runs"
    data_seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2)
    n_source_train: int = 200
    n_source_val: int = 50
    n_target_train: int = 200
    n_target_val: int = 50

    # training
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

    # SPAR
    lambda1: float = 1.0
    lambda2: float = 2.0
    spar_epsilon: float = 1e-7

    # IRPL
    m: float = 1e4
    alpha: float = 0.1
    beta: float = 2.0
    gamma: float = 0.01
    w_fg: float = 2.0
    w_bg: float = 1.0

    # ablation switches
    use_spar: bool = True
    use_irpl: bool = True
    use_peak_adjust: bool = True
    use_fgbg_weighting: bool = True
    use_kl: bool = True
    mask_filter_only: bool = False

    # scenes
    min_objects: int = 1
    max_objects: int = 5
    min_size: int = 8
    max_size: int = 24
    min_intensity: float = 0.6
    max_intensity: float = 1.0
    background: float = 0.1
    max_iou: float = 0.3
    source_class_probs: tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    target_class_probs: tuple[float, ...] = TARGET_CLASS_PROBS

    # domain shift
    fog_alpha: float = 0.5
    clutter_count: int = 8
    clutter_intensity: tuple[float, ...] = (0.2, 0.4)
    clutter_size: tuple[int, ...] = (3, 8)
    brightness_offset: float = -0.05

    # bound verification
    noise_rate: float = 0.2
    bounds_samples: int = 100_000
    bounds_configs: int = 10
    box_samples: int = 100_000
    theorem2_pairs: int = 10_000
    epsilons: tuple[float, ...] = (0.1, 0.05, 0.01)

    def __post_init__(self):
        # building the component configs runs all of their validation
        self.train_config()
        self.spar_config()
        self.irpl_config()
        self.switches()
        self.source_spec()
        self.target_spec()
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if not 0.0 <= self.noisy_prior <= 1.0:
            raise ValueError("noisy_prior must lie in [0, 1]")

    def train_config(self, seed: int | None = None) -> TrainConfig:
        kw = {f.name: getattr(self, f.name) for f in dataclasses.fields(TrainConfig)}
        if seed is not None:
            kw["seed"] = seed
        return TrainConfig(**kw)

    def spar_config(self) -> SparConfig:
        return SparConfig(self.lambda1, self.lambda2, self.spar_epsilon)

    def irpl_config(self) -> IrplConfig:
        return IrplConfig(self.m, self.alpha, self.beta, self.gamma, self.w_fg, self.w_bg)

    def switches(self) -> AblationSwitches:
        return AblationSwitches(**{f.name: getattr(self, f.name)
                                   for f in dataclasses.fields(AblationSwitches)})

    def _spec(self, probs) -> SceneSpec:
        return SceneSpec(min_objects=self.min_objects, max_objects=self.max_objects,
                         min_size=self.min_size, max_size=self.max_size,
                         min_intensity=self.min_intensity, max_intensity=self.max_intensity,
                         background=self.background, class_probs=tuple(probs),
                         max_iou=self.max_iou)

    def source_spec(self) -> SceneSpec:
        return self._spec(self.source_class_probs)

    def target_spec(self) -> SceneSpec:
        return self._spec(self.target_class_probs)

    def shift(self) -> DomainShift:
        return DomainShift(self.fog_alpha, self.clutter_count, tuple(self.clutter_intensity),
                           tuple(self.clutter_size), self.brightness_offset)

    def counts(self) -> dict:
        return {("source", "train"): self.n_source_train, ("source", "val"): self.n_source_val,
                ("target", "train"): self.n_target_train, ("target", "val"): self.n_target_val}

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_HINTS = typing.get_type_hints(ExperimentConfig)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse_scalar(text: str, tp):
    if tp is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if tp is int:
        return int(text.replace("_", ""))
    if tp is float:
        return float(text)
    return text


def parse_value(key: str, text: str):
    if key not in _HINTS:
        raise KeyError(f"unknown config key: {key}")
    tp = _HINTS[key]
    if typing.get_origin(tp) is tuple:
        elem = typing.get_args(tp)[0]
        parts = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(_parse_scalar(p, elem) for p in parts)
    return _parse_scalar(text.strip(), tp)


def dumps(cfg: ExperimentConfig) -> str:
    lines = ["# experiment configuration"]
    for f in dataclasses.fields(cfg):
        lines.append(f"{f.name} = {_format(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = parse_value(key, val)
        except (KeyError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return dataclasses.replace(base or ExperimentConfig(), **values)


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text())


def save(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps(cfg))


SWEEPABLE = ("lambda1", "lambda2", "m")


@dataclass(frozen=True)
class SweepSpec:
    """A grid over one or more of ``lambda1``, ``lambda2`` and ``m``.

    With several parameters the grid is their Cartesian product, in the order
    the parameters are given.
    """

    params: tuple[tuple[str, tuple[float, ...]], ...]
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        if not self.params:
            raise ValueError("sweep needs at least one parameter")
        for name, values in self.params:
            if name not in SWEEPABLE:
                raise ValueError(f"cannot sweep {name!r}; choose from {', '.join(SWEEPABLE)}")
            if not values:
                raise ValueError(f"empty grid for {name}")
            for v in values:
                if name == "m" and not v > 0:
                    raise ValueError("non-positive margin")
                if name != "m" and v < 0:
                    raise ValueError(f"{name} must be non-negative")
        if not self.seeds:
            raise ValueError("sweep needs at least one seed")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.params)

    def points(self) -> list[dict]:
        return [dict(zip(self.names, combo))
                for combo in itertools.product(*(v for _, v in self.params))]

    @classmethod
    def parse(cls, items: list[str], seeds) -> "SweepSpec":
        """Build from ``["lambda1=0,1,2", "lambda2=0,1,2"]`` style arguments."""
        params = []
        for item in items:
            if "=" not in item:
                raise ValueError(f"expected name=v1,v2,...: {item!r}")
            name, vals = item.split("=", 1)
            params.append((name.strip(), tuple(float(v) for v in vals.split(",") if v.strip())))
        return cls(tuple(params), tuple(seeds))
