"""Run orchestration shared by the command line and the acceptance suite."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adaptation as ad
from . import detector as dt
from .config import ExperimentConfig, SweepSpec
from .scenes import Scene, generate_split, load_split, quantize, write_dataset

PRESET_ORDER = ("baseline", "spar", "irpl", "full", "mask_only")


@dataclass
class Splits:
    source_train: list[Scene]
    source_val: list[Scene]
    target_train: list[Scene]
    target_val: list[Scene]


def generate_splits(cfg: ExperimentConfig) -> Splits:
    """All four splits in memory, exactly as they read back from disk."""
    def make(domain, split, n):
        spec = cfg.source_spec() if domain == "source" else cfg.target_spec()
        shift = None if domain == "source" else cfg.shift()
        return [quantize(s) for s in generate_split(cfg.data_seed, domain, split, n, spec, shift)]

    return Splits(make("source", "train", cfg.n_source_train), make("source", "val", cfg.n_source_val),
                  make("target", "train", cfg.n_target_train), make("target", "val", cfg.n_target_val))


def write_data(cfg: ExperimentConfig, root) -> Path:
    return write_dataset(root, cfg.data_seed, cfg.counts(), cfg.source_spec(),
                         cfg.target_spec(), cfg.shift())


def load_data(root, domain: str, split: str) -> list[Scene]:
    return load_split(Path(root) / domain / split)


class JsonlWriter:
    """Metrics sink writing one JSON object per line."""

    def __init__(self, path):
        self.fh = open(path, "w")

    def __call__(self, record: dict) -> None:
        self.fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self) -> None:
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def pretrain(cfg: ExperimentConfig, source_train: list[Scene], seed: int | None = None,
             metrics=None) -> dt.DetectorParams:
    return ad.pretrain_source(cfg.train_config(seed), source_train, metrics=metrics)


def adapt(cfg: ExperimentConfig, source: dt.DetectorParams, target_train: list[Scene],
          seed: int | None = None, switches: ad.AblationSwitches | None = None, metrics=None):
    return ad.adapt(source, cfg.train_config(seed), switches or cfg.switches(), target_train,
                    cfg.irpl_config(), cfg.spar_config(), metrics=metrics)


def evaluate(cfg: ExperimentConfig, params: dt.DetectorParams, scenes: list[Scene]) -> ad.MapResult:
    return ad.evaluate_map(params, scenes, 0.5, cfg.eval_score_threshold)


def eval_csv(result: ad.MapResult) -> str:
    lines = ["class,ap"]
    lines += [f"{c},{result.ap[c]!r}" for c in sorted(result.ap)]
    lines.append(f"mAP,{result.mAP!r}")
    return "\n".join(lines) + "\n"


def _adapt_job(args):
    cfg, source, target_train, target_val, seed, switches = args
    _, teacher = adapt(cfg, source, target_train, seed, switches)
    return evaluate(cfg, teacher, target_val).mAP


def worker_count() -> int:
    raw = os.environ.get("FALCON_LAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"FALCON_LAB_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _run_jobs(jobs: list, workers: int) -> list[float]:
    if workers <= 1 or len(jobs) <= 1:
        return [_adapt_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_adapt_job, jobs))


def ablation_study(cfg: ExperimentConfig, source: dt.DetectorParams, splits: Splits,
                   seeds=None, presets=PRESET_ORDER, workers: int | None = None) -> dict:
    """Teacher mAP on target val for every preset and adaptation seed.

    Returns ``{"source": mAP, preset: {seed: mAP}}``; all runs start from the
    same source model.
    """
    seeds = tuple(cfg.seeds if seeds is None else seeds)
    jobs = [(cfg, source, splits.target_train, splits.target_val, s, ad.PRESETS[p])
            for p in presets for s in seeds]
    maps = _run_jobs(jobs, worker_count() if workers is None else workers)
    out: dict = {"source": evaluate(cfg, source, splits.target_val).mAP}
    it = iter(maps)
    for p in presets:
        out[p] = {s: next(it) for s in seeds}
    return out


def sweep(cfg: ExperimentConfig, spec: SweepSpec, source: dt.DetectorParams,
          target_train: list[Scene], target_val: list[Scene],
          workers: int | None = None) -> tuple[list[dict], list[dict]]:
    """Adapt and evaluate at every grid point and seed.

    Returns per-run rows sorted by (parameters, seed) and per-point
    aggregates with mean and standard deviation over seeds.
    """
    points = spec.points()
    jobs = []
    for point in points:
        pcfg = cfg.replace(**point)
        for s in spec.seeds:
            jobs.append((pcfg, source, target_train, target_val, s, None))
    maps = _run_jobs(jobs, worker_count() if workers is None else workers)
    rows, it = [], iter(maps)
    for point in points:
        for s in spec.seeds:
            rows.append({**point, "seed": s, "mAP": next(it)})
    rows.sort(key=lambda r: (tuple(r[n] for n in spec.names), r["seed"]))
    summary = []
    for point in sorted(points, key=lambda p: tuple(p[n] for n in spec.names)):
        vals = np.array([r["mAP"] for r in rows if all(r[n] == point[n] for n in spec.names)])
        summary.append({**point, "mean": float(vals.mean()),
                        "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
                        "n": len(vals)})
    return rows, summary


def rows_csv(rows: list[dict], columns: list[str]) -> str:
    def fmt(v):
        return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
    lines = [",".join(columns)]
    lines += [",".join(fmt(r[c]) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"
