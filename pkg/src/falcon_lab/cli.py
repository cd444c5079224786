"""Command-line entry point: ``falcon-lab <command> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bounds
from . import config as cfgmod
from . import detector as dt
from . import pipeline as pl

PROG = "falcon-lab"


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # one line on stderr, matching every other failure path
        raise CliError(message)


def _add_common(p: argparse.ArgumentParser, out_help: str) -> None:
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--seed", type=int, help="training seed (gen-data: data seed)")
    p.add_argument("--out", type=Path, help=out_help)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")


def _add_ablation(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("ablation switches")
    g.add_argument("--preset", choices=sorted(pl.PRESET_ORDER), help="named switch set")
    g.add_argument("--no-spar", action="store_true")
    g.add_argument("--no-irpl", action="store_true", help="plain cross entropy")
    g.add_argument("--mask-filter-only", action="store_true",
                   help="filter pseudo labels with the prior mask; implies --no-spar")
    g.add_argument("--no-peak-adjust", action="store_true")
    g.add_argument("--no-fgbg", action="store_true")
    g.add_argument("--no-kl", action="store_true")
    g.add_argument("--noisy-prior", type=float, metavar="P",
                   help="flip prior mask pixels with probability P")
    g.add_argument("--ema-per-epoch", action="store_true",
                   help="update the teacher once per pass over the data")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Source-free detector adaptation lab.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write source and target scene splits")
    _add_common(p, "dataset root (default: data_dir)")

    p = sub.add_parser("pretrain", help="supervised training on the source split")
    _add_common(p, "output directory (default: out_dir)")
    p.add_argument("--data", type=Path, help="dataset root (default: data_dir)")

    p = sub.add_parser("adapt", help="mean-teacher adaptation on the target split")
    _add_common(p, "output directory (default: out_dir)")
    p.add_argument("--data", type=Path)
    p.add_argument("--checkpoint", type=Path, help="source checkpoint (default: OUT/source.ckpt)")
    _add_ablation(p)

    p = sub.add_parser("eval", help="per-class AP and mAP of a checkpoint")
    _add_common(p, "output directory (default: out_dir)")
    p.add_argument("--data", type=Path)
    p.add_argument("--checkpoint", type=Path, help="checkpoint (default: OUT/teacher.ckpt)")
    p.add_argument("--domain", choices=("source", "target"), default="target")
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--name", default="eval", help="output file stem")

    p = sub.add_parser("verify-bounds", help="numerical checks of the risk bounds")
    _add_common(p, "output directory (default: out_dir)")
    p.add_argument("--assume-lambda", type=float,
                   help="use this lambda instead of the true one (failure-path testing)")

    p = sub.add_parser("sweep", help="adapt + eval over a hyperparameter grid")
    _add_common(p, "output directory (default: out_dir)")
    p.add_argument("--data", type=Path)
    p.add_argument("--checkpoint", type=Path, help="source checkpoint (default: OUT/source.ckpt)")
    p.add_argument("--param", action="append", required=True, metavar="NAME=V1,V2,...",
                   help="grid for lambda1, lambda2 or m; repeat for a product grid")
    p.add_argument("--seeds", help="comma-separated seeds (default: config seeds)")
    _add_ablation(p)
    return parser


def _load_config(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
    changes = {}
    for item in args.set:
        if "=" not in item:
            raise CliError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = (s.strip() for s in item.split("=", 1))
        try:
            changes[key] = cfgmod.parse_value(key, val)
        except KeyError as exc:
            raise CliError(exc.args[0]) from None
    if args.seed is not None:
        changes["data_seed" if args.command == "gen-data" else "seed"] = args.seed
    if getattr(args, "preset", None):
        sw = pl.ad.PRESETS[args.preset]
        changes.update({k: getattr(sw, k) for k in
                        ("use_spar", "use_irpl", "use_peak_adjust", "use_fgbg_weighting",
                         "use_kl", "mask_filter_only")})
    flags = {"no_spar": ("use_spar", False), "no_irpl": ("use_irpl", False),
             "no_peak_adjust": ("use_peak_adjust", False),
             "no_fgbg": ("use_fgbg_weighting", False), "no_kl": ("use_kl", False),
             "mask_filter_only": ("mask_filter_only", True),
             "ema_per_epoch": ("ema_per_epoch", True)}
    for flag, (key, value) in flags.items():
        if getattr(args, flag, False):
            changes[key] = value
    if changes.get("mask_filter_only"):
        changes["use_spar"] = False
    if getattr(args, "noisy_prior", None) is not None:
        changes["noisy_prior"] = args.noisy_prior
    return cfg.replace(**changes)


def _out_dir(args, cfg) -> Path:
    out = Path(args.out) if args.out else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_dir(args, cfg) -> Path:
    return Path(args.data) if getattr(args, "data", None) else Path(cfg.data_dir)


def _read_checkpoint(path: Path) -> dt.DetectorParams:
    if not path.is_file():
        raise CliError(f"checkpoint not found: {path}")
    return dt.load_checkpoint(path)


def cmd_gen_data(args, cfg) -> int:
    root = Path(args.out) if args.out else Path(cfg.data_dir)
    pl.write_data(cfg, root)
    cfgmod.save(cfg, root / "config.txt")
    n = sum(cfg.counts().values())
    print(f"wrote {n} scenes to {root}")
    return 0


def cmd_pretrain(args, cfg) -> int:
    out = _out_dir(args, cfg)
    data = pl.load_data(_data_dir(args, cfg), "source", "train")
    records = []

    def sink(rec):
        records.append(rec)
        writer(rec)

    with pl.JsonlWriter(out / "pretrain_metrics.jsonl") as writer:
        params = pl.pretrain(cfg, data, metrics=sink)
    dt.save_checkpoint(out / "source.ckpt", params, {"seed": cfg.seed})
    cfgmod.save(cfg, out / "pretrain_config.txt")
    if not args.no_plots:
        from . import plotting
        plotting.loss_curves(records, ["loss_total", "loss_cls", "loss_reg"],
                             out / "pretrain_loss.png", "source pretraining")
    print(f"saved {out / 'source.ckpt'}")
    return 0


def cmd_adapt(args, cfg) -> int:
    out = _out_dir(args, cfg)
    source = _read_checkpoint(Path(args.checkpoint) if args.checkpoint else out / "source.ckpt")
    data = pl.load_data(_data_dir(args, cfg), "target", "train")
    records = []

    def sink(rec):
        records.append(rec)
        writer(rec)

    with pl.JsonlWriter(out / "adapt_metrics.jsonl") as writer:
        student, teacher = pl.adapt(cfg, source, data, metrics=sink)
    dt.save_checkpoint(out / "student.ckpt", student, {"seed": cfg.seed})
    dt.save_checkpoint(out / "teacher.ckpt", teacher, {"seed": cfg.seed})
    cfgmod.save(cfg, out / "adapt_config.txt")
    if not args.no_plots:
        from . import plotting
        plotting.loss_curves(records, ["loss_total", "loss_irpl", "loss_spar", "loss_reg"],
                             out / "adapt_loss.png", "adaptation")
    print(f"saved {out / 'teacher.ckpt'}")
    return 0


def cmd_eval(args, cfg) -> int:
    out = _out_dir(args, cfg)
    params = _read_checkpoint(Path(args.checkpoint) if args.checkpoint else out / "teacher.ckpt")
    scenes = pl.load_data(_data_dir(args, cfg), args.domain, args.split)
    res = pl.evaluate(cfg, params, scenes)
    text = pl.eval_csv(res)
    (out / f"{args.name}.csv").write_text(text)
    print(f"{'class':>6}  {'AP':>7}")
    for c in sorted(res.ap):
        print(f"{c:>6}  {100 * res.ap[c]:7.2f}")
    print(f"{'mAP':>6}  {100 * res.mAP:7.2f}")
    return 0


def cmd_verify_bounds(args, cfg) -> int:
    out = _out_dir(args, cfg)
    report = bounds.bound_suite(noise_rate=cfg.noise_rate, n_samples=cfg.bounds_samples,
                                n_configs=cfg.bounds_configs, box_samples=cfg.box_samples,
                                epsilons=cfg.epsilons, n_pairs=cfg.theorem2_pairs,
                                seed=cfg.seed, assume_lambda=args.assume_lambda,
                                cfg=cfg.irpl_config())
    (out / "bounds.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if not args.no_plots:
        from . import plotting
        plotting.theorem2_terms(report["theorem2"], out / "theorem2.png")
    t2 = report["theorem2"]
    print(f"lemma1: {sum(r['holds'] and r['per_sample_ok'] for r in report['lemma1'])}"
          f"/{len(report['lemma1'])} configurations hold")
    print(f"lemma2: {sum(r['holds'] and r['per_sample_ok'] for r in report['lemma2'])}"
          f"/{len(report['lemma2'])} cases hold")
    print(f"theorem1: {sum(r['holds'] for r in report['theorem1'])}/{len(report['theorem1'])} hold")
    print(f"theorem2: additive {t2['additive_bound']:.4f} vs multiplicative "
          f"{t2['multiplicative_bound']:.4f}")
    if not report["ok"]:
        raise CliError("bound checks failed: " + "; ".join(report["failures"]))
    return 0


def cmd_sweep(args, cfg) -> int:
    out = _out_dir(args, cfg)
    seeds = (tuple(int(s) for s in args.seeds.split(",") if s.strip())
             if args.seeds else cfg.seeds)
    try:
        spec = cfgmod.SweepSpec.parse(args.param, seeds)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    source = _read_checkpoint(Path(args.checkpoint) if args.checkpoint else out / "source.ckpt")
    root = _data_dir(args, cfg)
    rows, summary = pl.sweep(cfg, spec, source, pl.load_data(root, "target", "train"),
                             pl.load_data(root, "target", "val"))
    names = list(spec.names)
    (out / "sweep.csv").write_text(pl.rows_csv(rows, names + ["seed", "mAP"]))
    (out / "sweep_summary.csv").write_text(pl.rows_csv(summary, names + ["mean", "std", "n"]))
    if not args.no_plots:
        from . import plotting
        plotting.sweep_heatmap(summary, spec.names, out / "sweep.png")
    for r in summary:
        point = " ".join(f"{n}={r[n]:g}" for n in names)
        print(f"{point}  mAP {100 * r['mean']:.2f} +- {100 * r['std']:.2f}")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "adapt": cmd_adapt,
            "eval": cmd_eval, "verify-bounds": cmd_verify_bounds, "sweep": cmd_sweep}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except (CliError, ValueError, OSError, FloatingPointError, AssertionError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"{PROG}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
