"""Command-line interface.

Subcommands:

    gen-data     generate the configured synthetic dataset into a container
    train        train the target model (or one shadow) and save a checkpoint
    permute      apply a random permutation to a hidden layer of a checkpoint
    realign      re-align a shadow checkpoint to a target checkpoint
    metrics      misalignment report between two checkpoints
    cause-study  change-one-factor-at-a-time misalignment table
    attack       run a membership-inference scenario end to end
    report       render figures and activation-map images for a run directory

Common flags: --config, --seed (overrides the config seed), --out, --jobs.
Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint, save_dataset
from .config import ExperimentConfig, load_config
from .errors import ConfigError, ShadowAlignError
from .metrics import misalignment_report
from .realign import realign
from .report import (
    emit_cause_study,
    emit_scenario_report,
    render_misalignment_figure,
    write_activation_maps,
)
from .rng import TAG_METRICS, derive_seed, stream
from .scenarios import (
    build_template,
    load_experiment_dataset,
    prepare_run,
    run_cause_study,
    run_scenario,
    shadow_seeds,
    target_seeds,
)
from .symmetry import SymmetryOpLog, random_permutation, permute_layer
from .training import train


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="experiment config file (key = value lines)")
    parser.add_argument("--seed", type=int, help="override the config master seed")
    parser.add_argument("--out", required=True, help="output file or directory")
    parser.add_argument("--jobs", type=int, default=1, help="parallel training jobs")


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    dataset = load_experiment_dataset(cfg)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} records to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    ctx = prepare_run(cfg)
    if args.role == "target":
        seeds = target_seeds(cfg, args.index)
        train_idx = ctx.splits.target_train
        val = ctx.val_target()
    else:
        seeds = shadow_seeds(cfg, args.index)
        train_idx = ctx.splits.shadow_train[args.index]
        val = ctx.val_shadow()
    model, log = train(ctx.template, ctx.dataset.subset(train_idx), val, seeds, cfg.train_config())
    save_checkpoint(model, seeds, args.out, train_log_csv=log.to_csv())
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            fh.write(log.to_csv())
    final = log.epochs[-1]
    print(
        f"trained {args.role} {args.index}: {final.epoch} epochs, "
        f"train acc {final.train_acc:.3f}, val acc {final.val_acc:.3f} -> {args.out}"
    )
    return 0


def cmd_permute(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    rng = stream(args.seed if args.seed is not None else 0)
    log = SymmetryOpLog()
    layers = [args.layer] if args.layer is not None else list(range(model.n_param_layers - 1))
    out = model
    for layer in layers:
        _, lyr = out.param_layer(layer)
        perm = random_permutation(lyr.out_size, rng)
        out = permute_layer(out, layer, perm, log=log)
    save_checkpoint(out, None, args.out, extra_meta=meta)
    if args.oplog:
        with open(args.oplog, "w", encoding="utf-8") as fh:
            fh.write(log.to_text())
    print(f"permuted layers {layers} -> {args.out}")
    return 0


def cmd_realign(args) -> int:
    cfg = _load_cfg(args)
    shadow, _ = load_checkpoint(args.checkpoint)
    target, _ = load_checkpoint(args.target)
    probe_x = None
    if cfg.realign_method in ("activation", "correlation") or args.method in (
        "activation",
        "correlation",
    ):
        ctx = prepare_run(cfg)
        probe_x = ctx.probe_x
    method = args.method or cfg.realign_method
    direction = args.direction or cfg.realign_direction
    aligned, plan = realign(shadow, target, method, direction, probe_x=probe_x)
    save_checkpoint(aligned, None, args.out)
    if args.plan:
        with open(args.plan, "w", encoding="utf-8") as fh:
            fh.write(plan.to_op_log().to_text())
    print(f"re-aligned with {method}/{direction} -> {args.out}")
    return 0


def cmd_metrics(args) -> int:
    cfg = _load_cfg(args)
    shadow, _ = load_checkpoint(args.checkpoint)
    target, _ = load_checkpoint(args.target)
    ctx = prepare_run(cfg)
    rng = stream(derive_seed(cfg.seed, TAG_METRICS))
    report = misalignment_report(
        target,
        shadow,
        ctx.probe_x,
        rng,
        pixels=cfg.cba_p,
        model_id=args.checkpoint,
        target_id=args.target,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    if args.figure:
        render_misalignment_figure(report, args.figure)
    print(f"misalignment report -> {args.out}")
    return 0


def cmd_cause_study(args) -> int:
    cfg = _load_cfg(args)
    result = run_cause_study(cfg, jobs=args.jobs)
    emit_cause_study(result, args.out)
    print(f"cause study -> {args.out}/cause_study.csv")
    return 0


def cmd_attack(args) -> int:
    cfg = _load_cfg(args)
    if args.scenario:
        cfg.scenario = args.scenario
        cfg.validate()
    report = run_scenario(cfg, jobs=args.jobs, cache_dir=args.cache)
    emit_scenario_report(report, args.out)
    print(
        f"{cfg.scenario}: mean AUC {report.mean_auc:.3f} "
        f"+- {report.ci95():.3f} over {len(report.repetitions)} repetitions -> {args.out}"
    )
    return 0


def cmd_report(args) -> int:
    cfg = _load_cfg(args)
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
        dataset = load_experiment_dataset(cfg)
        record = dataset.x[args.record]
        written = write_activation_maps(model, record, args.out)
        print(f"wrote {len(written)} activation maps to {args.out}")
        if not written:
            print("note: model has no convolutional layers, no maps produced")
    import os

    from .report import render_cause_study_figure, render_roc_figure
    from .scenarios import CauseStudyResult, CauseStudyRow

    cause_path = os.path.join(args.out, "cause_study.csv")
    if os.path.exists(cause_path):
        result = CauseStudyResult()
        with open(cause_path, "r", encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                cond, layer, mean, sd = line.strip().split(",")
                result.rows.append(CauseStudyRow(cond, int(layer), float(mean), float(sd)))
        render_cause_study_figure(result, os.path.join(args.out, "cause_study.png"))
        print("re-rendered cause_study.png")
    roc_files = sorted(
        f for f in os.listdir(args.out) if f.startswith("roc_rep") and f.endswith(".csv")
    ) if os.path.isdir(args.out) else []
    if roc_files:
        from .attack.evaluate import RocCurve

        curves = {}
        for name in roc_files:
            fpr, tpr, auc = [], [], 0.0
            with open(os.path.join(args.out, name), "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.startswith("# auc"):
                        auc = float(line.strip().split(",")[1])
                    elif not line.startswith(("fpr", "#")):
                        f, t = line.strip().split(",")
                        fpr.append(float(f))
                        tpr.append(float(t))
            curves[name[: -len(".csv")]] = RocCurve(
                np.asarray(fpr), np.asarray(tpr), auc, {}
            )
        render_roc_figure(curves, os.path.join(args.out, "roc.png"))
        print("re-rendered roc.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shadowalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the configured dataset")
    _common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a target or shadow model")
    _common(p)
    p.add_argument("--role", choices=["target", "shadow"], default="target")
    p.add_argument("--index", type=int, default=0, help="repetition or shadow index")
    p.add_argument("--log", help="write the training log CSV here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("permute", help="randomly permute hidden layers of a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer", type=int, help="single hidden layer index (default: all)")
    p.add_argument("--oplog", help="write the replayable op log here")
    p.set_defaults(func=cmd_permute)

    p = sub.add_parser("realign", help="re-align a shadow checkpoint to a target")
    _common(p)
    p.add_argument("--checkpoint", required=True, help="shadow checkpoint")
    p.add_argument("--target", required=True, help="target checkpoint")
    p.add_argument("--method", choices=["weight", "activation", "correlation"])
    p.add_argument("--direction", choices=["bottom_up", "top_down"])
    p.add_argument("--plan", help="write the permutation plan here")
    p.set_defaults(func=cmd_realign)

    p = sub.add_parser("metrics", help="misalignment metrics between two checkpoints")
    _common(p)
    p.add_argument("--checkpoint", required=True, help="shadow checkpoint")
    p.add_argument("--target", required=True, help="target checkpoint")
    p.add_argument("--figure", help="also render a per-layer figure to this path")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("cause-study", help="per-factor misalignment study")
    _common(p)
    p.set_defaults(func=cmd_cause_study)

    p = sub.add_parser("attack", help="run a membership-inference scenario")
    _common(p)
    p.add_argument("--scenario", choices=[f"S{i}" for i in range(1, 10)])
    p.add_argument("--cache", help="checkpoint cache directory for model reuse")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="render figures / activation maps for a run dir")
    _common(p)
    p.add_argument("--checkpoint", help="model whose activation maps to render")
    p.add_argument("--record", type=int, default=0, help="dataset record for the maps")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (ShadowAlignError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
