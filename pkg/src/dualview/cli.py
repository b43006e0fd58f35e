"""Command-line entry points: train, eval, export-embeddings, ablation-grid."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from .config import TrainConfig, load_config
from .data import generate, split
from .metrics import csv_header, csv_row
from .train import evaluate, export_embeddings, load_state, run_experiment

ABLATION_VARIANTS = ("full", "no_cmcl", "no_dsam", "no_moe", "long", "trans")


def _apply_overrides(cfg: TrainConfig, args) -> TrainConfig:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "no_cmcl", False):
        changes["no_cmcl"] = True
    if getattr(args, "no_dsam", False):
        changes["no_dsam"] = True
    if getattr(args, "no_moe", False):
        changes["no_moe"] = True
    if getattr(args, "view", None):
        changes["single_view"] = args.view
    cfg = dataclasses.replace(cfg, **changes)
    cfg.validate()
    return cfg


def _load_or_default(path: str | None) -> TrainConfig:
    return load_config(path) if path else TrainConfig()


def variant_config(cfg: TrainConfig, variant: str) -> TrainConfig:
    """One row of the ablation grid, from a shared base config."""
    if variant == "full":
        return cfg
    if variant == "no_cmcl":
        return dataclasses.replace(cfg, no_cmcl=True)
    if variant == "no_dsam":
        return dataclasses.replace(cfg, no_dsam=True)
    if variant == "no_moe":
        return dataclasses.replace(cfg, no_moe=True)
    if variant in ("long", "trans"):
        return dataclasses.replace(cfg, single_view=variant)
    raise ValueError(f"unknown ablation variant {variant!r}")


def cmd_train(args) -> int:
    cfg = _apply_overrides(_load_or_default(args.config), args)
    out_dir = args.out or "runs/train"
    summary = run_experiment(cfg, out_dir)
    test = summary["test"]
    print(
        f"done: best epoch {summary['best_epoch']}, "
        f"test acc={test['acc']:.4f} m_f1={test['m_f1']:.4f} -> {out_dir}/metrics.csv"
    )
    return 0


def cmd_eval(args) -> int:
    state = load_state(args.checkpoint)
    cfg = state.cfg
    dataset = generate(cfg.effective_data_seed, cfg.data)
    parts = split(len(dataset), cfg.effective_data_seed, cfg.split_ratios)
    indices = {"train": parts.train, "val": parts.val, "test": parts.test}[args.split]
    report = evaluate(state, dataset, indices, args.split, state.epoch)
    print(csv_header(cfg.data.n_classes))
    print(csv_row(report))
    return 0


def cmd_export(args) -> int:
    state = load_state(args.checkpoint)
    cfg = state.cfg
    dataset = generate(cfg.effective_data_seed, cfg.data)
    parts = split(len(dataset), cfg.effective_data_seed, cfg.split_ratios)
    export_embeddings(state, dataset, sorted(parts.train), args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_grid(args) -> int:
    base = _apply_overrides(_load_or_default(args.config), args)
    out_dir = args.out or "runs/grid"
    os.makedirs(out_dir, exist_ok=True)
    results = {}
    for variant in ABLATION_VARIANTS:
        cfg = variant_config(base, variant)
        summary = run_experiment(cfg, os.path.join(out_dir, variant))
        results[variant] = summary["test"]
        print(f"{variant:>8}: acc={summary['test']['acc']:.4f} m_f1={summary['test']['m_f1']:.4f}")
    with open(os.path.join(out_dir, "grid.json"), "w") as f:
        json.dump(results, f, indent=2)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dualview", description="Two-view classifier training harness")
    sub = ap.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train one model")
    tr.add_argument("--config", help="JSON config file (defaults to the desk-scale profile)")
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--no-cmcl", action="store_true", help="drop the center-contrast loss term")
    tr.add_argument("--no-dsam", action="store_true", help="bypass the attention cascade (late fusion)")
    tr.add_argument("--no-moe", action="store_true", help="single expert instead of the gated ensemble")
    tr.add_argument("--view", choices=("long", "trans"), help="single-view ablation")
    tr.add_argument("--out", help="output directory (default runs/train)")
    tr.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", choices=("train", "val", "test"), default="test")
    ev.set_defaults(fn=cmd_eval)

    ex = sub.add_parser("export-embeddings", help="dump train-split embeddings to CSV")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--out", required=True)
    ex.set_defaults(fn=cmd_export)

    gr = sub.add_parser("ablation-grid", help="run the six-variant ablation grid")
    gr.add_argument("--config", help="base JSON config")
    gr.add_argument("--seed", type=int, default=None)
    gr.add_argument("--out", help="output directory (default runs/grid)")
    gr.set_defaults(fn=cmd_grid)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
