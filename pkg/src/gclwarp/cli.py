"""Command-line surface: generate-data, train, evaluate, try-on, ablate."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import Config, load_config
from .metrics import evaluate_split
from .pipeline import ablate, generate_data, train_stage1, train_stage2, tryon


def _load_cfg(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg.validate()


def _add_common(p, *, config=True, seed=True, out=False, dataset=False, checkpoint=False):
    if config:
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
    if seed:
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    if out:
        p.add_argument("--out", type=Path, required=True, help="output directory")
    if dataset:
        p.add_argument("--dataset", type=Path, required=True, help="dataset root")
    if checkpoint:
        p.add_argument("--checkpoint", type=Path, required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gclwarp",
        description="Global-correspondence garment warping and try-on (synthetic desk scale)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic dataset")
    _add_common(p, out=True)
    p.add_argument("--count-train", type=int, default=500)
    p.add_argument("--count-test", type=int, default=100)
    p.add_argument("--count-hard", type=int, default=100)

    p = sub.add_parser("train-stage1", help="train the warping network")
    _add_common(p, out=True, dataset=True)
    p.add_argument("--steps", type=int, default=None, help="override config step count")
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to resume from")

    p = sub.add_parser("train-stage2", help="train the try-on generator")
    _add_common(p, out=True, dataset=True, checkpoint=True)
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("tryon", help="run two-stage try-on inference")
    _add_common(p, config=False, seed=False, out=True, dataset=True, checkpoint=True)
    p.add_argument("--source", required=True, help="source sample as <split>/<id>")
    p.add_argument("--target", required=True, help="target sample as <split>/<id>")

    p = sub.add_parser("evaluate", help="score warped garments on a split")
    _add_common(p, config=False, seed=False, out=True, dataset=True, checkpoint=True)
    p.add_argument("--split", default="test", help="train, test or hardpose")

    p = sub.add_parser("ablate", help="train and score the four model variants")
    _add_common(p, out=True, dataset=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--full-checkpoint", type=Path, default=None,
                   help="reuse an existing full-model checkpoint")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "generate-data":
        cfg = _load_cfg(args)
        generate_data(cfg, args.out, args.count_train, args.count_test, args.count_hard)
    elif args.command == "train-stage1":
        cfg = _load_cfg(args)
        path = train_stage1(cfg, args.dataset, args.out, steps=args.steps, resume=args.resume)
        print(f"checkpoint: {path}")
    elif args.command == "train-stage2":
        cfg = _load_cfg(args)
        path = train_stage2(cfg, args.dataset, args.checkpoint, args.out, steps=args.steps)
        print(f"checkpoint: {path}")
    elif args.command == "tryon":
        tryon(args.checkpoint, args.dataset, args.source, args.target, args.out)
    elif args.command == "evaluate":
        report = evaluate_split(args.checkpoint, args.dataset, args.split, out_dir=args.out)
        agg = report.aggregate()
        print(f"{args.split}: {len(report.records)} samples  "
              + "  ".join(f"{k}={v:.4f}" for k, v in agg.items()))
        if report.errors:
            print(f"{len(report.errors)} samples failed", file=sys.stderr)
    elif args.command == "ablate":
        cfg = _load_cfg(args)
        rows = ablate(cfg, args.dataset, args.out, steps=args.steps,
                      full_checkpoint=args.full_checkpoint)
        print(f"{'variant':<18} {'corr':<6} {'reg':<6} mIoU(hardpose)")
        for r in rows:
            print(f"{r['variant']:<18} {str(r['global_correspondence']):<6} "
                  f"{str(r['flow_regularization']):<6} {r['miou_hardpose']:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
