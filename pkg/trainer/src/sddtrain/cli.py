"""Trainer command line: train one stage or build the full artifact set."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import artifacts, sddw
from .train import TrainPlan, export_bundle, save_history, train_stage


def cmd_train(args) -> int:
    plan = TrainPlan(seed=args.seed)
    if args.epochs is not None:
        plan.epochs[args.stage] = args.epochs
    predecessors = {}
    for stage, path in (("dn", args.frozen_dn), ("dr", args.frozen_dr)):
        if path:
            tensors, _ = sddw.read_file(path)
            predecessors[stage] = tensors
    spec_for = artifacts.toy_spec
    tensors, history = train_stage(args.stage, args.manifest, plan, spec_for,
                                   predecessor_bundles=predecessors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle_path = out / f"{args.stage}.sddw"
    export_bundle(bundle_path, tensors, spec_for(args.stage).fingerprint())
    save_history(out / f"{args.stage}_loss.tsv", history)
    print(f"{bundle_path}")
    print(f"final train loss: {history[-1]['train']:.4e}  val: {history[-1]['val']:.4e}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sddtrain")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one stage on a dataset manifest")
    p.add_argument("--stage", choices=["dn", "dr", "sr"], required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frozen-dn", help="exported dn bundle (needed for dr/sr)")
    p.add_argument("--frozen-dr", help="exported dr bundle (needed for sr)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("artifacts", help="build the full toy artifact set")
    p.add_argument("--out", default=str(artifacts.DEFAULT_ROOT))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=lambda a: artifacts.main(
        ["--out", a.out, "--seed", str(a.seed)] + (["--quick"] if a.quick else [])))

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
