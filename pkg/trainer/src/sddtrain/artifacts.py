"""End-to-end toy artifact producer.

Fabricates synthetic clean/noise source material, synthesizes training
and held-out datasets through the engine CLI (`sdd synth`), trains the
three stages in order, and exports `.sddw` bundles plus the held-out
manifest under ``<trainer>/artifacts/toy`` — the layout the engine's
acceptance suite looks for.

Run as ``python -m sddtrain.artifacts`` (add ``--quick`` for a smoke
pass with fewer epochs).
"""

from __future__ import annotations

import argparse
import os
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import features
from .model import NetSpec
from .train import TrainPlan, export_bundle, save_history, train_stage

DEFAULT_ROOT = Path(__file__).resolve().parents[2] / "artifacts" / "toy"


def toy_spec(stage: str) -> NetSpec:
    return NetSpec(stage=stage)


def make_material(root: Path, seconds: float = 2.0, seed: int = 123) -> tuple[Path, Path]:
    """Synthetic voiced clean utterances and stationary-ish noise beds."""
    rng = np.random.default_rng(seed)
    clean_dir = root / "clean"
    noise_dir = root / "noise"
    clean_dir.mkdir(parents=True, exist_ok=True)
    noise_dir.mkdir(parents=True, exist_ok=True)
    n = int(seconds * features.SAMPLE_RATE)
    t = np.arange(n) / features.SAMPLE_RATE
    for i in range(8):
        f0 = rng.uniform(100.0, 220.0)
        voiced = sum(np.sin(2 * np.pi * f0 * m * t + rng.uniform(0, 6.28)) / m
                     for m in range(1, 16))
        voiced /= np.abs(voiced).max()
        env = np.zeros(n)
        pos = 0.1
        while pos < seconds - 0.35:
            burst = rng.uniform(0.25, 0.45)
            s = int(pos * features.SAMPLE_RATE)
            e = min(s + int(burst * features.SAMPLE_RATE), n)
            env[s:e] = np.hanning(e - s)
            pos += burst + rng.uniform(0.1, 0.3)
        sig = 0.5 * voiced * env
        features.write_wav(clean_dir / f"clean_{i}.wav", sig)
    for i in range(4):
        white = rng.normal(0.0, 1.0, size=n)
        if i % 2 == 1:
            # crude low-pass for a colored variant
            kernel = np.ones(8) / 8.0
            white = np.convolve(white, kernel, mode="same")
        white *= 0.1 / np.abs(white).max()
        features.write_wav(noise_dir / f"noise_{i}.wav", white)
    return clean_dir, noise_dir


def run_sdd(*args: str) -> str:
    proc = subprocess.run([sys.executable, "-m", "sdd.cli", *args],
                          capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"sdd {' '.join(args)} failed:\n{proc.stderr}")
    return proc.stdout.strip()


def build(root: Path = DEFAULT_ROOT, seed: int = 0, train_pairs: int = 10,
          heldout_pairs: int = 20, quick: bool = False) -> Path:
    root = Path(root)
    if root.exists():
        shutil.rmtree(root)
    scratch = root / "scratch"
    scratch.mkdir(parents=True)
    clean_dir, noise_dir = make_material(scratch / "material", seed=seed + 123)

    train_manifest = run_sdd(
        "synth", "--clean", str(clean_dir), "--noise", str(noise_dir),
        "--out", str(scratch / "train"), "--count", str(train_pairs),
        "--seed", str(seed + 1), "--snr=-5:15", "--t60", "0.15:0.3",
        "--dims-min", "3,3,2.4", "--dims-max", "6,5,3.0",
    )
    heldout_manifest = run_sdd(
        "synth", "--clean", str(clean_dir), "--noise", str(noise_dir),
        "--out", str(root / "heldout"), "--count", str(heldout_pairs),
        "--seed", str(seed + 2), "--snr=0:9", "--t60", "0.15:0.3",
        "--dims-min", "3,3,2.4", "--dims-max", "6,5,3.0",
    )

    plan = TrainPlan(seed=seed)
    if quick:
        plan.epochs = {"dn": 6, "dr": 4, "sr": 4}
    bundles: dict[str, dict] = {}
    for stage in ("dn", "dr", "sr"):
        tensors, history = train_stage(stage, train_manifest, plan, toy_spec,
                                       predecessor_bundles=bundles)
        bundles[stage] = tensors
        export_bundle(root / f"{stage}.sddw", tensors, toy_spec(stage).fingerprint())
        save_history(root / f"{stage}_loss.tsv", history)
        print(f"stage {stage}: train loss {history[0]['train']:.3e} -> "
              f"{history[-1]['train']:.3e} over {len(history)} epochs")

    shutil.rmtree(scratch)
    print(f"artifacts at {root}")
    print(f"held-out manifest: {heldout_manifest}")
    return root


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="produce toy-trained weight bundles")
    parser.add_argument("--out", default=str(DEFAULT_ROOT))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--train-pairs", type=int, default=10)
    parser.add_argument("--heldout-pairs", type=int, default=20)
    parser.add_argument("--quick", action="store_true",
                        help="few epochs; for smoke testing only")
    args = parser.parse_args(argv)
    build(Path(args.out), seed=args.seed, train_pairs=args.train_pairs,
          heldout_pairs=args.heldout_pairs, quick=args.quick)
    return 0


if __name__ == "__main__":
    sys.exit(main())
