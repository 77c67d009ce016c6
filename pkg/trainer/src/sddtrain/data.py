"""Manifest loading and feature preparation for stagewise training."""

from __future__ import annotations

import json

import numpy as np
import torch

from . import features


def load_manifest(path) -> list[dict]:
    """JSONL manifest entries; relative WAV paths resolve beside the file."""
    import os

    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            for key in ("noisy", "target", "reverb"):
                if key in rec and not os.path.isabs(rec[key]):
                    rec[key] = os.path.join(base, rec[key])
            entries.append(rec)
    return entries


class PairSet:
    """Per-pair compressed-domain features for all three stage targets.

    noisy_mag / noisy_ri come from the noisy mixture; dn targets the
    reverberant-but-clean magnitude, dr the early-reflection magnitude,
    sr the early-reflection complex spectrum (real/imaginary planes).
    """

    def __init__(self, entries: list[dict]):
        if not entries:
            raise ValueError("empty manifest")
        mags, ris, dn_t, dr_t, sr_t = [], [], [], [], []
        for rec in entries:
            noisy = features.stft(features.read_wav(rec["noisy"]))
            reverb = features.stft(features.read_wav(rec["reverb"]))
            target = features.stft(features.read_wav(rec["target"]))
            noisy_c = features.compress_complex(noisy)
            target_c = features.compress_complex(target)
            mags.append(features.compress_mag(noisy))
            ris.append(np.stack([noisy_c.real, noisy_c.imag]))
            dn_t.append(features.compress_mag(reverb))
            dr_t.append(features.compress_mag(target))
            sr_t.append(np.stack([target_c.real, target_c.imag]))
        to = lambda arrs: torch.tensor(np.stack(arrs), dtype=torch.float32)
        self.noisy_mag = to(mags)          # (N, L, F)
        self.noisy_ri = to(ris)            # (N, 2, L, F)
        self.target_dn = to(dn_t)          # (N, L, F)
        self.target_dr = to(dr_t)          # (N, L, F)
        self.target_sr = to(sr_t)          # (N, 2, L, F)

    def __len__(self) -> int:
        return self.noisy_mag.shape[0]
