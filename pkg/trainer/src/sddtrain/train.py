"""Stagewise training: dn, then dr with dn frozen, then sr with both frozen.

Each stage minimizes MSE in its own output domain (compressed magnitude
for dn/dr, compressed real+imaginary planes for sr) with Adam at 1e-3;
the learning rate halves after two consecutive epochs without
validation improvement and floors at 1e-6.  Frozen predecessors are
loaded from their exported bundles and never receive gradients; their
parameters are verified bit-identical before and after a stage run.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch

from . import sddw
from .data import PairSet
from .model import StageNet, mf_filter

STAGE_ORDER = ("dn", "dr", "sr")


@dataclass
class TrainPlan:
    epochs: dict[str, int] = field(default_factory=lambda: {"dn": 60, "dr": 40, "sr": 40})
    lr: float = 1e-3
    lr_floor: float = 1e-6
    lr_patience: int = 2
    batch_size: int = 4
    val_fraction: float = 0.2
    seed: int = 0


def params_digest(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().astype(np.float32).tobytes())
    return h.hexdigest()


class FrozenChain:
    """Predecessor stages run under no_grad to produce training inputs."""

    def __init__(self, spec_for, bundles: dict[str, dict[str, np.ndarray]]):
        self.nets: dict[str, StageNet] = {}
        for stage, tensors in bundles.items():
            net = StageNet(spec_for(stage))
            net.load_tensors(tensors)
            net.eval()
            for p in net.parameters():
                p.requires_grad_(False)
            self.nets[stage] = net

    @torch.no_grad()
    def dn_outputs(self, noisy_mag: torch.Tensor) -> torch.Tensor:
        taps = self.nets["dn"](noisy_mag.unsqueeze(1))[0]
        return mf_filter(taps, noisy_mag)

    @torch.no_grad()
    def dr_outputs(self, mag_dn: torch.Tensor, noisy_mag: torch.Tensor) -> torch.Tensor:
        x = torch.stack([mag_dn, noisy_mag], dim=1)
        taps = self.nets["dr"](x)[0]
        return mf_filter(taps, mag_dn)


def _stage_batch_loss(stage: str, net: StageNet, batch: dict) -> torch.Tensor:
    if stage == "dn":
        taps = net(batch["noisy_mag"].unsqueeze(1))[0]
        pred = mf_filter(taps, batch["noisy_mag"])
        return torch.mean((pred - batch["target_dn"]) ** 2)
    if stage == "dr":
        x = torch.stack([batch["mag_dn"], batch["noisy_mag"]], dim=1)
        taps = net(x)[0]
        pred = mf_filter(taps, batch["mag_dn"])
        return torch.mean((pred - batch["target_dr"]) ** 2)
    # sr: residual refinement on real/imaginary planes
    phase = batch["phase"]
    cplx_dn = batch["mag_dn"].unsqueeze(1) * phase
    cplx_dr = batch["mag_dr"].unsqueeze(1) * phase
    x = torch.cat([cplx_dn, cplx_dr, batch["noisy_ri"]], dim=1)
    out_re, out_im = net(x)
    pred = torch.cat([cplx_dr[:, 0:1] + out_re, cplx_dr[:, 1:2] + out_im], dim=1)
    return torch.mean((pred - batch["target_sr"]) ** 2)


def _prepare_tensors(stage: str, data: PairSet, frozen: FrozenChain | None) -> dict:
    tensors = {
        "noisy_mag": data.noisy_mag,
        "noisy_ri": data.noisy_ri,
        "target_dn": data.target_dn,
        "target_dr": data.target_dr,
        "target_sr": data.target_sr,
    }
    if stage in ("dr", "sr"):
        tensors["mag_dn"] = frozen.dn_outputs(data.noisy_mag)
    if stage == "sr":
        tensors["mag_dr"] = frozen.dr_outputs(tensors["mag_dn"], data.noisy_mag)
        # Noisy phase planes, shared by the dn/dr recoupling.
        ri = data.noisy_ri
        mag = torch.clamp(torch.sqrt(ri[:, 0] ** 2 + ri[:, 1] ** 2), min=1e-12)
        tensors["phase"] = ri / mag.unsqueeze(1)
    return tensors


def train_stage(
    stage: str,
    manifest_path,
    plan: TrainPlan,
    spec_for,
    predecessor_bundles: dict[str, dict[str, np.ndarray]] | None = None,
) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Train one stage; returns (exported tensors, per-epoch history)."""
    if stage not in STAGE_ORDER:
        raise ValueError(f"unknown stage '{stage}'")
    needed = STAGE_ORDER[: STAGE_ORDER.index(stage)]
    predecessor_bundles = predecessor_bundles or {}
    missing = [s for s in needed if s not in predecessor_bundles]
    if missing:
        raise ValueError(f"stage '{stage}' needs frozen predecessors {missing}")

    from .data import load_manifest

    entries = load_manifest(manifest_path)
    if not entries:
        raise ValueError(f"empty manifest {manifest_path}")
    data = PairSet(entries)

    torch.manual_seed(plan.seed)
    frozen = FrozenChain(spec_for, predecessor_bundles) if needed else None
    frozen_digests = {s: params_digest(frozen.nets[s]) for s in needed} if frozen else {}

    net = StageNet(spec_for(stage))
    net.init_identity_taps()
    tensors = _prepare_tensors(stage, data, frozen)

    n = len(data)
    n_val = max(1, int(round(plan.val_fraction * n))) if n > 1 else 0
    idx = torch.randperm(n, generator=torch.Generator().manual_seed(plan.seed))
    val_idx, train_idx = idx[:n_val], idx[n_val:]

    def subset(indices):
        return {k: v[indices] for k, v in tensors.items()}

    opt = torch.optim.Adam(net.parameters(), lr=plan.lr)
    history: list[dict] = []
    best_val = float("inf")
    stale = 0
    for epoch in range(plan.epochs[stage]):
        net.train()
        perm = train_idx[torch.randperm(len(train_idx),
                                        generator=torch.Generator().manual_seed(
                                            plan.seed + epoch + 1))]
        losses = []
        for s in range(0, len(perm), plan.batch_size):
            batch = subset(perm[s : s + plan.batch_size])
            opt.zero_grad()
            loss = _stage_batch_loss(stage, net, batch)
            loss.backward()
            opt.step()
            losses.append(loss.detach().item())
        net.eval()
        with torch.no_grad():
            val_loss = (float(_stage_batch_loss(stage, net, subset(val_idx)))
                        if n_val else float(np.mean(losses)))
        history.append({"epoch": epoch, "train": float(np.mean(losses)),
                        "val": val_loss, "lr": opt.param_groups[0]["lr"]})
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            stale = 0
        else:
            stale += 1
            if stale >= plan.lr_patience:
                stale = 0
                for group in opt.param_groups:
                    group["lr"] = max(group["lr"] * 0.5, plan.lr_floor)

    if frozen:
        for s in needed:
            after = params_digest(frozen.nets[s])
            if after != frozen_digests[s]:
                raise RuntimeError(f"frozen stage '{s}' changed during training")
    net.eval()
    return net.export_tensors(), history


def save_history(path, history: list[dict]) -> None:
    with open(path, "w") as f:
        f.write("epoch\ttrain\tval\tlr\n")
        for row in history:
            f.write(f"{row['epoch']}\t{row['train']:.8e}\t{row['val']:.8e}\t{row['lr']:.2e}\n")


def export_bundle(path, tensors: dict[str, np.ndarray], fingerprint: str = "") -> None:
    sddw.write_file(path, tensors, fingerprint)
