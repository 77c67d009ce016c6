"""Torch mirror of the engine's stage networks.

Layer semantics match the inference kernels exactly: left-only time
padding (causal), symmetric stride-2 frequency padding, transposed
decoder convs trimmed back to the input frame count, per-(channel,
utterance) instance normalization with eps 1e-8, channel-major
bottleneck flattening, concatenated skips, and a squeezed-TCM stack.

`export_tensors` emits the engine's tensor-name dictionary so a trained
model serializes into a bundle the engine loads without translation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

STAGE_IN_CHANNELS = {"dn": 1, "dr": 2, "sr": 6}
STAGE_NUM_DECODERS = {"dn": 1, "dr": 1, "sr": 2}
NORM_EPS = 1e-8


@dataclass(frozen=True)
class NetSpec:
    """Stage hyperparameters (toy scale by default)."""

    stage: str
    channels: tuple[int, ...] = (4, 8, 16, 16, 16)
    kernel: tuple[int, int] = (2, 3)
    freq_stride: int = 2
    bins: int = 161
    tcm_groups: int = 1
    tcm_dilations: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    tcm_width: int = 32
    tcm_squeeze: int = 8
    tcm_kernel: int = 2
    filter_len: int = 5

    @property
    def in_channels(self) -> int:
        return STAGE_IN_CHANNELS[self.stage]

    @property
    def decoder_out(self) -> int:
        return self.filter_len if STAGE_NUM_DECODERS[self.stage] == 1 else 1

    @property
    def pad_f(self) -> int:
        return (self.kernel[1] - 1) // 2

    def freq_sizes(self) -> list[int]:
        sizes = [self.bins]
        for _ in range(5):
            sizes.append((sizes[-1] + 2 * self.pad_f - self.kernel[1]) // self.freq_stride + 1)
        return sizes

    @property
    def bottleneck(self) -> int:
        return self.channels[4] * self.freq_sizes()[5]

    def decoder_prefixes(self) -> list[str]:
        return ["dec"] if STAGE_NUM_DECODERS[self.stage] == 1 else ["dec_re", "dec_im"]

    def fingerprint(self) -> str:
        import hashlib

        payload = json.dumps({"stage": self.stage, "channels": self.channels,
                              "width": self.tcm_width}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


class EncBlock(nn.Module):
    def __init__(self, spec: NetSpec, c_in: int, c_out: int):
        super().__init__()
        self.spec = spec
        self.conv = nn.Conv2d(c_in, c_out, spec.kernel, stride=(1, spec.freq_stride))
        self.norm = nn.InstanceNorm2d(c_out, affine=True, eps=NORM_EPS)
        self.act = nn.PReLU(c_out)

    def forward(self, x):
        x = F.pad(x, (self.spec.pad_f, self.spec.pad_f, self.spec.kernel[0] - 1, 0))
        return self.act(self.norm(self.conv(x)))


class DecBlock(nn.Module):
    def __init__(self, spec: NetSpec, c_in: int, c_out: int, final: bool):
        super().__init__()
        self.deconv = nn.ConvTranspose2d(c_in, c_out, spec.kernel,
                                         stride=(1, spec.freq_stride),
                                         padding=(0, spec.pad_f))
        self.final = final
        if not final:
            self.norm = nn.InstanceNorm2d(c_out, affine=True, eps=NORM_EPS)
            self.act = nn.PReLU(c_out)

    def forward(self, x):
        frames = x.shape[2]
        h = self.deconv(x)[:, :, :frames, :]
        if self.final:
            return h
        return self.act(self.norm(h))


class StcmBlock(nn.Module):
    def __init__(self, spec: NetSpec, dilation: int):
        super().__init__()
        w, s = spec.tcm_width, spec.tcm_squeeze
        self.dilation = dilation
        self.squeeze = nn.Linear(w, s)
        self.norm1 = nn.InstanceNorm1d(s, affine=True, eps=NORM_EPS)
        self.act1 = nn.PReLU(s)
        self.dconv = nn.Conv1d(s, s, spec.tcm_kernel, dilation=dilation)
        self.norm2 = nn.InstanceNorm1d(s, affine=True, eps=NORM_EPS)
        self.act2 = nn.PReLU(s)
        self.expand = nn.Linear(s, w)

    def forward(self, x):
        # x: (B, L, W)
        t = self.squeeze(x).permute(0, 2, 1)  # (B, S, L)
        t = self.act1(self.norm1(t))
        t = self.dconv(F.pad(t, (self.dilation * (self.dconv.kernel_size[0] - 1), 0)))
        t = self.act2(self.norm2(t))
        t = self.expand(t.permute(0, 2, 1))
        return x + t


class StageNet(nn.Module):
    def __init__(self, spec: NetSpec):
        super().__init__()
        self.spec = spec
        chans = spec.channels
        self.encs = nn.ModuleList()
        for i in range(5):
            c_in = spec.in_channels if i == 0 else chans[i - 1]
            self.encs.append(EncBlock(spec, c_in, chans[i]))
        self.fc_in = nn.Linear(spec.bottleneck, spec.tcm_width)
        self.tcms = nn.ModuleList(
            StcmBlock(spec, d)
            for _ in range(spec.tcm_groups)
            for d in spec.tcm_dilations
        )
        self.fc_out = nn.Linear(spec.tcm_width, spec.bottleneck)
        self.decoders = nn.ModuleList()
        for _ in spec.decoder_prefixes():
            blocks = nn.ModuleList()
            for i in range(5):
                c_in = 2 * chans[4 - i]
                c_out = chans[3 - i] if i < 4 else spec.decoder_out
                blocks.append(DecBlock(spec, c_in, c_out, final=(i == 4)))
            self.decoders.append(blocks)

    def forward(self, x):
        # x: (B, C_in, L, bins)
        spec = self.spec
        skips = []
        h = x
        for enc in self.encs:
            h = enc(h)
            skips.append(h)
        b, c, length, f = h.shape
        flat = h.permute(0, 2, 1, 3).reshape(b, length, c * f)
        t = self.fc_in(flat)
        for tcm in self.tcms:
            t = tcm(t)
        t = self.fc_out(t)
        bott = t.reshape(b, length, c, f).permute(0, 2, 1, 3)
        outs = []
        for blocks in self.decoders:
            h = bott
            for i, block in enumerate(blocks):
                h = torch.cat([h, skips[4 - i]], dim=1)
                h = block(h)
            outs.append(h)
        return outs

    # -- initialization helpers --------------------------------------------

    def init_identity_taps(self) -> None:
        """Zero the final layer(s); filter stages start as the identity bank."""
        for blocks in self.decoders:
            final = blocks[4].deconv
            nn.init.zeros_(final.weight)
            nn.init.zeros_(final.bias)
            if STAGE_NUM_DECODERS[self.spec.stage] == 1:
                with torch.no_grad():
                    final.bias[0] = 1.0

    # -- serialization -------------------------------------------------------

    def export_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}

        def put(name, tensor):
            out[name] = tensor.detach().cpu().numpy().astype(np.float32)

        for i, enc in enumerate(self.encs):
            put(f"enc{i}.conv.w", enc.conv.weight)
            put(f"enc{i}.conv.b", enc.conv.bias)
            put(f"enc{i}.norm.gamma", enc.norm.weight)
            put(f"enc{i}.norm.beta", enc.norm.bias)
            put(f"enc{i}.prelu.alpha", enc.act.weight)
        put("bneck.fc_in.w", self.fc_in.weight)
        put("bneck.fc_in.b", self.fc_in.bias)
        put("bneck.fc_out.w", self.fc_out.weight)
        put("bneck.fc_out.b", self.fc_out.bias)
        per_group = len(self.spec.tcm_dilations)
        for idx, tcm in enumerate(self.tcms):
            base = f"tcm{idx // per_group}.{idx % per_group}"
            put(f"{base}.squeeze.w", tcm.squeeze.weight)
            put(f"{base}.squeeze.b", tcm.squeeze.bias)
            put(f"{base}.norm1.gamma", tcm.norm1.weight)
            put(f"{base}.norm1.beta", tcm.norm1.bias)
            put(f"{base}.prelu1.alpha", tcm.act1.weight)
            put(f"{base}.dconv.w", tcm.dconv.weight)
            put(f"{base}.dconv.b", tcm.dconv.bias)
            put(f"{base}.norm2.gamma", tcm.norm2.weight)
            put(f"{base}.norm2.beta", tcm.norm2.bias)
            put(f"{base}.prelu2.alpha", tcm.act2.weight)
            put(f"{base}.expand.w", tcm.expand.weight)
            put(f"{base}.expand.b", tcm.expand.bias)
        for prefix, blocks in zip(self.spec.decoder_prefixes(), self.decoders):
            for i, block in enumerate(blocks):
                put(f"{prefix}{i}.deconv.w", block.deconv.weight)
                put(f"{prefix}{i}.deconv.b", block.deconv.bias)
                if i < 4:
                    put(f"{prefix}{i}.norm.gamma", block.norm.weight)
                    put(f"{prefix}{i}.norm.beta", block.norm.bias)
                    put(f"{prefix}{i}.prelu.alpha", block.act.weight)
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        expected = self.export_tensors()
        missing = set(expected) - set(tensors)
        if missing:
            raise ValueError(f"bundle missing tensors: {sorted(missing)[:4]} ...")
        state = {}
        mapping = self._name_to_param()
        for name, value in tensors.items():
            if name not in mapping:
                raise ValueError(f"unexpected tensor '{name}'")
            state[mapping[name]] = torch.from_numpy(np.asarray(value, dtype=np.float32))
        self.load_state_dict(state)

    def _name_to_param(self) -> dict[str, str]:
        mapping = {}
        for i in range(5):
            mapping[f"enc{i}.conv.w"] = f"encs.{i}.conv.weight"
            mapping[f"enc{i}.conv.b"] = f"encs.{i}.conv.bias"
            mapping[f"enc{i}.norm.gamma"] = f"encs.{i}.norm.weight"
            mapping[f"enc{i}.norm.beta"] = f"encs.{i}.norm.bias"
            mapping[f"enc{i}.prelu.alpha"] = f"encs.{i}.act.weight"
        mapping["bneck.fc_in.w"] = "fc_in.weight"
        mapping["bneck.fc_in.b"] = "fc_in.bias"
        mapping["bneck.fc_out.w"] = "fc_out.weight"
        mapping["bneck.fc_out.b"] = "fc_out.bias"
        per_group = len(self.spec.tcm_dilations)
        for idx in range(len(self.tcms)):
            base = f"tcm{idx // per_group}.{idx % per_group}"
            mapping[f"{base}.squeeze.w"] = f"tcms.{idx}.squeeze.weight"
            mapping[f"{base}.squeeze.b"] = f"tcms.{idx}.squeeze.bias"
            mapping[f"{base}.norm1.gamma"] = f"tcms.{idx}.norm1.weight"
            mapping[f"{base}.norm1.beta"] = f"tcms.{idx}.norm1.bias"
            mapping[f"{base}.prelu1.alpha"] = f"tcms.{idx}.act1.weight"
            mapping[f"{base}.dconv.w"] = f"tcms.{idx}.dconv.weight"
            mapping[f"{base}.dconv.b"] = f"tcms.{idx}.dconv.bias"
            mapping[f"{base}.norm2.gamma"] = f"tcms.{idx}.norm2.weight"
            mapping[f"{base}.norm2.beta"] = f"tcms.{idx}.norm2.bias"
            mapping[f"{base}.prelu2.alpha"] = f"tcms.{idx}.act2.weight"
            mapping[f"{base}.expand.w"] = f"tcms.{idx}.expand.weight"
            mapping[f"{base}.expand.b"] = f"tcms.{idx}.expand.bias"
        for d, prefix in enumerate(self.spec.decoder_prefixes()):
            for i in range(5):
                mapping[f"{prefix}{i}.deconv.w"] = f"decoders.{d}.{i}.deconv.weight"
                mapping[f"{prefix}{i}.deconv.b"] = f"decoders.{d}.{i}.deconv.bias"
                if i < 4:
                    mapping[f"{prefix}{i}.norm.gamma"] = f"decoders.{d}.{i}.norm.weight"
                    mapping[f"{prefix}{i}.norm.beta"] = f"decoders.{d}.{i}.norm.bias"
                    mapping[f"{prefix}{i}.prelu.alpha"] = f"decoders.{d}.{i}.act.weight"
        return mapping


def mf_filter(taps: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
    """out[:, l] = sum_tau taps[:, tau, l] * source[:, l - tau], clamped at 0.

    ``taps``: (B, I, L, F); ``source``: (B, L, F).
    """
    n_taps = taps.shape[1]
    out = taps[:, 0] * source
    for tau in range(1, n_taps):
        shifted = F.pad(source, (0, 0, tau, 0))[:, :-tau, :]
        out = out + taps[:, tau] * shifted
    return torch.clamp(out, min=0.0)
