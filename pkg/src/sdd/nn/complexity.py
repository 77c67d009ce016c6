"""Analytic parameter and MACs accounting.

MACs are counted per output frame.  Convolutional layers (including
transposed ones) are charged ``C_in * C_out * k_t * k_f * F_out``: every
output position pays for the full kernel, regardless of stride.  Dense
layers cost ``in * out``.  Normalization, activations, and bias adds are
not counted.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import LayerSpec, ModelConfig


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    params: int
    macs_per_frame: int


def layer_cost(spec: LayerSpec) -> LayerCost:
    if spec.kind in ("conv2d", "deconv2d"):
        k = spec.kernel[0] * spec.kernel[1]
        weights = spec.in_channels * spec.out_channels * k
        macs = weights * spec.f_out
    elif spec.kind == "dense":
        weights = spec.in_channels * spec.out_channels
        macs = weights
    elif spec.kind == "conv1d-dilated":
        weights = spec.in_channels * spec.out_channels * spec.kernel[1]
        macs = weights
    else:
        raise ValueError(f"no cost model for layer kind '{spec.kind}'")
    return LayerCost(spec.name, spec.kind, weights + spec.out_channels, macs)


def _affine_params(config: ModelConfig) -> int:
    """Instance-norm gains/biases and PReLU slopes (no MACs charged)."""
    total = 0
    for ls in config.encoder_layers():
        total += 3 * ls.out_channels
    s = config.tcm_squeeze_channels
    total += config.tcm_groups * config.tcm_per_group * 2 * 3 * s
    for prefix in config.decoder_prefixes():
        for i, ls in enumerate(config.decoder_layers(prefix)):
            if i < 4:
                total += 3 * ls.out_channels
    return total


def stage_cost(config: ModelConfig) -> tuple[int, int]:
    params = _affine_params(config)
    macs = 0
    for spec in config.all_layer_specs():
        cost = layer_cost(spec)
        params += cost.params
        macs += cost.macs_per_frame
    return params, macs


def count_params_and_macs(configs: list[ModelConfig]) -> tuple[int, int]:
    """Totals across the given stage configs (stages 1-3 of the chain)."""
    params = 0
    macs = 0
    for cfg in configs:
        p, m = stage_cost(cfg)
        params += p
        macs += m
    return params, macs
