"""Stage network topology: 5-block encoder/decoder with a squeezed-TCM
bottleneck, plus the forward pass used by offline enhancement.

One `ModelConfig` describes one stage network.  The three stages share
the same trunk and differ in their input/output contracts:

  denoise   1 input channel  (compressed noisy magnitude) -> filter taps
  dereverb  2 input channels (stage-1 magnitude, noisy magnitude) -> taps
  refine    6 input channels (RI of stage-1/stage-2/noisy spectra)
            -> two decoders emitting a real and an imaginary correction

Frame resolution never changes inside a stage; only the frequency axis
is strided down the encoder and transposed back up the mirrored decoder.
Skip connections concatenate encoder block outputs channel-wise into the
matching decoder block inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import ConfigError
from . import layers
from .weights import WeightsBundle, config_fingerprint

REQUIRED_DILATIONS = (1, 2, 4, 8, 16, 32)


class StageKind(str, Enum):
    DENOISE = "dn"
    DEREVERB = "dr"
    REFINE = "sr"


_STAGE_IN_CHANNELS = {StageKind.DENOISE: 1, StageKind.DEREVERB: 2, StageKind.REFINE: 6}
_STAGE_NUM_DECODERS = {StageKind.DENOISE: 1, StageKind.DEREVERB: 1, StageKind.REFINE: 2}


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv2d | deconv2d | conv1d-dilated | norm | prelu | dense
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    dilation: int = 1
    pad_f: int = 0
    f_in: int = 1
    f_out: int = 1
    name: str = ""

    def __post_init__(self):
        if self.stride[0] != 1:
            raise ConfigError("time stride must be 1 (causal contract)")


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters for one stage network."""

    stage: StageKind
    channels: tuple[int, ...] = (32, 64, 128, 128, 128)
    kernel: tuple[int, int] = (2, 3)
    freq_stride: int = 2
    bins: int = 161
    tcm_groups: int = 3
    tcm_per_group: int = 6
    tcm_dilations: tuple[int, ...] = REQUIRED_DILATIONS
    tcm_width: int = 256
    tcm_squeeze_channels: int = 64
    tcm_kernel: int = 2
    filter_len: int = 5

    def __post_init__(self):
        if len(self.channels) != 5:
            raise ConfigError("encoder is five blocks; channels must have 5 entries")
        if tuple(self.tcm_dilations) != REQUIRED_DILATIONS:
            raise ConfigError(f"tcm dilations must be {REQUIRED_DILATIONS}")
        if self.tcm_per_group != len(self.tcm_dilations):
            raise ConfigError("tcm_per_group must match the dilation ladder")
        if self.freq_sizes()[-1] < 1:
            raise ConfigError("frequency axis collapses before the bottleneck")

    # -- shape bookkeeping -------------------------------------------------

    @property
    def in_channels(self) -> int:
        return _STAGE_IN_CHANNELS[self.stage]

    @property
    def num_decoders(self) -> int:
        return _STAGE_NUM_DECODERS[self.stage]

    @property
    def decoder_out_channels(self) -> int:
        return self.filter_len if self.num_decoders == 1 else 1

    @property
    def pad_f(self) -> int:
        return (self.kernel[1] - 1) // 2

    def freq_sizes(self) -> list[int]:
        """Frequency size entering each encoder block, plus the bottleneck."""
        sizes = [self.bins]
        for _ in range(5):
            sizes.append((sizes[-1] + 2 * self.pad_f - self.kernel[1]) // self.freq_stride + 1)
        return sizes

    @property
    def bottleneck_features(self) -> int:
        return self.channels[4] * self.freq_sizes()[5]

    def decoder_prefixes(self) -> list[str]:
        return ["dec"] if self.num_decoders == 1 else ["dec_re", "dec_im"]

    def encoder_layers(self) -> list[LayerSpec]:
        fs = self.freq_sizes()
        specs = []
        for i in range(5):
            c_in = self.in_channels if i == 0 else self.channels[i - 1]
            specs.append(
                LayerSpec(
                    kind="conv2d",
                    in_channels=c_in,
                    out_channels=self.channels[i],
                    kernel=self.kernel,
                    stride=(1, self.freq_stride),
                    pad_f=self.pad_f,
                    f_in=fs[i],
                    f_out=fs[i + 1],
                    name=f"enc{i}",
                )
            )
        return specs

    def decoder_layers(self, prefix: str = "dec") -> list[LayerSpec]:
        fs = self.freq_sizes()
        specs = []
        for i in range(5):
            c_in = 2 * self.channels[4 - i]
            c_out = self.channels[3 - i] if i < 4 else self.decoder_out_channels
            specs.append(
                LayerSpec(
                    kind="deconv2d",
                    in_channels=c_in,
                    out_channels=c_out,
                    kernel=self.kernel,
                    stride=(1, self.freq_stride),
                    pad_f=self.pad_f,
                    f_in=fs[5 - i],
                    f_out=fs[4 - i],
                    name=f"{prefix}{i}",
                )
            )
        return specs

    def tcm_layers(self) -> list[LayerSpec]:
        specs = []
        w, s = self.tcm_width, self.tcm_squeeze_channels
        for g in range(self.tcm_groups):
            for j, d in enumerate(self.tcm_dilations):
                base = f"tcm{g}.{j}"
                specs.append(LayerSpec("dense", w, s, name=f"{base}.squeeze"))
                specs.append(
                    LayerSpec(
                        "conv1d-dilated", s, s,
                        kernel=(1, self.tcm_kernel), dilation=d, name=f"{base}.dconv",
                    )
                )
                specs.append(LayerSpec("dense", s, w, name=f"{base}.expand"))
        return specs

    def all_layer_specs(self) -> list[LayerSpec]:
        """Every parameterized layer in forward order (MAC-bearing ones)."""
        nf = self.bottleneck_features
        specs = list(self.encoder_layers())
        specs.append(LayerSpec("dense", nf, self.tcm_width, name="bneck.fc_in"))
        specs.extend(self.tcm_layers())
        specs.append(LayerSpec("dense", self.tcm_width, nf, name="bneck.fc_out"))
        for prefix in self.decoder_prefixes():
            specs.extend(self.decoder_layers(prefix))
        return specs

    # -- weight bookkeeping ------------------------------------------------

    def tensor_spec(self) -> dict[str, tuple[int, ...]]:
        """Exact tensor name -> shape demand for a bundle of this config."""
        spec: dict[str, tuple[int, ...]] = {}
        for ls in self.encoder_layers():
            spec[f"{ls.name}.conv.w"] = (ls.out_channels, ls.in_channels, *self.kernel)
            spec[f"{ls.name}.conv.b"] = (ls.out_channels,)
            spec[f"{ls.name}.norm.gamma"] = (ls.out_channels,)
            spec[f"{ls.name}.norm.beta"] = (ls.out_channels,)
            spec[f"{ls.name}.prelu.alpha"] = (ls.out_channels,)
        nf, w, s = self.bottleneck_features, self.tcm_width, self.tcm_squeeze_channels
        spec["bneck.fc_in.w"] = (w, nf)
        spec["bneck.fc_in.b"] = (w,)
        spec["bneck.fc_out.w"] = (nf, w)
        spec["bneck.fc_out.b"] = (nf,)
        for g in range(self.tcm_groups):
            for j in range(self.tcm_per_group):
                base = f"tcm{g}.{j}"
                spec[f"{base}.squeeze.w"] = (s, w)
                spec[f"{base}.squeeze.b"] = (s,)
                spec[f"{base}.norm1.gamma"] = (s,)
                spec[f"{base}.norm1.beta"] = (s,)
                spec[f"{base}.prelu1.alpha"] = (s,)
                spec[f"{base}.dconv.w"] = (s, s, self.tcm_kernel)
                spec[f"{base}.dconv.b"] = (s,)
                spec[f"{base}.norm2.gamma"] = (s,)
                spec[f"{base}.norm2.beta"] = (s,)
                spec[f"{base}.prelu2.alpha"] = (s,)
                spec[f"{base}.expand.w"] = (w, s)
                spec[f"{base}.expand.b"] = (w,)
        for prefix in self.decoder_prefixes():
            for i, ls in enumerate(self.decoder_layers(prefix)):
                spec[f"{ls.name}.deconv.w"] = (ls.in_channels, ls.out_channels, *self.kernel)
                spec[f"{ls.name}.deconv.b"] = (ls.out_channels,)
                if i < 4:
                    spec[f"{ls.name}.norm.gamma"] = (ls.out_channels,)
                    spec[f"{ls.name}.norm.beta"] = (ls.out_channels,)
                    spec[f"{ls.name}.prelu.alpha"] = (ls.out_channels,)
        return spec

    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "stage": self.stage.value,
                "channels": self.channels,
                "kernel": self.kernel,
                "freq_stride": self.freq_stride,
                "bins": self.bins,
                "tcm": [self.tcm_groups, self.tcm_per_group, self.tcm_width,
                        self.tcm_squeeze_channels, self.tcm_kernel],
                "dilations": self.tcm_dilations,
                "filter_len": self.filter_len,
            },
            sort_keys=True,
        )
        return config_fingerprint(payload)


def default_config(stage: StageKind) -> ModelConfig:
    return ModelConfig(stage=stage)


def toy_config(stage: StageKind) -> ModelConfig:
    """Desk-scale config for structural tests (same topology, ~1/64 size)."""
    return ModelConfig(
        stage=stage,
        channels=(4, 8, 16, 16, 16),
        tcm_groups=1,
        tcm_width=32,
        tcm_squeeze_channels=8,
    )


# -- initialization helpers (structural tests, benchmarks) ------------------


def random_bundle(config: ModelConfig, seed: int = 0, scale: float = 0.5) -> WeightsBundle:
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in config.tensor_spec().items():
        if name.endswith((".gamma",)):
            t = np.ones(shape, dtype=np.float32)
        elif name.endswith((".beta", ".b")):
            t = np.zeros(shape, dtype=np.float32)
        elif name.endswith(".alpha"):
            t = np.full(shape, 0.25, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])
            t = rng.normal(0.0, scale / np.sqrt(fan_in), size=shape).astype(np.float32)
        tensors[name] = t
    return WeightsBundle(tensors=tensors, fingerprint=config.fingerprint())


def zero_final_decoder_layers(bundle: WeightsBundle, config: ModelConfig) -> WeightsBundle:
    """Copy of ``bundle`` with every decoder's last layer zeroed out."""
    tensors = {k: v.copy() for k, v in bundle.tensors.items()}
    for prefix in config.decoder_prefixes():
        tensors[f"{prefix}4.deconv.w"] = np.zeros_like(tensors[f"{prefix}4.deconv.w"])
        tensors[f"{prefix}4.deconv.b"] = np.zeros_like(tensors[f"{prefix}4.deconv.b"])
    return WeightsBundle(tensors=tensors, fingerprint=bundle.fingerprint)


# -- normalization modes -----------------------------------------------------


class NormRunner:
    """Dispatches instance-norm calls to one statistics policy.

    utterance  per-(channel, utterance) statistics (offline default)
    causal     cumulative running statistics (streaming surrogate)
    frozen     externally supplied statistics, consumed in layer order
    record     like utterance, but captures the stats for later reuse
    """

    def __init__(self, mode: str = "utterance",
                 frozen: list[tuple[np.ndarray, np.ndarray]] | None = None):
        if mode not in ("utterance", "causal", "frozen", "record"):
            raise ConfigError(f"unknown norm mode '{mode}'")
        if mode == "frozen" and frozen is None:
            raise ConfigError("frozen norm mode needs a stats list")
        self.mode = mode
        self.frozen = frozen or []
        self.recorded: list[tuple[np.ndarray, np.ndarray]] = []
        self._idx = 0

    def __call__(self, x, gamma, beta):
        if self.mode == "causal":
            return layers.instance_norm_causal(x, gamma, beta)
        if self.mode == "frozen":
            if self._idx >= len(self.frozen):
                raise ConfigError("frozen stats list exhausted; config mismatch")
            stats = self.frozen[self._idx]
            self._idx += 1
            return layers.instance_norm(x, gamma, beta, stats=stats)
        stats = layers.instance_norm_stats(x)
        if self.mode == "record":
            self.recorded.append(stats)
        return layers.instance_norm(x, gamma, beta, stats=stats)


# -- forward pass -------------------------------------------------------------


def _stcm_block(x, bundle: WeightsBundle, base: str, dilation: int, norm: NormRunner):
    t = layers.dense(x, bundle.get(f"{base}.squeeze.w"), bundle.get(f"{base}.squeeze.b"))
    t = norm(t, bundle.get(f"{base}.norm1.gamma"), bundle.get(f"{base}.norm1.beta"))
    t = layers.prelu(t, bundle.get(f"{base}.prelu1.alpha"))
    t = layers.conv1d_dilated_causal(t, bundle.get(f"{base}.dconv.w"), bundle.get(f"{base}.dconv.b"), dilation)
    t = norm(t, bundle.get(f"{base}.norm2.gamma"), bundle.get(f"{base}.norm2.beta"))
    t = layers.prelu(t, bundle.get(f"{base}.prelu2.alpha"))
    t = layers.dense(t, bundle.get(f"{base}.expand.w"), bundle.get(f"{base}.expand.b"))
    return x + t


def stcm_block(x, weights: dict[str, np.ndarray], dilation: int,
               norm: NormRunner | None = None):
    """Standalone squeezed-TCM block on (channels, L) data.

    ``weights`` uses the un-prefixed tensor names (``squeeze.w`` ...).
    """
    bundle = WeightsBundle(tensors={f"blk.{k}": np.asarray(v, dtype=np.float32)
                                    for k, v in weights.items()})
    return _stcm_block(np.asarray(x, dtype=np.float64), bundle, "blk", dilation,
                       norm or NormRunner("utterance"))


def stage_forward(
    config: ModelConfig,
    bundle: WeightsBundle,
    x: np.ndarray,
    norm: NormRunner | str = "utterance",
) -> list[np.ndarray]:
    """Run one stage network over a full utterance.

    ``x`` is (in_channels, L, bins); returns one (out_channels, L, bins)
    array per decoder.
    """
    if isinstance(norm, str):
        norm = NormRunner(norm)
    if x.ndim != 3 or x.shape[0] != config.in_channels or x.shape[2] != config.bins:
        raise ConfigError(
            f"stage '{config.stage.value}' expects ({config.in_channels}, L, {config.bins}),"
            f" got {x.shape}"
        )
    length = x.shape[1]
    fs = config.freq_sizes()

    skips = []
    h = x
    for i in range(5):
        h = layers.conv2d_causal(
            h, bundle.get(f"enc{i}.conv.w"), bundle.get(f"enc{i}.conv.b"),
            stride_f=config.freq_stride, pad_f=config.pad_f,
        )
        h = norm(h, bundle.get(f"enc{i}.norm.gamma"), bundle.get(f"enc{i}.norm.beta"))
        h = layers.prelu(h, bundle.get(f"enc{i}.prelu.alpha"))
        skips.append(h)

    # (C, L, F) -> (C*F, L) with channel-major feature order
    flat = h.transpose(0, 2, 1).reshape(config.bottleneck_features, length)
    t = layers.dense(flat, bundle.get("bneck.fc_in.w"), bundle.get("bneck.fc_in.b"))
    for g in range(config.tcm_groups):
        for j, d in enumerate(config.tcm_dilations):
            t = _stcm_block(t, bundle, f"tcm{g}.{j}", d, norm)
    t = layers.dense(t, bundle.get("bneck.fc_out.w"), bundle.get("bneck.fc_out.b"))
    bott = t.reshape(config.channels[4], fs[5], length).transpose(0, 2, 1)

    outputs = []
    for prefix in config.decoder_prefixes():
        h = bott
        for i in range(5):
            h = np.concatenate([h, skips[4 - i]], axis=0)
            h = layers.deconv2d_causal(
                h, bundle.get(f"{prefix}{i}.deconv.w"), bundle.get(f"{prefix}{i}.deconv.b"),
                stride_f=config.freq_stride, pad_f=config.pad_f,
            )
            if i < 4:
                h = norm(h, bundle.get(f"{prefix}{i}.norm.gamma"), bundle.get(f"{prefix}{i}.norm.beta"))
                h = layers.prelu(h, bundle.get(f"{prefix}{i}.prelu.alpha"))
        outputs.append(h)
    return outputs
