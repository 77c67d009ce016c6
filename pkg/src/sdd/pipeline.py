"""Four-stage enhancement chain.

Stage 1 (denoise) and stage 2 (dereverberate) operate on power-compressed
magnitudes: each network emits a bank of 5 causal filter taps per T-F bin
and the multi-frame filter convolves them over the current and four
previous frames of its source.  The filtered magnitudes are recoupled
with the noisy phase, stage 3 refines the complex spectrum through a
global residual, and stage 4 hands the decompressed result to the
classical post-processor.

All learned processing happens in the compressed-magnitude domain;
decompression happens exactly once, after stage 3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .errors import ConfigError
from .nn.model import ModelConfig, NormRunner, StageKind, stage_forward
from .nn.weights import WeightsBundle
from .postproc import NoiseTracker, PpParams

STAGE_ORDER = (StageKind.DENOISE, StageKind.DEREVERB, StageKind.REFINE)


@dataclass
class StageOutputs:
    """Per-stage spectra in the linear (decompressed) domain."""

    mag_dn: np.ndarray | None = None
    mag_dr: np.ndarray | None = None
    cplx_dn: np.ndarray | None = None
    cplx_dr: np.ndarray | None = None
    cplx_sr: np.ndarray | None = None
    cplx_pp: np.ndarray | None = None


def mf_filter(taps: np.ndarray, source: np.ndarray) -> np.ndarray:
    """Apply per-bin causal filters: out[l] = sum_tau taps[tau, l] * src[l - tau].

    ``taps`` is (I, L, F), ``source`` is (L, F); frames before index 0 are
    zero.  Negative results are clamped since the output is a magnitude.
    """
    taps = np.asarray(taps)
    source = np.asarray(source)
    if taps.ndim != 3 or source.ndim != 2 or taps.shape[1:] != source.shape:
        raise ConfigError(f"taps {taps.shape} incompatible with source {source.shape}")
    out = np.zeros_like(source)
    for tau in range(taps.shape[0]):
        if tau == 0:
            out += taps[0] * source
        else:
            out[tau:] += taps[tau, tau:] * source[:-tau]
    return np.maximum(out, 0.0)


def recouple_phase(mag: np.ndarray, noisy_phase: np.ndarray) -> np.ndarray:
    """Attach the noisy phase to an estimated magnitude."""
    if mag.shape != noisy_phase.shape:
        raise ConfigError(f"magnitude {mag.shape} vs phase {noisy_phase.shape}")
    return mag * np.exp(1j * noisy_phase)


@dataclass
class Engine:
    """Holds per-stage weights and drives the enhancement chain."""

    configs: dict[StageKind, ModelConfig]
    bundles: dict[StageKind, WeightsBundle] = field(default_factory=dict)
    pp_params: PpParams = field(default_factory=PpParams)
    spp_bundle: WeightsBundle | None = None
    compression: dsp.CompressionSpec = field(default_factory=dsp.CompressionSpec)
    frame_params: dsp.FrameParams = field(default_factory=dsp.FrameParams)

    def __post_init__(self):
        for kind, bundle in self.bundles.items():
            bundle.validate_against(self.configs[kind].tensor_spec())

    def bundle(self, kind: StageKind) -> WeightsBundle:
        if kind not in self.bundles:
            raise ConfigError(f"no weights loaded for stage '{kind.value}'")
        return self.bundles[kind]

    def require_stages(self, depth: int) -> None:
        if not 1 <= depth <= 4:
            raise ConfigError(f"stage depth must be 1..4, got {depth}")
        for kind in STAGE_ORDER[: min(depth, 3)]:
            self.bundle(kind)

    def _expand_mag(self, mag: np.ndarray) -> np.ndarray:
        return mag ** (1.0 / self.compression.beta)

    # -- individual stages (compressed-magnitude domain) --------------------

    def run_dn(self, noisy_mag_c: np.ndarray,
               norm: NormRunner | str = "utterance") -> tuple[np.ndarray, np.ndarray]:
        """Stage 1: taps from the compressed noisy magnitude, then filter it."""
        taps = stage_forward(
            self.configs[StageKind.DENOISE], self.bundle(StageKind.DENOISE),
            noisy_mag_c[None], norm,
        )[0]
        return mf_filter(taps, noisy_mag_c), taps

    def run_dr(self, mag_dn_c: np.ndarray, noisy_mag_c: np.ndarray,
               norm: NormRunner | str = "utterance") -> tuple[np.ndarray, np.ndarray]:
        """Stage 2: taps from (stage-1 magnitude, noisy magnitude), applied
        to the stage-1 magnitude."""
        x = np.stack([mag_dn_c, noisy_mag_c], axis=0)
        taps = stage_forward(
            self.configs[StageKind.DEREVERB], self.bundle(StageKind.DEREVERB), x, norm,
        )[0]
        return mf_filter(taps, mag_dn_c), taps

    def run_sr(self, cplx_dn: np.ndarray, cplx_dr: np.ndarray, noisy_c: np.ndarray,
               norm: NormRunner | str = "utterance") -> np.ndarray:
        """Stage 3: complex correction added onto the stage-2 spectrum."""
        x = np.stack(
            [cplx_dn.real, cplx_dn.imag, cplx_dr.real, cplx_dr.imag,
             noisy_c.real, noisy_c.imag],
            axis=0,
        )
        out_re, out_im = stage_forward(
            self.configs[StageKind.REFINE], self.bundle(StageKind.REFINE), x, norm,
        )
        return cplx_dr + (out_re[0] + 1j * out_im[0])

    # -- full chain ----------------------------------------------------------

    def enhance(self, signal: np.ndarray, depth: int = 4,
                mode: str = "offline") -> tuple[np.ndarray, StageOutputs]:
        """Run the chain to ``depth`` stages and resynthesize.

        Modes: ``offline`` (per-utterance normalization statistics),
        ``streaming`` (frame-by-frame with causal running statistics), and
        ``streaming-offline-stats`` (frame-by-frame with statistics frozen
        from an offline pass; matches ``offline`` to float tolerance).
        """
        if mode == "offline":
            return self._enhance_offline(signal, depth)
        if mode in ("streaming", "streaming-offline-stats"):
            from .streaming import StreamingEnhancer

            self.require_stages(depth)
            signal = np.asarray(signal, dtype=np.float64)
            if signal.size == 0:
                raise ConfigError("signal must be non-empty")
            frozen = None
            if mode == "streaming-offline-stats":
                frozen = self.collect_norm_stats(signal, depth)
            streamer = StreamingEnhancer(self, depth=depth, frozen_stats=frozen,
                                         collect=True)
            hop = self.frame_params.hop
            chunks = [streamer.push(signal[s : s + hop]) for s in range(0, len(signal), hop)]
            chunks.append(streamer.flush())
            out = np.concatenate(chunks)
            return out[: len(signal)], streamer.stage_outputs()
        raise ConfigError(f"unknown mode '{mode}'")

    def _enhance_offline(self, signal, depth,
                         record: dict[StageKind, NormRunner] | None = None):
        self.require_stages(depth)
        signal = np.asarray(signal, dtype=np.float64)
        if signal.size == 0:
            raise ConfigError("signal must be non-empty")

        spec_y = dsp.stft(signal, self.frame_params)
        noisy_c = dsp.compress(spec_y, self.compression)
        mag_c = np.abs(noisy_c)
        theta = np.angle(spec_y)
        outs = StageOutputs()

        def runner(kind):
            if record is not None:
                record[kind] = NormRunner("record")
                return record[kind]
            return NormRunner("utterance")

        mag_dn, _ = self.run_dn(mag_c, runner(StageKind.DENOISE))
        cplx_dn = recouple_phase(mag_dn, theta)
        outs.mag_dn = self._expand_mag(mag_dn)
        outs.cplx_dn = dsp.decompress(cplx_dn, self.compression)
        current = cplx_dn

        if depth >= 2:
            mag_dr, _ = self.run_dr(mag_dn, mag_c, runner(StageKind.DEREVERB))
            cplx_dr = recouple_phase(mag_dr, theta)
            outs.mag_dr = self._expand_mag(mag_dr)
            outs.cplx_dr = dsp.decompress(cplx_dr, self.compression)
            current = cplx_dr

        if depth >= 3:
            cplx_sr = self.run_sr(cplx_dn, cplx_dr, noisy_c, runner(StageKind.REFINE))
            outs.cplx_sr = dsp.decompress(cplx_sr, self.compression)
            current = cplx_sr

        linear = dsp.decompress(current, self.compression)
        if depth >= 4:
            tracker = NoiseTracker(self.frame_params.bins, self.pp_params,
                                   spp_bundle=self.spp_bundle)
            linear = tracker.process(linear)
            outs.cplx_pp = linear

        out = dsp.istft(linear, self.frame_params)[: len(signal)]
        return out, outs

    def collect_norm_stats(self, signal, depth) -> dict[StageKind, list]:
        """Offline pass capturing per-layer normalization statistics."""
        record: dict[StageKind, NormRunner] = {}
        self._enhance_offline(signal, min(depth, 3), record=record)
        return {kind: r.recorded for kind, r in record.items()}
