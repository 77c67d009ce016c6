"""Frame-by-frame execution of the enhancement chain.

Every offline kernel has a stateful mirror here that consumes one frame
at a time while holding exactly the history a causal run needs: previous
input frames for the time kernels, dilation-deep rings for the TCM
convolutions, running moments for the causal normalization surrogate,
and the analysis/overlap-add buffers at the edges.

With normalization statistics frozen from an offline pass, the streamed
output matches the offline path to float tolerance; with cumulative
statistics it is the true real-time behavior.
"""

from __future__ import annotations

import itertools
import time
from collections import deque

import numpy as np

from .errors import ConfigError
from .nn.model import ModelConfig, StageKind
from .nn.weights import WeightsBundle
from .postproc import NoiseTracker


class StreamConv2d:
    def __init__(self, w, b, stride_f, pad_f):
        self.w = w
        self.b = b
        self.stride_f = stride_f
        self.pad_f = pad_f
        self.k_t = w.shape[2]
        self.hist: deque[np.ndarray] = deque(maxlen=max(self.k_t - 1, 0))

    def step(self, x: np.ndarray) -> np.ndarray:
        c_out, c_in, k_t, k_f = self.w.shape
        f_in = x.shape[1]
        f_out = (f_in + 2 * self.pad_f - k_f) // self.stride_f + 1
        frames = list(self.hist)
        while len(frames) < k_t - 1:
            frames.insert(0, np.zeros_like(x))
        frames.append(x)
        out = np.zeros((c_out, f_out), dtype=x.dtype)
        for tau in range(k_t):
            fp = np.pad(frames[tau], ((0, 0), (self.pad_f, self.pad_f)))
            for j in range(k_f):
                sl = fp[:, j : j + self.stride_f * (f_out - 1) + 1 : self.stride_f]
                out += self.w[:, :, tau, j] @ sl
        if self.k_t > 1:
            self.hist.append(x)
        return out + self.b[:, None]


class StreamDeconv2d:
    def __init__(self, w, b, stride_f, pad_f):
        self.w = w
        self.b = b
        self.stride_f = stride_f
        self.pad_f = pad_f
        self.k_t = w.shape[2]
        self.hist: deque[np.ndarray] = deque(maxlen=max(self.k_t - 1, 0))

    def step(self, x: np.ndarray) -> np.ndarray:
        c_in, c_out, k_t, k_f = self.w.shape
        f_in = x.shape[1]
        f_full = (f_in - 1) * self.stride_f + k_f
        f_out = f_full - 2 * self.pad_f
        frames = [x] + list(reversed(self.hist))  # tau = 0 is the current frame
        while len(frames) < k_t:
            frames.append(np.zeros_like(x))
        buf = np.zeros((c_out, f_full), dtype=x.dtype)
        for tau in range(k_t):
            contrib = np.tensordot(self.w[:, :, tau, :], frames[tau], axes=([0], [0]))
            # contrib: (c_out, k_f, f_in) scattered along strided frequency
            for j in range(k_f):
                buf[:, j : j + self.stride_f * (f_in - 1) + 1 : self.stride_f] += contrib[:, j, :]
        if self.k_t > 1:
            self.hist.append(x)
        return buf[:, self.pad_f : self.pad_f + f_out] + self.b[:, None]


class StreamNorm:
    """Instance norm over a stream: frozen stats or causal running moments."""

    def __init__(self, gamma, beta, frozen: tuple[np.ndarray, np.ndarray] | None = None):
        self.gamma = gamma
        self.beta = beta
        self.frozen = frozen
        c = gamma.shape[0]
        self.count = 0
        self.acc = np.zeros(c)
        self.acc_sq = np.zeros(c)

    def step(self, x: np.ndarray) -> np.ndarray:
        vec = x if x.ndim == 2 else x[:, None]
        if self.frozen is not None:
            mean, var = self.frozen
        else:
            self.count += vec.shape[1]
            self.acc = self.acc + vec.sum(axis=1)
            self.acc_sq = self.acc_sq + (vec * vec).sum(axis=1)
            mean = self.acc / self.count
            var = np.maximum(self.acc_sq / self.count - mean**2, 0.0)
        out = (vec - mean[:, None]) / np.sqrt(var[:, None] + 1e-8)
        out = out * self.gamma[:, None] + self.beta[:, None]
        return out if x.ndim == 2 else out[:, 0]


def _prelu(x, alpha):
    a = alpha.reshape((x.shape[0],) + (1,) * (x.ndim - 1))
    return np.maximum(x, 0.0) + a * np.minimum(x, 0.0)


class StreamStcm:
    def __init__(self, bundle: WeightsBundle, base: str, dilation: int, stats):
        self.b = bundle
        self.base = base
        self.dilation = dilation
        self.norm1 = StreamNorm(bundle.get(f"{base}.norm1.gamma"),
                                bundle.get(f"{base}.norm1.beta"), next(stats))
        self.norm2 = StreamNorm(bundle.get(f"{base}.norm2.gamma"),
                                bundle.get(f"{base}.norm2.beta"), next(stats))
        self.ring: deque[np.ndarray] = deque(maxlen=dilation)

    def step(self, x: np.ndarray) -> np.ndarray:
        base = self.base
        t = self.b.get(f"{base}.squeeze.w") @ x + self.b.get(f"{base}.squeeze.b")
        t = _prelu(self.norm1.step(t), self.b.get(f"{base}.prelu1.alpha"))
        w = self.b.get(f"{base}.dconv.w")
        past = self.ring[0] if len(self.ring) == self.dilation else np.zeros_like(t)
        out = w[:, :, 0] @ past + w[:, :, 1] @ t + self.b.get(f"{base}.dconv.b")
        self.ring.append(t)
        out = _prelu(self.norm2.step(out), self.b.get(f"{base}.prelu2.alpha"))
        out = self.b.get(f"{base}.expand.w") @ out + self.b.get(f"{base}.expand.b")
        return x + out


class StreamStage:
    """One stage network consuming (in_channels, bins) frames."""

    def __init__(self, config: ModelConfig, bundle: WeightsBundle,
                 frozen_stats: list | None = None):
        if config.tcm_kernel != 2:
            raise ConfigError("streaming TCM ring assumes kernel 2")
        self.config = config
        self.bundle = bundle
        stats = iter(frozen_stats) if frozen_stats is not None else itertools.repeat(None)
        b = bundle
        self.enc = []
        for i in range(5):
            self.enc.append((
                StreamConv2d(b.get(f"enc{i}.conv.w"), b.get(f"enc{i}.conv.b"),
                             config.freq_stride, config.pad_f),
                StreamNorm(b.get(f"enc{i}.norm.gamma"), b.get(f"enc{i}.norm.beta"), next(stats)),
                b.get(f"enc{i}.prelu.alpha"),
            ))
        self.tcms = []
        for g in range(config.tcm_groups):
            for j, d in enumerate(config.tcm_dilations):
                self.tcms.append(StreamStcm(b, f"tcm{g}.{j}", d, stats))
        self.decoders = []
        for prefix in config.decoder_prefixes():
            blocks = []
            for i in range(5):
                deconv = StreamDeconv2d(b.get(f"{prefix}{i}.deconv.w"),
                                        b.get(f"{prefix}{i}.deconv.b"),
                                        config.freq_stride, config.pad_f)
                if i < 4:
                    norm = StreamNorm(b.get(f"{prefix}{i}.norm.gamma"),
                                      b.get(f"{prefix}{i}.norm.beta"), next(stats))
                    alpha = b.get(f"{prefix}{i}.prelu.alpha")
                else:
                    norm, alpha = None, None
                blocks.append((deconv, norm, alpha))
            self.decoders.append(blocks)

    def step(self, x: np.ndarray) -> list[np.ndarray]:
        cfg = self.config
        skips = []
        h = x
        for conv, norm, alpha in self.enc:
            h = _prelu(norm.step(conv.step(h)), alpha)
            skips.append(h)
        flat = h.reshape(cfg.channels[4] * cfg.freq_sizes()[5])
        t = self.bundle.get("bneck.fc_in.w") @ flat + self.bundle.get("bneck.fc_in.b")
        for tcm in self.tcms:
            t = tcm.step(t)
        t = self.bundle.get("bneck.fc_out.w") @ t + self.bundle.get("bneck.fc_out.b")
        bott = t.reshape(cfg.channels[4], cfg.freq_sizes()[5])
        outputs = []
        for blocks in self.decoders:
            h = bott
            for i, (deconv, norm, alpha) in enumerate(blocks):
                h = np.concatenate([h, skips[4 - i]], axis=0)
                h = deconv.step(h)
                if norm is not None:
                    h = _prelu(norm.step(h), alpha)
            outputs.append(h)
        return outputs


class StreamMfFilter:
    def __init__(self, n_taps: int):
        self.n_taps = n_taps
        self.hist: deque[np.ndarray] = deque(maxlen=n_taps - 1)

    def step(self, taps: np.ndarray, source: np.ndarray) -> np.ndarray:
        out = taps[0] * source
        past = list(self.hist)
        for tau in range(1, self.n_taps):
            if tau <= len(past):
                out = out + taps[tau] * past[-tau]
        self.hist.append(source)
        return np.maximum(out, 0.0)


class StreamingEnhancer:
    """Push 16 kHz samples in, pull enhanced samples out, hop by hop."""

    def __init__(self, engine, depth: int = 4,
                 frozen_stats: dict[StageKind, list] | None = None,
                 collect: bool = False):
        engine.require_stages(depth)
        self.engine = engine
        self.depth = depth
        self.collect = collect
        fp = engine.frame_params
        self.fp = fp
        self.beta = engine.compression.beta

        def stage(kind):
            frozen = frozen_stats.get(kind) if frozen_stats is not None else None
            return StreamStage(engine.configs[kind], engine.bundle(kind), frozen)

        self.dn = stage(StageKind.DENOISE)
        self.mf_dn = StreamMfFilter(engine.configs[StageKind.DENOISE].filter_len)
        if depth >= 2:
            self.dr = stage(StageKind.DEREVERB)
            self.mf_dr = StreamMfFilter(engine.configs[StageKind.DEREVERB].filter_len)
        if depth >= 3:
            self.sr = stage(StageKind.REFINE)
        if depth >= 4:
            self.pp = NoiseTracker(fp.bins, engine.pp_params,
                                   spp_bundle=engine.spp_bundle)

        self._in = np.zeros(0, dtype=np.float64)
        self._consumed = 0          # samples consumed into frames
        self._frame_idx = 0
        self._total_in = 0
        self._ola = np.zeros(fp.window_len)
        wsq = fp.window**2
        # periodic COLA envelope; matches the offline synthesis exactly
        self._env = wsq[: fp.hop] + wsq[fp.hop :]
        self.frame_times: list[float] = []
        self._collected: dict[str, list[np.ndarray]] = {}

    # -- public API ---------------------------------------------------------

    def push(self, samples: np.ndarray) -> np.ndarray:
        samples = np.asarray(samples, dtype=np.float64)
        self._total_in += samples.shape[0]
        self._in = np.concatenate([self._in, samples])
        return self._drain()

    def flush(self) -> np.ndarray:
        """Pad the tail like the offline framer and emit everything left."""
        if self._total_in == 0:
            return np.zeros(0)
        total_frames = self.fp.num_frames(self._total_in)
        need = (total_frames - 1) * self.fp.hop + self.fp.window_len
        pad = need - (self._consumed + self._in.shape[0])
        if pad > 0:
            self._in = np.concatenate([self._in, np.zeros(pad)])
        out = self._drain(max_frames=total_frames)
        # Final half-window tail, covered by the last frame alone.
        tail = self._ola[self.fp.hop :] / self._env
        return np.concatenate([out, tail])

    def stage_outputs(self):
        from .pipeline import StageOutputs

        outs = StageOutputs()
        for name, frames in self._collected.items():
            setattr(outs, name, np.stack(frames, axis=0))
        return outs

    @property
    def algorithmic_delay_ms(self) -> float:
        fp = self.fp
        return 1000.0 * (fp.window_len + fp.hop) / fp.sample_rate

    # -- internals ------------------------------------------------------------

    def _drain(self, max_frames: int | None = None) -> np.ndarray:
        fp = self.fp
        chunks = []
        while self._in.shape[0] >= fp.window_len and (
            max_frames is None or self._frame_idx < max_frames
        ):
            frame = self._in[: fp.window_len]
            self._in = self._in[fp.hop :]
            self._consumed += fp.hop
            chunks.append(self._process_frame(frame))
        return np.concatenate(chunks) if chunks else np.zeros(0)

    def _process_frame(self, frame: np.ndarray) -> np.ndarray:
        fp = self.fp
        t0 = time.perf_counter()
        spec = np.fft.rfft(frame * fp.window, n=fp.fft_size)
        mag = np.abs(spec)
        theta = np.angle(spec)
        mag_c = mag**self.beta
        phase = np.exp(1j * theta)
        noisy_c = mag_c * phase

        taps = self.dn.step(mag_c[None, :])[0]
        mag_dn = self.mf_dn.step(taps, mag_c)
        current = mag_dn * phase
        cplx_dn = current
        self._collect("mag_dn", mag_dn ** (1.0 / self.beta))
        self._collect("cplx_dn", self._expand(cplx_dn))

        if self.depth >= 2:
            taps = self.dr.step(np.stack([mag_dn, mag_c], axis=0))[0]
            mag_dr = self.mf_dr.step(taps, mag_dn)
            cplx_dr = mag_dr * phase
            current = cplx_dr
            self._collect("mag_dr", mag_dr ** (1.0 / self.beta))
            self._collect("cplx_dr", self._expand(cplx_dr))

        if self.depth >= 3:
            x = np.stack([
                cplx_dn.real, cplx_dn.imag,
                cplx_dr.real, cplx_dr.imag,
                noisy_c.real, noisy_c.imag,
            ], axis=0)
            out_re, out_im = self.sr.step(x)
            current = cplx_dr + (out_re[0] + 1j * out_im[0])
            self._collect("cplx_sr", self._expand(current))

        linear = self._expand(current)
        if self.depth >= 4:
            linear = self.pp.step(linear)
            self._collect("cplx_pp", linear)

        seg = np.fft.irfft(linear, n=fp.fft_size) * fp.window
        self._ola += seg
        hop_out = self._ola[: fp.hop] / self._env
        self._ola = np.concatenate([self._ola[fp.hop :], np.zeros(fp.hop)])
        self._frame_idx += 1
        self.frame_times.append(time.perf_counter() - t0)
        return hop_out

    def _expand(self, spec: np.ndarray) -> np.ndarray:
        mag = np.abs(spec)
        scale = np.ones_like(mag)
        nz = mag > 0.0
        scale[nz] = mag[nz] ** (1.0 / self.beta - 1.0)
        return spec * scale

    def _collect(self, name: str, frame: np.ndarray) -> None:
        if self.collect:
            self._collected.setdefault(name, []).append(frame)
