"""Windowed STFT analysis/synthesis and magnitude power compression.

All processing runs at 16 kHz with a 20 ms periodic Hann window, 50%
overlap and a 320-point FFT, giving 161 one-sided bins per frame.  The
analysis/synthesis pair uses the same window and divides by the summed
squared-window envelope, which reconstructs interior samples exactly.

Spectrograms are plain complex128 arrays of shape (frames, bins); frame
``l`` covers input samples ``[l*hop, l*hop + window_len)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError



def hann_periodic(n: int) -> np.ndarray:
    """Periodic Hann window; sums to a constant at 50% overlap."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


@dataclass(frozen=True)
class FrameParams:
    """Framing configuration for analysis and synthesis.

    The defaults (and the only values the engine is tested at) are
    16 kHz, 320-sample windows, 160-sample hop, 320-point FFT.
    """

    sample_rate: int = 16000
    window_len: int = 320
    hop: int = 160
    fft_size: int = 320
    window: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.window is None:
            object.__setattr__(self, "window", hann_periodic(self.window_len))
        self.validate()

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    def validate(self) -> None:
        if self.window_len != self.fft_size:
            raise ConfigError("window_len must equal fft_size")
        if self.hop * 2 != self.window_len:
            raise ConfigError("hop must be window_len / 2")
        if self.window.shape != (self.window_len,):
            raise ConfigError("window length mismatch")
        # Constant-overlap-add at this hop: shifted copies must tile to 1.
        acc = self.window[: self.hop] + self.window[self.hop :]
        if np.max(np.abs(acc - 1.0)) > 1e-9:
            raise ConfigError("window does not satisfy COLA at 50% overlap")

    def num_frames(self, n_samples: int) -> int:
        if n_samples <= 0:
            raise ConfigError("signal must be non-empty")
        return int(np.ceil(n_samples / self.hop))


@dataclass(frozen=True)
class CompressionSpec:
    """Magnitude power-compression exponent, 0 < beta <= 1."""

    beta: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")


def stft(signal: np.ndarray, params: FrameParams) -> np.ndarray:
    """Forward transform of a 1-D signal into a (frames, bins) spectrogram.

    The final partial frame is zero-padded so every input sample is
    covered; use ``istft(...)[:len(signal)]`` to invert.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise ConfigError("stft expects a 1-D sample vector")
    n = signal.shape[0]
    frames = params.num_frames(n)
    padded_len = (frames - 1) * params.hop + params.window_len
    padded = np.zeros(padded_len, dtype=np.float64)
    padded[:n] = signal
    idx = params.hop * np.arange(frames)[:, None] + np.arange(params.window_len)[None, :]
    segments = padded[idx] * params.window[None, :]
    return np.fft.rfft(segments, n=params.fft_size, axis=1)


def istft(spec: np.ndarray, params: FrameParams) -> np.ndarray:
    """Overlap-add synthesis; returns ``(frames - 1) * hop + window_len`` samples.

    Conjugate symmetry is reimposed by the real inverse FFT.  The overlap
    sum is divided by the periodic squared-window envelope everywhere,
    including the first and last half-window: edge samples taper instead
    of being amplified, which keeps synthesis of *modified* spectra
    bounded (dividing edges by their raw single-frame envelope would blow
    up by 1/w^2 there).  Interior samples reconstruct exactly.
    """
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != params.bins:
        raise ConfigError(
            f"expected (frames, {params.bins}) spectrogram, got {spec.shape}"
        )
    frames = spec.shape[0]
    out_len = (frames - 1) * params.hop + params.window_len
    segments = np.fft.irfft(spec, n=params.fft_size, axis=1) * params.window[None, :]
    out = np.zeros(out_len, dtype=np.float64)
    for l in range(frames):
        start = l * params.hop
        out[start : start + params.window_len] += segments[l]
    wsq = params.window**2
    period = wsq[: params.hop] + wsq[params.hop :]  # strictly positive for Hann
    reps = int(np.ceil(out_len / params.hop))
    envelope = np.tile(period, reps)[:out_len]
    return out / envelope


def compress(spec: np.ndarray, c: CompressionSpec) -> np.ndarray:
    """Raise spectral magnitudes to ``beta`` leaving phase untouched."""
    spec = np.asarray(spec)
    mag = np.abs(spec)
    scale = np.ones_like(mag)
    nz = mag > 0.0
    scale[nz] = mag[nz] ** (c.beta - 1.0)
    return spec * scale


def decompress(spec: np.ndarray, c: CompressionSpec) -> np.ndarray:
    """Inverse of :func:`compress` (exponent ``1 / beta``)."""
    spec = np.asarray(spec)
    mag = np.abs(spec)
    scale = np.ones_like(mag)
    nz = mag > 0.0
    scale[nz] = mag[nz] ** (1.0 / c.beta - 1.0)
    return spec * scale


def magnitude(spec: np.ndarray) -> np.ndarray:
    return np.abs(spec)


def phase(spec: np.ndarray) -> np.ndarray:
    return np.angle(spec)
