"""Inference kernels: causal 2-D conv/deconv, instance norm, PReLU, dense.

Feature maps are (channels, frames, freq) arrays.  Every kernel keeps the
frame axis untouched and admits no future-frame taps: output frame ``l``
is a function of input frames ``<= l`` only.  Frequency padding is
symmetric, time padding is left-only.

Weight layouts follow the usual deep-learning conventions:
  conv    w: (C_out, C_in, k_t, k_f)
  deconv  w: (C_in, C_out, k_t, k_f)   (transposed-conv layout)
  dense   w: (out, in)
  dconv1d w: (C_out, C_in, k)
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError

NORM_EPS = 1e-8


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def conv2d_causal(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray,
    stride_f: int = 1,
    pad_f: int = 0,
) -> np.ndarray:
    """Causal-in-time 2-D convolution with strided frequency axis."""
    _check(x.ndim == 3, f"conv2d input must be (C, L, F), got {x.shape}")
    c_out, c_in, k_t, k_f = w.shape
    _check(x.shape[0] == c_in, f"conv2d expects {c_in} input channels, got {x.shape[0]} (tensor 'w' {w.shape})")
    _check(b.shape == (c_out,), f"conv2d bias shape {b.shape} != ({c_out},)")
    _, length, f_in = x.shape
    f_out = (f_in + 2 * pad_f - k_f) // stride_f + 1
    _check(f_out >= 1, "conv2d frequency kernel larger than padded input")
    xp = np.pad(x, ((0, 0), (k_t - 1, 0), (pad_f, pad_f)))
    out = np.zeros((c_out, length, f_out), dtype=x.dtype)
    for tau in range(k_t):
        for j in range(k_f):
            sl = xp[:, tau : tau + length, j : j + stride_f * (f_out - 1) + 1 : stride_f]
            out += np.tensordot(w[:, :, tau, j], sl, axes=([1], [0]))
    return out + b[:, None, None]


def deconv2d_causal(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray,
    stride_f: int = 1,
    pad_f: int = 0,
) -> np.ndarray:
    """Causal-in-time transposed 2-D convolution (frequency upsampling).

    Output frame ``l`` gathers input frames ``l - tau`` for
    ``tau in [0, k_t)``; frequency follows the transposed-conv size rule
    ``F_out = (F_in - 1) * stride - 2 * pad + k_f``.
    """
    _check(x.ndim == 3, f"deconv2d input must be (C, L, F), got {x.shape}")
    c_in, c_out, k_t, k_f = w.shape
    _check(x.shape[0] == c_in, f"deconv2d expects {c_in} input channels, got {x.shape[0]} (tensor 'w' {w.shape})")
    _check(b.shape == (c_out,), f"deconv2d bias shape {b.shape} != ({c_out},)")
    _, length, f_in = x.shape
    f_full = (f_in - 1) * stride_f + k_f
    f_out = f_full - 2 * pad_f
    _check(f_out >= 1, "deconv2d produces empty frequency axis")
    buf = np.zeros((c_out, length + k_t - 1, f_full), dtype=x.dtype)
    for tau in range(k_t):
        for j in range(k_f):
            contrib = np.tensordot(w[:, :, tau, j], x, axes=([0], [0]))
            buf[:, tau : tau + length, j : j + stride_f * (f_in - 1) + 1 : stride_f] += contrib
    out = buf[:, :length, pad_f : pad_f + f_out]
    return out + b[:, None, None]


def instance_norm(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Per-channel normalization over all non-channel axes, then affine.

    ``stats`` overrides the (mean, var) used for normalization; when
    omitted they are computed from ``x`` itself (per-utterance mode).
    """
    _check(x.ndim in (2, 3), f"instance_norm input must be (C, L[, F]), got {x.shape}")
    c = x.shape[0]
    _check(gamma.shape == (c,) and beta.shape == (c,), "instance_norm affine shape mismatch")
    axes = tuple(range(1, x.ndim))
    if stats is None:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    else:
        mean, var = stats
    shape = (c,) + (1,) * (x.ndim - 1)
    normed = (x - mean.reshape(shape)) / np.sqrt(var.reshape(shape) + NORM_EPS)
    return normed * gamma.reshape(shape) + beta.reshape(shape)


def instance_norm_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    axes = tuple(range(1, x.ndim))
    return x.mean(axis=axes), x.var(axis=axes)


def instance_norm_causal(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Causal surrogate: statistics accumulate over frames seen so far.

    Frame ``l`` is normalized with the mean/variance of frames ``0..l``,
    matching the streaming engine's running accumulators.
    """
    _check(x.ndim in (2, 3), f"instance_norm input must be (C, L[, F]), got {x.shape}")
    c = x.shape[0]
    per_frame = x.shape[2] if x.ndim == 3 else 1
    sum_ax = (2,) if x.ndim == 3 else ()
    fsum = x.sum(axis=sum_ax) if sum_ax else x  # (C, L)
    fsq = (x * x).sum(axis=sum_ax) if sum_ax else x * x
    counts = per_frame * np.arange(1, x.shape[1] + 1, dtype=x.dtype)
    mean = np.cumsum(fsum, axis=1) / counts[None, :]
    ex2 = np.cumsum(fsq, axis=1) / counts[None, :]
    var = np.maximum(ex2 - mean**2, 0.0)
    shape = (c, x.shape[1]) + (1,) * (x.ndim - 2)
    normed = (x - mean.reshape(shape)) / np.sqrt(var.reshape(shape) + NORM_EPS)
    aff = (c,) + (1,) * (x.ndim - 1)
    return normed * gamma.reshape(aff) + beta.reshape(aff)


def prelu(x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    _check(alpha.shape == (x.shape[0],), "prelu alpha must be per-channel")
    a = alpha.reshape((x.shape[0],) + (1,) * (x.ndim - 1))
    return np.maximum(x, 0.0) + a * np.minimum(x, 0.0)


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-frame linear map on (features, L) data."""
    _check(x.ndim == 2, f"dense input must be (features, L), got {x.shape}")
    _check(w.shape[1] == x.shape[0], f"dense expects {w.shape[1]} features, got {x.shape[0]} (tensor 'w' {w.shape})")
    return w @ x + b[:, None]


def conv1d_dilated_causal(x: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int) -> np.ndarray:
    """Dilated causal 1-D convolution on (C, L) data."""
    _check(x.ndim == 2, f"conv1d input must be (C, L), got {x.shape}")
    c_out, c_in, k = w.shape
    _check(x.shape[0] == c_in, f"conv1d expects {c_in} channels, got {x.shape[0]} (tensor 'w' {w.shape})")
    length = x.shape[1]
    xp = np.pad(x, ((0, 0), ((k - 1) * dilation, 0)))
    out = np.zeros((c_out, length), dtype=x.dtype)
    for kk in range(k):
        out += w[:, :, kk] @ xp[:, kk * dilation : kk * dilation + length]
    return out + b[:, None]
