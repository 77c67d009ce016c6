"""16-bit PCM mono WAV reading/writing (scipy-backed)."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

from .errors import AudioIOError


def read_wav(path, expect_rate: int | None = None) -> tuple[np.ndarray, int]:
    """Load a mono 16-bit WAV as float64 in [-1, 1)."""
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as e:
        raise AudioIOError(f"no such file: {path}") from e
    except ValueError as e:
        raise AudioIOError(f"unreadable WAV {path}: {e}") from e
    if data.ndim != 1:
        raise AudioIOError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        signal = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        signal = data.astype(np.float64)
    else:
        raise AudioIOError(f"{path}: unsupported sample format {data.dtype}")
    if expect_rate is not None and rate != expect_rate:
        raise AudioIOError(f"{path}: sample rate {rate} != required {expect_rate}")
    return signal, int(rate)


def write_wav(path, signal: np.ndarray, rate: int = 16000) -> None:
    signal = np.asarray(signal, dtype=np.float64)
    pcm = np.clip(np.round(signal * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, rate, pcm)
