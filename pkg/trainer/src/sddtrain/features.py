"""Feature front end matching the engine's documented analysis:
16 kHz, 320-sample periodic Hann window, hop 160, 320-point FFT,
magnitude compression with beta = 0.5.  WAV I/O via the stdlib.
"""

from __future__ import annotations

import wave

import numpy as np

SAMPLE_RATE = 16000
WINDOW = 320
HOP = 160
BETA = 0.5


def hann_periodic(n: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


_WIN = hann_periodic(WINDOW)


def read_wav(path) -> np.ndarray:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono 16-bit PCM")
        if w.getframerate() != SAMPLE_RATE:
            raise ValueError(f"{path}: expected {SAMPLE_RATE} Hz")
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, signal: np.ndarray) -> None:
    pcm = np.clip(np.round(np.asarray(signal) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


def stft(signal: np.ndarray) -> np.ndarray:
    """(frames, 161) complex spectrogram; frame l covers [l*HOP, l*HOP+WINDOW)."""
    signal = np.asarray(signal, dtype=np.float64)
    frames = int(np.ceil(signal.shape[0] / HOP))
    padded = np.zeros((frames - 1) * HOP + WINDOW)
    padded[: signal.shape[0]] = signal
    idx = HOP * np.arange(frames)[:, None] + np.arange(WINDOW)[None, :]
    return np.fft.rfft(padded[idx] * _WIN[None, :], n=WINDOW, axis=1)


def compress_mag(spec: np.ndarray) -> np.ndarray:
    return np.abs(spec) ** BETA


def compress_complex(spec: np.ndarray) -> np.ndarray:
    mag = np.abs(spec)
    scale = np.ones_like(mag)
    nz = mag > 0
    scale[nz] = mag[nz] ** (BETA - 1.0)
    return spec * scale
