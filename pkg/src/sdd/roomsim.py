"""Shoebox room impulse responses (image method) and noisy/clean synthesis.

The mirror-image source expansion follows Allen & Berkley: for every
lattice vector n and sign pattern p, an image source contributes an
attenuated impulse at distance/c, with wall reflection coefficients
raised to the visit counts.  Taps land on the nearest sample by default;
an optional windowed-sinc mode places them with sub-sample accuracy.

An RIR splits into its early part (direct arrival plus ``split_point``
samples, default 100 ms) and the late tail; the early convolution is the
training target, the full convolution plus scaled noise is the input.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError
from .wavio import read_wav, write_wav

SPEED_OF_SOUND = 343.0
DEFAULT_SPLIT_MS = 100.0


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple[float, float, float]
    source_pos: tuple[float, float, float]
    mic_pos: tuple[float, float, float]
    t60: float | None = None
    reflection: tuple[float, ...] | None = None  # (x1, x2, y1, y2, z1, z2)
    max_order: int | None = None
    c: float = SPEED_OF_SOUND
    fs: int = 16000

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=float)
        if np.any(dims <= 0):
            raise ConfigError("room dimensions must be positive")
        for name, pos in (("source", self.source_pos), ("mic", self.mic_pos)):
            p = np.asarray(pos, dtype=float)
            if np.any(p <= 0) or np.any(p >= dims):
                raise ConfigError(f"{name} position must lie strictly inside the room")
        if np.allclose(self.source_pos, self.mic_pos):
            raise ConfigError("source and mic positions coincide")
        if self.t60 is None and self.reflection is None:
            raise ConfigError("give either t60 or per-surface reflection coefficients")
        if self.t60 is not None and self.t60 <= 0:
            raise ConfigError("t60 must be positive")

    def reflection_coeffs(self) -> np.ndarray:
        """Per-surface amplitude reflection coefficients, shape (3, 2)."""
        if self.reflection is not None:
            beta = np.asarray(self.reflection, dtype=float).reshape(3, 2)
            if np.any(beta < 0) or np.any(beta >= 1.0001):
                raise ConfigError("reflection coefficients must lie in [0, 1]")
            return np.minimum(beta, 1.0)
        alpha = sabine_absorption(self.dimensions, self.t60)
        if alpha >= 1.0:
            raise ConfigError(f"t60={self.t60} unreachable: Sabine absorption {alpha:.2f} >= 1")
        return np.full((3, 2), np.sqrt(1.0 - alpha))


def sabine_absorption(dimensions, t60: float) -> float:
    lx, ly, lz = dimensions
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    return 0.161 * volume / (surface * t60)


def sabine_t60(dimensions, alpha: float) -> float:
    lx, ly, lz = dimensions
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    return 0.161 * volume / (surface * alpha)


@dataclass
class Rir:
    taps: np.ndarray
    direct_delay: int
    fs: int = 16000
    split_point: int = field(default=int(DEFAULT_SPLIT_MS / 1000.0 * 16000))

    def __post_init__(self):
        if self.split_point <= 0:
            raise ConfigError("split_point must be positive")


def _duration_for(room: RoomSpec) -> float:
    if room.t60 is not None:
        return max(1.25 * room.t60, 0.15)
    return 0.4


def simulate_rir(room: RoomSpec, duration: float | None = None,
                 fractional: bool = False, randomize_signs: bool = True,
                 sign_seed: int = 0x51AB) -> Rir:
    """Image-method RIR; nearest-sample taps unless ``fractional``.

    By default each image after the direct path carries a seeded random
    sign.  With all-positive amplitudes the densely packed late images
    add coherently and the measured decay comes out far slower than the
    room's absorption predicts; random polarity restores incoherent
    energy summation (and kills sweeping-echo artifacts).  Signs depend
    only on the lattice coordinates, so reciprocity is preserved.
    """
    dims = np.asarray(room.dimensions, dtype=float)
    src = np.asarray(room.source_pos, dtype=float)
    mic = np.asarray(room.mic_pos, dtype=float)
    beta = room.reflection_coeffs()
    if duration is None:
        duration = _duration_for(room)
    n_samples = int(np.ceil(duration * room.fs))
    max_dist = duration * room.c

    if room.max_order is not None:
        orders = np.full(3, room.max_order, dtype=int)
    else:
        orders = np.ceil(max_dist / (2.0 * dims)).astype(int)

    taps = np.zeros(n_samples + 1, dtype=np.float64)
    ny = np.arange(-orders[1], orders[1] + 1)
    nz = np.arange(-orders[2], orders[2] + 1)
    gy, gz = np.meshgrid(ny, nz, indexing="ij")
    sign_patterns = [(px, py, pz) for px in (0, 1) for py in (0, 1) for pz in (0, 1)]

    sinc_half = 32
    for nx in range(-orders[0], orders[0] + 1):
        for pi, p in enumerate(sign_patterns):
            img_x = (1 - 2 * p[0]) * src[0] + 2.0 * nx * dims[0]
            img_y = (1 - 2 * p[1]) * src[1] + 2.0 * gy * dims[1]
            img_z = (1 - 2 * p[2]) * src[2] + 2.0 * gz * dims[2]
            if room.max_order is not None:
                refl_count = (
                    abs(nx - p[0]) + abs(nx)
                    + np.abs(gy - p[1]) + np.abs(gy)
                    + np.abs(gz - p[2]) + np.abs(gz)
                )
                keep = refl_count <= room.max_order
            else:
                keep = np.ones_like(gy, dtype=bool)
            dist = np.sqrt(
                (img_x - mic[0]) ** 2 + (img_y - mic[1]) ** 2 + (img_z - mic[2]) ** 2
            )
            amp = (
                beta[0, 0] ** abs(nx - p[0]) * beta[0, 1] ** abs(nx)
                * beta[1, 0] ** np.abs(gy - p[1]) * beta[1, 1] ** np.abs(gy)
                * beta[2, 0] ** np.abs(gz - p[2]) * beta[2, 1] ** np.abs(gz)
            ) / (4.0 * np.pi * np.maximum(dist, 1e-6))
            if randomize_signs:
                # Key the polarity on (p, |n|) so source/mic reciprocity,
                # which maps n -> -n on zero-sign axes, sees identical signs.
                rng = np.random.default_rng(
                    np.random.SeedSequence([sign_seed, pi, abs(nx)])
                )
                sign_grid = rng.choice(np.array([-1.0, 1.0]),
                                       size=(orders[1] + 1, orders[2] + 1))
                signs = sign_grid[np.abs(gy), np.abs(gz)]
                if nx == 0 and p == (0, 0, 0):
                    signs[(gy == 0) & (gz == 0)] = 1.0
                amp = amp * signs
            keep &= dist <= max_dist
            if not np.any(keep):
                continue
            d = dist[keep]
            a = amp[keep]
            t_samp = d / room.c * room.fs
            if fractional:
                for ti, ai in zip(t_samp, a):
                    lo = max(int(np.ceil(ti)) - sinc_half, 0)
                    hi = min(int(np.floor(ti)) + sinc_half, n_samples)
                    n = np.arange(lo, hi + 1)
                    rel = n - ti
                    kernel = np.sinc(rel) * 0.5 * (1.0 + np.cos(np.pi * rel / (sinc_half + 1)))
                    taps[n] += ai * kernel
            else:
                idx = np.round(t_samp).astype(int)
                ok = idx <= n_samples
                np.add.at(taps, idx[ok], a[ok])

    direct_dist = float(np.linalg.norm(src - mic))
    direct_delay = int(np.round(direct_dist / room.c * room.fs))
    split = int(round(DEFAULT_SPLIT_MS / 1000.0 * room.fs))
    return Rir(taps=taps, direct_delay=direct_delay, fs=room.fs, split_point=split)


def split_rir(rir: Rir) -> tuple[Rir, Rir]:
    """Exact early/late partition at direct arrival + split_point samples."""
    cut = min(rir.direct_delay + rir.split_point, rir.taps.shape[0])
    early = np.zeros_like(rir.taps)
    late = np.zeros_like(rir.taps)
    early[:cut] = rir.taps[:cut]
    late[cut:] = rir.taps[cut:]
    mk = lambda taps: Rir(taps=taps, direct_delay=rir.direct_delay, fs=rir.fs,
                          split_point=rir.split_point)
    return mk(early), mk(late)


def reverberate(clean: np.ndarray, rir: Rir) -> tuple[np.ndarray, np.ndarray]:
    """Full-RIR and early-RIR convolutions, both trimmed to the input length."""
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 1 or clean.size == 0:
        raise ConfigError("clean signal must be a non-empty vector")
    early, _ = split_rir(rir)
    full = fftconvolve(clean, rir.taps)[: clean.shape[0]]
    target = fftconvolve(clean, early.taps)[: clean.shape[0]]
    return full, target


def active_power(signal: np.ndarray, fs: int = 16000, frame_ms: float = 20.0,
                 threshold_db: float = 40.0) -> float:
    """Mean power over frames within ``threshold_db`` of the loudest frame."""
    signal = np.asarray(signal, dtype=np.float64)
    n = int(fs * frame_ms / 1000.0)
    usable = signal[: signal.shape[0] // n * n]
    if usable.size == 0:
        usable = signal
        frames = usable[None, :] if usable.size else np.zeros((0, 1))
    else:
        frames = usable.reshape(-1, n)
    powers = (frames**2).mean(axis=1)
    if powers.size == 0 or powers.max() <= 0.0:
        return 0.0
    active = powers >= powers.max() * 10.0 ** (-threshold_db / 10.0)
    return float(powers[active].mean())


def mix_at_snr(reference: np.ndarray, noise: np.ndarray, snr_db: float,
               carrier: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Scale the noise so active-reference power over noise power is snr_db.

    The mixture is ``carrier + gain * noise`` (carrier defaults to the
    reference itself); returns the mixture and the applied noise gain.
    """
    reference = np.asarray(reference, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if not np.isfinite(snr_db):
        raise ConfigError(f"snr_db must be finite, got {snr_db}")
    if reference.shape != noise.shape:
        raise ConfigError("reference and noise must have equal length")
    p_ref = active_power(reference)
    p_noise = float(np.mean(noise**2))
    if p_ref <= 0.0:
        raise ConfigError("reference signal is silent")
    if p_noise <= 0.0:
        raise ConfigError("noise signal is silent")
    gain = float(np.sqrt(p_ref / (p_noise * 10.0 ** (snr_db / 10.0))))
    base = reference if carrier is None else np.asarray(carrier, dtype=np.float64)
    return base + gain * noise, gain


def measure_snr(reference: np.ndarray, scaled_noise: np.ndarray) -> float:
    return 10.0 * np.log10(active_power(reference) / np.mean(scaled_noise**2))


@dataclass(frozen=True)
class MixSpec:
    snr_range: tuple[float, float] = (-5.0, 15.0)
    snr_db: float | None = None

    def draw(self, rng: np.random.Generator) -> float:
        if self.snr_db is not None:
            lo, hi = self.snr_range
            if not lo <= self.snr_db <= hi:
                raise ConfigError(f"snr_db {self.snr_db} outside range {self.snr_range}")
            return self.snr_db
        return float(rng.uniform(*self.snr_range))


@dataclass(frozen=True)
class RoomSampler:
    dims_min: tuple[float, float, float] = (3.0, 3.0, 2.4)
    dims_max: tuple[float, float, float] = (8.0, 6.0, 3.5)
    t60_range: tuple[float, float] = (0.15, 0.5)
    margin: float = 0.5
    fs: int = 16000

    def sample(self, rng: np.random.Generator) -> RoomSpec:
        dims = tuple(rng.uniform(lo, hi) for lo, hi in zip(self.dims_min, self.dims_max))
        t60 = float(rng.uniform(*self.t60_range))

        def pos():
            return tuple(
                float(rng.uniform(self.margin, d - self.margin)) for d in dims
            )

        src, mic = pos(), pos()
        while np.allclose(src, mic):
            mic = pos()
        return RoomSpec(dimensions=dims, source_pos=src, mic_pos=mic, t60=t60, fs=self.fs)


def _wav_files(directory) -> list[str]:
    try:
        names = sorted(os.listdir(directory))
    except OSError as e:
        raise ConfigError(f"cannot list directory {directory}: {e}") from e
    files = [os.path.join(directory, n) for n in names if n.lower().endswith(".wav")]
    if not files:
        raise ConfigError(f"no WAV files in {directory}")
    return files


def _fit_length(signal: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    if signal.shape[0] >= length:
        start = int(rng.integers(0, signal.shape[0] - length + 1))
        return signal[start : start + length]
    reps = int(np.ceil(length / signal.shape[0]))
    return np.tile(signal, reps)[:length]


def synth_dataset(clean_dir, noise_dir, out_dir, count: int, seed: int,
                  room_sampler: RoomSampler | None = None,
                  mix_spec: MixSpec | None = None,
                  peak: float = 0.7, workers: int = 1) -> str:
    """Emit (noisy, target, reverb) WAV triples plus a JSONL manifest.

    Fully deterministic under ``seed`` regardless of ``workers``: pair i
    derives its generator from SeedSequence([seed, i]) and the manifest
    is assembled in index order.  The manifest records paths, the drawn
    SNR and noise gain, and the sampled room geometry.
    """
    room_sampler = room_sampler or RoomSampler()
    mix_spec = mix_spec or MixSpec()
    clean_files = _wav_files(clean_dir)
    noise_files = _wav_files(noise_dir)
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.jsonl")

    def make_pair(i: int) -> dict:
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        clean_path = clean_files[int(rng.integers(len(clean_files)))]
        noise_path = noise_files[int(rng.integers(len(noise_files)))]
        clean, _ = read_wav(clean_path, expect_rate=room_sampler.fs)
        noise, _ = read_wav(noise_path, expect_rate=room_sampler.fs)
        noise = _fit_length(noise, clean.shape[0], rng)
        room = room_sampler.sample(rng)
        rir = simulate_rir(room)
        reverb, target = reverberate(clean, rir)
        snr_db = mix_spec.draw(rng)
        noisy, gain = mix_at_snr(target, noise, snr_db, carrier=reverb)
        scale = 1.0
        peak_val = np.max(np.abs(noisy))
        if peak_val > peak:
            scale = peak / peak_val
        stem = f"pair_{i:05d}"
        names = {
            "noisy": f"{stem}_noisy.wav",
            "target": f"{stem}_target.wav",
            "reverb": f"{stem}_reverb.wav",
        }
        write_wav(os.path.join(out_dir, names["noisy"]), noisy * scale, room_sampler.fs)
        write_wav(os.path.join(out_dir, names["target"]), target * scale, room_sampler.fs)
        write_wav(os.path.join(out_dir, names["reverb"]), reverb * scale, room_sampler.fs)
        return {
            "id": stem,
            # WAV paths are stored relative to the manifest's directory.
            "noisy": names["noisy"],
            "target": names["target"],
            "reverb": names["reverb"],
            "clean_src": clean_path,
            "noise_src": noise_path,
            "snr_db": round(snr_db, 6),
            "noise_gain": round(gain * scale, 9),
            "scale": round(scale, 9),
            "room": {
                "dimensions": [round(d, 4) for d in room.dimensions],
                "source": [round(x, 4) for x in room.source_pos],
                "mic": [round(x, 4) for x in room.mic_pos],
                "t60": round(room.t60, 4),
            },
            "seed": seed,
        }

    if workers > 1 and count > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(make_pair, range(count)))
    else:
        records = [make_pair(i) for i in range(count)]
    with open(manifest_path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest_path


def load_manifest(path) -> list[dict]:
    """Parse a JSONL manifest; WAV paths come back resolved to absolute."""
    from .errors import FormatError

    base = os.path.dirname(os.path.abspath(path))
    entries = []
    try:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    raise FormatError(f"{path}:{lineno}: bad manifest record: {e}") from e
                for key in ("noisy", "target", "reverb"):
                    if key in rec and not os.path.isabs(rec[key]):
                        rec[key] = os.path.join(base, rec[key])
                entries.append(rec)
    except OSError as e:
        raise FormatError(f"cannot read manifest {path}: {e}") from e
    return entries


def schroeder_t60(taps: np.ndarray, fs: int = 16000) -> float:
    """Backward-integrated energy decay, fitted between -5 and -25 dB."""
    energy = taps.astype(np.float64) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    edc = edc / edc[0]
    db = 10.0 * np.log10(np.maximum(edc, 1e-30))
    idx = np.where((db <= -5.0) & (db >= -25.0))[0]
    if idx.size < 8:
        raise ConfigError("decay range too short to fit a T60")
    t = idx / fs
    slope, _ = np.polyfit(t, db[idx], 1)
    if slope >= 0:
        raise ConfigError("energy decay curve is not decaying")
    return -60.0 / slope
