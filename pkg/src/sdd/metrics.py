"""Objective evaluation: ESTOI, SI-SNR, segmental SNR, manifest grids.

ESTOI follows the extended short-time objective intelligibility recipe:
resample to 10 kHz, drop frames more than 40 dB below the loudest clean
frame, form 15 one-third-octave band envelopes (first center 150 Hz)
from 256-sample Hann frames, then average row+column normalized
correlations over sliding 30-frame (384 ms) segments.

PESQ is deliberately absent (ITU-licensed reference implementation);
SI-SNR and segmental SNR stand in for desk-scale quality trends.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample_poly

from .errors import ConfigError
from .roomsim import load_manifest
from .wavio import read_wav

ESTOI_FS = 10000
ESTOI_FRAME = 256
ESTOI_HOP = 128
ESTOI_NFFT = 512
ESTOI_BANDS = 15
ESTOI_MIN_FREQ = 150.0
ESTOI_SEG_FRAMES = 30
ESTOI_DYN_RANGE_DB = 40.0


def _hann_open(n: int) -> np.ndarray:
    """Hann window without the zero endpoints (n interior points)."""
    return np.hanning(n + 2)[1:-1]


def resample_to_10k(x: np.ndarray, fs: int) -> np.ndarray:
    if fs == ESTOI_FS:
        return np.asarray(x, dtype=np.float64)
    from math import gcd

    g = gcd(ESTOI_FS, fs)
    # Kaiser beta 9 gives a > 60 dB stopband for the polyphase filter.
    return resample_poly(np.asarray(x, dtype=np.float64), ESTOI_FS // g, fs // g,
                         window=("kaiser", 9.0))


def _frame(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    n = 1 + (x.shape[0] - frame_len) // hop
    idx = hop * np.arange(n)[:, None] + np.arange(frame_len)[None, :]
    return x[idx]


def _remove_silent_frames(clean: np.ndarray, proc: np.ndarray):
    w = _hann_open(ESTOI_FRAME)
    cf = _frame(clean, ESTOI_FRAME, ESTOI_HOP) * w
    pf = _frame(proc, ESTOI_FRAME, ESTOI_HOP) * w
    with np.errstate(divide="ignore"):
        energies = 20.0 * np.log10(np.linalg.norm(cf, axis=1))
    keep = energies > energies.max() - ESTOI_DYN_RANGE_DB
    cf, pf = cf[keep], pf[keep]
    out_len = (cf.shape[0] - 1) * ESTOI_HOP + ESTOI_FRAME if cf.shape[0] else 0
    c_out = np.zeros(out_len)
    p_out = np.zeros(out_len)
    for i in range(cf.shape[0]):
        s = i * ESTOI_HOP
        c_out[s : s + ESTOI_FRAME] += cf[i]
        p_out[s : s + ESTOI_FRAME] += pf[i]
    return c_out, p_out


def _third_octave_matrix() -> np.ndarray:
    freqs = np.linspace(0, ESTOI_FS / 2, ESTOI_NFFT // 2 + 1)
    bands = np.zeros((ESTOI_BANDS, freqs.shape[0]))
    for k in range(ESTOI_BANDS):
        cf = ESTOI_MIN_FREQ * 2.0 ** (k / 3.0)
        lo, hi = cf * 2.0 ** (-1.0 / 6.0), cf * 2.0 ** (1.0 / 6.0)
        bands[k, (freqs >= lo) & (freqs < hi)] = 1.0
    return bands


def _band_envelopes(x: np.ndarray) -> np.ndarray:
    w = _hann_open(ESTOI_FRAME)
    frames = _frame(x, ESTOI_FRAME, ESTOI_HOP) * w
    spec = np.fft.rfft(frames, n=ESTOI_NFFT, axis=1)
    power = np.abs(spec) ** 2
    return np.sqrt(power @ _third_octave_matrix().T)  # (frames, bands)


def _row_col_normalize(seg: np.ndarray) -> np.ndarray:
    eps = 1e-20
    out = seg - seg.mean(axis=1, keepdims=True)
    out = out / (np.linalg.norm(out, axis=1, keepdims=True) + eps)
    out = out - out.mean(axis=0, keepdims=True)
    out = out / (np.linalg.norm(out, axis=0, keepdims=True) + eps)
    return out


def estoi(clean: np.ndarray, processed: np.ndarray, fs: int = 16000) -> float:
    """Extended short-time objective intelligibility in [-1, 1]."""
    clean = np.asarray(clean, dtype=np.float64)
    processed = np.asarray(processed, dtype=np.float64)
    if clean.shape != processed.shape:
        raise ConfigError("clean and processed must have equal length")
    c = resample_to_10k(clean, fs)
    p = resample_to_10k(processed, fs)
    min_samples = ESTOI_FRAME + (ESTOI_SEG_FRAMES - 1) * ESTOI_HOP
    if c.shape[0] < min_samples:
        raise ConfigError(
            f"need at least {min_samples} samples at 10 kHz (384 ms), got {c.shape[0]}")
    c, p = _remove_silent_frames(c, p)
    if c.shape[0] < min_samples:
        raise ConfigError("too little active signal after silence removal")
    cb = _band_envelopes(c)  # (frames, bands)
    pb = _band_envelopes(p)
    n_frames = cb.shape[0]
    if n_frames < ESTOI_SEG_FRAMES:
        raise ConfigError("too few frames for a 384 ms segment")
    scores = []
    for m in range(ESTOI_SEG_FRAMES, n_frames + 1):
        cseg = _row_col_normalize(cb[m - ESTOI_SEG_FRAMES : m].T)  # (bands, N)
        pseg = _row_col_normalize(pb[m - ESTOI_SEG_FRAMES : m].T)
        scores.append(np.sum(cseg * pseg) / ESTOI_SEG_FRAMES)
    return float(np.mean(scores))


def si_snr(clean: np.ndarray, processed: np.ndarray, cap_db: float = 60.0) -> float:
    """Scale-invariant SNR with optimal scalar projection, capped at +60 dB."""
    s = np.asarray(clean, dtype=np.float64)
    y = np.asarray(processed, dtype=np.float64)
    if s.shape != y.shape:
        raise ConfigError("clean and processed must have equal length")
    s = s - s.mean()
    y = y - y.mean()
    denom = float(np.dot(s, s))
    if denom <= 0.0:
        raise ConfigError("clean signal is silent")
    target = (np.dot(y, s) / denom) * s
    err = y - target
    p_t = float(np.dot(target, target))
    p_e = float(np.dot(err, err))
    if p_e <= 0.0 or p_t / p_e > 10.0 ** (cap_db / 10.0):
        return cap_db
    return 10.0 * np.log10(p_t / p_e)


def seg_snr(clean: np.ndarray, processed: np.ndarray, fs: int = 16000,
            frame_ms: float = 20.0, floor_db: float = -10.0,
            ceil_db: float = 35.0) -> float:
    """Per-frame SNR clamped to [-10, 35] dB, averaged over active frames."""
    s = np.asarray(clean, dtype=np.float64)
    y = np.asarray(processed, dtype=np.float64)
    if s.shape != y.shape:
        raise ConfigError("clean and processed must have equal length")
    n = int(fs * frame_ms / 1000.0)
    usable = s.shape[0] // n * n
    if usable == 0:
        raise ConfigError("signal shorter than one frame")
    sf = s[:usable].reshape(-1, n)
    yf = y[:usable].reshape(-1, n)
    energies = (sf**2).sum(axis=1)
    if energies.max() <= 0.0:
        raise ConfigError("clean signal is silent")
    active = energies > energies.max() * 1e-4  # within 40 dB of loudest frame
    vals = []
    for ce, err in zip(energies[active], ((yf - sf)[active] ** 2).sum(axis=1)):
        if err <= 0.0:
            vals.append(ceil_db)
        else:
            vals.append(float(np.clip(10.0 * np.log10(ce / err), floor_db, ceil_db)))
    return float(np.mean(vals))


# -- manifest evaluation ------------------------------------------------------

SNR_BUCKETS = (-3.0, 0.0, 3.0, 6.0, 9.0)
METRIC_FUNCS = {"estoi": estoi, "si_snr": si_snr, "seg_snr": seg_snr}


@dataclass
class EvalRow:
    system: str
    metric: str
    per_bucket: dict[float, float]
    average: float


@dataclass
class EvalReport:
    buckets: tuple[float, ...]
    counts: dict[float, int]
    rows: list[EvalRow] = field(default_factory=list)

    @property
    def pair_count(self) -> int:
        return sum(self.counts.values())

    def to_text(self) -> str:
        header = ["system", "metric"] + [f"{b:+.0f}dB" for b in self.buckets] + ["avg"]
        lines = ["\t".join(header)]
        table = [header]
        for row in self.rows:
            cells = [row.system, row.metric]
            cells += [f"{row.per_bucket[b]:.4f}" if b in row.per_bucket else "-"
                      for b in self.buckets]
            cells.append(f"{row.average:.4f}")
            table.append(cells)
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        out = []
        for r in table:
            out.append("  ".join(c.rjust(w) for c, w in zip(r, widths)))
        counts = ", ".join(f"{b:+.0f}dB: {self.counts.get(b, 0)}" for b in self.buckets)
        out.append(f"pairs: {self.pair_count} ({counts})")
        return "\n".join(out)

    def to_tsv(self) -> str:
        lines = ["system\tmetric\t" + "\t".join(f"{b:+.0f}" for b in self.buckets) + "\tavg"]
        for row in self.rows:
            cells = [row.system, row.metric]
            cells += [f"{row.per_bucket[b]:.6f}" if b in row.per_bucket else ""
                      for b in self.buckets]
            cells.append(f"{row.average:.6f}")
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"


def nearest_bucket(snr_db: float, buckets=SNR_BUCKETS) -> float:
    return min(buckets, key=lambda b: abs(b - snr_db))


def evaluate_manifest(manifest_path, enhance_fn=None, depths=(1, 2, 3, 4),
                      buckets=SNR_BUCKETS,
                      metrics=("estoi", "si_snr", "seg_snr"),
                      workers: int = 1) -> EvalReport:
    """Score noisy input and each requested stage depth over a manifest.

    ``enhance_fn(signal, depth) -> signal`` runs the system under test;
    with ``enhance_fn=None`` only the noisy baseline row is produced.
    Pairs fan out across ``workers`` threads; results aggregate in
    manifest order, so the report is identical for any worker count.
    """
    entries = load_manifest(manifest_path)

    def score_entry(rec):
        noisy, _ = read_wav(rec["noisy"])
        target, _ = read_wav(rec["target"])
        n = min(noisy.shape[0], target.shape[0])
        noisy, target = noisy[:n], target[:n]
        bucket = nearest_bucket(float(rec["snr_db"]), buckets)
        rows = [("noisy", metric, bucket, METRIC_FUNCS[metric](target, noisy))
                for metric in metrics]
        if enhance_fn is not None:
            for depth in depths:
                out = np.asarray(enhance_fn(noisy, depth))[:n]
                rows += [(f"stage{depth}", metric, bucket,
                          METRIC_FUNCS[metric](target, out)) for metric in metrics]
        return bucket, rows

    if workers > 1 and len(entries) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(score_entry, entries))
    else:
        results = [score_entry(rec) for rec in entries]

    per_system: dict[str, dict[str, dict[float, list[float]]]] = {}
    counts: dict[float, int] = {}
    for bucket, rows in results:
        counts[bucket] = counts.get(bucket, 0) + 1
        for system, metric, b, value in rows:
            per_system.setdefault(system, {}).setdefault(metric, {}).setdefault(
                b, []).append(value)

    report = EvalReport(buckets=tuple(buckets), counts=counts)
    for system, by_metric in per_system.items():
        for metric, by_bucket in by_metric.items():
            per_bucket = {b: float(np.mean(v)) for b, v in by_bucket.items()}
            total = sum(len(v) for v in by_bucket.values())
            avg = sum(np.sum(v) for v in by_bucket.values()) / total if total else 0.0
            report.rows.append(EvalRow(system, metric, per_bucket, float(avg)))
    return report
