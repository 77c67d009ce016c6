"""Classical residual-noise suppressor (stage 4).

Per frame: cepstral harmonic pre-suppression -> speech-presence
probability -> recursive noise-PSD update -> decision-directed a-priori
SNR -> Ephraim-Malah log-spectral-amplitude gain, floored and applied to
the complex spectrum.  Strictly frame-sequential and causal.

The LSA gain is G = (xi / (1 + xi)) * exp(E1(v) / 2) with
v = gamma * xi / (1 + xi); E1 is evaluated by a power series below
v = 1 and a continued fraction above, so no special-function
dependency is needed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn.weights import WeightsBundle

_EULER_GAMMA = 0.57721566490153286
_TINY = 1e-12


@dataclass(frozen=True)
class PpParams:
    """Post-processor tuning; all values serializable in the config file."""

    alpha_npsd: float = 0.8        # noise-PSD recursion weight
    alpha_dd: float = 0.98         # decision-directed smoothing
    gain_floor: float = 0.178      # linear, ~ -15 dB
    spp_smooth: float = 0.8        # posterior-SNR smoothing for provider A
    pitch_q_min: int = 40          # quefrency search range: 400 Hz ..
    pitch_q_max: int = 160         # .. 100 Hz at 16 kHz / 320-pt frames
    pitch_factor: float = 0.25     # suppression of the dominant pitch peak
    highq_cut: int = 120           # attenuate quefrencies at/above this
    highq_factor: float = 0.95
    npsd_growth_cap: float = 2.0   # max per-frame upward PSD ratio
    ms_factor: float = 5.0         # NPSD ceiling over the windowed minimum
    ms_window: int = 100           # minimum-statistics window, frames (1 s)
    ms_smooth: float = 0.8         # periodogram smoothing for the minimum
    provider: str = "a"            # SPP source: 'a' heuristic, 'b' network

    def __post_init__(self):
        for name in ("alpha_npsd", "alpha_dd", "spp_smooth"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {v}")
        if not 0.0 < self.gain_floor <= 1.0:
            raise ConfigError(f"gain_floor must be in (0, 1], got {self.gain_floor}")
        if self.provider not in ("a", "b"):
            raise ConfigError(f"unknown SPP provider '{self.provider}'")


# -- exponential integral ----------------------------------------------------


def exp_integral_e1(v):
    """E1(v) = integral_v^inf exp(-t)/t dt for v > 0.

    Series below v = 1, Lentz continued fraction above; relative error
    below 1e-10 across the switch.
    """
    v = np.asarray(v, dtype=np.float64)
    scalar = v.ndim == 0
    v = np.atleast_1d(v)
    if np.any(v <= 0):
        raise ValueError("E1 requires strictly positive argument")
    out = np.empty_like(v)

    small = v <= 1.0
    if np.any(small):
        x = v[small]
        total = -_EULER_GAMMA - np.log(x)
        term = np.ones_like(x)
        for k in range(1, 30):
            term = term * (-x) / k
            total = total - term / k
        out[small] = total

    large = ~small
    if np.any(large):
        # Modified Lentz with a_n = -n^2, b_n = x + 2n + 1 (b_0 = x + 1).
        x = v[large]
        huge = 1e300
        b = x + 1.0
        c = np.full_like(x, huge)
        d = 1.0 / b
        h = d.copy()
        for n in range(1, 120):
            a = -float(n) * float(n)
            b = b + 2.0
            d = 1.0 / (a * d + b)
            c = b + a / c
            delta = c * d
            h = h * delta
            if np.all(np.abs(delta - 1.0) < 1e-15):
                break
        out[large] = h * np.exp(-x)
    return float(out[0]) if scalar else out


def mmse_lsa_gain(xi, gamma):
    """Log-spectral-amplitude gain, clamped to at most 1.

    The floor is applied by the caller; this returns the bare estimator.
    """
    xi = np.asarray(xi, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(xi <= 0) or np.any(gamma <= 0):
        raise ValueError("mmse_lsa_gain requires positive xi and gamma")
    wiener = xi / (1.0 + xi)
    v = np.maximum(gamma * wiener, _TINY)
    g = wiener * np.exp(0.5 * exp_integral_e1(v))
    return np.minimum(g, 1.0)


# -- cepstral pre-suppression --------------------------------------------------


def cepstral_presmooth(power: np.ndarray, params: PpParams = PpParams()) -> np.ndarray:
    """Suppress harmonic ripple in a per-frame power spectrum.

    Works on the log spectrum's cepstrum: the dominant quefrency peak in
    the plausible pitch range is attenuated (plus a mild high-quefrency
    lifter), which keeps voiced harmonics from inflating the noise
    tracker.
    """
    power = np.asarray(power, dtype=np.float64)
    if np.any(power < 0):
        raise ConfigError("power spectrum must be nonnegative")
    peak = power.max()
    if peak <= 0.0:
        return np.zeros_like(power)
    n_fft = 2 * (power.shape[0] - 1)
    logp = np.log(np.maximum(power, peak * 1e-12))
    ceps = np.fft.irfft(logp, n=n_fft)

    def lifter(q: int, factor: float) -> None:
        ceps[q] *= factor
        if 0 < q < n_fft - q:
            ceps[n_fft - q] *= factor

    q_hi = min(params.pitch_q_max, n_fft // 2)
    if params.pitch_q_min < q_hi:
        seg = np.abs(ceps[params.pitch_q_min : q_hi + 1])
        q_star = params.pitch_q_min + int(np.argmax(seg))
        for q in (q_star - 1, q_star, q_star + 1):
            if 0 < q <= n_fft // 2:
                lifter(q, params.pitch_factor)
    for q in range(params.highq_cut, n_fft // 2 + 1):
        lifter(q, params.highq_factor)

    smoothed = np.fft.rfft(ceps, n=n_fft).real
    return np.exp(smoothed)


# -- noise-PSD recursion --------------------------------------------------------


def update_npsd(npsd: np.ndarray, presmoothed: np.ndarray, spp: np.ndarray,
                alpha: float = 0.8) -> np.ndarray:
    """SPP-gated recursive noise-PSD update.

    lambda <- alpha*lambda + (1-alpha)*[spp*lambda + (1-spp)*P], written
    in residual form so spp == 1 leaves lambda bit-identical.
    """
    spp = np.asarray(spp, dtype=np.float64)
    if np.any(spp < 0.0) or np.any(spp > 1.0):
        raise ConfigError("spp values must lie in [0, 1]")
    npsd = np.asarray(npsd, dtype=np.float64)
    presmoothed = np.asarray(presmoothed, dtype=np.float64)
    return npsd + (1.0 - alpha) * (1.0 - spp) * (presmoothed - npsd)


# -- SPP providers ---------------------------------------------------------------


class SppProviderA:
    """Heuristic speech-presence probability, no weights needed.

    Tracks a time-smoothed a-posteriori SNR (raw observed power against
    the current noise PSD) and maps it through spp = v / (1 + v) with
    v = gamma_bar * xi_hat / (1 + xi_hat), xi_hat = max(gamma_bar - 1, 0).
    The decision uses history only (the current frame is folded in
    afterwards), which keeps the gate uncorrelated with the periodogram
    it gates and the noise tracker unbiased on stationary noise.
    """

    def __init__(self, params: PpParams):
        self.params = params
        self.gamma_bar: np.ndarray | None = None

    def reset(self) -> None:
        self.gamma_bar = None

    def step(self, power: np.ndarray, npsd: np.ndarray) -> np.ndarray:
        gamma = power / np.maximum(npsd, _TINY)
        if self.gamma_bar is None:
            # No history yet: call everything noise so the tracker seeds.
            self.gamma_bar = gamma.copy()
            return np.zeros_like(gamma)
        xi_hat = np.maximum(self.gamma_bar - 1.0, 0.0)
        v = self.gamma_bar * xi_hat / (1.0 + xi_hat)
        spp = np.clip(v / (1.0 + v), 0.0, 1.0)
        a = self.params.spp_smooth
        self.gamma_bar = a * self.gamma_bar + (1.0 - a) * gamma
        return spp


class SppProviderB:
    """Tiny causal network over band energies, loaded from a weight bundle.

    dense -> tanh -> simple recurrent unit -> dense -> sigmoid, emitting
    22 per-band gains that are interpolated back to the 161 bins.
    """

    N_BANDS = 22
    HIDDEN = 48

    def __init__(self, bundle: WeightsBundle | None, bins: int = 161):
        if bundle is None:
            raise ConfigError("SPP provider 'b' selected but no weights were given")
        bundle.validate_against(self.tensor_spec())
        self.bundle = bundle
        self.bins = bins
        self.band_matrix = _triangular_bands(self.N_BANDS, bins)
        interp = self.band_matrix.T.copy()
        row_sum = interp.sum(axis=1, keepdims=True)
        self.interp = interp / np.maximum(row_sum, _TINY)
        self.h: np.ndarray | None = None

    @classmethod
    def tensor_spec(cls) -> dict[str, tuple[int, ...]]:
        h, nb = cls.HIDDEN, cls.N_BANDS
        return {
            "pp.fc_in.w": (h, nb),
            "pp.fc_in.b": (h,),
            "pp.rec.wx": (h, h),
            "pp.rec.wh": (h, h),
            "pp.rec.b": (h,),
            "pp.fc_out.w": (nb, h),
            "pp.fc_out.b": (nb,),
        }

    def reset(self) -> None:
        self.h = None

    def step(self, power: np.ndarray, npsd: np.ndarray) -> np.ndarray:
        feats = np.log10(self.band_matrix @ power + 1e-10)
        e = np.tanh(self.bundle.get("pp.fc_in.w") @ feats + self.bundle.get("pp.fc_in.b"))
        prev = self.h if self.h is not None else np.zeros(self.HIDDEN)
        self.h = np.tanh(
            self.bundle.get("pp.rec.wx") @ e
            + self.bundle.get("pp.rec.wh") @ prev
            + self.bundle.get("pp.rec.b")
        )
        gains = 1.0 / (1.0 + np.exp(-(self.bundle.get("pp.fc_out.w") @ self.h
                                      + self.bundle.get("pp.fc_out.b"))))
        return np.clip(self.interp @ gains, 0.0, 1.0)


def _triangular_bands(n_bands: int, bins: int, sample_rate: int = 16000) -> np.ndarray:
    """Overlapping triangular filters, mel-spaced, rows = bands."""

    def mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def imel(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    nyq = sample_rate / 2.0
    edges = imel(np.linspace(mel(0.0), mel(nyq), n_bands + 2))
    freqs = np.linspace(0.0, nyq, bins)
    fb = np.zeros((n_bands, bins))
    for i in range(n_bands):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - lo) / max(mid - lo, 1e-9)
        falling = (hi - freqs) / max(hi - mid, 1e-9)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def make_spp_provider(params: PpParams, bundle: WeightsBundle | None = None,
                      bins: int = 161):
    if params.provider == "a":
        return SppProviderA(params)
    return SppProviderB(bundle, bins=bins)


# -- frame-sequential tracker ----------------------------------------------------


class NoiseTracker:
    """Stateful stage-4 processor; one instance per stream.

    Two safeguards sit on top of the SPP-gated recursion: a per-frame
    growth cap, and a minimum-statistics ceiling (the noise estimate may
    not exceed ``ms_factor`` times the windowed minimum of the smoothed
    periodogram).  The ceiling is what keeps slowly swelling speech from
    being absorbed as noise; it never binds on stationary noise.
    """

    def __init__(self, bins: int = 161, params: PpParams | None = None,
                 spp_bundle: WeightsBundle | None = None):
        self.params = params or PpParams()
        self.bins = bins
        self.npsd: np.ndarray | None = None
        self.prev_clean_power: np.ndarray | None = None
        self.spp: np.ndarray | None = None
        self.pbar: np.ndarray | None = None
        self.minbuf: deque[np.ndarray] = deque(maxlen=self.params.ms_window)
        self.provider = make_spp_provider(self.params, spp_bundle, bins)

    def reset(self) -> None:
        self.npsd = None
        self.prev_clean_power = None
        self.spp = None
        self.pbar = None
        self.minbuf.clear()
        self.provider.reset()

    def step(self, frame: np.ndarray) -> np.ndarray:
        """Process one complex spectrum frame, returning the gained frame."""
        frame = np.asarray(frame)
        if frame.shape != (self.bins,):
            raise ConfigError(f"expected ({self.bins},) frame, got {frame.shape}")
        power = np.abs(frame) ** 2
        pres = cepstral_presmooth(power, self.params)
        if self.npsd is None:
            self.npsd = np.maximum(pres.copy(), _TINY)
        if self.pbar is None:
            self.pbar = power.copy()
        else:
            a = self.params.ms_smooth
            self.pbar = a * self.pbar + (1.0 - a) * power
        self.minbuf.append(self.pbar.copy())
        ceiling = self.params.ms_factor * np.min(np.asarray(self.minbuf), axis=0)

        self.spp = self.provider.step(power, self.npsd)
        updated = update_npsd(self.npsd, pres, self.spp, self.params.alpha_npsd)
        updated = np.minimum(updated, self.npsd * self.params.npsd_growth_cap)
        self.npsd = np.minimum(updated, np.maximum(ceiling, _TINY))

        gamma = np.maximum(power / np.maximum(self.npsd, _TINY), _TINY)
        xi_ml = np.maximum(gamma - 1.0, 0.0)
        if self.prev_clean_power is None:
            xi = xi_ml
        else:
            a = self.params.alpha_dd
            xi = a * self.prev_clean_power / np.maximum(self.npsd, _TINY) + (1.0 - a) * xi_ml
        xi = np.maximum(xi, 1e-6)
        gain = mmse_lsa_gain(xi, gamma)
        gain = np.clip(gain, self.params.gain_floor, 1.0)
        self.prev_clean_power = (gain * np.abs(frame)) ** 2
        return frame * gain

    def process(self, spec: np.ndarray) -> np.ndarray:
        """Apply the per-frame chain over a whole (L, bins) spectrogram."""
        spec = np.asarray(spec)
        out = np.empty_like(spec, dtype=np.complex128)
        for l in range(spec.shape[0]):
            out[l] = self.step(spec[l])
        return out


def apply_pp(spec: np.ndarray, params: PpParams | None = None,
             spp_bundle: WeightsBundle | None = None) -> np.ndarray:
    """One-shot wrapper: fresh tracker, full spectrogram in, gained out."""
    spec = np.asarray(spec)
    tracker = NoiseTracker(bins=spec.shape[1], params=params, spp_bundle=spp_bundle)
    return tracker.process(spec)
