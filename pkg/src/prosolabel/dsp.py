"""Native acoustic front ends: log-mel spectrogram and F0 contour.

Both run on one canonical frame grid (default 20 ms hop, 40 ms window)
so their outputs co-align with frozen-extractor features, and both are
emitted as single-layer frame-axis FeatureTensors.

The pitch tracker follows the classic multi-band design: the signal is
low-pass filtered at half-octave-spaced cutoffs, each band proposes a
period from the spacing of four event types (rising and falling zero
crossings, peaks, dips), and per frame the proposal whose four estimates
agree best wins.  Frames with no consistent proposal are unvoiced.  All
decisions are ratio-based, so scaling the waveform leaves F0 untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import EmptyWaveform, InvalidBand, NonFiniteValue
from .features import AxisKind, FeatureTensor

LOG_FLOOR = 1e-10

# A band proposal is voiced only when its four period estimates agree to
# this relative spread.
VOICING_SPREAD = 0.1


@dataclass(frozen=True)
class Waveform:
    """Mono waveform with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"waveform must be 1-d, got shape {arr.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if arr.size and not np.all(np.isfinite(arr)):
            raise NonFiniteValue("waveform contains non-finite samples")
        if arr.size and (arr.min() < -1.0 or arr.max() > 1.0):
            raise ValueError("waveform amplitudes must lie in [-1, 1]")
        object.__setattr__(self, "samples", arr)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrameGrid:
    """Analysis grid: hop and window in samples; T = ceil(N / hop)."""

    hop: int
    window: int

    def __post_init__(self):
        if not (0 < self.hop <= self.window):
            raise ValueError(f"need 0 < hop <= window, got hop={self.hop} window={self.window}")

    @classmethod
    def from_ms(cls, sample_rate: int, hop_ms: float = 20.0, window_ms: float = 40.0):
        return cls(
            hop=int(round(sample_rate * hop_ms / 1000.0)),
            window=int(round(sample_rate * window_ms / 1000.0)),
        )

    def frame_count(self, n_samples: int) -> int:
        return int(math.ceil(n_samples / self.hop))


def frame_signal(samples: np.ndarray, grid: FrameGrid) -> np.ndarray:
    """Left-aligned frames of shape (T, window), zero-padded at the tail."""
    n = samples.size
    if n == 0:
        raise EmptyWaveform("cannot frame an empty signal")
    T = grid.frame_count(n)
    padded = np.zeros((T - 1) * grid.hop + grid.window, dtype=np.float64)
    padded[:n] = samples
    idx = np.arange(grid.window)[np.newaxis, :] + grid.hop * np.arange(T)[:, np.newaxis]
    return padded[idx]


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float, fmax: float):
    """Triangular mel filters over rfft bins; rows are filters.

    Also returns the (left, right) edge frequencies of each triangle,
    which tests use to locate a tone inside its winning filter.
    """
    edges_mel = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    edges_hz = mel_to_hz(edges_mel)
    bin_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    bank = np.zeros((n_mels, bin_freqs.size))
    for m in range(n_mels):
        left, center, right = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        rising = (bin_freqs - left) / max(center - left, 1e-12)
        falling = (right - bin_freqs) / max(right - center, 1e-12)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank, edges_hz


def _check_band(low: float, high: float, sample_rate: int):
    if not (0.0 <= low < high <= sample_rate / 2.0):
        raise InvalidBand(
            f"band [{low}, {high}] invalid for sample rate {sample_rate}"
        )


def melspectrogram(
    w: Waveform,
    grid: FrameGrid,
    n_mels: int = 80,
    fmin: float = 0.0,
    fmax: float | None = None,
) -> FeatureTensor:
    """Log mel-filterbank energies, shape 1 x T x n_mels.

    Power below LOG_FLOOR is clamped, so silence maps to log(LOG_FLOOR)
    in every cell.  Deterministic for identical input.
    """
    if w.samples.size == 0:
        raise EmptyWaveform("melspectrogram of empty waveform")
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if fmax is None:
        fmax = w.sample_rate / 2.0
    _check_band(fmin, fmax, w.sample_rate)
    frames = frame_signal(w.samples, grid)
    window = np.hanning(grid.window)
    spectrum = np.fft.rfft(frames * window, n=grid.window, axis=1)
    power = np.abs(spectrum) ** 2
    bank, _ = mel_filterbank(n_mels, grid.window, w.sample_rate, fmin, fmax)
    energies = power @ bank.T
    out = np.log(np.maximum(energies, LOG_FLOOR))
    return FeatureTensor(data=out[np.newaxis], axis_kind=AxisKind.FRAME)


def _lowpass_kernel(sample_rate: int, cutoff: float) -> np.ndarray:
    """Linear-phase windowed-sinc low-pass with unit DC gain."""
    half = max(int(round(1.5 * sample_rate / cutoff)), 8)
    n = np.arange(-half, half + 1)
    kernel = np.sinc(2.0 * cutoff / sample_rate * n) * np.blackman(2 * half + 1)
    return kernel / kernel.sum()


def _crossing_times(y: np.ndarray, rising: bool) -> np.ndarray:
    """Sub-sample zero-crossing times, linearly interpolated."""
    if rising:
        hits = np.flatnonzero((y[:-1] <= 0.0) & (y[1:] > 0.0))
    else:
        hits = np.flatnonzero((y[:-1] >= 0.0) & (y[1:] < 0.0))
    if hits.size == 0:
        return np.empty(0)
    denom = y[hits + 1] - y[hits]
    frac = np.where(denom != 0.0, -y[hits] / denom, 0.5)
    return hits + frac


def _extremum_times(y: np.ndarray, maxima: bool) -> np.ndarray:
    """Sub-sample local extremum times via parabolic interpolation."""
    if y.size < 3:
        return np.empty(0)
    a, b, c = y[:-2], y[1:-1], y[2:]
    if maxima:
        hits = np.flatnonzero((b > a) & (b >= c) & (b > 0.0))
    else:
        hits = np.flatnonzero((b < a) & (b <= c) & (b < 0.0))
    if hits.size == 0:
        return np.empty(0)
    denom = y[hits] - 2.0 * y[hits + 1] + y[hits + 2]
    offset = np.where(denom != 0.0, 0.5 * (y[hits] - y[hits + 2]) / denom, 0.0)
    return hits + 1 + np.clip(offset, -0.5, 0.5)


def _interval_f0_at(events: np.ndarray, t: float, sample_rate: int) -> float:
    """F0 implied by the event interval covering time t, or nan."""
    if events.size < 2 or t < events[0] or t > events[-1]:
        return math.nan
    k = int(np.searchsorted(events, t, side="right")) - 1
    k = min(k, events.size - 2)
    period = (events[k + 1] - events[k]) / sample_rate
    if period <= 0.0:
        return math.nan
    return 1.0 / period


def estimate_f0(
    w: Waveform,
    grid: FrameGrid,
    f0_floor: float = 70.0,
    f0_ceil: float = 400.0,
) -> FeatureTensor:
    """Per-frame F0, shape 1 x T x 2: [log F0 or 0, voiced flag].

    Unvoiced frames carry (0.0, 0.0) rather than an interpolated pitch.
    """
    if w.samples.size == 0:
        raise EmptyWaveform("estimate_f0 of empty waveform")
    _check_band(f0_floor, f0_ceil, w.sample_rate)
    if f0_floor <= 0.0:
        raise InvalidBand("f0_floor must be positive")

    T = grid.frame_count(w.samples.size)
    centers = grid.hop * np.arange(T) + grid.window / 2.0

    # Half-octave-spaced low-pass cutoffs; a band isolates fundamentals
    # lying between half its cutoff and the cutoff itself.
    cutoffs = []
    j = 0
    while True:
        cutoff = f0_floor * 2.0 ** ((j + 1) / 2.0)
        cutoffs.append(min(cutoff, w.sample_rate / 2.0 - 1e-9))
        if cutoff >= f0_ceil * math.sqrt(2.0):
            break
        j += 1

    best_f0 = np.full(T, np.nan)
    best_spread = np.full(T, np.inf)
    for cutoff in cutoffs:
        y = fftconvolve(w.samples, _lowpass_kernel(w.sample_rate, cutoff), mode="same")
        event_sets = [
            _crossing_times(y, rising=True),
            _crossing_times(y, rising=False),
            _extremum_times(y, maxima=True),
            _extremum_times(y, maxima=False),
        ]
        if any(ev.size < 2 for ev in event_sets):
            continue
        for t in range(T):
            estimates = np.array(
                [_interval_f0_at(ev, centers[t], w.sample_rate) for ev in event_sets]
            )
            if np.any(np.isnan(estimates)):
                continue
            mean = estimates.mean()
            if not (f0_floor <= mean <= f0_ceil) or mean > cutoff:
                continue
            spread = estimates.std() / mean
            if spread < best_spread[t]:
                best_spread[t] = spread
                best_f0[t] = mean

    voiced = (best_spread < VOICING_SPREAD) & np.isfinite(best_f0)
    out = np.zeros((T, 2))
    out[voiced, 0] = np.log(best_f0[voiced])
    out[voiced, 1] = 1.0
    return FeatureTensor(data=out[np.newaxis], axis_kind=AxisKind.FRAME)
