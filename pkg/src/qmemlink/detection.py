"""Detector models, timing histograms, and SNR extraction.

A trial's detection record spans a window around the hardwired acceptance
gate; photon arrival times inside the gate follow an asymmetric wave packet
(exponential rise convolved with exponential decay), while noise and dark
clicks are uniform over the record.  SNR is defined on the histogram as
(in-window rate - background rate) / background rate, where the background
region is every bin outside the annotated signal window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np


@dataclass
class DetectorParams:
    kind: str = "snspd"
    efficiency: float = 0.88
    dark_cps: float = 30.0
    window_ns: float = 200.0

    def validate(self) -> None:
        if self.kind not in ("snspd", "apd"):
            raise ValueError(f"unknown detector kind {self.kind!r}")
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency {self.efficiency} outside [0, 1]")
        if self.dark_cps < 0.0:
            raise ValueError("dark_cps must be non-negative")
        if self.window_ns <= 0.0:
            raise ValueError("window_ns must be positive")


def dark_click_probability(dark_cps: float, window_ns: float) -> float:
    return 1.0 - math.exp(-dark_cps * window_ns * 1e-9)


@dataclass
class ClickResult:
    clicked: bool
    kind: Optional[str]        # 'signal' or 'dark'
    time_ns: Optional[float]


def sample_click(
    p_photon: float,
    params: DetectorParams,
    window_ns: Optional[float] = None,
    rng: np.random.Generator = None,
) -> ClickResult:
    """Sample one detection window.

    A signal click fires with probability p_photon * efficiency, a dark click
    independently with 1 - exp(-dark_rate * window); when both fire, the
    earlier (uniform-time) one is recorded.
    """
    if not 0.0 <= p_photon <= 1.0:
        raise ValueError(f"p_photon {p_photon} outside [0, 1]")
    window = params.window_ns if window_ns is None else window_ns
    t_signal = rng.uniform(0.0, window) if rng.random() < p_photon * params.efficiency else None
    t_dark = (
        rng.uniform(0.0, window)
        if rng.random() < dark_click_probability(params.dark_cps, window)
        else None
    )
    if t_signal is None and t_dark is None:
        return ClickResult(False, None, None)
    if t_dark is None or (t_signal is not None and t_signal <= t_dark):
        return ClickResult(True, "signal", t_signal)
    return ClickResult(True, "dark", t_dark)


@dataclass
class PulseShape:
    """Photon wave packet: exponential rise feeding an exponential decay.

    Arrival times are distributed as the sum of two exponentials with means
    rise_ns and decay_ns, reproducing the asymmetric single-photon pulses
    seen on time histograms.
    """

    rise_ns: float = 7.0
    decay_ns: float = 16.0

    def validate(self) -> None:
        if self.rise_ns <= 0.0 or self.decay_ns <= 0.0:
            raise ValueError("pulse time constants must be positive")
        if abs(self.rise_ns - self.decay_ns) < 1e-9:
            raise ValueError("rise and decay constants must differ")

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        a, b = self.rise_ns, self.decay_ns
        out = (np.exp(-t / b) - np.exp(-t / a)) / (b - a)
        return np.where(t >= 0.0, out, 0.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        a, b = self.rise_ns, self.decay_ns
        out = 1.0 - (b * np.exp(-t / b) - a * np.exp(-t / a)) / (b - a)
        return np.where(t >= 0.0, out, 0.0)

    def quantile(self, q: float) -> float:
        if not 0.0 < q < 1.0:
            raise ValueError("quantile must be in (0, 1)")
        lo, hi = 0.0, 20.0 * (self.rise_ns + self.decay_ns)
        while self.cdf(hi) < q:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.cdf(mid) < q:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def full_width_window(self, q_lo: float = 0.01, q_hi: float = 0.99) -> tuple[float, float]:
        """Span holding the central bulk of the pulse; annotated on histograms."""
        return self.quantile(q_lo), self.quantile(q_hi)

    def fwhm_window(self) -> tuple[float, float]:
        t_peak = float(
            math.log(self.decay_ns / self.rise_ns)
            / (1.0 / self.rise_ns - 1.0 / self.decay_ns)
        )
        half = 0.5 * float(self.pdf(t_peak))

        def cross(lo, hi, rising):
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if (float(self.pdf(mid)) < half) == rising:
                    lo = mid
                else:
                    hi = mid
            return 0.5 * (lo + hi)

        left = cross(0.0, t_peak, rising=True)
        hi = t_peak
        while float(self.pdf(hi)) > half:
            hi += self.decay_ns
        right = cross(t_peak, hi, rising=False)
        return left, right

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.exponential(self.rise_ns, size=n) + rng.exponential(self.decay_ns, size=n)


@dataclass
class DetectionEvent:
    trial_id: int
    channel: str               # analyzer port id, e.g. 'herald_t', 'read_down'
    timestamp_ns: int
    kind: str                  # 'signal', 'noise', or 'dark'


@dataclass
class Histogram:
    """Fixed-width timing histogram with an annotated signal window."""

    t0_ns: float
    bin_width_ns: float
    counts: np.ndarray
    signal_window_ns: Optional[tuple[float, float]] = None

    @property
    def edges(self) -> np.ndarray:
        n = len(self.counts)
        return self.t0_ns + self.bin_width_ns * np.arange(n + 1)

    def total(self) -> int:
        return int(self.counts.sum())

    def add(self, other: "Histogram") -> "Histogram":
        if (
            other.t0_ns != self.t0_ns
            or other.bin_width_ns != self.bin_width_ns
            or len(other.counts) != len(self.counts)
        ):
            raise ValueError("histograms have incompatible binning")
        return Histogram(
            self.t0_ns, self.bin_width_ns, self.counts + other.counts, self.signal_window_ns
        )

    def _window_mask(self, window: tuple[float, float]) -> np.ndarray:
        centers = self.t0_ns + self.bin_width_ns * (np.arange(len(self.counts)) + 0.5)
        return (centers >= window[0]) & (centers < window[1])


def build_histogram(
    events: Iterable,
    bin_width_ns: float = 1.0,
    t0_ns: float = 0.0,
    span_ns: Optional[float] = None,
    signal_window_ns: Optional[tuple[float, float]] = None,
) -> Histogram:
    """Bin event timestamps (DetectionEvent objects or raw times)."""
    times = np.array(
        [e.timestamp_ns if isinstance(e, DetectionEvent) else e for e in events], dtype=float
    )
    if span_ns is None:
        span_ns = (times.max() - t0_ns + bin_width_ns) if times.size else bin_width_ns
    n_bins = max(1, int(math.ceil(span_ns / bin_width_ns)))
    idx = np.floor((times - t0_ns) / bin_width_ns).astype(int)
    idx = idx[(idx >= 0) & (idx < n_bins)]
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    return Histogram(t0_ns, bin_width_ns, counts, signal_window_ns)


def fwhm_window_from_histogram(h: Histogram) -> tuple[float, float]:
    """Half-maximum crossings around the tallest bin of the signal region."""
    counts = h.counts.astype(float)
    if h.signal_window_ns is not None:
        mask = h._window_mask(h.signal_window_ns)
    else:
        mask = np.ones(len(counts), dtype=bool)
    region = np.where(mask)[0]
    peak_idx = region[np.argmax(counts[region])]
    # Light smoothing stabilizes the crossing search on sparse data.
    kernel = np.ones(3) / 3.0
    smooth = np.convolve(counts, kernel, mode="same")
    half = smooth[peak_idx] / 2.0
    left = peak_idx
    while left > 0 and smooth[left - 1] >= half:
        left -= 1
    right = peak_idx
    while right < len(counts) - 1 and smooth[right + 1] >= half:
        right += 1
    return (
        h.t0_ns + h.bin_width_ns * left,
        h.t0_ns + h.bin_width_ns * (right + 1),
    )


def snr_from_histogram(h: Histogram, mode: str = "full_width") -> float:
    """In-window excess rate over the out-of-window background rate.

    The background region is always the bins outside the annotated signal
    window; 'fwhm' only narrows the numerator window to the half-maximum
    span of the peak.
    """
    if h.signal_window_ns is None:
        raise ValueError("histogram has no annotated signal window")
    if mode == "full_width":
        window = h.signal_window_ns
    elif mode == "fwhm":
        window = fwhm_window_from_histogram(h)
    else:
        raise ValueError(f"unknown SNR mode {mode!r}")
    counts = h.counts.astype(float)
    in_mask = h._window_mask(window)
    bkg_mask = ~h._window_mask(h.signal_window_ns)
    if in_mask.sum() == 0 or bkg_mask.sum() == 0:
        raise ValueError("signal window leaves no bins to compare")
    bkg_rate = counts[bkg_mask].mean()
    in_rate = counts[in_mask].mean()
    if bkg_rate == 0.0:
        return math.inf
    return (in_rate - bkg_rate) / bkg_rate


def window_event_fraction(h: Histogram, window: tuple[float, float]) -> float:
    """Fraction of all histogram counts lying inside ``window``."""
    total = h.total()
    if total == 0:
        return 0.0
    return float(h.counts[h._window_mask(window)].sum()) / total
