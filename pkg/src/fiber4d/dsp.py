"""Transmit/receive DSP: RRC pulse shaping, launch power, CD compensation.

All functions work on `DualPolWaveform` values and are pure.  Internal units
are SI (s, m, W); dBm conversions happen only at the API boundary.  Filtering
is circular (FFT) with zero group delay: the filter is centered on sample 0
before transforming, so symbol k always lives at sample k*sps and no delay
bookkeeping is needed anywhere in the chain.  Edge effects of non-circular
physics (dispersion memory) are handled by discarding guard symbols, see
`guard_symbols`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RrcFilter:
    """Root-raised-cosine filter taps (odd length, unit energy, symmetric)."""

    taps: np.ndarray
    rolloff: float
    sps: int
    span_symbols: int

    def __post_init__(self):
        taps = np.ascontiguousarray(np.asarray(self.taps, dtype=np.float64))
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)


@dataclass(frozen=True)
class DualPolWaveform:
    """Two equal-length complex sample streams (X/Y polarization) at a common rate."""

    x: np.ndarray
    y: np.ndarray
    sample_rate: float

    def __post_init__(self):
        x = np.ascontiguousarray(self.x)
        y = np.ascontiguousarray(self.y)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("x and y must be 1-D arrays of equal length")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    def power(self) -> float:
        """Mean total power over both polarizations, W."""
        return float(np.mean(np.abs(self.x) ** 2 + np.abs(self.y) ** 2))

    def check_finite(self, what: str = "waveform") -> None:
        if not (np.all(np.isfinite(self.x.view(np.float64))) and np.all(np.isfinite(self.y.view(np.float64)))):
            raise FloatingPointError(f"{what} contains NaN/Inf")


def design_rrc(rolloff: float, sps: int, span_symbols: int) -> RrcFilter:
    """Closed-form RRC impulse response, unit-energy normalized.

    The two removable singularities (t = 0 and |t| = T/(4*rolloff)) are
    replaced by their analytic limits.
    """
    if not 0 < rolloff <= 1:
        raise ValueError(f"rolloff must be in (0, 1], got {rolloff}")
    if sps < 2:
        raise ValueError(f"sps must be >= 2, got {sps}")
    if span_symbols < 4:
        raise ValueError(f"span_symbols must be >= 4, got {span_symbols}")
    n = span_symbols * sps + 1
    t = (np.arange(n) - (n - 1) / 2) / sps  # symbol periods
    b = rolloff
    taps = np.empty(n)
    at_zero = np.abs(t) < 1e-12
    at_sing = np.abs(np.abs(t) - 1.0 / (4 * b)) < 1e-9
    regular = ~(at_zero | at_sing)
    tr = t[regular]
    taps[regular] = (np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))) / (
        np.pi * tr * (1 - (4 * b * tr) ** 2)
    )
    taps[at_zero] = 1 - b + 4 * b / np.pi
    taps[at_sing] = (b / math.sqrt(2)) * (
        (1 + 2 / np.pi) * math.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * math.cos(np.pi / (4 * b))
    )
    taps /= np.linalg.norm(taps)
    return RrcFilter(taps, rolloff, sps, span_symbols)


def filter_spectrum(filt: RrcFilter, n_samples: int) -> np.ndarray:
    """Zero-phase frequency response of the filter on an n-point circular grid."""
    if len(filt.taps) > n_samples:
        raise ValueError(f"filter ({len(filt.taps)} taps) longer than signal ({n_samples} samples)")
    padded = np.zeros(n_samples)
    padded[: len(filt.taps)] = filt.taps
    padded = np.roll(padded, -(len(filt.taps) - 1) // 2)
    return np.fft.fft(padded)


def circular_filter(samples: np.ndarray, filt: RrcFilter) -> np.ndarray:
    """Zero-delay circular convolution with the filter taps."""
    spec = filter_spectrum(filt, samples.shape[-1])
    return np.fft.ifft(np.fft.fft(samples) * spec)


def modulate(symbols: np.ndarray, filt: RrcFilter, symbol_rate: float) -> DualPolWaveform:
    """Upsample 4D symbols by zero stuffing and pulse-shape both polarizations.

    The output carries a sqrt(sps) gain so a unit-average-energy constellation
    yields a unit-mean-power waveform; a single unit symbol reproduces the
    filter taps times sqrt(sps).
    """
    symbols = np.asarray(symbols)
    if symbols.ndim != 2 or symbols.shape[1] != 4 or symbols.shape[0] == 0:
        raise ValueError("symbols must be a nonempty (K, 4) array")
    K = symbols.shape[0]
    sps = filt.sps
    up = np.zeros((2, K * sps), dtype=complex)
    up[0, ::sps] = symbols[:, 0] + 1j * symbols[:, 1]
    up[1, ::sps] = symbols[:, 2] + 1j * symbols[:, 3]
    shaped = circular_filter(up, filt) * math.sqrt(sps)
    return DualPolWaveform(shaped[0], shaped[1], sps * symbol_rate)


def dbm_to_watt(power_dbm: float) -> float:
    return 10.0 ** ((power_dbm - 30.0) / 10.0)


def set_launch_power(w: DualPolWaveform, power_dbm: float) -> DualPolWaveform:
    """Scale the waveform so mean total power equals the requested launch power."""
    p_now = w.power()
    if p_now == 0:
        raise ValueError("cannot set launch power of an all-zero waveform")
    scale = math.sqrt(dbm_to_watt(power_dbm) / p_now)
    return DualPolWaveform(w.x * scale, w.y * scale, w.sample_rate)


def cd_compensate(
    w: DualPolWaveform, beta2: float, length: float, center_offset_hz: float = 0.0
) -> DualPolWaveform:
    """Invert accumulated chromatic dispersion over `length` meters.

    The forward fiber multiplies the spectrum by exp(+j*(beta2/2)*w^2*L); this
    applies the conjugate multiplier.  `center_offset_hz` evaluates the phase
    at the channel's absolute frequency offset, which also removes the
    inter-channel walk-off (group delay) a demuxed WDM channel accumulated.
    """
    n = len(w)
    omega = 2 * np.pi * (np.fft.fftfreq(n, 1.0 / w.sample_rate) + center_offset_hz)
    comp = np.exp(-1j * (beta2 / 2.0) * omega**2 * length)
    x = np.fft.ifft(np.fft.fft(w.x) * comp)
    y = np.fft.ifft(np.fft.fft(w.y) * comp)
    return DualPolWaveform(x, y, w.sample_rate)


def matched_filter_downsample(w: DualPolWaveform, filt: RrcFilter, n_symbols: int) -> np.ndarray:
    """Matched-filter both polarizations and sample at symbol instants.

    Returns an (n_symbols, 4) array.  The 1/sqrt(sps) gain makes the
    modulate -> matched filter cascade unit gain on symbols.
    """
    sps = filt.sps
    if n_symbols * sps > len(w):
        raise ValueError(f"waveform ({len(w)} samples) too short for {n_symbols} symbols at sps={sps}")
    stacked = np.stack([w.x, w.y])
    filtered = circular_filter(stacked, filt) / math.sqrt(sps)
    sx = filtered[0, ::sps][:n_symbols]
    sy = filtered[1, ::sps][:n_symbols]
    return np.stack([sx.real, sx.imag, sy.real, sy.imag], axis=1)


def frequency_shift(w: DualPolWaveform, delta_f: float) -> DualPolWaveform:
    """Multiply by exp(j*2*pi*delta_f*t) with t taken from the sample index."""
    if abs(delta_f) >= w.sample_rate / 2:
        raise ValueError(f"|delta_f|={abs(delta_f):g} Hz exceeds Nyquist {w.sample_rate / 2:g} Hz")
    rot = np.exp(2j * np.pi * delta_f * np.arange(len(w)) / w.sample_rate)
    return DualPolWaveform(w.x * rot, w.y * rot, w.sample_rate)


def guard_symbols(filt: RrcFilter, beta2: float, total_length: float, symbol_rate: float) -> int:
    """Symbols to discard at each edge: filter span plus dispersion memory.

    Dispersion memory is estimated as 2*pi*|beta2|*L*B^2 symbols with B the
    occupied per-channel bandwidth.
    """
    bandwidth = symbol_rate * (1 + filt.rolloff)
    memory = 2 * np.pi * abs(beta2) * total_length * bandwidth**2
    return filt.span_symbols + int(math.ceil(memory))


def valid_symbol_slice(n_symbols: int, guard: int) -> slice:
    """Interior slice after discarding `guard` symbols at each edge."""
    if 2 * guard >= n_symbols:
        raise ValueError(f"guard {guard} too large for {n_symbols} symbols")
    return slice(guard, n_symbols - guard)
