"""Nonlinear fiber propagation: dual-polarization split-step Fourier solver.

The propagated field is the loss-normalized amplitude, so attenuation enters
only through the exp(-alpha*z) factor inside the Kerr term and both split-step
operators are unitary.  Amplifier gain is therefore identity on the signal and
the EDFA only injects ASE noise.

Besides the fast forward path, `ssfm_span_with_tape` / `ssfm_span_backward`
provide the exact reverse-mode adjoint used for end-to-end training.  Complex
gradients follow the dL/dRe + j*dL/dIm convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.constants as const

from .dsp import DualPolWaveform, frequency_shift


@dataclass(frozen=True)
class FiberLink:
    """Physical link parameters in SI units plus solver settings."""

    beta2: float  # s^2/m (sign free)
    gamma: float  # 1/(W*m)
    alpha: float  # 1/m, power attenuation
    span_length: float  # m
    n_spans: int
    nf_db: float  # amplifier noise figure; -inf disables ASE
    steps_per_span: int = 200
    center_wavelength: float = 1550e-9  # m, for the ASE photon energy

    def __post_init__(self):
        for name in ("gamma", "alpha", "span_length"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.n_spans < 0:
            raise ValueError("n_spans must be nonnegative")
        if self.steps_per_span < 1:
            raise ValueError("steps_per_span must be >= 1")
        if self.center_wavelength <= 0:
            raise ValueError("center_wavelength must be positive")

    @classmethod
    def from_practical_units(
        cls,
        beta2_ps2_km: float,
        gamma_per_w_km: float,
        alpha_db_km: float,
        span_km: float,
        n_spans: int,
        nf_db: float,
        steps_per_span: int = 200,
        center_wavelength_nm: float = 1550.0,
    ) -> "FiberLink":
        """Build from the customary engineering units (ps^2/km, 1/W/km, dB/km, km)."""
        return cls(
            beta2=beta2_ps2_km * 1e-27,
            gamma=gamma_per_w_km * 1e-3,
            alpha=alpha_db_km * math.log(10) / 10.0 / 1e3,
            span_length=span_km * 1e3,
            n_spans=n_spans,
            nf_db=nf_db,
            steps_per_span=steps_per_span,
            center_wavelength=center_wavelength_nm * 1e-9,
        )

    def total_length(self) -> float:
        return self.span_length * self.n_spans


def paper_link(n_spans: int, steps_per_span: int = 200, nf_db: float = 5.0) -> FiberLink:
    """Standard SSMF link: -21.67 ps^2/km, 1.2 /W/km, 0.2 dB/km, 80 km spans."""
    return FiberLink.from_practical_units(
        beta2_ps2_km=-21.67,
        gamma_per_w_km=1.2,
        alpha_db_km=0.2,
        span_km=80.0,
        n_spans=n_spans,
        nf_db=nf_db,
        steps_per_span=steps_per_span,
    )


def _as_field(w: DualPolWaveform) -> np.ndarray:
    return np.stack([w.x, w.y])


def _as_waveform(field: np.ndarray, sample_rate: float) -> DualPolWaveform:
    return DualPolWaveform(field[0], field[1], sample_rate)


def _dispersion_multipliers(link: FiberLink, n: int, sample_rate: float, dtype) -> tuple[np.ndarray, np.ndarray]:
    omega = 2 * np.pi * np.fft.fftfreq(n, 1.0 / sample_rate)
    h = link.span_length / link.steps_per_span
    d_half = np.exp(1j * (link.beta2 / 2.0) * omega**2 * (h / 2.0)).astype(dtype)
    return d_half, (d_half * d_half)


def _nl_coefficients(link: FiberLink) -> np.ndarray:
    """Per-step Kerr coefficient (8/9)*gamma*L_eff with the exact loss integral
    positioned at each step's start coordinate."""
    steps = link.steps_per_span
    h = link.span_length / steps
    z0 = np.arange(steps) * h
    if link.alpha > 0:
        l_eff = np.exp(-link.alpha * z0) * (1.0 - math.exp(-link.alpha * h)) / link.alpha
    else:
        l_eff = np.full(steps, h)
    return (8.0 / 9.0) * link.gamma * l_eff


def _lin(field: np.ndarray, mult: np.ndarray) -> np.ndarray:
    return np.fft.ifft(np.fft.fft(field, axis=-1) * mult, axis=-1)


class SsfmTape:
    """Per-step fields recorded by a forward span, consumed once by the adjoint."""

    def __init__(self, link: FiberLink, sample_rate: float, n: int, dtype):
        self.link = link
        self.sample_rate = sample_rate
        self.pre_nl = np.empty((link.steps_per_span, 2, n), dtype=dtype)
        self.dtype = dtype
        self.n = n


def _ssfm_span_core(field: np.ndarray, link: FiberLink, sample_rate: float, tape: SsfmTape | None) -> np.ndarray:
    steps = link.steps_per_span
    d_half, d_full = _dispersion_multipliers(link, field.shape[-1], sample_rate, field.dtype)
    g = _nl_coefficients(link)
    a = _lin(field, d_half)
    for k in range(steps):
        if tape is not None:
            tape.pre_nl[k] = a
        intensity = np.abs(a[0]) ** 2 + np.abs(a[1]) ** 2
        a = a * np.exp(1j * (g[k] * intensity)).astype(field.dtype)
        a = _lin(a, d_full if k < steps - 1 else d_half)
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"NaN/Inf in split-step integration at step {k}")
    return a


def ssfm_span(w: DualPolWaveform, link: FiberLink) -> DualPolWaveform:
    """Propagate one span by symmetric split-step integration."""
    out = _ssfm_span_core(_as_field(w), link, w.sample_rate, None)
    return _as_waveform(out, w.sample_rate)


def ssfm_span_with_tape(w: DualPolWaveform, link: FiberLink) -> tuple[DualPolWaveform, SsfmTape]:
    field = _as_field(w)
    tape = SsfmTape(link, w.sample_rate, field.shape[-1], field.dtype)
    out = _ssfm_span_core(field, link, w.sample_rate, tape)
    return _as_waveform(out, w.sample_rate), tape


def ssfm_span_backward(tape: SsfmTape, output_gradient: np.ndarray) -> np.ndarray:
    """Exact reverse-mode gradient of `ssfm_span`.

    `output_gradient` is a (2, n) complex array in the dL/dRe + j*dL/dIm
    convention; the return value is the gradient w.r.t. the span input field.
    """
    grad = np.asarray(output_gradient)
    if grad.shape != (2, tape.n):
        raise ValueError(f"gradient shape {grad.shape} does not match tape field shape (2, {tape.n})")
    link = tape.link
    d_half, d_full = _dispersion_multipliers(link, tape.n, tape.sample_rate, tape.dtype)
    g = _nl_coefficients(link)
    grad = _lin(grad, np.conj(d_half))
    for k in range(link.steps_per_span - 1, -1, -1):
        a = tape.pre_nl[k]
        intensity = np.abs(a[0]) ** 2 + np.abs(a[1]) ** 2
        rot = np.exp(1j * (g[k] * intensity)).astype(tape.dtype)
        b = a * rot
        # Adjoint of b = a*exp(j*g*(|a_x|^2+|a_y|^2)): the phase couples both
        # polarizations through the shared intensity.
        cross = (grad[0] * np.conj(b[0]) + grad[1] * np.conj(b[1])).imag
        grad = grad * np.conj(rot) + (2.0 * g[k]) * a * cross
        grad = _lin(grad, np.conj(d_half if k == 0 else d_full))
    return grad


def ase_sigma2(link: FiberLink, sample_rate: float) -> float:
    """Total ASE variance per polarization added by one EDFA over the
    simulation bandwidth: (G-1)*h*nu*n_sp*F_s with G = exp(alpha*L_span) and
    n_sp = 10^(NF/10)/2 (high-gain convention)."""
    if link.nf_db == -math.inf:
        return 0.0
    gain = math.exp(link.alpha * link.span_length)
    n_sp = 10.0 ** (link.nf_db / 10.0) / 2.0
    nu = const.c / link.center_wavelength
    return (gain - 1.0) * const.h * nu * n_sp * sample_rate


def edfa(w: DualPolWaveform, link: FiberLink, rng: np.random.Generator) -> DualPolWaveform:
    """Amplify (identity on the loss-normalized signal) and add circular
    complex Gaussian ASE independently per polarization."""
    sigma2 = ase_sigma2(link, w.sample_rate)
    if sigma2 == 0.0:
        return w
    scale = math.sqrt(sigma2 / 2.0)
    draws = rng.standard_normal((2, 2, len(w)))
    noise = scale * (draws[:, 0] + 1j * draws[:, 1])
    noise = noise.astype(w.x.dtype if np.iscomplexobj(w.x) else complex)
    return DualPolWaveform(w.x + noise[0], w.y + noise[1], w.sample_rate)


def propagate_link(w: DualPolWaveform, link: FiberLink, rng: np.random.Generator) -> DualPolWaveform:
    """n_spans x (split-step span -> EDFA); deterministic given the rng state."""
    for _ in range(link.n_spans):
        w = edfa(ssfm_span(w, link), link, rng)
    return w


def propagate_link_with_tape(
    w: DualPolWaveform, link: FiberLink, rng: np.random.Generator
) -> tuple[DualPolWaveform, list[SsfmTape]]:
    tapes = []
    for _ in range(link.n_spans):
        w, tape = ssfm_span_with_tape(w, link)
        tapes.append(tape)
        w = edfa(w, link, rng)
    return w, tapes


def propagate_link_backward(tapes: list[SsfmTape], output_gradient: np.ndarray) -> np.ndarray:
    """Adjoint of `propagate_link_with_tape`; additive ASE has identity adjoint."""
    grad = output_gradient
    for tape in reversed(tapes):
        grad = ssfm_span_backward(tape, grad)
    return grad


@dataclass(frozen=True)
class WdmConfig:
    """WDM grid: channel count, symbol rate, spacing, oversampling, powers."""

    n_channels: int
    symbol_rate: float
    spacing: float
    sps: int
    per_channel_power_dbm: tuple[float, ...]

    def __post_init__(self):
        if self.n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        if self.symbol_rate <= 0 or self.spacing <= 0:
            raise ValueError("symbol_rate and spacing must be positive")
        if self.spacing < self.symbol_rate:
            raise ValueError("spacing must be at least the symbol rate")
        if self.sps < 2:
            raise ValueError("sps must be >= 2")
        if len(self.per_channel_power_dbm) != self.n_channels:
            raise ValueError("per_channel_power_dbm must have one entry per channel")
        object.__setattr__(self, "per_channel_power_dbm", tuple(float(p) for p in self.per_channel_power_dbm))

    @property
    def sample_rate(self) -> float:
        return self.sps * self.symbol_rate


def channel_offsets(cfg: WdmConfig, n_samples: int) -> np.ndarray:
    """Carrier offsets (i - (n-1)/2)*spacing, snapped to the circular FFT bin
    grid so frequency shifts stay periodic over the processing block."""
    raw = (np.arange(cfg.n_channels) - (cfg.n_channels - 1) / 2.0) * cfg.spacing
    bin_hz = cfg.sample_rate / n_samples
    return np.round(raw / bin_hz) * bin_hz


def wdm_mux(channel_waveforms: list[DualPolWaveform], cfg: WdmConfig) -> DualPolWaveform:
    """Sum all channels shifted to their grid offsets."""
    if len(channel_waveforms) != cfg.n_channels:
        raise ValueError(f"expected {cfg.n_channels} waveforms, got {len(channel_waveforms)}")
    n = len(channel_waveforms[0])
    if any(len(w) != n or w.sample_rate != channel_waveforms[0].sample_rate for w in channel_waveforms):
        raise ValueError("all channels must share length and sample rate")
    if cfg.n_channels * cfg.spacing > cfg.sample_rate:
        raise ValueError(
            f"WDM band {cfg.n_channels * cfg.spacing:g} Hz exceeds sample rate {cfg.sample_rate:g} Hz"
        )
    offsets = channel_offsets(cfg, n)
    x = np.zeros(n, dtype=complex)
    y = np.zeros(n, dtype=complex)
    for w, f in zip(channel_waveforms, offsets):
        shifted = frequency_shift(w, f) if f != 0 else w
        x = x + shifted.x
        y = y + shifted.y
    return DualPolWaveform(x, y, cfg.sample_rate)


def wdm_demux(w: DualPolWaveform, cfg: WdmConfig, channel_index: int) -> DualPolWaveform:
    """Shift the selected channel back to baseband (the matched filter then
    performs the actual channel selection)."""
    if not 0 <= channel_index < cfg.n_channels:
        raise ValueError(f"channel_index {channel_index} out of range")
    f = channel_offsets(cfg, len(w))[channel_index]
    return frequency_shift(w, -f) if f != 0 else w
