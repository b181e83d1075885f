"""4D modulation formats: PM-QAM baselines, Maxwell-Boltzmann shaping, file I/O.

A format is a set of M = 2^m four-dimensional points [r_X, i_X, r_Y, i_Y]
with bit labels (m bits, MSB first) and a probability for each symbol.
All generators return formats normalized to unit average energy under the
symbol probabilities, so launch power is the only power knob downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FILE_HEADER = "fiber4d-constellation v1"

_SUPPORTED_2D_ORDERS = (2, 3, 4, 5, 6)


class ConstellationError(ValueError):
    """Raised when a constellation violates one of its invariants."""


@dataclass(frozen=True)
class Constellation4D:
    """M four-dimensional points with bit labels and symbol probabilities."""

    points: np.ndarray  # (M, 4) float64
    labels: tuple[str, ...]  # M bit strings, length m, MSB first
    probs: np.ndarray  # (M,) float64, simplex

    def __post_init__(self):
        points = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        probs = np.ascontiguousarray(np.asarray(self.probs, dtype=np.float64))
        points.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "probs", probs)
        _validate(self)

    @property
    def m(self) -> int:
        return len(self.labels[0])

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def energies(self) -> np.ndarray:
        """Per-symbol energy ||x||^2, shape (M,)."""
        return np.sum(self.points**2, axis=1)

    def mean_energy(self) -> float:
        return float(self.probs @ self.energies())

    def label_bits(self) -> np.ndarray:
        """Labels as an (M, m) 0/1 integer array, MSB first."""
        return np.array([[int(b) for b in lab] for lab in self.labels], dtype=np.int8)


def _validate(c: Constellation4D) -> None:
    if c.points.ndim != 2 or c.points.shape[1] != 4:
        raise ConstellationError("points must have shape (M, 4)")
    M = c.points.shape[0]
    if len(c.labels) != M or c.probs.shape != (M,):
        raise ConstellationError("points, labels and probs must have matching length M")
    if M < 2 or M & (M - 1):
        raise ConstellationError(f"M={M} is not a power of two")
    m = int(round(math.log2(M)))
    if any(len(lab) != m or set(lab) - {"0", "1"} for lab in c.labels):
        raise ConstellationError(f"labels must be bit strings of length m={m}")
    if len(set(c.labels)) != M:
        raise ConstellationError("duplicate labels: every length-m bit string must appear exactly once")
    if not np.all(np.isfinite(c.points)):
        raise ConstellationError("points contain non-finite values")
    if np.any(c.probs < 0):
        raise ConstellationError("probs must be nonnegative")
    if abs(float(np.sum(c.probs)) - 1.0) > 1e-9:
        raise ConstellationError(f"probs sum to {float(np.sum(c.probs)):.12g}, expected 1 within 1e-9")


def is_normalized(c: Constellation4D, tol: float = 1e-9) -> bool:
    return abs(c.mean_energy() - 1.0) <= tol


def normalize(c: Constellation4D) -> Constellation4D:
    """Scale all points by a common factor so that E_p[||x||^2] = 1."""
    energy = c.mean_energy()
    if energy <= 0:
        raise ConstellationError("cannot normalize: average energy is zero")
    return Constellation4D(c.points / math.sqrt(energy), c.labels, c.probs)


def entropy(c: Constellation4D) -> float:
    """Source entropy -sum p*log2(p) in bits, with 0*log(0) = 0."""
    p = c.probs[c.probs > 0]
    return float(-np.sum(p * np.log2(p)))


def _gray_levels(n_bits: int) -> tuple[np.ndarray, list[str]]:
    """Amplitude levels ..., -3, -1, 1, 3, ... Gray-labeled so that adjacent
    levels differ in exactly one bit.  Returns (levels, labels) ordered by
    label integer value."""
    n = 1 << n_bits
    levels = np.empty(n)
    labels = [""] * n
    for idx in range(n):  # idx = position on the amplitude axis
        gray = idx ^ (idx >> 1)
        levels_val = 2 * idx - (n - 1)
        levels[gray] = levels_val
        labels[gray] = format(gray, f"0{n_bits}b")
    return levels, labels


def _qam_2d(m_per_2d: int) -> tuple[np.ndarray, list[str]]:
    """2D QAM on the odd-integer grid with (quasi-)Gray labels.

    Square grids for even m, rectangular 4x2 for m=3, cross shape for m=5.
    Returns unnormalized coordinates (M2, 2) and labels ordered by label value.
    """
    if m_per_2d not in _SUPPORTED_2D_ORDERS:
        raise ConstellationError(
            f"unsupported per-polarization order m_per_2d={m_per_2d}; supported: {_SUPPORTED_2D_ORDERS}"
        )
    n_i = (m_per_2d + 1) // 2
    n_q = m_per_2d - n_i
    lev_i, lab_i = _gray_levels(n_i)
    lev_q, lab_q = _gray_levels(n_q)
    pts = []
    labels = []
    for gi in range(1 << n_i):
        for gq in range(1 << n_q):
            x, y = lev_i[gi], lev_q[gq]
            if m_per_2d == 5 and abs(x) == 7:
                # Fold the outer columns of the 8x4 Gray rectangle onto the
                # |y| = 5 rows to form the standard 32-point cross; the fold
                # keeps both coordinate signs, so most neighbors still differ
                # in one bit (quasi-Gray).
                x, y = math.copysign(abs(y), x), math.copysign(5.0, y)
            pts.append((x, y))
            labels.append(lab_i[gi] + lab_q[gq])
    return np.array(pts), labels


def make_pm_qam(m_per_2d: int) -> Constellation4D:
    """Polarization-multiplexed QAM: the 4D Cartesian product of a Gray-coded
    2D QAM with itself, uniform probabilities, unit average energy.

    The 4D label is the X-polarization label followed by the Y-polarization
    label (MSB first).
    """
    pts2, labs2 = _qam_2d(m_per_2d)
    M2 = pts2.shape[0]
    points = np.empty((M2 * M2, 4))
    labels = []
    for a in range(M2):
        for b in range(M2):
            points[a * M2 + b, :2] = pts2[a]
            points[a * M2 + b, 2:] = pts2[b]
            labels.append(labs2[a] + labs2[b])
    probs = np.full(M2 * M2, 1.0 / (M2 * M2))
    return normalize(Constellation4D(points, tuple(labels), probs))


def make_mb_shaped_pm64qam(lam: float) -> Constellation4D:
    """PM-64QAM with Maxwell-Boltzmann symbol probabilities p_i ~ exp(-lam*E_i).

    The Boltzmann factor is evaluated on the unnormalized odd-integer grid;
    the geometry is then rescaled to unit average energy under the shaped
    probabilities.
    """
    if lam < 0:
        raise ConstellationError(f"lambda must be nonnegative, got {lam}")
    pts2, labs2 = _qam_2d(6)
    M2 = pts2.shape[0]
    points = np.empty((M2 * M2, 4))
    labels = []
    for a in range(M2):
        for b in range(M2):
            points[a * M2 + b, :2] = pts2[a]
            points[a * M2 + b, 2:] = pts2[b]
            labels.append(labs2[a] + labs2[b])
    energies = np.sum(points**2, axis=1)
    w = np.exp(-lam * (energies - energies.min()))  # shift avoids underflow at large lambda
    probs = w / np.sum(w)
    return normalize(Constellation4D(points, tuple(labels), probs))


def save(c: Constellation4D, path) -> None:
    """Write a constellation as versioned text, full double precision."""
    lines = [FILE_HEADER, f"m {c.m}", f"M {c.size}"]
    for i in range(c.size):
        coords = " ".join(repr(float(v)) for v in c.points[i])
        lines.append(f"{coords} {c.labels[i]} {float(c.probs[i])!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load(path) -> Constellation4D:
    """Read a constellation file, validating every invariant."""
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != FILE_HEADER:
        raise ConstellationError(f"bad header: expected '{FILE_HEADER}'")
    try:
        m = int(lines[1].split()[1])
        M = int(lines[2].split()[1])
    except (IndexError, ValueError) as exc:
        raise ConstellationError("malformed m/M header lines") from exc
    rows = lines[3:]
    if len(rows) != M:
        raise ConstellationError(f"expected {M} symbol rows, found {len(rows)}")
    points = np.empty((M, 4))
    labels = []
    probs = np.empty(M)
    for i, row in enumerate(rows):
        parts = row.split()
        if len(parts) != 6:
            raise ConstellationError(f"row {i}: expected 6 fields, got {len(parts)}")
        points[i] = [float(v) for v in parts[:4]]
        labels.append(parts[4])
        probs[i] = float(parts[5])
    c = Constellation4D(points, tuple(labels), probs)
    if c.m != m:
        raise ConstellationError(f"header m={m} does not match label length {c.m}")
    return c
