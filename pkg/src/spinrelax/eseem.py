"""Time-to-frequency ESEEM processing and Larmor-ladder peak assignment.

Stages run in a fixed order: polynomial background
removal, Hamming apodization, zero filling, FFT magnitude.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constants import IsotopeTable, load_isotope_table
from .errors import DomainError, InsufficientDataError, ParameterError, SamplingError
from .fitting import TimeTrace

PROTON = "1H"


@dataclass
class FreqSpectrum:
    frequencies: np.ndarray  # MHz
    magnitudes: np.ndarray
    normalization_anchor: float | None = None
    spectrum: np.ndarray | None = None  # complex one-sided DFT
    meta: dict = field(default_factory=dict)

    @property
    def normalized_frequencies(self) -> np.ndarray | None:
        if self.normalization_anchor is None:
            return None
        return self.frequencies / self.normalization_anchor

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        buf.write(header)
        buf.write("frequency_MHz,magnitude,normalized_frequency\n")
        norm = self.normalized_frequencies
        for i, (f, m) in enumerate(zip(self.frequencies, self.magnitudes)):
            nf = "" if norm is None else f"{norm[i]:.9g}"
            buf.write(f"{f:.9g},{m:.9g},{nf}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class PeakAssignment:
    frequency: float
    nucleus: str
    harmonic: int
    deviation: float
    magnitude: float
    normalized_frequency: float = math.nan
    ambiguous: bool = False
    alternatives: tuple = ()


@dataclass(frozen=True)
class EseemConfig:
    b0: float
    degree: int = 3
    zero_fill_factor: int = 4
    prominence: float = 0.05
    tolerance: float = 0.3
    n_max: int = 4
    nuclei: tuple | None = None
    normalize_to_observed_proton: bool = True


def _real_values(trace: TimeTrace) -> np.ndarray:
    if trace.is_complex:
        raise ParameterError("ESEEM processing expects a real trace; take a component first")
    return trace.values


def subtract_background(trace: TimeTrace, degree: int = 3) -> TimeTrace:
    """Remove the least-squares polynomial of the given degree."""
    if degree < 0:
        raise DomainError("degree must be nonnegative")
    if len(trace) <= degree + 1:
        raise InsufficientDataError(f"need more than {degree + 1} points for a degree-{degree} background")
    y = _real_values(trace)
    t = trace.times
    # centered, scaled abscissa keeps the Vandermonde matrix well conditioned
    span = t[-1] - t[0] or 1.0
    x = (t - 0.5 * (t[0] + t[-1])) / (0.5 * span)
    basis = np.polynomial.legendre.legvander(x, degree)
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return trace.with_values(y - basis @ coef, background_degree=degree)


def hamming_window(n: int) -> np.ndarray:
    if n < 2:
        raise DomainError("Hamming window needs at least 2 points")
    i = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * math.pi * i / (n - 1))


def apodize_hamming(trace: TimeTrace) -> TimeTrace:
    return trace.with_values(trace.values * hamming_window(len(trace)), apodization="hamming")


def _check_uniform(times: np.ndarray) -> float:
    if times.size < 2:
        raise SamplingError("need at least two samples")
    steps = np.diff(times)
    dt = float(np.mean(steps))
    if np.max(np.abs(steps - dt)) > 1e-6 * abs(dt):
        raise SamplingError("time grid is not uniform")
    return dt


def padded_length(n: int, zero_fill_factor: int) -> int:
    return zero_fill_factor * (1 << max(0, (n - 1).bit_length()))


def transform(trace: TimeTrace, zero_fill_factor: int = 4) -> FreqSpectrum:
    """Zero-fill to factor x next power of two and take the one-sided DFT magnitude.

    Frequencies are in MHz for times in ns.
    """
    if zero_fill_factor < 1:
        raise DomainError("zero-fill factor must be at least 1")
    dt = _check_uniform(trace.times)
    n_pad = padded_length(len(trace), zero_fill_factor)
    spec = np.fft.rfft(trace.values, n=n_pad) if not trace.is_complex else np.fft.fft(trace.values, n=n_pad)[: n_pad // 2 + 1]
    freqs = np.arange(spec.size) * 1e3 / (n_pad * dt)
    return FreqSpectrum(freqs, np.abs(spec), None, spec,
                        {"n_points": len(trace), "n_padded": n_pad, "dt_ns": dt})


def find_peaks(spectrum: FreqSpectrum, prominence: float = 0.05) -> list[tuple[float, float]]:
    """Local maxima above ``prominence * max``, refined by 3-point parabolic interpolation.

    Returns (frequency, magnitude) pairs sorted by frequency.
    """
    if not 0 < prominence < 1:
        raise DomainError("prominence must lie in (0, 1)")
    mag = np.asarray(spectrum.magnitudes, dtype=float)
    if mag.size == 0:
        raise DomainError("empty spectrum")
    top = mag.max()
    if top <= 0:
        return []
    freqs = spectrum.frequencies
    df = freqs[1] - freqs[0] if freqs.size > 1 else 0.0
    threshold = prominence * top
    peaks = []
    for i in range(mag.size):
        left = mag[i - 1] if i > 0 else -np.inf
        right = mag[i + 1] if i < mag.size - 1 else -np.inf
        if mag[i] < threshold or not (mag[i] > left and mag[i] >= right):
            continue
        if 0 < i < mag.size - 1:
            a, b, c = mag[i - 1], mag[i], mag[i + 1]
            denom = a - 2 * b + c
            shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
            peaks.append((float(freqs[i] + shift * df), float(b - 0.25 * (a - c) * shift)))
        else:
            peaks.append((float(freqs[i]), float(mag[i])))
    return peaks


def _ladder(table: IsotopeTable, b0: float, n_max: int):
    entries = []
    for label, nuc in table.items():
        base = nuc.larmor(b0)
        for n in range(1, n_max + 1):
            entries.append((label, n, n * base))
    return entries


def proton_anchor(matches, table: IsotopeTable, b0: float) -> float | None:
    """Strongest observed 1*omega(1H) peak, falling back to the tabulated value."""
    proton = [m for m in matches if m[2] == PROTON and m[3] == 1]
    if proton:
        return max(proton, key=lambda m: m[1])[0]
    if PROTON in table:
        return table[PROTON].larmor(b0)
    return None


def assign_nuclei(peaks: Sequence[tuple[float, float]], b0: float, table: IsotopeTable | None = None,
                  n_max: int = 4, tolerance: float = 0.3, anchor: float | None = None):
    """Match peaks to the nearest n*omega(X) ladder entry within ``tolerance`` MHz.

    Returns ``(assignments, unassigned)``.  Normalized frequencies use
    ``anchor`` if given, else the observed 1*omega(1H) peak, else the
    tabulated proton Larmor frequency.  A peak with more than one ladder
    entry inside the tolerance is flagged ambiguous and lists the others.
    """
    if tolerance <= 0:
        raise DomainError("tolerance must be positive")
    if b0 <= 0:
        raise DomainError("field must be positive")
    table = table if table is not None else load_isotope_table()
    ladder = _ladder(table, b0, n_max)
    ordered = sorted((float(f), float(m)) for f, m in peaks)
    matched = []
    unassigned = []
    for f, mag in ordered:
        ranked = sorted(ladder, key=lambda e: (abs(f - e[2]), e[1], e[0]))
        if not ranked or abs(f - ranked[0][2]) > tolerance:
            unassigned.append((f, mag))
            continue
        within = [e for e in ranked if abs(f - e[2]) <= tolerance]
        label, n, ref = within[0]
        alts = tuple(f"{e[1]}w({e[0]})" for e in within[1:])
        matched.append((f, mag, label, n, f - ref, alts))

    if anchor is None:
        anchor = proton_anchor([(m[0], m[1], m[2], m[3]) for m in matched], table, b0)
    out = [PeakAssignment(f, label, n, dev, mag, f / anchor if anchor else math.nan, bool(alts), alts)
           for f, mag, label, n, dev, alts in matched]
    return out, unassigned


def assignments_csv(assignments: Sequence[PeakAssignment], header: str = "") -> str:
    buf = io.StringIO()
    buf.write(header)
    buf.write("nucleus,harmonic,frequency_MHz,deviation_MHz,magnitude,ambiguous,normalized_frequency\n")
    for a in assignments:
        buf.write(f"{a.nucleus},{a.harmonic},{a.frequency:.6f},{a.deviation:.6f},{a.magnitude:.6g},"
                  f"{str(a.ambiguous).lower()},{a.normalized_frequency:.6f}\n")
    return buf.getvalue()


def process_eseem(raw: TimeTrace, config: EseemConfig, table: IsotopeTable | None = None):
    """Background -> Hamming -> zero-fill/FFT -> peaks -> assignments."""
    table = table if table is not None else load_isotope_table()
    if config.nuclei:
        table = table.subset(config.nuclei)
    corrected = subtract_background(raw, config.degree)
    windowed = apodize_hamming(corrected)
    spectrum = transform(windowed, config.zero_fill_factor)
    peaks = find_peaks(spectrum, config.prominence)
    anchor = None
    if not config.normalize_to_observed_proton and PROTON in table:
        anchor = table[PROTON].larmor(config.b0)
    assignments, unassigned = assign_nuclei(peaks, config.b0, table, config.n_max, config.tolerance, anchor)
    if anchor is None:
        anchor = proton_anchor([(a.frequency, a.magnitude, a.nucleus, a.harmonic) for a in assignments],
                               table, config.b0)
    spectrum.normalization_anchor = anchor
    spectrum.meta.update({"background_degree": config.degree, "zero_fill_factor": config.zero_fill_factor,
                          "prominence": config.prominence, "tolerance_MHz": config.tolerance,
                          "unassigned": unassigned})
    return spectrum, assignments
