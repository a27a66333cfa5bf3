"""Physical constants, resonance arithmetic and the nuclear isotope table.

Units used throughout the package: frequencies in MHz (microwave in GHz),
fields in tesla, wavenumbers in cm^-1, times in ns unless a name says
otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from scipy import constants as _sc
from scipy.special import zeta as _zeta

from .errors import DomainError, ParameterError


@dataclass(frozen=True)
class PhysicalConstants:
    planck_h: float = _sc.h
    hbar: float = _sc.hbar
    boltzmann_kB: float = _sc.k
    bohr_magneton_muB: float = _sc.physical_constants["Bohr magneton"][0]
    avogadro_NA: float = _sc.N_A
    zeta3: float = float(_zeta(3.0))
    free_electron_g: float = -_sc.physical_constants["electron g factor"][0]
    speed_of_light_c: float = _sc.c * 100.0  # cm/s

    @property
    def wavenumber_to_kelvin(self) -> float:
        """h*c/k_B in cm*K: multiply a wavenumber in cm^-1 to get kelvin."""
        return self.planck_h * self.speed_of_light_c / self.boltzmann_kB

    @property
    def gas_constant(self) -> float:
        return self.avogadro_NA * self.boltzmann_kB


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class SpinSystem:
    g_parallel: float
    g_perpendicular: float
    spin_S: float = 0.5

    def __post_init__(self):
        for g in (self.g_parallel, self.g_perpendicular):
            if not 1.5 < g < 2.5:
                raise DomainError(f"g value {g} outside (1.5, 2.5)")
        if self.spin_S != 0.5:
            raise DomainError("only S = 1/2 radicals are supported")

    @property
    def g_iso(self) -> float:
        return (self.g_parallel + 2.0 * self.g_perpendicular) / 3.0


@dataclass(frozen=True)
class NucleusSpec:
    label: str
    spin_I: float
    gamma_bar: float  # MHz/T, signed

    def larmor(self, b0: float) -> float:
        """Larmor frequency |gamma_bar|*b0 in MHz."""
        return abs(self.gamma_bar) * b0


@dataclass(frozen=True)
class FieldPoint:
    b0: float
    mw_frequency: float  # GHz

    def __post_init__(self):
        if not (self.b0 > 0 and self.mw_frequency > 0):
            raise DomainError("field and frequency must be strictly positive")


def resonance_field(g: float, mw_frequency: float, constants: PhysicalConstants = CONSTANTS) -> float:
    """Resonance field in tesla for a g value at a microwave frequency in GHz."""
    if not (g > 0 and mw_frequency > 0):
        raise DomainError("g and microwave frequency must be positive")
    return constants.planck_h * mw_frequency * 1e9 / (g * constants.bohr_magneton_muB)


def g_factor(b0: float, mw_frequency: float, constants: PhysicalConstants = CONSTANTS) -> float:
    if not (b0 > 0 and mw_frequency > 0):
        raise DomainError("field and microwave frequency must be positive")
    return constants.planck_h * mw_frequency * 1e9 / (b0 * constants.bohr_magneton_muB)


def larmor_ladder(nucleus: NucleusSpec, b0: float, n_max: int) -> list[tuple[int, float]]:
    """Harmonics ``n * |gamma_bar| * b0`` (MHz) for n = 1..n_max."""
    if n_max < 1:
        raise DomainError("n_max must be at least 1; the ladder would be empty")
    if b0 < 0:
        raise DomainError("field must be nonnegative")
    base = nucleus.larmor(b0)
    return [(n, n * base) for n in range(1, int(n_max) + 1)]


class IsotopeTable(Mapping[str, NucleusSpec]):
    """Read-only label -> NucleusSpec mapping, in file order."""

    def __init__(self, nuclei: Iterable[NucleusSpec], version: str | None = None):
        self._data: dict[str, NucleusSpec] = {}
        for nuc in nuclei:
            if nuc.label in self._data:
                raise ParameterError(f"duplicate isotope label {nuc.label!r}")
            if nuc.spin_I <= 0:
                raise ParameterError(f"{nuc.label}: spin_I must be positive")
            self._data[nuc.label] = nuc
        self.version = version

    def __getitem__(self, label: str) -> NucleusSpec:
        return self._data[label]

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def subset(self, labels: Iterable[str]) -> "IsotopeTable":
        return IsotopeTable([self._data[lab] for lab in labels], self.version)


def parse_isotope_table(text: str) -> IsotopeTable:
    nuclei = []
    version = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("table-version:"):
                version = body.split(":", 1)[1].strip()
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise ParameterError(f"isotope table line {lineno}: expected 3 fields, got {len(parts)}")
        try:
            nuclei.append(NucleusSpec(parts[0], float(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise ParameterError(f"isotope table line {lineno}: {exc}") from None
    return IsotopeTable(nuclei, version)


def load_isotope_table(path: str | Path | None = None) -> IsotopeTable:
    """Load the shipped table, or a user file in the same format."""
    if path is None:
        text = resources.files("spinrelax").joinpath("data/isotopes.csv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_isotope_table(text)


def debye_frequency(debye_temperature: float, constants: PhysicalConstants = CONSTANTS) -> float:
    """Angular Debye frequency k_B*T_D/hbar in rad/s."""
    return constants.boltzmann_kB * debye_temperature / constants.hbar


def angular_larmor_per_ns(nucleus: NucleusSpec, b0: float) -> float:
    return 2.0 * math.pi * nucleus.larmor(b0) * 1e-3
