"""Debye heat capacity and the Raman + local-mode spin-lattice relaxation law."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq, nnls

from .constants import CONSTANTS, PhysicalConstants, debye_frequency
from .errors import (ConvergenceError, DomainError, IllConditionedFitError,
                     InsufficientDataError, ParameterError, RankDeficiencyError)
from .fitting import FitResult, covariance_from_jacobian, levenberg_marquardt
from .quadrature import adaptive_quad

DEFAULT_WAVENUMBER = 1610.0  # cm^-1, C-C stretch
DEFAULT_CUTOFF_K = 8.0

# Beyond this the Raman integrand is below 1e-80 of its peak.
_RAMAN_UPPER = 250.0
_SERIES_SWITCH = 0.01
RAMAN_INTEGRAL_LIMIT = math.factorial(8) * 1.0040773561979443  # 8! * zeta(8)


@dataclass(frozen=True)
class DebyeModel:
    debye_temperature_TD: float
    dimensionality: int

    def __post_init__(self):
        if not self.debye_temperature_TD > 0:
            raise DomainError("Debye temperature must be positive")
        if self.dimensionality not in (2, 3):
            raise DomainError("dimensionality must be 2 or 3")

    @property
    def omega_D(self) -> float:
        return debye_frequency(self.debye_temperature_TD)


@dataclass(frozen=True)
class HeatCapacityPoint:
    temperature: float
    cp: float


@dataclass(frozen=True)
class RelaxationParams:
    a_ram: float
    a_loc: float
    debye_temperature_TD: float
    mode_wavenumber: float = DEFAULT_WAVENUMBER

    def __post_init__(self):
        if min(self.a_ram, self.a_loc, self.debye_temperature_TD, self.mode_wavenumber) < 0:
            raise DomainError("relaxation parameters must be nonnegative")
        if self.a_loc > 0 and not self.mode_wavenumber > 0:
            raise DomainError("a local-mode channel needs a positive wavenumber")
        if not self.debye_temperature_TD > 0:
            raise DomainError("Debye temperature must be positive")


@dataclass(frozen=True)
class RatePoint:
    temperature: float
    rate: float


# --- heat capacity ----------------------------------------------------------

def _debye_coefficient(dimensionality: int, constants: PhysicalConstants) -> float:
    r = constants.gas_constant
    if dimensionality == 2:
        return 24.0 * constants.zeta3 * r
    return 12.0 * math.pi**4 * r / 5.0


def debye_cp(temperature, model: DebyeModel, constants: PhysicalConstants = CONSTANTS):
    """Low-temperature Debye heat capacity in J/(mol K) (T^2 in 2D, T^3 in 3D)."""
    t = np.asarray(temperature, dtype=float)
    if np.any(t < 0):
        raise DomainError("temperature must be nonnegative")
    d = model.dimensionality
    out = _debye_coefficient(d, constants) * (t / model.debye_temperature_TD) ** d
    return float(out) if out.ndim == 0 else out


def fit_debye(points: Sequence[HeatCapacityPoint], dimensionality: int,
              cutoff: float = DEFAULT_CUTOFF_K, constants: PhysicalConstants = CONSTANTS) -> FitResult:
    """Least-squares Debye temperature from low-temperature heat capacities."""
    if dimensionality not in (2, 3):
        raise DomainError("dimensionality must be 2 or 3")
    if len(points) < 3:
        raise InsufficientDataError("Debye fit needs at least 3 points")
    t = np.array([p.temperature for p in points], dtype=float)
    cp = np.array([p.cp for p in points], dtype=float)
    if np.any(t <= 0) or np.any(cp < 0):
        raise DomainError("temperatures must be positive and heat capacities nonnegative")
    if np.any(t > cutoff):
        raise DomainError(f"all points must lie at or below the {cutoff} K low-temperature cutoff")
    if not np.any(cp > 0):
        raise IllConditionedFitError("all heat capacities are zero")
    d = dimensionality
    coeff = _debye_coefficient(d, constants)
    # linear estimate of T_D^-d seeds the fit
    u = float(np.dot(coeff * t**d, cp) / np.dot(coeff * t**d, coeff * t**d))
    td0 = u ** (-1.0 / d)

    def residual(p):
        return cp - coeff * (t / p[0]) ** d

    def jac(p):
        return (d * coeff * t**d * p[0] ** (-d - 1)).reshape(-1, 1)

    try:
        res = levenberg_marquardt(residual, [td0], jac=jac, names=("T_D",),
                                  bounds=([1e-6 * td0], [np.inf]), model_id=f"debye_{d}d")
    except ConvergenceError as exc:
        raise ConvergenceError(f"Debye fit did not converge: {exc}", best=exc.best, trace=exc.trace) from None
    res.meta.update({"dimensionality": d, "cutoff_K": cutoff})
    return res


# --- Raman transport integral -----------------------------------------------

def raman_integrand(x):
    """x^8 e^x / (e^x - 1)^2, with the x -> 0 limit taken from its series."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < _SERIES_SWITCH
    xs = x[small]
    x2 = xs * xs
    out[small] = xs**6 * (1.0 - x2 / 12.0 + x2 * x2 / 240.0)
    xl = x[~small]
    em = np.exp(-xl)
    out[~small] = xl**8 * em / (-np.expm1(-xl)) ** 2
    return out


def raman_transport_integral(theta: float, rtol: float = 1e-12) -> float:
    """J(theta) = integral_0^theta x^8 e^x/(e^x-1)^2 dx."""
    if theta < 0 or math.isnan(theta):
        raise DomainError("theta must be nonnegative")
    if theta == 0:
        return 0.0
    upper = min(float(theta), _RAMAN_UPPER)
    if upper <= _SERIES_SWITCH:
        # term-wise integral of the series
        return upper**7 / 7.0 - upper**9 / 108.0 + upper**11 / 2640.0
    value, _ = adaptive_quad(raman_integrand, 0.0, upper, rtol=rtol)
    return value


# --- relaxation rate --------------------------------------------------------

def raman_rate(temperature, params: RelaxationParams):
    t = np.atleast_1d(np.asarray(temperature, dtype=float))
    if np.any(t <= 0):
        raise DomainError("temperature must be positive")
    td = params.debye_temperature_TD
    j = np.array([raman_transport_integral(td / ti) for ti in t])
    out = params.a_ram * (t / td) ** 9 * j
    return float(out[0]) if np.ndim(temperature) == 0 else out


def local_mode_factor(temperature, wavenumber: float, constants: PhysicalConstants = CONSTANTS):
    """e^y/(e^y-1)^2 with y = h c nu~ / (k_B T)."""
    t = np.asarray(temperature, dtype=float)
    if np.any(t <= 0):
        raise DomainError("temperature must be positive")
    y = constants.wavenumber_to_kelvin * wavenumber / t
    em = np.exp(-y)
    out = em / (-np.expm1(-y)) ** 2
    return float(out) if out.ndim == 0 else out


def local_rate(temperature, params: RelaxationParams, constants: PhysicalConstants = CONSTANTS):
    if params.a_loc == 0:
        t = np.asarray(temperature, dtype=float)
        if np.any(t <= 0):
            raise DomainError("temperature must be positive")
        return 0.0 if t.ndim == 0 else np.zeros_like(t)
    return params.a_loc * local_mode_factor(temperature, params.mode_wavenumber, constants)


def relaxation_rate(temperature, params: RelaxationParams, constants: PhysicalConstants = CONSTANTS):
    """Spin-lattice relaxation rate 1/T_1 in s^-1 (Raman + local mode)."""
    return raman_rate(temperature, params) + local_rate(temperature, params, constants)


def crossover_temperature(params: RelaxationParams, t_min: float = 1.0, t_max: float = 1000.0):
    """Temperature where the Raman and local-mode channels are equal, or None."""
    if params.a_loc == 0 or params.a_ram == 0:
        return None

    k = CONSTANTS.wavenumber_to_kelvin * params.mode_wavenumber

    def diff(t):
        y = k / t
        log_local = math.log(params.a_loc) - y - 2.0 * math.log(-math.expm1(-y))
        return math.log(raman_rate(t, params)) - log_local

    grid = np.geomspace(t_min, t_max, 200)
    vals = [diff(t) for t in grid]
    for i in range(len(grid) - 1):
        if vals[i] == 0:
            return float(grid[i])
        if vals[i] * vals[i + 1] < 0:
            return float(brentq(diff, grid[i], grid[i + 1], xtol=1e-10))
    return None


# --- fits -------------------------------------------------------------------

def _rate_arrays(points: Sequence[RatePoint]):
    t = np.array([p.temperature for p in points], dtype=float)
    r = np.array([p.rate for p in points], dtype=float)
    return t, r


def fit_relaxation_prefactors(points: Sequence[RatePoint], fixed_TD: float,
                              fixed_wavenumber: float = DEFAULT_WAVENUMBER,
                              constants: PhysicalConstants = CONSTANTS) -> FitResult:
    """Fit (A_Ram, A_Loc) with T_D and the mode wavenumber held fixed.

    Residuals are ln(rate) - ln(model).  Pre-factors are fitted as
    exponentials of free parameters; a channel whose weighted NNLS
    estimate is exactly zero is pinned at zero and only the other one is
    refined.  Uncertainties are reported on the linear pre-factors.
    """
    if len(points) < 4:
        raise InsufficientDataError("pre-factor fit needs at least 4 points")
    t, rate = _rate_arrays(points)
    if np.any(t <= 0):
        raise DomainError("temperatures must be positive")
    if np.all(rate == 0):
        raise IllConditionedFitError("all rates are zero")
    if np.any(rate <= 0):
        raise DomainError("rates must be positive for log residuals")
    if t.max() / t.min() < 3.0:
        raise IllConditionedFitError("temperatures must span at least a factor of 3")

    unit = RelaxationParams(1.0, 1.0, fixed_TD, fixed_wavenumber)
    basis = np.column_stack([raman_rate(t, unit), local_rate(t, unit, constants)])
    # relative residuals linearize the log objective around the data
    weighted = basis / rate[:, None]
    a_lin, _ = nnls(weighted, np.ones_like(rate))
    active = a_lin > 0
    if not active.any():
        raise IllConditionedFitError("no channel can describe the data")
    names_all = ("A_Ram", "A_Loc")
    idx = np.flatnonzero(active)
    log_rate = np.log(rate)

    def model(log_a):
        return basis[:, idx] @ np.exp(log_a)

    def residual(log_a):
        return log_rate - np.log(model(log_a))

    def jac(log_a):
        contrib = basis[:, idx] * np.exp(log_a)
        return -contrib / model(log_a)[:, None]

    try:
        res = levenberg_marquardt(residual, np.log(a_lin[idx]), jac=jac,
                                  names=tuple(f"ln_{names_all[i]}" for i in idx),
                                  model_id="raman_local_mode")
    except ConvergenceError as exc:
        raise ConvergenceError(f"pre-factor fit did not converge: {exc}", best=exc.best,
                               trace=exc.trace) from None
    except RankDeficiencyError as exc:
        raise IllConditionedFitError(f"pre-factor {exc.parameter} is not constrained by the data") from None

    a = np.zeros(2)
    a[idx] = np.exp(res.values)
    fitted = basis @ a
    lin_jac = -basis / fitted[:, None]
    cost = 0.5 * float(np.sum((log_rate - np.log(fitted)) ** 2))
    cov = covariance_from_jacobian(lin_jac, cost)
    flags = list(res.flags)
    for i in np.flatnonzero(~active):
        flags.append(f"pinned_zero:{names_all[i]}")
    out = FitResult(model_id="raman_local_mode", names=names_all, values=a,
                    sigmas=np.sqrt(np.clip(np.diag(cov), 0, None)),
                    residual_norm=res.residual_norm, iterations=res.iterations,
                    converged=res.converged, covariance=cov, flags=flags, trace=res.trace,
                    meta={"T_D_K": fixed_TD, "wavenumber_cm-1": fixed_wavenumber,
                          "residual_space": "log-rate"})
    if fixed_wavenumber == DEFAULT_WAVENUMBER:
        out.meta["wavenumber_note"] = "default 1610 cm^-1 is an inferred C-C stretch value"
    return out


class PowerLawFit(NamedTuple):
    exponent: float
    sigma: float
    log_prefactor: float


def powerlaw_exponent(points: Sequence[RatePoint]) -> PowerLawFit:
    """Slope of the least-squares line of ln(rate) against ln(T)."""
    if len(points) < 3:
        raise InsufficientDataError("power-law fit needs at least 3 points")
    t, rate = _rate_arrays(points)
    if np.any(t <= 0) or np.any(rate <= 0):
        raise DomainError("temperatures and rates must be positive")
    x = np.log(t)
    if np.ptp(x) == 0:
        raise DomainError("temperatures are degenerate")
    y = np.log(rate)
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    dof = len(x) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(design.T @ design)
    return PowerLawFit(float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0))), float(coef[1]))


def channel_table(temperatures, params: RelaxationParams):
    """Rows of (T, raman, local, total) for a decomposition report."""
    t = np.asarray(temperatures, dtype=float)
    ram = np.atleast_1d(raman_rate(t, params))
    loc = np.atleast_1d(local_rate(t, params))
    return np.column_stack([t, ram, loc, ram + loc])


def check_parameters(params: RelaxationParams):
    if params.a_ram + params.a_loc <= 0:
        raise ParameterError("at least one channel must be active")
