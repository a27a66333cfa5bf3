"""Damped nonlinear least squares and the echo-decay models.

The engine is a Levenberg-Marquardt solver with Marquardt diagonal
scaling and box bounds (steps are projected onto the box).  Covariances
come from the Jacobian at the solution, scaled by the reduced chi-square.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (ConvergenceError, DomainError, InsufficientDataError,
                     ParameterError, RankDeficiencyError)

_TINY = np.finfo(float).tiny


@dataclass
class TimeTrace:
    """Uniform or non-uniform trace; ``times`` in ns, strictly increasing."""

    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values)
        self.values = values.astype(complex if np.iscomplexobj(values) else float)
        if self.times.ndim != 1 or self.values.shape != self.times.shape:
            raise ParameterError("times and values must be 1-D arrays of equal length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ParameterError("times must be strictly increasing")

    def __len__(self):
        return self.times.size

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def with_values(self, values, **meta) -> "TimeTrace":
        return TimeTrace(self.times.copy(), values, {**self.meta, **meta})


@dataclass
class FitResult:
    model_id: str
    names: tuple
    values: np.ndarray
    sigmas: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    covariance: np.ndarray | None = None
    flags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def sigma(self, name: str) -> float:
        return float(self.sigmas[self.names.index(name)])

    @property
    def parameters(self) -> dict:
        """Map of name -> (value, 1-sigma)."""
        return {n: (float(v), float(s)) for n, v, s in zip(self.names, self.values, self.sigmas)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("parameter,value,sigma\n")
        for n, v, s in zip(self.names, self.values, self.sigmas):
            buf.write(f"{n},{v:.12g},{s:.6g}\n")
        return buf.getvalue()

    def report(self, units: dict | None = None) -> str:
        units = units or {}
        lines = [f"model: {self.model_id}",
                 f"converged: {self.converged}",
                 f"iterations: {self.iterations}",
                 f"residual_norm: {self.residual_norm:.6g}"]
        for n, v, s in zip(self.names, self.values, self.sigmas):
            unit = units.get(n, "")
            lines.append(f"  {n} = {v:.8g} +/- {s:.3g} {unit}".rstrip())
        for flag in self.flags:
            lines.append(f"flag: {flag}")
        for key, val in self.meta.items():
            lines.append(f"{key}: {val}")
        return "\n".join(lines) + "\n"


def _rank_check(jac: np.ndarray, names: Sequence[str], rcond: float):
    norms = np.linalg.norm(jac, axis=0)
    zero = np.flatnonzero(norms <= _TINY)
    if zero.size:
        return names[zero[0]]
    jn = jac / norms
    _, s, vt = np.linalg.svd(jn, full_matrices=False)
    if s[-1] <= rcond * s[0]:
        return names[int(np.argmax(np.abs(vt[-1])))]
    return None


def covariance_from_jacobian(jac: np.ndarray, cost: float) -> np.ndarray:
    """Reduced-chi-square scaled covariance ``s^2 (J^T J)^+``."""
    m, n = jac.shape
    s2 = 2.0 * cost / (m - n) if m > n else math.nan
    norms = np.linalg.norm(jac, axis=0)
    norms = np.where(norms > 0, norms, 1.0)
    jn = jac / norms
    inv = np.linalg.pinv(jn.T @ jn, rcond=1e-15)
    return s2 * inv / np.outer(norms, norms)


def _central_jacobian(residual, p, lower, upper):
    h = np.cbrt(np.finfo(float).eps) * np.maximum(np.abs(p), 1.0)
    cols = []
    for j in range(p.size):
        hi = p.copy()
        lo = p.copy()
        hi[j] = min(p[j] + h[j], upper[j])
        lo[j] = max(p[j] - h[j], lower[j])
        cols.append((residual(hi) - residual(lo)) / (hi[j] - lo[j]))
    return np.column_stack(cols)


def levenberg_marquardt(residual: Callable[[np.ndarray], np.ndarray], p0, *,
                        jac: Callable[[np.ndarray], np.ndarray] | None = None,
                        names: Sequence[str] | None = None, bounds=None,
                        max_iter: int = 500, xtol: float = 1e-10, gtol: float = 1e-12,
                        allow_singular: bool = False, rank_rcond: float = 1e-13,
                        model_id: str = "custom") -> FitResult:
    """Minimize ``0.5*||residual(p)||^2``.

    Parameters
    ----------
    residual : callable
        Maps a parameter vector to the residual vector.
    p0 : array_like
        Initial guess; must lie inside ``bounds``.
    jac : callable, optional
        Jacobian of ``residual``; central differences when omitted.
    bounds : (lower, upper), optional
        Box constraints, each broadcastable to ``p0``.
    allow_singular : bool
        If False, a singular Jacobian at the solution raises
        :class:`RankDeficiencyError`; if True the covariance uses a
        pseudo-inverse and the result is flagged.

    Returns
    -------
    FitResult
        Converged when the relative step falls below ``xtol`` or the
        gradient max-norm below ``gtol``.
    """
    p = np.array(p0, dtype=float)
    n = p.size
    names = tuple(names) if names is not None else tuple(f"p{i}" for i in range(n))
    if len(names) != n:
        raise ParameterError("names must match the parameter count")
    if bounds is None:
        lower = np.full(n, -np.inf)
        upper = np.full(n, np.inf)
    else:
        lower = np.broadcast_to(np.asarray(bounds[0], dtype=float), (n,)).copy()
        upper = np.broadcast_to(np.asarray(bounds[1], dtype=float), (n,)).copy()
    if np.any(p < lower) or np.any(p > upper):
        raise DomainError("initial guess lies outside the bounds")
    jac_fn = jac if jac is not None else (lambda q: _central_jacobian(residual, q, lower, upper))

    r = np.asarray(residual(p), dtype=float)
    m = r.size
    if m < n:
        raise InsufficientDataError(f"need at least {n} residuals for {n} parameters, got {m}")
    cost = 0.5 * float(r @ r)
    lam = 1e-12
    scale = np.zeros(n)
    history = []
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        J = np.asarray(jac_fn(p), dtype=float)
        g = J.T @ r
        history.append((it, cost, lam))
        if not np.all(np.isfinite(g)):
            raise ConvergenceError("non-finite gradient", best=None, trace=history)
        if np.max(np.abs(g)) < gtol:
            converged = True
            break
        scale = np.maximum(scale, np.sum(J * J, axis=0))
        d = np.sqrt(np.where(scale > 0, scale, 1.0))
        accepted = False
        while True:
            A = np.vstack([J, np.sqrt(lam) * np.diag(d)])
            b = np.concatenate([-r, np.zeros(n)])
            delta = np.linalg.lstsq(A, b, rcond=None)[0]
            p_new = np.clip(p + delta, lower, upper)
            step = p_new - p
            tiny = np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol)
            r_new = np.asarray(residual(p_new), dtype=float)
            cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if cost_new < cost:
                p, r, cost = p_new, r_new, cost_new
                lam = max(lam / 10.0, 1e-15)
                accepted = True
                break
            if tiny:
                converged = True
                break
            lam *= 10.0
            if lam > 1e20:
                converged = True
                break
        if converged:
            break
        if accepted and np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol):
            converged = True
            break

    J = np.asarray(jac_fn(p), dtype=float)
    flags = []
    bad = _rank_check(J, names, rank_rcond)
    if bad is not None:
        if not allow_singular:
            raise RankDeficiencyError(bad)
        flags.append(f"rank_deficient:{bad}")
    cov = covariance_from_jacobian(J, cost)
    sig = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    for j in range(n):
        if p[j] <= lower[j] or p[j] >= upper[j]:
            flags.append(f"at_bound:{names[j]}")
    result = FitResult(model_id=model_id, names=names, values=p, sigmas=sig,
                       residual_norm=math.sqrt(2.0 * cost), iterations=it,
                       converged=converged, covariance=cov, flags=flags, trace=history)
    if not converged:
        raise ConvergenceError(f"no convergence after {max_iter} iterations", best=result, trace=history)
    return result


def least_squares(model: Callable, data: TimeTrace, p0, bounds=None, *, jac: Callable | None = None,
                  names: Sequence[str] | None = None, **kwargs) -> FitResult:
    """Fit ``model(times, *params)`` to a real-valued trace.

    ``jac(times, *params)`` returns d model / d params with shape (m, n).
    """
    if data.is_complex:
        raise ParameterError("fit a real component of the trace, not complex values")
    t, y = data.times, data.values
    if len(t) < len(p0) + 1:
        raise InsufficientDataError(f"need at least {len(p0) + 1} points for {len(p0)} parameters, got {len(t)}")

    def residual(p):
        return y - model(t, *p)

    rjac = None
    if jac is not None:
        def rjac(p):
            return -np.asarray(jac(t, *p))
    kwargs.setdefault("model_id", getattr(model, "__name__", "custom"))
    return levenberg_marquardt(residual, p0, jac=rjac, names=names, bounds=bounds, **kwargs)


# --- decay models -----------------------------------------------------------

def monoexp_model(t, amplitude, tm, baseline):
    return amplitude * np.exp(-t / tm) + baseline


def monoexp_jacobian(t, amplitude, tm, baseline):
    e = np.exp(-t / tm)
    return np.column_stack([e, amplitude * t * e / tm**2, np.ones_like(t)])


def biexp_model(t, a_s, t_s, a, t_1, baseline):
    return a_s * np.exp(-t / t_s) + a * np.exp(-t / t_1) + baseline


def biexp_jacobian(t, a_s, t_s, a, t_1, baseline):
    es = np.exp(-t / t_s)
    e1 = np.exp(-t / t_1)
    return np.column_stack([es, a_s * t * es / t_s**2, e1, a * t * e1 / t_1**2, np.ones_like(t)])


def _efold_time(x: np.ndarray, y: np.ndarray, baseline: float) -> float:
    dev = np.abs(y - baseline)
    if dev[0] == 0:
        return float(x[-1] - x[0])
    below = np.flatnonzero(dev < dev[0] / math.e)
    if below.size == 0:
        return float(x[-1] - x[0])
    return max(float(x[below[0]] - x[0]), float(np.min(np.diff(x))))


TIME_SCALES = ("2tau", "2ntau")


def fit_monoexp(data: TimeTrace, time_scale: str = "2tau", n: int = 1, **kwargs) -> FitResult:
    """Fit ``I = A exp(-x/T_m) + I_0`` with x = 2*tau (Hahn) or 2*n*tau (CPMG-n).

    ``data.times`` holds tau.  A decay that cannot be identified (flat
    trace, or T_m pinned at the upper bound) is returned with the
    ``non_decaying`` flag and ``converged`` False.
    """
    if time_scale not in TIME_SCALES:
        raise ParameterError(f"time_scale must be one of {TIME_SCALES}")
    if time_scale == "2ntau" and n < 1:
        raise ParameterError("CPMG abscissa needs n >= 1")
    if len(data) < 4:
        raise InsufficientDataError("monoexponential fit needs at least 4 points")
    factor = 2.0 * (n if time_scale == "2ntau" else 1)
    x = factor * data.times
    y = np.asarray(data.values)
    if np.iscomplexobj(y):
        raise ParameterError("fit a real component of the trace, not complex values")
    span = float(x[-1] - x[0])
    upper_t = 10.0 * span
    names = ("A", "T_m", "I_0")
    meta = {"time_scale": time_scale, "n": n, "abscissa_factor": factor}

    baseline = float(y[-1])
    tm0 = min(_efold_time(x, y, baseline), 0.5 * upper_t)
    a0 = float(y[0] - baseline) * math.exp(x[0] / tm0)
    scale = float(np.max(np.abs(y))) or 1.0
    if abs(y[0] - baseline) <= 1e-12 * scale or np.ptp(y) <= 1e-12 * scale:
        return _non_decaying(names, [0.0, math.inf, float(np.mean(y))], y, meta)
    try:
        res = least_squares(monoexp_model, TimeTrace(x, y), [a0, tm0, baseline],
                            bounds=([-np.inf, 1e-9 * span, -np.inf], [np.inf, upper_t, np.inf]),
                            jac=monoexp_jacobian, names=names, model_id="monoexp", **kwargs)
    except RankDeficiencyError:
        return _non_decaying(names, [0.0, math.inf, float(np.mean(y))], y, meta)
    res.meta.update(meta)
    if res["T_m"] >= 0.999 * upper_t or abs(res["A"]) <= 1e-9 * scale:
        res.flags.append("non_decaying")
        res.converged = False
    return res


def _non_decaying(names, values, y, meta):
    resid = y - values[2]
    return FitResult(model_id="monoexp", names=names, values=np.array(values, dtype=float),
                     sigmas=np.full(3, np.nan), residual_norm=float(np.linalg.norm(resid)),
                     iterations=0, converged=False, flags=["non_decaying"], meta=dict(meta))


def _biexp_internal(t, a_s, t_s, a, gap, baseline):
    return biexp_model(t, a_s, t_s, a, t_s + gap, baseline)


def _biexp_internal_jac(t, a_s, t_s, a, gap, baseline):
    jac = biexp_jacobian(t, a_s, t_s, a, t_s + gap, baseline)
    # T_1 = T_s + gap, so d/dT_s picks up the T_1 column too
    return np.column_stack([jac[:, 0], jac[:, 1] + jac[:, 3], jac[:, 2], jac[:, 3], jac[:, 4]])


def fit_biexp(data: TimeTrace, *, min_ratio: float = 1.5, **kwargs) -> FitResult:
    """Fit ``I = A_s exp(-T/T_s) + A exp(-T/T_1) + I_0`` to recovery data.

    T_1 is parameterized as T_s plus a positive gap, so the slow constant
    is always the one reported as T_1.
    """
    if len(data) < 7:
        raise InsufficientDataError("biexponential fit needs at least 7 points")
    t = data.times
    y = np.asarray(data.values)
    if np.iscomplexobj(y):
        raise ParameterError("fit a real component of the trace, not complex values")
    span = float(t[-1] - t[0])
    upper_t = 10.0 * span
    floor = 1e-9 * span
    positive = t[t > 0]
    flags = []
    if positive.size and np.log10(t[-1] / positive[0]) < 3.0:
        flags.append("short_span:<3 decades of recovery delay")

    baseline = float(y[-1])
    t0 = _efold_time(t, y, baseline)
    best = None
    for fs, f1 in ((0.1, 3.0), (1 / 30, 1.0), (1 / 3, 10.0)):
        ts0 = min(max(fs * t0, 2 * floor), 0.5 * upper_t)
        t10 = min(max(f1 * t0, 2 * ts0), upper_t)
        basis = np.column_stack([np.exp(-t / ts0), np.exp(-t / t10), np.ones_like(t)])
        a_s0, a0, i0 = np.linalg.lstsq(basis, y, rcond=None)[0]
        p0 = [a_s0, ts0, a0, t10 - ts0, i0]
        try:
            res = least_squares(_biexp_internal, TimeTrace(t, y), p0,
                                bounds=([-np.inf, floor, -np.inf, floor, -np.inf],
                                        [np.inf, upper_t, np.inf, upper_t, np.inf]),
                                jac=_biexp_internal_jac,
                                names=("A_s", "T_s", "A", "gap", "I_0"),
                                model_id="biexp", allow_singular=True, **kwargs)
        except ConvergenceError as exc:
            if exc.best is None:
                continue
            res = exc.best
        if best is None or res.residual_norm < best.residual_norm:
            best = res
    if best is None:
        raise ConvergenceError("biexponential fit failed from every starting point")

    a_s, t_s, a, gap, i0 = best.values
    cov = best.covariance
    jt = np.eye(5)
    jt[3, 1] = 1.0  # T_1 = T_s + gap
    cov_out = jt @ cov @ jt.T
    values = np.array([a_s, t_s, a, t_s + gap, i0])
    result = FitResult(model_id="biexp", names=("A_s", "T_s", "A", "T_1", "I_0"),
                       values=values, sigmas=np.sqrt(np.clip(np.diag(cov_out), 0, None)),
                       residual_norm=best.residual_norm, iterations=best.iterations,
                       converged=best.converged, covariance=cov_out,
                       flags=[f.replace(":gap", ":T_1") for f in best.flags] + flags,
                       trace=best.trace)
    if values[3] / values[1] < min_ratio:
        msg = f"time constants indistinguishable (T_1/T_s = {values[3] / values[1]:.3g} < {min_ratio})"
        result.flags.append("degenerate_time_constants")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return result
