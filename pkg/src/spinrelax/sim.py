"""Ideal-pulse Bloch simulation of spin-1/2 isochromat ensembles.

Rotation convention: a pulse of phase 0 (x) rotates right-handedly about
+x, so a 90 degree x pulse takes +z to -y.  The transverse signal is
``Mx + i*My`` and precesses as ``exp(+2j*pi*offset*t)``.

Spectral diffusion is modeled as a second longitudinal pool: every
isochromat is split into a fraction ``w`` recovering with T_s and a
fraction ``1 - w`` recovering with T_1.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, Union

import numpy as np

from .constants import NucleusSpec, angular_larmor_per_ns
from .errors import DomainError, ParameterError, ProgramError
from .fitting import TimeTrace

DEFAULT_DEAD_TIME_NS = 150.0
DEFAULT_WINDOW_NS = 32.0
CHUNK_SIZE = 1024
SEQUENCE_KINDS = ("inversion_recovery", "hahn", "cpmg", "three_pulse_eseem")


@dataclass
class Isochromat:
    offset: float  # MHz
    magnetization: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        self.magnetization = np.asarray(self.magnetization, dtype=float)


@dataclass(frozen=True)
class EnsembleSpec:
    count: int
    offset_sigma: float  # MHz
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise DomainError("ensemble needs at least one isochromat")
        if self.offset_sigma < 0:
            raise DomainError("offset_sigma must be nonnegative")

    def offsets(self) -> np.ndarray:
        if self.offset_sigma == 0:
            return np.zeros(self.count)
        return np.random.default_rng(self.seed).normal(0.0, self.offset_sigma, self.count)


@dataclass(frozen=True)
class RelaxationTimes:
    """Relaxation times in microseconds; ``math.inf`` switches a channel off."""

    t1: float
    t2: float
    spectral_diffusion_time_Ts: float | None = None
    spectral_diffusion_weight: float = 0.0

    def __post_init__(self):
        if not (self.t1 > 0 and self.t2 > 0):
            raise DomainError("T1 and T2 must be positive")
        if self.t2 > 2 * self.t1:
            raise DomainError("T2 cannot exceed 2*T1")
        if not 0 <= self.spectral_diffusion_weight <= 1:
            raise DomainError("spectral diffusion weight must lie in [0, 1]")
        ts = self.spectral_diffusion_time_Ts
        if ts is not None and not 0 < ts < self.t1:
            raise DomainError("T_s must be positive and shorter than T1")
        if ts is None and self.spectral_diffusion_weight > 0:
            raise DomainError("a spectral diffusion weight needs T_s")

    def pools(self) -> list[tuple[float, float]]:
        """(weight, longitudinal time) pairs."""
        w = self.spectral_diffusion_weight
        if self.spectral_diffusion_time_Ts is None or w == 0:
            return [(1.0, self.t1)]
        if w == 1:
            return [(1.0, self.spectral_diffusion_time_Ts)]
        return [(1.0 - w, self.t1), (w, self.spectral_diffusion_time_Ts)]


NO_RELAXATION = RelaxationTimes(math.inf, math.inf)


# --- program model ----------------------------------------------------------

@dataclass(frozen=True)
class Pulse:
    flip_angle: float  # degrees
    phase: float = 0.0  # degrees


@dataclass(frozen=True)
class Delay:
    duration: float | None = None  # ns
    tag: str | None = None


@dataclass(frozen=True)
class Acquire:
    integration_window: float = DEFAULT_WINDOW_NS  # ns


Event = Union[Pulse, Delay, Acquire]


@dataclass(frozen=True)
class SequenceProgram:
    events: tuple
    kind: str = "custom"
    n: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        acquires = [i for i, e in enumerate(self.events) if isinstance(e, Acquire)]
        if len(acquires) != 1:
            raise ProgramError("a program needs exactly one Acquire event")
        if acquires[0] != len(self.events) - 1:
            raise ProgramError("Acquire must be the last event")
        for e in self.events:
            if isinstance(e, Delay) and e.duration is None and e.tag is None:
                raise ProgramError("an untagged delay needs a duration")
            if isinstance(e, Delay) and e.duration is not None and e.duration < 0:
                raise ProgramError("delays must be nonnegative")

    @property
    def pulses(self) -> list[Pulse]:
        return [e for e in self.events if isinstance(e, Pulse)]

    @property
    def tags(self) -> set:
        return {e.tag for e in self.events if isinstance(e, Delay) and e.tag}

    @property
    def acquire(self) -> Acquire:
        return self.events[-1]

    def bind(self, **values) -> "SequenceProgram":
        unknown = set(values) - self.tags
        if unknown:
            raise ProgramError(f"program has no delay tagged {sorted(unknown)}")
        events = []
        for e in self.events:
            if isinstance(e, Delay) and e.tag in values:
                if values[e.tag] < 0:
                    raise ProgramError(f"delay {e.tag} must be nonnegative")
                e = Delay(float(values[e.tag]), e.tag)
            events.append(e)
        return replace(self, events=tuple(events))

    def check_bound(self):
        for e in self.events:
            if isinstance(e, Delay) and e.duration is None:
                raise ProgramError(f"variable delay '{e.tag}' is unbound")

    def with_flip_errors(self, error: float, targets: Iterable[int]) -> "SequenceProgram":
        targets = set(targets)
        events = []
        k = 0
        for e in self.events:
            if isinstance(e, Pulse):
                if k in targets:
                    e = Pulse(e.flip_angle + error, e.phase)
                k += 1
            events.append(e)
        return replace(self, events=tuple(events))


@dataclass(frozen=True)
class PhaseCycle:
    """Steps of (per-pulse phases in degrees, receiver sign)."""

    steps: tuple

    def __post_init__(self):
        steps = tuple((tuple(float(p) for p in phases), int(sign)) for phases, sign in self.steps)
        if not steps:
            raise ParameterError("a phase cycle needs at least one step")
        if len({len(p) for p, _ in steps}) != 1:
            raise ParameterError("all steps must list the same number of pulse phases")
        if any(sign not in (-1, 1) for _, sign in steps):
            raise ParameterError("receiver signs must be +1 or -1")
        object.__setattr__(self, "steps", steps)

    def __len__(self):
        return len(self.steps)

    @property
    def phases(self) -> np.ndarray:
        return np.array([p for p, _ in self.steps])

    @property
    def receivers(self) -> np.ndarray:
        return np.array([s for _, s in self.steps], dtype=float)

    @classmethod
    def single(cls, program: SequenceProgram) -> "PhaseCycle":
        return cls((([p.phase for p in program.pulses], 1),))

    def check(self, program: SequenceProgram):
        if len(self.steps[0][0]) != len(program.pulses):
            raise ProgramError(f"phase cycle lists {len(self.steps[0][0])} phases for "
                               f"{len(program.pulses)} pulses")


# --- single-isochromat operations -------------------------------------------

def _rotate(m: np.ndarray, flip_deg: float, phase_deg) -> np.ndarray:
    """Rotate vectors ``m[..., 3]`` about (cos phi, sin phi, 0).

    ``phase_deg`` broadcasts against ``m[..., 0]``.
    """
    beta = math.radians(flip_deg)
    phi = np.radians(np.asarray(phase_deg, dtype=float))
    nx, ny = np.cos(phi), np.sin(phi)
    mx, my, mz = m[..., 0], m[..., 1], m[..., 2]
    c, s = math.cos(beta), math.sin(beta)
    dot = nx * mx + ny * my
    x = mx * c + ny * mz * s + nx * dot * (1 - c)
    y = my * c - nx * mz * s + ny * dot * (1 - c)
    z = mz * c + (nx * my - ny * mx) * s
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def apply_pulse(state: Isochromat, flip_angle: float, phase: float) -> Isochromat:
    """Instantaneous rotation by ``flip_angle`` about the axis at ``phase`` (degrees)."""
    return Isochromat(state.offset, _rotate(state.magnetization, flip_angle, phase))


def _decay(duration_ns: float, time_us) -> np.ndarray:
    return np.exp(-duration_ns * 1e-3 / np.asarray(time_us, dtype=float))


def free_evolve(state: Isochromat, duration: float, relax: RelaxationTimes) -> Isochromat:
    """Free precession at the isochromat offset with T1/T2 relaxation (single pool)."""
    if duration < 0:
        raise DomainError("duration must be nonnegative")
    mx, my, mz = state.magnetization
    m = complex(mx, my) * np.exp(2j * math.pi * state.offset * duration * 1e-3) * _decay(duration, relax.t2)
    mz = 1.0 - (1.0 - mz) * _decay(duration, relax.t1)
    return Isochromat(state.offset, np.array([m.real, m.imag, float(mz)]))


# --- ensemble simulation ----------------------------------------------------

def _window_samples(window: float) -> np.ndarray:
    if window <= 0:
        return np.zeros(1)
    k = max(2, int(round(window / 2.0)) + 1)
    return np.linspace(-window / 2.0, window / 2.0, k)


def _simulate_chunk(program, offsets, t1s, weights, t2, phases):
    """Weighted transverse signal per cycle step for one chunk of isochromats."""
    n_steps = phases.shape[0]
    m = np.zeros((n_steps, offsets.size, 3))
    m[..., 2] = 1.0
    k = 0
    for e in program.events:
        if isinstance(e, Pulse):
            m = _rotate(m, e.flip_angle, phases[:, k][:, None])
            k += 1
        elif isinstance(e, Delay):
            d = e.duration
            if d == 0:
                continue
            rot = np.exp(2j * math.pi * offsets * d * 1e-3) * _decay(d, t2)
            mt = (m[..., 0] + 1j * m[..., 1]) * rot
            m[..., 0] = mt.real
            m[..., 1] = mt.imag
            m[..., 2] = 1.0 - (1.0 - m[..., 2]) * _decay(d, t1s)
        else:
            s = _window_samples(e.integration_window)
            kernel = np.exp(2j * math.pi * np.outer(offsets, s) * 1e-3) * _decay(1.0, t2) ** s
            g = kernel.mean(axis=1) * weights
            mt = m[..., 0] + 1j * m[..., 1]
            return mt @ g
    raise ProgramError("program has no Acquire event")


def _expand_pools(ensemble: EnsembleSpec, relax: RelaxationTimes):
    base = ensemble.offsets()
    offsets, t1s, weights = [], [], []
    for w, t1 in relax.pools():
        offsets.append(base)
        t1s.append(np.full(base.size, t1))
        weights.append(np.full(base.size, w / base.size))
    return np.concatenate(offsets), np.concatenate(t1s), np.concatenate(weights)


def simulate_steps(program: SequenceProgram, ensemble: EnsembleSpec, relax: RelaxationTimes,
                   phases, workers: int = 1) -> np.ndarray:
    """Ensemble-averaged echo integral for each row of ``phases`` (no receiver applied).

    Isochromats are processed in fixed chunks whose partial sums are added
    in chunk order, so the result does not depend on ``workers``.
    """
    program.check_bound()
    phases = np.atleast_2d(np.asarray(phases, dtype=float))
    if phases.shape[1] != len(program.pulses):
        raise ProgramError("phase rows must list one phase per pulse")
    offsets, t1s, weights = _expand_pools(ensemble, relax)
    bounds = [(i, min(i + CHUNK_SIZE, offsets.size)) for i in range(0, offsets.size, CHUNK_SIZE)]

    def work(b):
        lo, hi = b
        return _simulate_chunk(program, offsets[lo:hi], t1s[lo:hi], weights[lo:hi], relax.t2, phases)

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    total = np.zeros(phases.shape[0], dtype=complex)
    for part in parts:
        total = total + part
    return total


def run_sequence(program: SequenceProgram, ensemble: EnsembleSpec, relax: RelaxationTimes,
                 cycle: PhaseCycle | None = None, workers: int = 1) -> complex:
    """Phase-cycled echo integral: receiver-weighted mean over cycle steps."""
    cycle = cycle or PhaseCycle.single(program)
    cycle.check(program)
    signals = simulate_steps(program, ensemble, relax, cycle.phases, workers=workers)
    return complex(np.mean(signals * cycle.receivers))


def sweep(program: SequenceProgram, ensemble: EnsembleSpec, relax: RelaxationTimes,
          cycle: PhaseCycle | None, tag: str, values: Sequence[float], workers: int = 1) -> TimeTrace:
    """Run the sequence once per value of the tagged delay; returns a complex trace."""
    if tag not in program.tags:
        raise ProgramError(f"program has no delay tagged '{tag}'")
    values = np.asarray(values, dtype=float)
    out = np.array([run_sequence(program.bind(**{tag: v}), ensemble, relax, cycle, workers)
                    for v in values])
    meta = {"kind": program.kind, "swept": tag, "seed": ensemble.seed,
            "isochromats": ensemble.count, "offset_sigma_MHz": ensemble.offset_sigma,
            "T1_us": relax.t1, "T2_us": relax.t2}
    if program.n is not None:
        meta["n"] = program.n
    if relax.spectral_diffusion_time_Ts is not None:
        meta["Ts_us"] = relax.spectral_diffusion_time_Ts
        meta["sd_weight"] = relax.spectral_diffusion_weight
    return TimeTrace(values, out, meta)


# --- canonical sequences ----------------------------------------------------

def lombardi_cycle(n_pulses: int) -> PhaseCycle:
    """Every pulse toggled between its phase and phase+180; receiver follows pulse 1."""
    steps = []
    for flips in itertools.product((0.0, 180.0), repeat=n_pulses):
        steps.append((flips, -1 if flips[0] else 1))
    return PhaseCycle(tuple(steps))


def first_pulse_cycle(base_phases: Sequence[float]) -> PhaseCycle:
    base = list(base_phases)
    flipped = [base[0] + 180.0] + base[1:]
    return PhaseCycle(((base, 1), (flipped, -1)))


def make_sequence(kind: str, *, n: int | None = None, tau: float = DEFAULT_DEAD_TIME_NS,
                  recovery: float = 400.0, mixing: float = 400.0,
                  dead_time: float = DEFAULT_DEAD_TIME_NS, window: float = DEFAULT_WINDOW_NS,
                  eseem_detection: bool = False) -> tuple[SequenceProgram, PhaseCycle]:
    """Canonical program and default phase cycle.

    Parameters
    ----------
    kind : {"inversion_recovery", "hahn", "cpmg", "three_pulse_eseem"}
    n : int
        Number of refocusing pulses for CPMG.
    tau : float
        Interpulse delay in ns (tag ``tau``); must be at least ``dead_time``.
    recovery : float
        Inversion-recovery delay T in ns (tag ``T``).
    mixing : float
        Three-pulse mixing time T in ns (tag ``T``).
    eseem_detection : bool
        Replace the default cycle with a two-step cycle of the first pulse.
    """
    if kind not in SEQUENCE_KINDS:
        raise ParameterError(f"unknown sequence kind {kind!r}; expected one of {SEQUENCE_KINDS}")
    if tau < dead_time:
        raise ParameterError(f"tau = {tau} ns is shorter than the {dead_time} ns dead time")
    acq = Acquire(window)
    if kind == "inversion_recovery":
        if recovery < 0:
            raise ParameterError("recovery delay must be nonnegative")
        events = [Pulse(180, 0), Delay(recovery, "T"), Pulse(90, 0), Delay(tau, "tau"),
                  Pulse(180, 0), Delay(tau, "tau"), acq]
        # phases (+x,-x,+x) (+x,+x,+x) (-x,-x,+x) (-x,+x,+x); the receiver follows the pi/2 pulse
        cycle = PhaseCycle((((0, 180, 0), -1), ((0, 0, 0), 1), ((180, 180, 0), -1), ((180, 0, 0), 1)))
        program = SequenceProgram(events, kind)
    elif kind == "hahn":
        events = [Pulse(90, 0), Delay(tau, "tau"), Pulse(180, 0), Delay(tau, "tau"), acq]
        cycle = PhaseCycle((((0, 0), 1), ((180, 0), -1)))
        program = SequenceProgram(events, kind)
    elif kind == "cpmg":
        if n is None or n < 1:
            raise ParameterError("CPMG needs n >= 1")
        events = [Pulse(90, 0)]
        for _ in range(n):
            events += [Delay(tau, "tau"), Pulse(180, 90), Delay(tau, "tau")]
        events.append(acq)
        program = SequenceProgram(events, kind, n)
        base = [p.phase for p in program.pulses]
        lomb = lombardi_cycle(n + 1)
        cycle = PhaseCycle(tuple(([b + f for b, f in zip(base, ph)], s) for ph, s in lomb.steps))
    else:
        if mixing < 0:
            raise ParameterError("mixing time must be nonnegative")
        events = [Pulse(90, 0), Delay(tau, "tau"), Pulse(90, 0), Delay(mixing, "T"),
                  Pulse(90, 0), Delay(tau, "tau"), acq]
        program = SequenceProgram(events, kind)
        cycle = first_pulse_cycle([0, 0, 0])
    if eseem_detection:
        cycle = first_pulse_cycle([p.phase for p in program.pulses])
    return program, cycle


# --- phase-cycle diagnostics ------------------------------------------------

_PATHWAY_PHASES = 8


@dataclass(frozen=True)
class CycleReport:
    cycled: complex
    uncycled: complex
    desired_cycled: complex
    desired_uncycled: complex
    perfect_cycled: complex
    pathway: tuple

    @property
    def residual_ratio(self) -> float:
        num = abs(self.cycled - self.desired_cycled)
        den = abs(self.uncycled - self.desired_uncycled)
        # below round-off there is no spurious signal to cancel
        if den <= 1e-12 * max(abs(self.uncycled), 1e-300):
            return 0.0
        return num / den


def _pathway_amplitudes(program, ensemble, relax, workers):
    k = len(program.pulses)
    grid = np.arange(_PATHWAY_PHASES) * (360.0 / _PATHWAY_PHASES)
    base = np.array([p.phase for p in program.pulses])
    phases = np.array(list(itertools.product(grid, repeat=k))) + base
    s = simulate_steps(program, ensemble, relax, phases, workers=workers)
    # A[q] = mean_phi s(phi) exp(+i q.phi), phi measured from the base phases
    return np.fft.ifftn(s.reshape((_PATHWAY_PHASES,) * k))


def _gain(cycle: PhaseCycle, base, q) -> complex:
    phi = np.radians(cycle.phases - base)
    return complex(np.mean(cycle.receivers * np.exp(-1j * (phi @ q))))


def phase_cycle_report(program: SequenceProgram, cycle: PhaseCycle, imperfection: float,
                       ensemble: EnsembleSpec | None = None, relax: RelaxationTimes | None = None,
                       targets: Iterable[int] | None = None, workers: int = 1) -> CycleReport:
    """Compare a cycled and an uncycled (first step only) acquisition.

    The desired coherence pathway is the one carrying the largest
    amplitude with perfect pulses, found by a brute-force 8-phase-per-pulse
    decomposition.  With miscalibrated pulses, whatever the cycle keeps
    beyond that pathway's amplitude is spurious.
    """
    if abs(imperfection) > 45:
        raise ParameterError("flip-angle error must lie within +/-45 degrees")
    cycle.check(program)
    program.check_bound()
    ensemble = ensemble or EnsembleSpec(256, 1.0, 0)
    relax = relax or RelaxationTimes(359.0, 1.3)
    if targets is None:
        targets = [i for i, p in enumerate(program.pulses) if p.flip_angle == 180]
    bad = program.with_flip_errors(imperfection, targets)
    base = np.array([p.phase for p in program.pulses])

    amp_perfect = _pathway_amplitudes(program, ensemble, relax, workers)
    q_idx = np.unravel_index(int(np.argmax(np.abs(amp_perfect))), amp_perfect.shape)
    q = np.array([i if i < _PATHWAY_PHASES // 2 else i - _PATHWAY_PHASES for i in q_idx], dtype=float)
    amp_bad = _pathway_amplitudes(bad, ensemble, relax, workers)[q_idx] if imperfection else amp_perfect[q_idx]

    first = PhaseCycle((cycle.steps[0],))
    return CycleReport(
        cycled=run_sequence(bad, ensemble, relax, cycle, workers),
        uncycled=run_sequence(bad, ensemble, relax, first, workers),
        desired_cycled=_gain(cycle, base, q) * amp_bad,
        desired_uncycled=_gain(first, base, q) * amp_bad,
        perfect_cycled=run_sequence(program, ensemble, relax, cycle, workers),
        pathway=tuple(int(v) for v in q),
    )


def phase_cycle_cancellation_check(program: SequenceProgram, cycle: PhaseCycle, imperfection: float,
                                   **kwargs) -> float:
    """|cycled spurious| / |uncycled spurious| for a flip-angle error in degrees."""
    return phase_cycle_report(program, cycle, imperfection, **kwargs).residual_ratio


# --- ESEEM modulation and noise ---------------------------------------------

@dataclass(frozen=True)
class ModulationSpec:
    nucleus: NucleusSpec
    depth_k: float
    multiplicity: int = 1

    def __post_init__(self):
        if not 0 <= self.depth_k <= 1:
            raise DomainError("modulation depth must lie in [0, 1]")
        if self.multiplicity < 1:
            raise DomainError("multiplicity must be at least 1")


def modulation_factor(times, spec: ModulationSpec, b0: float, kind: str, n: int = 1,
                      tau: float | None = None) -> np.ndarray:
    """Weak-coupling modulation of one nucleus (already raised to its multiplicity).

    Two-pulse: 1 - (k/2)(1 - cos w tau)^2, with harmonics at w and 2w.
    CPMG-n accumulates one two-pulse factor per refocusing block.
    Three-pulse (times are the mixing time T at fixed tau):
    1 - (k/2)(1 - cos w tau)(1 - cos w (tau + T)).
    """
    t = np.asarray(times, dtype=float)
    w = angular_larmor_per_ns(spec.nucleus, b0)
    k = spec.depth_k
    if kind == "hahn":
        factor = 1.0 - 0.5 * k * (1.0 - np.cos(w * t)) ** 2
        power = spec.multiplicity
    elif kind == "cpmg":
        if n < 1:
            raise ParameterError("CPMG modulation needs n >= 1")
        factor = 1.0 - 0.5 * k * (1.0 - np.cos(w * t)) ** 2
        power = spec.multiplicity * n
    elif kind == "three_pulse_eseem":
        if tau is None:
            raise ParameterError("three-pulse modulation needs the fixed tau")
        factor = 1.0 - 0.5 * k * (1.0 - math.cos(w * tau)) * (1.0 - np.cos(w * (tau + t)))
        power = spec.multiplicity
    else:
        raise ParameterError(f"no ESEEM modulation model for sequence kind {kind!r}")
    return factor**power


def eseem_modulate(envelope: TimeTrace, modulations: Sequence[ModulationSpec], b0: float,
                   kind: str, n: int = 1, tau: float | None = None) -> TimeTrace:
    """Multiply an echo envelope by the product of nuclear modulation factors."""
    if kind not in ("hahn", "cpmg", "three_pulse_eseem"):
        raise ParameterError(f"no ESEEM modulation model for sequence kind {kind!r}")
    total = np.ones(len(envelope))
    for spec in modulations:
        total = total * modulation_factor(envelope.times, spec, b0, kind, n, tau)
    labels = ";".join(f"{m.nucleus.label}:{m.depth_k:g}x{m.multiplicity}" for m in modulations)
    return envelope.with_values(envelope.values * total, eseem=labels, b0_T=b0)


def add_noise(trace: TimeTrace, sigma: float, seed: int) -> TimeTrace:
    """Add Gaussian noise (independent in real and imaginary parts for complex traces)."""
    if sigma < 0:
        raise DomainError("sigma must be nonnegative")
    if sigma == 0:
        return trace.with_values(trace.values.copy())
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, len(trace))
    if trace.is_complex:
        noise = noise + 1j * rng.normal(0.0, sigma, len(trace))
    return trace.with_values(trace.values + noise, noise_sigma=sigma, noise_seed=seed)
