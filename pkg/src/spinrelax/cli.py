"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 data error, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .constants import load_isotope_table, larmor_ladder
from .eseem import EseemConfig, assignments_csv, process_eseem
from .errors import (ConvergenceError, DomainError, IllConditionedFitError, InsufficientDataError,
                     ParameterError, ProgramError, SamplingError, SpinRelaxError)
from .fitting import TimeTrace, fit_biexp, fit_monoexp
from .io import (ConfigError, DataFileError, comment_header, parse_config_file, read_trace,
                 read_xy, write_rows, write_trace)
from .relaxation import (DEFAULT_WAVENUMBER, DebyeModel, HeatCapacityPoint, RatePoint,
                         RelaxationParams, channel_table, crossover_temperature, debye_cp,
                         fit_debye, fit_relaxation_prefactors, powerlaw_exponent)
from .sim import (EnsembleSpec, ModulationSpec, PhaseCycle, RelaxationTimes, add_noise,
                  eseem_modulate, first_pulse_cycle, make_sequence, sweep)

log = logging.getLogger("spinrelax")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3, 4


class UsageError(SpinRelaxError):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return float(text)


@dataclass(frozen=True)
class Param:
    type: Callable
    default: Any
    help: str
    choices: tuple | None = None
    flag: bool = False


GLOBAL = {
    "seed": Param(int, 0, "random seed for ensembles and noise"),
    "out": Param(str, ".", "output directory"),
}

COMMANDS: dict[str, dict[str, Param]] = {
    "simulate": {
        "kind": Param(str, None, "sequence kind", ("inversion_recovery", "hahn", "cpmg", "three_pulse_eseem")),
        "n": Param(int, 2, "CPMG refocusing pulses"),
        "points": Param(int, 512, "number of sweep points"),
        "tau_start_ns": Param(float, 150.0, "first (or fixed) interpulse delay tau"),
        "dtau_ns": Param(float, 8.0, "tau increment for hahn/cpmg sweeps"),
        "t_start_ns": Param(float, 400.0, "first recovery/mixing delay T"),
        "dt_ns": Param(float, 4000.0, "T increment for inversion recovery / three-pulse sweeps"),
        "t1_us": Param(float, 359.0, "spin-lattice relaxation time"),
        "t2_us": Param(float, 1.3, "phase memory time"),
        "ts_us": Param(_opt_float, None, "spectral diffusion time"),
        "sd_weight": Param(float, 0.0, "spectral diffusion weight"),
        "isochromats": Param(int, 2048, "ensemble size"),
        "offset_sigma_mhz": Param(float, 5.0, "Gaussian inhomogeneous width"),
        "window_ns": Param(float, 32.0, "echo integration window"),
        "noise": Param(float, 0.0, "Gaussian noise sigma added to the trace"),
        "b0": Param(float, 0.34243, "field for ESEEM modulation (T)"),
        "modulate": Param(str, "", "ESEEM modulations, e.g. '1H:0.1,11B:0.05:2' (label:depth[:multiplicity])"),
        "cycle": Param(str, "auto", "phase cycle", ("auto", "default", "eseem", "none")),
        "workers": Param(int, 1, "threads over isochromat chunks"),
    },
    "fit": {
        "input": Param(str, None, "trace CSV"),
        "model": Param(str, None, "decay model", ("monoexp", "biexp")),
        "component": Param(str, "auto", "trace component", ("auto", "real", "imag", "magnitude")),
        "time_scale": Param(str, "auto", "monoexp abscissa", ("auto", "2tau", "2ntau")),
        "n": Param(_opt_float, None, "CPMG n for the 2ntau abscissa"),
        "t1_us": Param(_opt_float, None, "independent T1 for the T_m <= 2 T1 check"),
        "tm_us": Param(_opt_float, None, "independent T_m for the T_m <= 2 T1 check"),
    },
    "relaxmap": {
        "input": Param(str, None, "rate CSV (temperature_K,value)"),
        "td": Param(float, 138.9, "fixed Debye temperature (K)"),
        "wavenumber": Param(float, DEFAULT_WAVENUMBER, "fixed local-mode wavenumber (cm^-1)"),
    },
    "debye": {
        "input": Param(str, None, "heat capacity CSV (temperature_K,value)"),
        "dim": Param(int, 2, "lattice dimensionality", (2, 3)),
        "cutoff": Param(float, 8.0, "low-temperature cutoff (K)"),
    },
    "eseem": {
        "input": Param(str, None, "ESEEM trace CSV"),
        "b0": Param(_opt_float, None, "magnetic field (T)"),
        "degree": Param(int, 3, "background polynomial degree"),
        "zero_fill": Param(int, 4, "zero-fill factor"),
        "prominence": Param(float, 0.05, "peak threshold as a fraction of the maximum"),
        "tolerance": Param(float, 0.3, "assignment tolerance (MHz)"),
        "n_max": Param(int, 4, "highest harmonic considered"),
        "nuclei": Param(str, "", "comma-separated isotope labels (default: whole table)"),
        "component": Param(str, "auto", "trace component", ("auto", "real", "imag", "magnitude")),
        "normalize_1H": Param(_bool, False, "normalize to the observed 1w(1H) peak", flag=True),
    },
    "identify": {
        "b0": Param(_opt_float, None, "magnetic field (T)"),
        "nuclei": Param(str, "", "comma-separated isotope labels (default: whole table)"),
        "n_max": Param(int, 4, "highest harmonic"),
        "frequency": Param(_opt_float, None, "frequency (MHz) to look up"),
        "tolerance": Param(float, 0.3, "lookup tolerance (MHz)"),
    },
}

REQUIRED = {"simulate": ("kind",), "fit": ("input", "model"), "relaxmap": ("input",),
            "debye": ("input",), "eseem": ("input", "b0"), "identify": ("b0",)}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_globals(parser):
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--verbose", action="store_true")
    for name, spec in GLOBAL.items():
        parser.add_argument(_flag(name), dest=name, type=spec.type, help=spec.help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinrelax", description=__doc__,
                                     argument_default=argparse.SUPPRESS)
    parser.add_argument("--version", action="version", version=f"spinrelax {__version__}")
    _add_globals(parser)
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, params in COMMANDS.items():
        p = sub.add_parser(cmd, argument_default=argparse.SUPPRESS)
        _add_globals(p)
        for name, spec in params.items():
            if spec.flag:
                p.add_argument(_flag(name), dest=name, action="store_true", help=spec.help)
            else:
                p.add_argument(_flag(name), dest=name, type=spec.type, choices=spec.choices, help=spec.help)
    return parser


def resolve_config(command: str, args: dict) -> dict:
    """Defaults < config file < command-line flags; unknown file keys are rejected."""
    table = {**GLOBAL, **COMMANDS[command]}
    resolved = {k: spec.default for k, spec in table.items()}
    if args.get("config"):
        try:
            file_values = parse_config_file(args["config"])
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        aliases = {k.lower(): k for k in table}
        for key, raw in file_values.items():
            name = key if key in table else aliases.get(key.lower())
            if name is None:
                raise UsageError(f"unknown config key '{key}' for command '{command}'")
            spec = table[name]
            try:
                value = spec.type(raw)
            except ValueError:
                raise UsageError(f"config key '{key}': invalid value {raw!r}") from None
            if spec.choices and value not in spec.choices:
                raise UsageError(f"config key '{key}': {value!r} not in {spec.choices}")
            resolved[name] = value
    for key, value in args.items():
        if key in table:
            resolved[key] = value
    for key in REQUIRED.get(command, ()):
        if resolved.get(key) in (None, ""):
            raise UsageError(f"missing required parameter {_flag(key)}")
    return resolved


def _write_sidecar(out: Path, command: str, cfg: dict):
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    text = comment_header(command, cfg) + f"# written = {stamp}\n"
    (out / f"{command}_config.txt").write_text(text, encoding="utf-8")


def project_component(trace: TimeTrace, component: str) -> tuple[TimeTrace, str]:
    """Reduce a complex trace to real values; 'auto' projects onto the dominant axis."""
    v = trace.values
    if not trace.is_complex:
        return trace, "real"
    if component == "real":
        return trace.with_values(v.real), "real"
    if component == "imag":
        return trace.with_values(v.imag), "imag"
    if component == "magnitude":
        return trace.with_values(np.abs(v)), "magnitude"
    angle = 0.5 * np.angle(np.sum(v * v))
    return trace.with_values((v * np.exp(-1j * angle)).real), f"projected(phase={math.degrees(angle):.3f} deg)"


def _parse_modulations(text: str, table):
    specs = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        parts = item.split(":")
        if len(parts) not in (2, 3) or parts[0] not in table:
            raise UsageError(f"--modulate entry {item!r}: expected label:depth[:multiplicity] with a known label")
        mult = int(parts[2]) if len(parts) == 3 else 1
        specs.append(ModulationSpec(table[parts[0]], float(parts[1]), mult))
    return specs


# --- commands ---------------------------------------------------------------

def cmd_simulate(cfg: dict, out: Path) -> int:
    kind = cfg["kind"]
    n = cfg["n"] if kind == "cpmg" else None
    if cfg["points"] < 1:
        raise UsageError("--points must be at least 1")
    try:
        program, cycle = make_sequence(kind, n=n, tau=cfg["tau_start_ns"], recovery=cfg["t_start_ns"],
                                       mixing=cfg["t_start_ns"], window=cfg["window_ns"])
        relax = RelaxationTimes(cfg["t1_us"], cfg["t2_us"], cfg["ts_us"], cfg["sd_weight"])
        ensemble = EnsembleSpec(cfg["isochromats"], cfg["offset_sigma_mhz"], cfg["seed"])
    except (ParameterError, DomainError) as exc:
        raise UsageError(str(exc)) from None
    choice = cfg["cycle"]
    if choice == "auto":
        choice = "eseem" if (kind == "cpmg" and n > 8) else "default"
    if choice == "eseem":
        cycle = first_pulse_cycle([p.phase for p in program.pulses])
    elif choice == "none":
        cycle = PhaseCycle.single(program)
    cfg["cycle_used"] = f"{choice}:{len(cycle)} steps"

    idx = np.arange(cfg["points"])
    if kind in ("hahn", "cpmg"):
        tag, grid = "tau", cfg["tau_start_ns"] + cfg["dtau_ns"] * idx
    else:
        tag, grid = "T", cfg["t_start_ns"] + cfg["dt_ns"] * idx
    if np.any(np.diff(grid) <= 0):
        raise UsageError("sweep step must be positive")
    trace = sweep(program, ensemble, relax, cycle, tag, grid, workers=cfg["workers"])
    table = load_isotope_table()
    mods = _parse_modulations(cfg["modulate"], table)
    if mods:
        mod_kind = kind if kind != "inversion_recovery" else None
        if mod_kind is None:
            raise UsageError("--modulate is not available for inversion recovery")
        trace = eseem_modulate(trace, mods, cfg["b0"], mod_kind, n or 1, tau=cfg["tau_start_ns"])
    trace = add_noise(trace, cfg["noise"], cfg["seed"] + 1)
    params = {**cfg, "swept": tag, "n_used": n}
    write_trace(out / "simulate_trace.csv", trace, comment_header("simulate", params))
    log.info("wrote %d points to %s", len(trace), out / "simulate_trace.csv")
    return EXIT_OK


def _tm_t1_check(result, cfg) -> list[str]:
    notes = []
    if result.model_id == "monoexp" and cfg.get("t1_us") and "non_decaying" not in result.flags:
        tm_us = result["T_m"] * 1e-3
        if tm_us > 2 * cfg["t1_us"]:
            notes.append(f"inconsistent: T_m = {tm_us:.4g} us exceeds 2*T1 = {2 * cfg['t1_us']:.4g} us")
    if result.model_id == "biexp" and cfg.get("tm_us"):
        t1_us = result["T_1"] * 1e-3
        if cfg["tm_us"] > 2 * t1_us:
            notes.append(f"inconsistent: T_m = {cfg['tm_us']:.4g} us exceeds 2*T1 = {2 * t1_us:.4g} us")
    return notes


def cmd_fit(cfg: dict, out: Path) -> int:
    raw = read_trace(cfg["input"])
    trace, component = project_component(raw, cfg["component"])
    if cfg["model"] == "monoexp":
        scale = cfg["time_scale"]
        n = cfg["n"] if cfg["n"] is not None else raw.meta.get("n_used") or raw.meta.get("n")
        n = int(float(n)) if n not in (None, "", "None") else 1
        if scale == "auto":
            scale = "2ntau" if raw.meta.get("kind") == "cpmg" else "2tau"
        result = fit_monoexp(trace, scale, n)
        x = result.meta.get("abscissa_factor", 2.0) * trace.times
        from .fitting import monoexp_model
        model = monoexp_model(x, *result.values) if "non_decaying" not in result.flags else np.full(x.size, result.values[2])
        units = {"T_m": "ns", "A": "", "I_0": ""}
    else:
        result = fit_biexp(trace)
        x = trace.times
        from .fitting import biexp_model
        model = biexp_model(x, *result.values)
        units = {"T_s": "ns", "T_1": "ns"}
    result.meta["component"] = component
    notes = _tm_t1_check(result, cfg)
    header = comment_header("fit", cfg)
    report = header + result.report(units) + "".join(f"note: {n}\n" for n in notes)
    (out / "fit_report.txt").write_text(report, encoding="utf-8")
    (out / "fit_params.csv").write_text(header + result.to_csv(), encoding="utf-8")
    rows = [(t, xi, d, m, d - m) for t, xi, d, m in zip(trace.times, x, trace.values, model)]
    write_rows(out / "fit_curve.csv", header, ["time_ns", "abscissa_ns", "data", "model", "residual"], rows)
    print(report, end="")
    return EXIT_OK


def cmd_relaxmap(cfg: dict, out: Path) -> int:
    _, temps, rates = read_xy(cfg["input"])
    points = [RatePoint(t, r) for t, r in zip(temps, rates)]
    result = fit_relaxation_prefactors(points, cfg["td"], cfg["wavenumber"])
    params = RelaxationParams(result["A_Ram"], result["A_Loc"], cfg["td"], cfg["wavenumber"])
    cross = crossover_temperature(params)
    power = powerlaw_exponent(points)
    header = comment_header("relaxmap", cfg)
    order = np.argsort(temps)
    table = channel_table(temps[order], params)
    rows = [(row[0], r, row[1], row[2], row[3]) for row, r in zip(table, rates[order])]
    write_rows(out / "relaxmap_channels.csv", header,
               ["temperature_K", "rate_s-1", "raman_s-1", "local_s-1", "model_s-1"], rows)
    (out / "relaxmap_params.csv").write_text(header + result.to_csv(), encoding="utf-8")
    lines = [result.report({"A_Ram": "s^-1", "A_Loc": "s^-1"}),
             f"crossover_K: {'none' if cross is None else f'{cross:.4f}'}\n",
             f"powerlaw_exponent: {power.exponent:.6f} +/- {power.sigma:.3g}\n"]
    if cross is not None:
        lines.append(f"raman dominant below {cross:.1f} K, local mode above\n")
    report = header + "".join(lines)
    (out / "relaxmap_report.txt").write_text(report, encoding="utf-8")
    print(report, end="")
    return EXIT_OK


def cmd_debye(cfg: dict, out: Path) -> int:
    _, temps, cps = read_xy(cfg["input"])
    keep = temps <= cfg["cutoff"]
    points = [HeatCapacityPoint(t, c) for t, c in zip(temps[keep], cps[keep])]
    dim = cfg["dim"]
    result = fit_debye(points, dim, cfg["cutoff"])
    other = 5 - dim
    header = comment_header("debye", cfg)
    lines = [result.report({"T_D": "K"}), f"points_used: {len(points)} of {len(temps)}\n"]
    try:
        alt = fit_debye(points, other, cfg["cutoff"])
    except SpinRelaxError:
        alt = None
    if alt is not None:
        ratio = result.residual_norm / alt.residual_norm if alt.residual_norm > 0 else math.inf
        lines.append(f"residual_ratio_{dim}d_over_{other}d: {ratio:.6g}\n")
        if ratio > 1.0:
            lines.append(f"warning: dimensionality mismatch, a {other}D model fits "
                         f"{ratio:.3g}x better (T_D = {alt['T_D']:.4g} K)\n")
    model = DebyeModel(result["T_D"], dim)
    grid = np.linspace(0.0, max(temps[keep]), 101)
    write_rows(out / "debye_curve.csv", header, ["temperature_K", "cp_model"],
               zip(grid, debye_cp(grid, model)))
    (out / "debye_params.csv").write_text(header + result.to_csv(), encoding="utf-8")
    report = header + "".join(lines)
    (out / "debye_report.txt").write_text(report, encoding="utf-8")
    print(report, end="")
    return EXIT_OK


def _nuclei(cfg):
    return tuple(s.strip() for s in cfg["nuclei"].split(",") if s.strip()) or None


def cmd_eseem(cfg: dict, out: Path) -> int:
    raw = read_trace(cfg["input"])
    trace, component = project_component(raw, cfg["component"])
    table = load_isotope_table()
    nuclei = _nuclei(cfg)
    if nuclei and any(n not in table for n in nuclei):
        raise UsageError(f"unknown isotope in --nuclei {cfg['nuclei']!r}")
    config = EseemConfig(cfg["b0"], cfg["degree"], cfg["zero_fill"], cfg["prominence"], cfg["tolerance"],
                         cfg["n_max"], nuclei, cfg["normalize_1H"])
    spectrum, assignments = process_eseem(trace, config, table)
    header = comment_header("eseem", {**cfg, "component_used": component,
                                      "normalization_anchor_MHz": spectrum.normalization_anchor})
    (out / "eseem_spectrum.csv").write_text(spectrum.to_csv(header), encoding="utf-8")
    (out / "eseem_assignments.csv").write_text(assignments_csv(assignments, header), encoding="utf-8")
    for a in assignments:
        print(f"{a.harmonic}w({a.nucleus}) at {a.frequency:.3f} MHz (dev {a.deviation:+.3f}, "
              f"norm {a.normalized_frequency:.4f}){' ambiguous' if a.ambiguous else ''}")
    return EXIT_OK


def cmd_identify(cfg: dict, out: Path) -> int:
    table = load_isotope_table()
    nuclei = _nuclei(cfg) or tuple(table)
    if any(n not in table for n in nuclei):
        raise UsageError(f"unknown isotope in --nuclei {cfg['nuclei']!r}")
    rows = []
    for label in nuclei:
        for n, f in larmor_ladder(table[label], cfg["b0"], cfg["n_max"]):
            rows.append((label, str(n), f))
    if cfg["frequency"] is not None:
        rows = [r for r in rows if abs(r[2] - cfg["frequency"]) <= cfg["tolerance"]]
        rows.sort(key=lambda r: abs(r[2] - cfg["frequency"]))
    header = comment_header("identify", cfg)
    write_rows(out / "identify_ladder.csv", header, ["nucleus", "harmonic", "frequency_MHz"], rows, ".6f")
    for label, n, f in rows:
        print(f"{n}w({label}) {f:.4f} MHz")
    return EXIT_OK


HANDLERS = {"simulate": cmd_simulate, "fit": cmd_fit, "relaxmap": cmd_relaxmap,
            "debye": cmd_debye, "eseem": cmd_eseem, "identify": cmd_identify}


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    logging.basicConfig(level=logging.INFO if args.get("verbose") else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = resolve_config(command, args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        code = HANDLERS[command](cfg, out)
        _write_sidecar(out, command, cfg)
        return code
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"spinrelax {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"spinrelax {command}: no convergence: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (DataFileError, InsufficientDataError, IllConditionedFitError, DomainError,
            SamplingError, ParameterError, ProgramError) as exc:
        print(f"spinrelax {command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
