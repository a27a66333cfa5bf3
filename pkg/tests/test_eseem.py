import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinrelax.constants import load_isotope_table
from spinrelax.errors import DomainError, SamplingError
from spinrelax.eseem import (EseemConfig, apodize_hamming, assign_nuclei, assignments_csv, find_peaks,
                             hamming_window, padded_length, process_eseem, subtract_background, transform)
from spinrelax.fitting import TimeTrace
from spinrelax.sim import ModulationSpec, eseem_modulate

B0 = 0.34243


@pytest.fixture(scope="module")
def table():
    return load_isotope_table()


def test_hamming_formula():
    n = 9
    w = hamming_window(n)
    expect = [0.54 - 0.46 * math.cos(2 * math.pi * i / (n - 1)) for i in range(n)]
    np.testing.assert_allclose(w, expect, rtol=1e-15)
    np.testing.assert_allclose(w, np.hamming(n), rtol=1e-14)
    with pytest.raises(DomainError):
        hamming_window(1)


@pytest.mark.parametrize("n, factor, expect", [(256, 4, 1024), (200, 4, 1024), (257, 2, 1024), (1, 1, 1)])
def test_padded_length(n, factor, expect):
    assert padded_length(n, factor) == expect


@settings(max_examples=20)
@given(st.integers(0, 4), st.lists(st.floats(-5, 5), min_size=5, max_size=5))
def test_background_removes_polynomials(degree, coef):
    t = 150 + 4.0 * np.arange(64)
    x = (t - t.mean()) / 100
    y = np.polynomial.polynomial.polyval(x, coef[: degree + 1])
    out = subtract_background(TimeTrace(t, y), degree)
    assert np.max(np.abs(out.values)) <= 1e-9 * (1 + np.max(np.abs(y)))


def test_transform_axis_and_tone():
    dt, n = 4.0, 256
    t = dt * np.arange(n)
    f0 = 1e3 / (n * dt) * 40  # on a bin
    spec = transform(TimeTrace(t, np.cos(2 * math.pi * f0 * t * 1e-3)), 1)
    assert spec.frequencies[1] == pytest.approx(1e3 / (n * dt))
    assert spec.frequencies[np.argmax(spec.magnitudes)] == pytest.approx(f0)
    assert spec.meta["n_padded"] == 256


def test_transform_rejects_nonuniform():
    with pytest.raises(SamplingError):
        transform(TimeTrace([0.0, 4.0, 9.0, 12.0], np.ones(4)))


@settings(max_examples=25)
@given(st.floats(2.0, 40.0))
def test_parabolic_peak_refinement(f0):
    t = 4.0 * np.arange(512)
    trace = apodize_hamming(TimeTrace(t, np.cos(2 * math.pi * f0 * t * 1e-3)))
    peaks = find_peaks(transform(trace, 4), 0.5)
    best = min(peaks, key=lambda p: abs(p[0] - f0))
    bin_width = 1e3 / (2048 * 4.0)
    assert abs(best[0] - f0) < 0.1 * bin_width


def test_assignment_basic(table):
    h = table["1H"].larmor(B0)
    c = table["13C"].larmor(B0)
    got, un = assign_nuclei([(h - 0.05, 1.0), (2 * c - 0.1, 0.5), (50.0, 0.2)], B0,
                            table.subset(["1H", "13C"]))
    assert [(a.nucleus, a.harmonic) for a in got] == [("13C", 2), ("1H", 1)]
    assert got[1].deviation == pytest.approx(-0.05)
    assert got[1].normalized_frequency == pytest.approx(1.0)
    assert un == [(50.0, 0.2)]


def test_assignment_flags_ambiguity(table):
    # 4w(13C) sits 0.09 MHz from 1w(1H)
    got, _ = assign_nuclei([(table["1H"].larmor(B0), 1.0)], B0, table.subset(["1H", "13C"]))
    assert got[0].nucleus == "1H" and got[0].ambiguous and got[0].alternatives == ("4w(13C)",)


@settings(max_examples=25)
@given(st.permutations([(1.37, 0.1), (3.6, 1.0), (4.8, 0.9), (9.4, 0.3), (14.57, 2.0), (29.2, 0.4)]))
def test_assignment_order_independent(peaks):
    table = load_isotope_table()
    ref, _ = assign_nuclei(sorted(peaks), B0, table)
    got, _ = assign_nuclei(peaks, B0, table)
    assert got == ref


def test_assignment_domain(table):
    with pytest.raises(DomainError):
        assign_nuclei([(1.0, 1.0)], B0, table, tolerance=0.0)
    with pytest.raises(DomainError):
        assign_nuclei([(1.0, 1.0)], -1.0, table)


def _three_species(table, points):
    times = 150.0 + 4.0 * np.arange(points)
    flat = TimeTrace(times, np.ones(points))
    mods = [ModulationSpec(table[x], 0.1) for x in ("1H", "11B", "13C")]
    return eseem_modulate(flat, mods, B0, "hahn")


@pytest.mark.parametrize("points", [512, 1024])
def test_three_species_longer_traces(table, points):
    """With more than one resolution bin between the 11B and 13C lines the
    normalized positions land within 1% of the gyromagnetic ratios."""
    _, got = process_eseem(_three_species(table, points), EseemConfig(B0, nuclei=("1H", "11B", "13C")), table)
    first = {a.nucleus: a for a in got if a.harmonic == 1}
    assert set(first) == {"1H", "11B", "13C"}
    h = table["1H"].gamma_bar
    for label in ("11B", "13C"):
        assert abs(first[label].deviation) <= 0.3
        assert first[label].normalized_frequency == pytest.approx(table[label].gamma_bar / h, rel=0.01)


def test_tabulated_anchor(table):
    spec, got = process_eseem(_three_species(table, 512),
                              EseemConfig(B0, nuclei=("1H", "11B", "13C"), normalize_to_observed_proton=False),
                              table)
    assert spec.normalization_anchor == pytest.approx(table["1H"].larmor(B0))


def test_csv_outputs(table):
    spec, got = process_eseem(_three_species(table, 256), EseemConfig(B0), table)
    lines = spec.to_csv("# x\n").splitlines()
    assert lines[1] == "frequency_MHz,magnitude,normalized_frequency"
    assert len(lines) == 2 + spec.frequencies.size
    text = assignments_csv(got)
    assert text.startswith("nucleus,harmonic,frequency_MHz,deviation_MHz")
    assert text.count("\n") == len(got) + 1
