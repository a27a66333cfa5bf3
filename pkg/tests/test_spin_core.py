import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinrelax.constants import (CONSTANTS, IsotopeTable, NucleusSpec, angular_larmor_per_ns,
                                 debye_frequency, g_factor, larmor_ladder, load_isotope_table,
                                 parse_isotope_table, resonance_field)
from spinrelax.errors import DomainError, ParameterError

# IUPAC 2001 gyromagnetic ratios, 1e7 rad s^-1 T^-1 (1H from CODATA 2018)
GAMMA_IUPAC = {"1H": 26.7522128, "11B": 8.5847044, "13C": 6.728284}


@pytest.fixture(scope="module")
def table():
    return load_isotope_table()


def test_resonance_field_x_band():
    # h f / (g muB) from CODATA 2018 values; later adjustments move muB by ~1e-9
    oracle = 6.62607015e-34 * 9.6e9 / (2.0023 * 9.2740100783e-24)
    assert resonance_field(2.0023, 9.6) == pytest.approx(oracle, rel=1e-8)
    assert resonance_field(2.0023, 9.6) == pytest.approx(0.34257, rel=1e-4)


def test_g_factor_inverts_field():
    assert g_factor(0.34257, 9.6) == pytest.approx(2.00221, abs=2e-5)


@given(st.floats(1.5, 2.5), st.floats(1.0, 100.0))
def test_field_g_roundtrip(g, f):
    assert g_factor(resonance_field(g, f), f) == pytest.approx(g, rel=1e-12)


def test_resonance_field_domain():
    with pytest.raises(DomainError):
        resonance_field(0.0, 9.6)
    with pytest.raises(DomainError):
        resonance_field(2.0, -1.0)


def test_proton_ladder(table):
    ladder = larmor_ladder(table["1H"], 0.34243, 2)
    assert [n for n, _ in ladder] == [1, 2]
    assert ladder[0][1] == pytest.approx(14.5798, abs=1e-3)
    assert ladder[1][1] == pytest.approx(29.1596, abs=1e-3)


def test_ladder_requires_harmonics(table):
    with pytest.raises(DomainError):
        larmor_ladder(table["1H"], 0.3, 0)


@given(st.floats(0.01, 5.0), st.integers(1, 8))
def test_ladder_is_harmonic(b0, n_max):
    nuc = NucleusSpec("X", 0.5, 10.0)
    ladder = larmor_ladder(nuc, b0, n_max)
    base = ladder[0][1]
    for n, f in ladder:
        assert f == pytest.approx(n * base, rel=1e-14)


@pytest.mark.parametrize("label", sorted(GAMMA_IUPAC))
def test_isotope_ratios_match_reference(table, label):
    ratio = table[label].gamma_bar / table["1H"].gamma_bar
    assert ratio == pytest.approx(GAMMA_IUPAC[label] / GAMMA_IUPAC["1H"], rel=1e-6)


def test_isotope_gamma_bar_in_mhz(table):
    gamma = GAMMA_IUPAC["13C"] * 1e7 / (2 * math.pi) / 1e6
    assert table["13C"].gamma_bar == pytest.approx(gamma, rel=1e-6)
    assert table["13C"].larmor(0.34243) == pytest.approx(3.66688, abs=1e-4)


def test_table_metadata(table):
    assert table.version == "1"
    assert {"1H", "11B", "13C", "14N", "19F"} <= set(table)
    sub = table.subset(["13C", "1H"])
    assert list(sub) == ["13C", "1H"]


def test_parse_table_errors():
    with pytest.raises(ParameterError):
        parse_isotope_table("1H,0.5\n")
    with pytest.raises(ParameterError):
        parse_isotope_table("1H,0.5,42\n1H,0.5,42\n")
    with pytest.raises(ParameterError):
        parse_isotope_table("1H,0,42\n")
    t = parse_isotope_table("# table-version: 7\n\n1H,0.5,42.5\n")
    assert t.version == "7" and t["1H"].gamma_bar == 42.5


def test_custom_table_file(tmp_path):
    p = tmp_path / "iso.csv"
    p.write_text("Xx,1.5,2.0\n")
    assert isinstance(load_isotope_table(p), IsotopeTable)


def test_derived_constants():
    assert CONSTANTS.wavenumber_to_kelvin == pytest.approx(1.438777, rel=1e-6)
    assert CONSTANTS.gas_constant == pytest.approx(8.314462618, rel=1e-9)
    # k_B T_D / hbar
    assert debye_frequency(100.0) == pytest.approx(1.380649e-23 * 100 / 1.054571817e-34, rel=1e-9)


def test_angular_larmor_per_ns(table):
    w = angular_larmor_per_ns(table["1H"], 0.34243)
    assert w == pytest.approx(2 * np.pi * table["1H"].larmor(0.34243) * 1e-3, rel=1e-14)
