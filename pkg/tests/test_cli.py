import csv
import subprocess
import sys

import numpy as np
import pytest

from spinrelax import cli
from spinrelax.io import read_table, read_trace
from spinrelax.relaxation import DebyeModel, RelaxationParams, debye_cp, relaxation_rate


def csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(line for line in fh if not line.startswith("#")))


def run(tmp_path, *argv):
    return cli.main([*argv, "--out", str(tmp_path)])


def test_identify_ladder(tmp_path, capsys):
    assert run(tmp_path, "identify", "--b0", "0.34243", "--nuclei", "1H", "--n-max", "2") == 0
    rows = csv_rows(tmp_path / "identify_ladder.csv")
    assert rows[0] == ["nucleus", "harmonic", "frequency_MHz"] and rows[1][:2] == ["1H", "1"]
    assert "14.5798" in capsys.readouterr().out
    assert (tmp_path / "identify_config.txt").read_text().count("# written = ") == 1


def test_identify_lookup(tmp_path, capsys):
    assert run(tmp_path, "identify", "--b0", "0.34243", "--frequency", "3.67", "--tolerance", "0.05") == 0
    assert "1w(13C)" in capsys.readouterr().out


def test_missing_required_is_usage_error(tmp_path, capsys):
    assert run(tmp_path, "eseem", "--input", "x.csv") == 2
    assert "--b0" in capsys.readouterr().err
    assert run(tmp_path, "simulate") == 2


def test_argparse_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["fit", "--model", "triexp"])
    assert exc.value.code == 2


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("b0 = 0.3\nbogus = 1\n")
    assert run(tmp_path, "identify", "--config", str(cfg)) == 2


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("b0 = 1.0\nnuclei = 1H\nn-max = 1\n")
    assert run(tmp_path, "identify", "--config", str(cfg)) == 0
    assert "42.5775" in capsys.readouterr().out
    assert run(tmp_path, "identify", "--config", str(cfg), "--b0", "0.5") == 0
    assert "21.2887" in capsys.readouterr().out


def test_missing_file_is_data_error(tmp_path):
    assert run(tmp_path, "fit", "--input", str(tmp_path / "none.csv"), "--model", "monoexp") == 3


def test_simulate_then_fit(tmp_path, capsys):
    assert run(tmp_path, "simulate", "--kind", "hahn", "--points", "128", "--isochromats", "512") == 0
    tr = read_trace(tmp_path / "simulate_trace.csv")
    assert tr.is_complex and len(tr) == 128 and tr.meta["kind"] == "hahn"
    assert run(tmp_path, "fit", "--input", str(tmp_path / "simulate_trace.csv"), "--model", "monoexp",
               "--t1-us", "359") == 0
    out = capsys.readouterr().out
    assert "T_m = 1300" in out and "inconsistent" not in out
    rows = csv_rows(tmp_path / "fit_params.csv")
    assert rows[0] == ["parameter", "value", "sigma"] and rows[2][0] == "T_m"


def test_fit_inconsistency_note(tmp_path, capsys):
    run(tmp_path, "simulate", "--kind", "hahn", "--points", "64", "--isochromats", "64")
    assert run(tmp_path, "fit", "--input", str(tmp_path / "simulate_trace.csv"), "--model", "monoexp",
               "--t1-us", "0.5") == 0
    assert "inconsistent" in capsys.readouterr().out


def test_cpmg_fit_uses_header_n(tmp_path, capsys):
    run(tmp_path, "simulate", "--kind", "cpmg", "--n", "2", "--points", "24", "--isochromats", "256")
    assert run(tmp_path, "fit", "--input", str(tmp_path / "simulate_trace.csv"), "--model", "monoexp") == 0
    out = capsys.readouterr().out
    assert "time_scale: 2ntau" in out and "T_m = 1300" in out


def test_simulate_ir_biexp(tmp_path, capsys):
    assert run(tmp_path, "simulate", "--kind", "inversion_recovery", "--points", "40", "--t-start-ns", "400",
               "--dt-ns", "50000", "--ts-us", "35.9", "--sd-weight", "0.3", "--isochromats", "128") == 0
    assert run(tmp_path, "fit", "--input", str(tmp_path / "simulate_trace.csv"), "--model", "biexp") == 0
    assert "T_1 = 359000" in capsys.readouterr().out


def test_simulate_rejects_modulated_ir(tmp_path):
    assert run(tmp_path, "simulate", "--kind", "inversion_recovery", "--points", "4",
               "--modulate", "1H:0.1") == 2
    assert run(tmp_path, "simulate", "--kind", "hahn", "--points", "4", "--modulate", "Zz:0.1") == 2


def test_relaxmap(tmp_path, capsys):
    params = RelaxationParams(2e3, 6e6, 138.9)
    temps = np.geomspace(20, 300, 10)
    body = "temperature_K,value\n" + "".join(f"{float(t)!r},{float(relaxation_rate(t, params))!r}\n" for t in temps)
    (tmp_path / "rates.csv").write_text(body)
    assert run(tmp_path, "relaxmap", "--input", str(tmp_path / "rates.csv")) == 0
    out = capsys.readouterr().out
    assert "crossover_K: 267.5" in out and "powerlaw_exponent" in out
    _, cols, data = read_table(tmp_path / "relaxmap_channels.csv")
    np.testing.assert_allclose(data[:, 4], data[:, 1], rtol=1e-9)


def test_debye(tmp_path, capsys):
    temps = np.linspace(1, 12, 23)
    cp = debye_cp(temps, DebyeModel(138.9, 2))
    (tmp_path / "cp.csv").write_text("temperature_K,value\n" + "".join(f"{float(t)!r},{float(c)!r}\n" for t, c in zip(temps, cp)))
    assert run(tmp_path, "debye", "--input", str(tmp_path / "cp.csv"), "--dim", "2") == 0
    out = capsys.readouterr().out
    assert "T_D = 138.9" in out and "warning" not in out
    assert run(tmp_path, "debye", "--input", str(tmp_path / "cp.csv"), "--dim", "3") == 0
    assert "dimensionality mismatch" in capsys.readouterr().out


def test_debye_empty_input(tmp_path):
    (tmp_path / "cp.csv").write_text("temperature_K,value\n")
    assert run(tmp_path, "debye", "--input", str(tmp_path / "cp.csv")) == 3


def test_eseem_command(tmp_path, capsys):
    run(tmp_path, "simulate", "--kind", "hahn", "--points", "256", "--dtau-ns", "4", "--isochromats", "64",
        "--t2-us", "100", "--modulate", "1H:0.1,13C:0.1")
    assert run(tmp_path, "eseem", "--input", str(tmp_path / "simulate_trace.csv"), "--b0", "0.34243",
               "--nuclei", "1H,13C", "--normalize-1H") == 0
    out = capsys.readouterr().out
    assert "1w(1H)" in out and "1w(13C)" in out
    _, cols, _ = read_table(tmp_path / "eseem_spectrum.csv")
    assert cols == ["frequency_MHz", "magnitude", "normalized_frequency"]


def test_eseem_nonuniform_grid_is_data_error(tmp_path):
    (tmp_path / "t.csv").write_text("time_ns,value\n0,1\n4,0.5\n9,0.2\n12,0.1\n16,0.1\n20,0.0\n")
    assert run(tmp_path, "eseem", "--input", str(tmp_path / "t.csv"), "--b0", "0.3", "--degree", "1") == 3


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "spinrelax.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "spinrelax" in proc.stdout
