import numpy as np
import pytest

from spinrelax.fitting import TimeTrace
from spinrelax.io import (ConfigError, DataFileError, comment_header, format_value, parse_config_file,
                          parse_header, read_table, read_trace, read_xy, write_rows, write_trace)


def test_header_roundtrip():
    text = comment_header("fit", {"model": "monoexp", "n": 4, "t1_us": None})
    lines = text.splitlines()
    assert lines[0].startswith("# spinrelax ")
    meta = parse_header(lines)
    assert meta["command"] == "fit" and meta["model"] == "monoexp" and meta["n"] == "4"


def test_header_sorted_and_stable():
    a = comment_header("x", {"b": 1.5, "a": 2})
    b = comment_header("x", {"a": 2, "b": 1.5})
    assert a == b
    assert format_value(0.1) == format_value(0.1)


def test_trace_roundtrip(tmp_path):
    tr = TimeTrace(np.array([150.0, 158.0, 166.0]), np.array([1 + 2j, 0.5 - 1e-9j, 1e-300 + 0j]))
    p = tmp_path / "t.csv"
    write_trace(p, tr, comment_header("simulate", {"kind": "hahn"}))
    back = read_trace(p)
    np.testing.assert_array_equal(back.values, tr.values)
    assert back.meta["kind"] == "hahn"


def test_read_real_trace(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("time_ns,value\n0,1\n4,0.5\n")
    assert not read_trace(p).is_complex


@pytest.mark.parametrize("body, row", [
    ("time_ns,real\n0,1\n4,abc\n", 3),
    ("time_ns,real\n0,1\n4\n", 3),
])
def test_bad_rows_report_line(tmp_path, body, row):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(DataFileError) as exc:
        read_trace(p)
    assert exc.value.row == row


def test_empty_and_missing(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("# only comments\ntemperature_K,value\n")
    with pytest.raises(DataFileError):
        read_xy(p)
    with pytest.raises(DataFileError):
        read_table(tmp_path / "nope.csv")
    q = tmp_path / "q.csv"
    q.write_text("a,b\n1,2\n")
    with pytest.raises(DataFileError):
        read_xy(q)


def test_nonincreasing_times(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("time_ns,real\n4,1\n0,2\n")
    with pytest.raises(DataFileError):
        read_trace(p)


def test_write_rows(tmp_path):
    p = tmp_path / "r.csv"
    write_rows(p, "# h\n", ["a", "b"], [(1.0, "x"), (2.5, "y")])
    assert p.read_text() == "# h\na,b\n1,x\n2.5,y\n"


def test_config_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nt1-us = 306\nmodel=biexp  # trailing\n\n")
    assert parse_config_file(p) == {"t1_us": "306", "model": "biexp"}
    p.write_text("just words\n")
    with pytest.raises(ConfigError):
        parse_config_file(p)
