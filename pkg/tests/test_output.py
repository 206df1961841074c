"""Tests for CSV/SVG serialization and provenance."""

import xml.dom.minidom

import pytest

from adamlab import ResultTable, config_fingerprint, emit_csv, emit_svg_plot
from adamlab.output import fmt17, to_csv_text


def test_seventeen_digit_floats_round_trip():
    for x in (0.1, 1 / 3, 2.5e-17, -1.0000000000000002, 9.869604401089358):
        assert float(fmt17(x)) == x


def test_fingerprint_is_order_insensitive():
    a = config_fingerprint({"x": 1, "y": "b"})
    b = config_fingerprint({"y": "b", "x": 1})
    assert a == b
    assert len(a) == 16
    assert config_fingerprint({"x": 2, "y": "b"}) != a


def _table():
    return ResultTable(
        columns=["n", "mean"],
        rows=[(1, 0.5), (10, 0.30000000000000004)],
        provenance={"seed": 7, "w": 0.1},
    )


def test_csv_layout():
    text = to_csv_text(_table())
    lines = text.strip().split("\n")
    comments = [ln for ln in lines if ln.startswith("#")]
    assert any("seed = 7" in ln for ln in comments)
    assert any("fingerprint" in ln for ln in comments)
    assert any("artifact_version" in ln for ln in comments)
    header_idx = len(comments)
    assert lines[header_idx] == "n,mean"
    assert lines[header_idx + 1] == "1,0.5"
    # last-place digits survive the trip
    assert lines[header_idx + 2].split(",")[1] == "0.30000000000000004"


def test_csv_emission_is_byte_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_csv(_table(), p1)
    emit_csv(_table(), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_csv_write_failure_names_path(tmp_path):
    target = tmp_path / "missing_dir" / "x.csv"
    with pytest.raises(OSError):
        emit_csv(_table(), target)


def test_table_column_extraction():
    t = _table()
    assert list(t.column("mean")) == [0.5, 0.30000000000000004]
    with pytest.raises(KeyError):
        t.column("nope")


def test_svg_is_wellformed_xml(tmp_path):
    path = tmp_path / "plot.svg"
    emit_svg_plot(_table(), "n", ["mean"], path, logx=True, logy=True, title="t")
    doc = xml.dom.minidom.parse(str(path))
    assert doc.documentElement.tagName == "svg"
    body = path.read_text()
    assert "polyline" in body
    assert "http" not in body.split("xmlns")[0]  # no external asset references


def test_svg_single_point(tmp_path):
    t = ResultTable(columns=["x", "y"], rows=[(1.0, 2.0)], provenance={})
    path = tmp_path / "one.svg"
    emit_svg_plot(t, "x", ["y"], path)
    xml.dom.minidom.parse(str(path))
    assert "circle" in path.read_text()


def test_svg_rejects_nonpositive_on_log_axis(tmp_path):
    t = ResultTable(columns=["x", "y"], rows=[(1.0, 0.5), (2.0, -0.25)], provenance={})
    with pytest.raises(ValueError, match="row"):
        emit_svg_plot(t, "x", ["y"], tmp_path / "bad.svg", logy=True)


def test_svg_two_series_get_legend(tmp_path):
    t = ResultTable(columns=["x", "a", "b"], rows=[(1, 2, 3), (2, 4, 5)], provenance={})
    path = tmp_path / "two.svg"
    emit_svg_plot(t, "x", ["a", "b"], path)
    body = path.read_text()
    assert body.count("polyline") >= 2
    assert ">a<" in body and ">b<" in body
