import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from scmine.io import PALETTE, atomic_write_text, csv_text, emit_scatter_svg, read_csv, scatter_svg

SVG_NS = "{http://www.w3.org/2000/svg}"


def circles(svg):
    root = ET.fromstring(svg.encode("utf-8"))
    assert root.get("viewBox") == "0 0 1000 1000"
    return root.findall(f"{SVG_NS}circle")


class TestScatterSvg:
    def test_three_points_two_categories(self):
        found = circles(scatter_svg([[0, 0], [1, 1], [2, 0]], ["a", "b", "a"]))
        assert len(found) == 3
        assert {c.get("fill") for c in found} == {PALETTE[0], PALETTE[1]}

    def test_margin(self):
        rng = np.random.default_rng(0)
        found = circles(scatter_svg(rng.normal(size=(50, 2)) * 1e3, ["x"] * 50))
        xy = np.array([[float(c.get("cx")), float(c.get("cy"))] for c in found])
        assert xy.min() >= 50 - 1e-9 and xy.max() <= 950 + 1e-9
        assert xy[:, 0].min() == pytest.approx(50) and xy[:, 0].max() == pytest.approx(950)

    def test_stable_palette(self):
        a = scatter_svg([[0, 0], [1, 1]], ["z", "a"])
        b = scatter_svg([[1, 1], [0, 0]], ["a", "z"])
        fills = lambda s: {c.find(f"{SVG_NS}title").text: c.get("fill") for c in circles(s)}
        assert fills(a) == fills(b) == {"a": PALETTE[0], "z": PALETTE[1]}

    def test_constant_axis_centered(self):
        found = circles(scatter_svg([[3, 3], [3, 3]]))
        assert all(float(c.get("cx")) == 500 for c in found)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            scatter_svg(np.zeros((0, 2)))
        with pytest.raises(ValueError):
            scatter_svg([[0, np.nan]])
        with pytest.raises(ValueError):
            scatter_svg([[0, 0]], ["a", "b"])

    def test_escapes_titles(self, tmp_path):
        path = tmp_path / "s.svg"
        emit_scatter_svg([[0, 0]], ["<a&b>"], path)
        assert circles(path.read_text())[0].find(f"{SVG_NS}title").text == "<a&b>"


class TestCsvAndFiles:
    def test_header_and_quoting(self, tmp_path):
        text = csv_text(("name", "value"), [("a,b", 0.1), ("c", 2)])
        assert text == 'name,value\n"a,b",0.1\nc,2\n'
        path = tmp_path / "x.csv"
        atomic_write_text(path, text)
        assert read_csv(path) == [{"name": "a,b", "value": "0.1"}, {"name": "c", "value": "2"}]

    def test_float_format_round_trips(self):
        x = 1 / 3
        assert float(csv_text(("v",), [(x,)]).splitlines()[1]) == x

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        atomic_write_text(tmp_path / "sub" / "f.txt", "é\n")
        assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.txt"]
        assert re.fullmatch("é\n", (tmp_path / "sub" / "f.txt").read_text(encoding="utf-8"))
