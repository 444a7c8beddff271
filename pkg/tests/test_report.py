import csv
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conftest import GOLDEN
from touchcal import report
from touchcal.calibration import lattice
from touchcal.emulator import Screen
from touchcal.pipeline import STREAM_COLLECT, CalibrationSample, M1Model, collect_dataset

SVG = "{http://www.w3.org/2000/svg}"
GOLDEN_SVG = GOLDEN / "scatter_grid36_1s.svg"


def render_grid36(scene, res, path):
    """M1 on the 6x6 lattice at 1 s moves, drawn with the arm base."""
    samples = collect_dataset(M1Model(res.screen_map, res.grid), scene.chain,
                              scene.emulator(STREAM_COLLECT), lattice(scene.region, 6, 6), 1.0,
                              press_depth=scene.press_depth)
    base = report.base_on_screen(scene.screen, scene.chain.base_pose.translation)
    report.emit_scatter_svg(samples, scene.screen, path, base, title="36-point grid, 1 s moves")
    return samples


def one(target, hit):
    return CalibrationSample(np.asarray(target, float), np.zeros(3), np.zeros(7),
                             None if hit is None else np.asarray(hit, float), np.zeros(7),
                             1.0, "M1")


class TestScatterSvg:
    def test_matches_golden(self, scene, default_run, tmp_path):
        render_grid36(scene, default_run[0], tmp_path / "s.svg")
        assert (tmp_path / "s.svg").read_bytes() == GOLDEN_SVG.read_bytes()

    def test_golden_shows_every_target(self):
        root = ET.parse(GOLDEN_SVG).getroot()
        groups = {g.get("fill") or g.get("stroke"): g for g in root.iter(f"{SVG}g")}
        assert len(groups["red"]) == 36
        assert len(groups["blue"]) == len(groups["#555555"]) <= 36

    def test_empty_is_screen_only(self, tmp_path):
        report.emit_scatter_svg([], Screen(), tmp_path / "e.svg")
        root = ET.parse(tmp_path / "e.svg").getroot()
        shapes = [el for el in root.iter() if el.tag != f"{SVG}svg"]
        assert [el.tag for el in shapes] == [f"{SVG}rect"]
        assert shapes[0].get("width") == "540.00" and shapes[0].get("height") == "330.00"

    def test_zero_deviation_draws_coincident_markers(self, tmp_path):
        report.emit_scatter_svg([one((0.1, 0.2), (0.1, 0.2))], Screen(), tmp_path / "z.svg")
        root = ET.parse(tmp_path / "z.svg").getroot()
        (line,) = root.iter(f"{SVG}line")
        assert line.get("x1") == line.get("x2") and line.get("y1") == line.get("y2")
        circles = list(root.iter(f"{SVG}circle"))
        assert len(circles) == 2
        assert {(c.get("cx"), c.get("cy")) for c in circles} == {("100.00", "130.00")}

    def test_miss_draws_only_the_target(self, tmp_path):
        report.emit_scatter_svg([one((0.1, 0.2), None)], Screen(), tmp_path / "m.svg")
        root = ET.parse(tmp_path / "m.svg").getroot()
        assert len(list(root.iter(f"{SVG}circle"))) == 1
        assert not list(root.iter(f"{SVG}line"))

    def test_base_box_extends_the_view(self, tmp_path):
        report.emit_scatter_svg([], Screen(), tmp_path / "b.svg", base_xy=(0.27, -0.15))
        root = ET.parse(tmp_path / "b.svg").getroot()
        x, y, w, h = map(float, root.get("viewBox").split())
        assert y + h >= 330 + 150 + 25  # base centre 150 mm below, half box height 25
        assert "NICO arm" in (tmp_path / "b.svg").read_text()

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            report.emit_scatter_svg([], Screen(), tmp_path / "missing" / "x.svg")


class TestTables:
    def test_table1_shape_and_cells(self, default_run, tmp_path):
        report.write_table1_csv(default_run[0].eval_reports, tmp_path / "t.csv")
        rows = list(csv.reader(open(tmp_path / "t.csv", encoding="utf-8")))
        assert rows[0] == ["model", "Q1", "Q2", "Q3", "Q4", "Mean"]
        assert [r[0] for r in rows[1:]] == ["M1", "M2", "M3"]
        for r in rows[1:]:
            assert len(r) == 6
            assert all(re.fullmatch(r"\d+\.\d\d ± \d+\.\d\d", c) for c in r[1:])

    def test_summary_and_joint_tables(self, default_run, tmp_path):
        res = default_run[0]
        reps = [res.m1_reports[d] for d in sorted(res.m1_reports)]
        report.write_summary_csv(reps, tmp_path / "s.csv")
        report.write_joint_csv(reps, tmp_path / "j.csv", res.scene.chain.names)
        s = list(csv.DictReader(open(tmp_path / "s.csv")))
        assert [r["duration_s"] for r in s] == ["1", "2", "3"]
        j = list(csv.DictReader(open(tmp_path / "j.csv")))
        assert len(j) == 21
        assert [r["joint"] for r in j[:7]] == res.scene.chain.names

    def test_error_grid_leaves_misses_blank(self, tmp_path):
        report.write_error_grid_csv([(0, 0, 0.1, 0.2, 0.5), (0, 1, 0.1, 0.3, None)],
                                    tmp_path / "g.csv")
        lines = (tmp_path / "g.csv").read_text().splitlines()
        assert lines == ["ix,iy,x,y,deviation_cm", "0,0,0.100000,0.200000,0.5000",
                         "0,1,0.100000,0.300000,"]

    def test_write_json_is_sorted_and_stable(self, tmp_path):
        report.write_json(tmp_path / "a.json", {"b": 1, "a": [1.5, 2]})
        assert (tmp_path / "a.json").read_text() == '{\n  "a": [\n    1.5,\n    2\n  ],\n  "b": 1\n}\n'
