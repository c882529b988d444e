import csv
import json
import math

import pytest

from chainfit.evaluate import ROW_COLUMNS, EvalReport, run_occlusion_sweep, synth_sweep_cases
from chainfit.report import render_report_figures, write_report_csv, write_report_json
from chainfit.solver import SolverConfig


@pytest.fixture(scope="module")
def report(model):
    cases = synth_sweep_cases(model, 2, seed=11)
    return run_occlusion_sweep(
        model, cases,
        modes=("hierarchical", "flat"),
        cfg=SolverConfig(outer_iters=2, inner_iters=2),
        patterns=("bar", "circle"),
        docs=(1, 4),
        seed=2,
    )


def failing_report():
    """Hand-built report with a failed row, for NaN handling."""
    row = {c: 0 for c in ROW_COLUMNS}
    row.update(case_id=0, mode="hierarchical", pattern="bar", doc=1,
               anchor_joint=3, n_masked=24, mpjpe_units=float("nan"),
               mpjpe_mm=float("nan"), pck=float("nan"), failed=True,
               note="NumericalFailure: x", per_joint=[])
    return EvalReport(
        rows=[row], modes=("hierarchical",), patterns=("bar",), docs=(1,),
        seed=0, canvas_size=256, pck_threshold=10.0,
        config=SolverConfig().to_dict(),
    )


class TestCsv:
    def test_header_and_shape(self, report, tmp_path):
        p = tmp_path / "report.csv"
        write_report_csv(report, p)
        with open(p, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(ROW_COLUMNS)
        assert len(rows) == 1 + len(report.rows)
        assert all(len(r) == len(ROW_COLUMNS) for r in rows)

    def test_lf_endings_and_values(self, report, tmp_path):
        p = tmp_path / "report.csv"
        write_report_csv(report, p)
        raw = p.read_bytes()
        assert b"\r" not in raw
        with open(p, newline="") as fh:
            rows = list(csv.DictReader(fh))
        for parsed, src in zip(rows, report.rows):
            assert parsed["mode"] == src["mode"]
            assert int(parsed["doc"]) == src["doc"]
            assert int(parsed["failed"]) == int(src["failed"])
            assert float(parsed["mpjpe_units"]) == pytest.approx(
                src["mpjpe_units"], rel=1e-8)

    def test_nan_spelled_out(self, tmp_path):
        p = tmp_path / "fail.csv"
        write_report_csv(failing_report(), p)
        with open(p, newline="") as fh:
            row = list(csv.DictReader(fh))[0]
        assert row["mpjpe_units"] == "nan"
        assert row["failed"] == "1"
        assert math.isnan(float(row["pck"]))

    def test_byte_stable(self, report, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_report_csv(report, a)
        write_report_csv(report, b)
        assert a.read_bytes() == b.read_bytes()


class TestJson:
    def test_strict_json_matches_summary(self, report, tmp_path):
        p = tmp_path / "report.json"
        write_report_json(report, p)
        text = p.read_text()
        assert "NaN" not in text and "Infinity" not in text
        doc = json.loads(text)
        s = report.summary()
        assert doc["seed"] == s["seed"]
        assert doc["modes"] == s["modes"]
        got = doc["standard_vs_occluded"]["flat"]["occluded_median"]
        assert got == pytest.approx(report.median_mpjpe("flat", occluded=True))

    def test_nan_becomes_null(self, tmp_path):
        p = tmp_path / "fail.json"
        write_report_json(failing_report(), p)
        doc = json.loads(p.read_text())
        assert doc["standard_vs_occluded"]["hierarchical"]["occluded_median"] is None

    def test_byte_stable(self, report, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        write_report_json(report, a)
        write_report_json(report, b)
        assert a.read_bytes() == b.read_bytes()


class TestFigures:
    def test_files_written(self, report, tmp_path):
        paths = render_report_figures(report, tmp_path / "figs")
        names = sorted(p.split("/")[-1] for p in paths)
        assert names == ["doc_curve_bar.png", "doc_curve_circle.png",
                         "standard_vs_occluded.png"]
        for p in paths:
            with open(p, "rb") as fh:
                assert fh.read(8) == b"\x89PNG\r\n\x1a\n"

    def test_byte_stable_rerender(self, report, tmp_path):
        a = render_report_figures(report, tmp_path / "f1")
        b = render_report_figures(report, tmp_path / "f2")
        for pa, pb in zip(a, b):
            with open(pa, "rb") as f1, open(pb, "rb") as f2:
                assert f1.read() == f2.read()
