import hashlib
import os

import numpy as np
import pytest

from qval_plot import FigureSpec, SchemaError, build_figure, render
from qval_plot.cli import main

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def fx(name):
    return os.path.join(FIXTURES, name)


def sha(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


KIND_INPUTS = {
    "decay": ("decay.csv",),
    "probe": ("probe.csv",),
    "taylor": ("taylor.csv",),
    "compare": ("compare.json",),
}


class TestRendering:
    @pytest.mark.parametrize("kind", sorted(KIND_INPUTS))
    def test_all_kinds_render(self, kind, tmp_path):
        out = tmp_path / f"{kind}.png"
        spec = FigureSpec(kind, [fx(n) for n in KIND_INPUTS[kind]], str(out), ref_q=2)
        assert render(spec) == str(out)
        assert out.exists() and out.stat().st_size > 1000

    def test_inputs_unchanged(self, tmp_path):
        before = {n: sha(fx(n)) for ns in KIND_INPUTS.values() for n in ns}
        for kind, names in KIND_INPUTS.items():
            render(FigureSpec(kind, [fx(n) for n in names],
                              str(tmp_path / f"{kind}.png"), ref_q=2))
        after = {n: sha(fx(n)) for ns in KIND_INPUTS.values() for n in ns}
        assert before == after

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        for out in (a, b):
            render(FigureSpec("decay", [fx("decay.csv")], str(out), ref_q=2))
        assert sha(a) == sha(b)

    def test_svg_output(self, tmp_path):
        out = tmp_path / "fig.svg"
        render(FigureSpec("decay", [fx("decay.csv")], str(out), ref_q=2))
        assert out.exists()


class TestReferenceSlope:
    @pytest.mark.parametrize("Q", [2, 3, 4])
    def test_drawn_reference_slope_is_2_over_q(self, Q, tmp_path):
        fig = build_figure(FigureSpec("decay", [fx("decay.csv")],
                                      str(tmp_path / "d.png"), ref_q=Q))
        ref = [ln for ax in fig.axes for ln in ax.lines
               if ln.get_gid() == "reference-slope"]
        assert len(ref) == 1
        x, y = ref[0].get_xdata(), ref[0].get_ydata()
        slope = (y[-1] - y[0]) / (x[-1] - x[0])
        assert slope == pytest.approx(2.0 / Q, abs=1e-12)

    def test_probe_threshold_marker(self, tmp_path):
        fig = build_figure(FigureSpec("probe", [fx("probe.csv")],
                                      str(tmp_path / "p.png"), ref_q=2))
        marks = [ln for ax in fig.axes for ln in ax.lines
                 if ln.get_gid() == "threshold"]
        assert len(marks) == 1
        assert marks[0].get_xdata()[0] == pytest.approx(4.0, abs=1e-12)


class TestSchemaErrors:
    def test_empty_csv(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        out = tmp_path / "out.png"
        code = main(["decay", "--in", str(empty), "--out", str(out)])
        assert code == 2
        assert not out.exists()

    def test_missing_column_diagnostic(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("r,dir_energy\n0.5,1.0\n")
        out = tmp_path / "out.png"
        assert main(["decay", "--in", str(bad), "--out", str(out)]) == 2
        err = capsys.readouterr().err
        assert "log_r" in err and "log_dir" in err
        assert not out.exists()

    def test_header_only_csv(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("r,dir_energy,log_r,log_dir\n")
        with pytest.raises(SchemaError):
            build_figure(FigureSpec("decay", [str(bad)], "x.png"))

    def test_nonnumeric_column(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("r,dir_energy,log_r,log_dir\n0.5,oops,-0.7,0.0\n")
        with pytest.raises(SchemaError, match="dir_energy"):
            build_figure(FigureSpec("decay", [str(bad)], "x.png"))

    def test_bad_compare_json(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{\"sup_error\": 1.0}")
        with pytest.raises(SchemaError, match="mean_error"):
            build_figure(FigureSpec("compare", [str(bad)], "x.png"))

    def test_unknown_kind(self):
        with pytest.raises(SchemaError):
            FigureSpec("sparkline", (fx("decay.csv"),), "x.png")

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError):
            build_figure(FigureSpec("decay", [str(tmp_path / "nope.csv")], "x.png"))


class TestCli:
    def test_end_to_end(self, tmp_path):
        out = tmp_path / "decay.png"
        assert main(["decay", "--in", fx("decay.csv"), "--out", str(out),
                     "--ref-q", "2"]) == 0
        assert out.exists()

    def test_size_flag(self, tmp_path):
        out = tmp_path / "wide.png"
        assert main(["taylor", "--in", fx("taylor.csv"), "--out", str(out),
                     "--size", "8x3"]) == 0
        assert out.exists()
