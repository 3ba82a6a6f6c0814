"""Renderer tests against small hand-written CSVs.

The only coupling to the simulation package is the CSV column contract,
so every input here is synthesized in-place.
"""

import numpy as np
import pytest

from depthfigs import PlotJob, SchemaError, render
from depthfigs.cli import main
from depthfigs.plots import render_heatmap, render_histogram, render_paths, render_sweep


def _csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(row.get(col, "")) for col in header))
    path.write_text("\n".join(lines) + "\n")
    return path


_HEAT_HEADER = ["hurst", "beta", "statistic", "value", "overflow"]


def _heat_rows(hursts, betas, stat="median_log10_output"):
    rows = []
    for i, H in enumerate(hursts):
        for j, b in enumerate(betas):
            rows.append({"hurst": H, "beta": b, "statistic": stat,
                         "value": (i - j) * 0.5, "overflow": 0})
    return rows


def test_heatmap_raster_matches_grid(tmp_path):
    src = _csv(tmp_path / "heat.csv", _HEAT_HEADER,
               _heat_rows([0.2, 0.8], [0.3, 0.6, 0.9]))
    out = tmp_path / "heat.png"
    info = render_heatmap(src, out)
    assert out.exists()
    assert info["raster"] == (2, 3)


def test_heatmap_rerender_is_byte_identical(tmp_path):
    src = _csv(tmp_path / "heat.csv", _HEAT_HEADER,
               _heat_rows([0.2, 0.8], [0.3, 0.6, 0.9]))
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    render_heatmap(src, a)
    render_heatmap(src, b)
    assert a.read_bytes() == b.read_bytes()


def test_heatmap_overflowed_cell_clamps_warm(tmp_path):
    rows = _heat_rows([0.2, 0.8], [0.3, 0.6])
    rows[0] = {"hurst": 0.2, "beta": 0.3, "statistic": "median_log10_output",
               "value": "", "overflow": 17}
    src = _csv(tmp_path / "heat.csv", _HEAT_HEADER, rows)
    info = render_heatmap(src, tmp_path / "heat.png")
    assert info["raster"] == (2, 2)
    # limit comes from the finite cells; the inf cell only clamps onto it
    assert info["limit"] == pytest.approx(0.5)


def test_heatmap_incomplete_grid_fails(tmp_path):
    rows = _heat_rows([0.2, 0.8], [0.3, 0.6])[:-1]
    src = _csv(tmp_path / "heat.csv", _HEAT_HEADER, rows)
    with pytest.raises(SchemaError, match="incomplete grid"):
        render_heatmap(src, tmp_path / "heat.png")
    assert not (tmp_path / "heat.png").exists()


def test_heatmap_missing_columns_named(tmp_path):
    src = _csv(tmp_path / "bad.csv", ["alpha", "omega"], [{"alpha": 1, "omega": 2}])
    with pytest.raises(SchemaError, match="missing columns.*hurst.*beta"):
        render_heatmap(src, tmp_path / "x.png")


def test_heatmap_gradient_panel(tmp_path):
    rows = _heat_rows([0.2, 0.8], [0.3, 0.6], stat="median_log10_gradient")
    src = _csv(tmp_path / "heat.csv", _HEAT_HEADER, rows)
    info = render_heatmap(src, tmp_path / "g.png", which="gradient")
    assert info["raster"] == (2, 2)
    with pytest.raises(SchemaError, match="median_log10_output"):
        render_heatmap(src, tmp_path / "o.png", which="output")


_SAMPLE_HEADER = ["quantity", "statistic", "L", "trial", "value", "overflow"]


def _sample_rows(values, quantity="output_norm_ratio", L=100):
    return [
        {"quantity": quantity, "statistic": "value", "L": L, "trial": t,
         "value": v, "overflow": 0}
        for t, v in enumerate(values)
    ]


def test_histogram_counts_finite_values(tmp_path):
    values = np.exp(np.linspace(-0.5, 0.5, 200)).round(6)
    src = _csv(tmp_path / "dist.csv", _SAMPLE_HEADER, list(_sample_rows(values)))
    out = tmp_path / "hist.png"
    info = render_histogram(src, out, bins=30)
    assert out.exists()
    assert info["count"] == 200
    assert info["overflowed"] == 0


def test_histogram_skips_overflow_rows(tmp_path):
    rows = _sample_rows([1.0, 2.0, 3.0])
    rows.append({"quantity": "output_norm_ratio", "statistic": "value",
                 "L": 100, "trial": 3, "value": "", "overflow": 1})
    src = _csv(tmp_path / "dist.csv", _SAMPLE_HEADER, rows)
    info = render_histogram(src, tmp_path / "hist.png")
    assert info["count"] == 3
    assert info["overflowed"] == 1


def test_histogram_unknown_quantity_fails(tmp_path):
    src = _csv(tmp_path / "dist.csv", _SAMPLE_HEADER, _sample_rows([1.0, 2.0]))
    with pytest.raises(SchemaError, match="gradient_ratio"):
        render_histogram(src, tmp_path / "h.png", quantity="gradient_ratio")


def test_sweep_spaghetti_info(tmp_path):
    rows = []
    for L in (10, 100, 1000):
        for t in range(4):
            rows.append({"quantity": "output_ratio", "statistic": "value",
                         "L": L, "trial": t, "value": 1.0 + 0.1 * t,
                         "overflow": 0})
    src = _csv(tmp_path / "sweep.csv", _SAMPLE_HEADER, rows)
    out = tmp_path / "sweep.png"
    info = render_sweep(src, out, quantity="output_ratio")
    assert out.exists()
    assert info == {"out": str(out), "depths": 3, "trials": 4}


def test_sweep_filters_by_quantity(tmp_path):
    rows = _sample_rows([1.0, 2.0], quantity="output_ratio")
    rows += _sample_rows([5.0, 6.0, 7.0], quantity="gradient_ratio")
    src = _csv(tmp_path / "sweep.csv", _SAMPLE_HEADER, rows)
    info = render_sweep(src, tmp_path / "s.png", quantity="gradient_ratio")
    assert info["trials"] == 3


def test_paths_groups_by_hurst(tmp_path):
    header = ["statistic", "hurst", "t", "value"]
    rows = []
    for H in (0.3, 0.7):
        for k in range(5):
            rows.append({"statistic": "path_value", "hurst": H,
                         "t": (k + 1) / 5, "value": 0.1 * k})
    src = _csv(tmp_path / "paths.csv", header, rows)
    info = render_paths(src, tmp_path / "p.png")
    assert info["paths"] == 2
    assert info["points"] == 10


def test_empty_inputs_fail_cleanly(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(SchemaError, match="no header"):
        render_histogram(empty, tmp_path / "x.png")
    header_only = tmp_path / "header.csv"
    header_only.write_text(",".join(_SAMPLE_HEADER) + "\n")
    with pytest.raises(SchemaError, match="no data rows"):
        render_histogram(header_only, tmp_path / "y.png")
    assert not (tmp_path / "x.png").exists()
    assert not (tmp_path / "y.png").exists()


def test_non_numeric_cell_is_named(tmp_path):
    rows = _sample_rows([1.0])
    rows[0]["value"] = "abc"
    src = _csv(tmp_path / "dist.csv", _SAMPLE_HEADER, rows)
    with pytest.raises(SchemaError, match="'value' row 1"):
        render_histogram(src, tmp_path / "h.png")


def test_render_dispatch_and_unknown_kind(tmp_path):
    src = _csv(tmp_path / "heat.csv", _HEAT_HEADER,
               _heat_rows([0.2, 0.8], [0.3, 0.6]))
    info = render(PlotJob(src=str(src), kind="heatmap",
                          out=str(tmp_path / "h.png"), options={}))
    assert info["raster"] == (2, 2)
    with pytest.raises(SchemaError, match="unknown figure kind"):
        render(PlotJob(src=str(src), kind="scatter", out="x.png"))


def test_cli_success_and_malformed_exit(tmp_path, capsys):
    src = _csv(tmp_path / "heat.csv", _HEAT_HEADER,
               _heat_rows([0.2, 0.8], [0.3, 0.6, 0.9]))
    out = tmp_path / "ok.png"
    assert main(["heatmap", "--in", str(src), "--out", str(out)]) == 0
    assert out.exists()
    assert f"wrote {out}" in capsys.readouterr().out

    bad = _csv(tmp_path / "bad.csv", ["alpha", "omega"], [{"alpha": 1}])
    rc = main(["heatmap", "--in", str(bad), "--out", str(tmp_path / "no.png")])
    assert rc == 2
    err = capsys.readouterr().err
    assert "missing columns" in err and "hurst" in err
    assert not (tmp_path / "no.png").exists()


def test_cli_missing_file_and_histogram_flags(tmp_path, capsys):
    rc = main(["histogram", "--in", str(tmp_path / "nope.csv"),
               "--out", str(tmp_path / "h.png")])
    assert rc == 1
    assert "figures:" in capsys.readouterr().err

    src = _csv(tmp_path / "dist.csv", _SAMPLE_HEADER,
               _sample_rows([0.5, 1.0, 1.5, 2.0]))
    rc = main(["histogram", "--in", str(src), "--out", str(tmp_path / "h.png"),
               "--bins", "5"])
    assert rc == 0
    assert (tmp_path / "h.png").exists()
