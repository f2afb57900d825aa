import json

import numpy as np
import pytest

from cfda import io as cio
from cfda.bands import band_from_dict
from cfda.cli import main
from cfda.funcdata import CurveSet, Grid
from cfda.simulate import simulate, three_component_spec

from .helpers import planted_clusters


@pytest.fixture
def sim_csv(tmp_path):
    path = tmp_path / "curves.csv"
    assert main(["simulate", "--n", "300", "--seed", "1", "--output", str(tmp_path)]) == 0
    return path


@pytest.fixture
def planted_csv(tmp_path):
    path = tmp_path / "planted.csv"
    path.write_text(cio.curves_to_csv(planted_clusters(0)), encoding="utf-8")
    return path


def read_json(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_simulate_writes_curves(sim_csv):
    curves = cio.read_curves_csv(sim_csv)
    assert curves.n == 300 and curves.grid.m == 50


def test_band_smoke(sim_csv, tmp_path):
    out = tmp_path / "band"
    assert main(["band", "--input", str(sim_csv), "--output", str(out), "--alpha", "0.1", "--method", "max"]) == 0
    band = read_json(out / "band.json")
    assert set(band) == {"alpha", "method", "grid", "components", "fallback_components", "degenerate"}
    assert band["degenerate"] is False
    assert 1 <= len(band["components"]) <= 3
    plot = (out / "band_plot.csv").read_text().splitlines()
    assert len(plot) == 51 and plot[0].startswith("t,lo_")
    report = read_json(out / "report.json")
    assert report["lambda"] > 0 and report["n_train"] == 150
    assert band_from_dict(band).to_dict() == band


def test_band_with_test_split(sim_csv, tmp_path):
    test = tmp_path / "test.csv"
    test.write_text(cio.curves_to_csv(simulate(three_component_spec(n=200), 9)), encoding="utf-8")
    out = tmp_path / "band"
    assert main(["band", "--input", str(sim_csv), "--test", str(test), "--output", str(out)]) == 0
    report = read_json(out / "report.json")
    assert report["test_n"] == 200 and 0.75 <= report["test_coverage"] <= 1.0


def test_band_minimum_sample(tmp_path):
    src = tmp_path / "tiny.csv"
    src.write_text(cio.curves_to_csv(simulate(three_component_spec(n=4), 0)), encoding="utf-8")
    with pytest.warns(RuntimeWarning):
        assert main(["band", "--input", str(src), "--output", str(tmp_path / "o")]) == 0
    band = read_json(tmp_path / "o" / "band.json")
    assert band["degenerate"] is True and band["components"] == []
    assert read_json(tmp_path / "o" / "report.json")["lambda"] is None


@pytest.mark.parametrize("method", ["coarse", "refined"])
def test_band_other_methods(sim_csv, tmp_path, method):
    out = tmp_path / method
    assert main(["band", "--input", str(sim_csv), "--output", str(out), "--method", method]) == 0
    assert read_json(out / "band.json")["method"] in ("coarse", "refined")


def test_tree_planted(planted_csv, tmp_path):
    out = tmp_path / "tree"
    args = ["tree", "--input", str(planted_csv), "--output", str(out), "--h", "0.5", "--epsilon", "1.2", "--newick"]
    assert main(args) == 0
    tree = read_json(out / "tree.json")
    assert tree["min_size"] == 10 and tree["epsilon"] == 1.2
    nodes = {n["id"]: n for n in tree["nodes"]}
    shown = [n for n in nodes.values() if n["displayed"]]
    leaves = [n for n in shown if not any(nodes[c]["displayed"] for c in n["children"])]
    assert len(leaves) == 3
    assert all(len(n["members"]) >= 10 for n in leaves)
    assert (out / "tree.nwk").read_text().strip().endswith(";")


def test_explicit_large_tuning_accepted(planted_csv, tmp_path):
    out = tmp_path / "big"
    assert main(["tree", "--input", str(planted_csv), "--output", str(out), "--h", "1000", "--epsilon", "1000"]) == 0
    tree = read_json(out / "tree.json")
    assert tree["epsilon"] == 1000.0


def test_modes_and_summary(planted_csv, tmp_path):
    out = tmp_path / "ms"
    assert main(["modes", "--input", str(planted_csv), "--output", str(out), "--h", "1.0"]) == 0
    modes = cio.read_curves_csv(out / "modes.csv")
    assert 1 <= modes.n <= 10
    assert main(["summary", "--input", str(planted_csv), "--output", str(out)]) == 0
    summary = read_json(out / "summary.json")
    assert set(summary["high_density"]) <= set(summary["median_set"])


def test_summary_analytic_distance(planted_csv, tmp_path):
    out = tmp_path / "an"
    assert main(["summary", "--input", str(planted_csv), "--output", str(out), "--gamma", "0.1", "--J", "8"]) == 0
    assert "analytic" in read_json(out / "summary.json")["distance"]


def test_modes_rejects_analytic(planted_csv, tmp_path):
    out = tmp_path / "bad"
    assert main(["modes", "--input", str(planted_csv), "--output", str(out), "--gamma", "0.1"]) == 2
    assert not out.exists() or not any(out.iterdir())


def test_coverage_command(tmp_path):
    args = ["coverage", "--replicates", "4", "--n", "200", "--n-test", "50", "--output", str(tmp_path)]
    assert main(args) == 0
    report = read_json(tmp_path / "coverage.json")
    assert report["replicates"] == 4 and len(report["single"]) == 4
    assert 0.5 <= report["mean_batch_coverage"] <= 1.0


def test_spec_file(tmp_path):
    spec = three_component_spec(n=12, m=9)
    (tmp_path / "spec.json").write_text(json.dumps(spec.to_dict()))
    assert main(["simulate", "--spec", str(tmp_path / "spec.json"), "--output", str(tmp_path)]) == 0
    assert cio.read_curves_csv(tmp_path / "curves.csv").values.shape == (12, 9)


@pytest.mark.parametrize(
    "argv",
    [
        ["band"],
        ["band", "--input", "missing.csv"],
        ["band", "--input", "x.csv", "--alpha", "1.5"],
        ["tree", "--input", "x.csv", "--h", "-1"],
        ["nonsense"],
    ],
)
def test_config_errors(argv, tmp_path, capsys):
    assert main(argv + ["--output", str(tmp_path / "o")] if argv[0] in ("band", "tree") else argv) == 2
    assert not (tmp_path / "o").exists()


def test_empty_input(tmp_path, capsys):
    src = tmp_path / "empty.csv"
    src.write_text("")
    out = tmp_path / "o"
    assert main(["tree", "--input", str(src), "--output", str(out)]) == 2
    assert "empty" in capsys.readouterr().err
    assert not out.exists()


def test_parse_error_reports_line(tmp_path, capsys):
    src = tmp_path / "bad.csv"
    src.write_text("t,0,1\na,1,2\nb,1\n")
    assert main(["summary", "--input", str(src), "--output", str(tmp_path / "o")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_too_many_components_is_config_error(tmp_path):
    src = tmp_path / "small.csv"
    src.write_text(cio.curves_to_csv(simulate(three_component_spec(n=40), 0)), encoding="utf-8")
    out = tmp_path / "o"
    assert main(["band", "--input", str(src), "--output", str(out), "--K", "15"]) == 2
    assert not out.exists()


def test_numeric_failure_exit_code(tmp_path):
    src = tmp_path / "flat.csv"
    src.write_text(cio.curves_to_csv(CurveSet(Grid.uniform(10), np.ones((40, 10)))), encoding="utf-8")
    out = tmp_path / "o"
    assert main(["band", "--input", str(src), "--output", str(out)]) == 3
    assert not out.exists()


def _snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--n", "60"],
        ["band", "--method", "refined"],
        ["tree"],
        ["modes"],
        ["summary"],
        ["coverage", "--replicates", "2", "--n", "120", "--n-test", "20"],
    ],
)
def test_byte_identical_reruns(argv, sim_csv, tmp_path):
    extra = [] if argv[0] in ("simulate", "coverage") else ["--input", str(sim_csv)]
    if argv[0] in ("tree", "modes", "summary"):
        extra += ["--h", "1.0"]
    runs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(argv + extra + ["--seed", "7", "--newick", "--output", str(out)]) == 0
        runs.append(_snapshot(out))
    assert runs[0] == runs[1]
    assert runs[0]
