import csv
import json
import os
import subprocess
import sys

import pytest

PLOTS_DIR = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, PLOTS_DIR)

import figlib  # noqa: E402

SCRIPTS = {
    "continuity": "plot_continuity.py",
    "ladder": "plot_ladder.py",
    "density": "plot_density.py",
    "bound": "plot_bound.py",
}


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    """CSV artifacts rendered by the primary CLI at a small preset scale."""
    from bsdelab.cli import run

    root = tmp_path_factory.mktemp("artifacts")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({
        "preset": "paper-xi1-q3",
        "grid": {"N": 48},
        "terminal": {"ladder": [2.0, 5.0]},
        "simulation": {"n_paths": 4000},
        "continuity": {"delta0": 0.2, "n_halvings": 5},
        "density": {"M": 64, "N": 64, "s_points": 40},
    }))
    out = {}
    for pipeline in ("solve", "continuity", "density", "bound-check"):
        d = root / pipeline
        assert run([pipeline, "--config", str(cfg), "--out", str(d)]) == 0
        out[pipeline] = d
    return {
        "continuity": [out["continuity"] / "continuity.csv"],
        "ladder": [out["solve"] / "ladder_summary.csv"],
        "density": [out["density"] / "density_mc.csv",
                    out["density"] / "density_pde.csv"],
        "bound": [out["bound-check"] / "bound.csv"],
    }


def run_script(kind, inputs, out):
    return subprocess.run(
        [sys.executable, os.path.join(PLOTS_DIR, SCRIPTS[kind]),
         "--in", *map(str, inputs), "--out", str(out)],
        capture_output=True, text=True)


@pytest.mark.parametrize("kind", sorted(SCRIPTS))
def test_renders_vector_image(kind, artifacts, tmp_path):
    out = tmp_path / f"{kind}.svg"
    proc = run_script(kind, artifacts[kind], out)
    assert proc.returncode == 0, proc.stderr
    assert out.exists() and out.stat().st_size > 0
    assert b"<svg" in out.read_bytes()[:1024]


def test_series_equal_csv_contents(artifacts, tmp_path, monkeypatch):
    import matplotlib.pyplot as plt

    import plot_ladder

    src = artifacts["ladder"][0]
    with open(src) as fh:
        rows = list(csv.DictReader(fh))
    expected = sorted({(float(r["k"]), float(r["mean_Y"]))
                       for r in rows if float(r["node_index"]) == 0})
    captured = {}
    monkeypatch.setattr(figlib, "save", lambda fig, out: captured.update(fig=fig))
    monkeypatch.setattr(sys, "argv",
                        ["plot_ladder.py", "--in", str(src),
                         "--out", str(tmp_path / "x.svg")])
    plot_ladder.render()
    line = captured["fig"].axes[0].lines[0]
    assert list(line.get_xdata()) == [k for k, _ in expected]
    assert list(line.get_ydata()) == [y for _, y in expected]
    plt.close("all")


def test_header_mismatch_names_missing_column(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("alpha,beta\n1,2\n")
    out = tmp_path / "x.svg"
    proc = run_script("continuity", [bad], out)
    assert proc.returncode == 2
    assert "delta" in proc.stderr and "missing column" in proc.stderr
    assert not out.exists()


def test_empty_csv_is_an_error(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    out = tmp_path / "x.svg"
    proc = run_script("density", [empty], out)
    assert proc.returncode == 2
    assert not out.exists()


def test_header_only_csv_is_an_error(tmp_path):
    hdr = tmp_path / "hdr.csv"
    hdr.write_text("event,delta,mean_Y,stderr,n_event_paths,k_level\n")
    out = tmp_path / "x.svg"
    proc = run_script("continuity", [hdr], out)
    assert proc.returncode == 2
    assert "no data rows" in proc.stderr
    assert not out.exists()
