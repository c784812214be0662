import csv
import json
import os

import pytest

from bsdelab.cli import PRESETS, Experiment, build_parser, load_config, run

FAST_SOLVE = {
    "grid": {"N": 48},
    "terminal": {"ladder": [2.0, 5.0]},
    "simulation": {"n_paths": 3000},
}


def run_cli(tmp_path, *argv, extra_cfg=None, preset="paper-xi1-q3"):
    cfg_path = tmp_path / "cfg.json"
    cfg = {"preset": preset}
    if extra_cfg:
        cfg.update(extra_cfg)
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    code = run([*argv, "--config", str(cfg_path), "--out", str(out)])
    return code, out


def read_manifest(outdir):
    with open(outdir / "manifest.json") as fh:
        return json.load(fh)


def csv_header(path):
    with open(path) as fh:
        return next(csv.reader(fh))


class TestConfig:
    def test_all_presets_validate(self):
        for name in PRESETS:
            cfg = load_config(None, name)
            Experiment(cfg)  # must construct without error

    def test_unknown_preset_lists_registry(self, capsys):
        code = run(["solve", "--preset", "no-such-preset"])
        assert code == 2
        err = capsys.readouterr().err
        for name in PRESETS:
            assert name in err

    def test_malformed_json_reports_position(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"model": }')
        code = run(["solve", "--config", str(bad)])
        assert code == 2
        err = capsys.readouterr().err
        assert "line 1" in err and "column" in err

    def test_missing_config_file(self, capsys):
        assert run(["solve", "--config", "/nonexistent.json"]) == 2

    def test_config_overrides_preset(self):
        cfg = load_config(None, "paper-xi1-q3")
        merged = Experiment({**cfg, "seed": 42})
        assert merged.seed.seed == 42

    def test_parser_rejects_unknown_pipeline(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["frobnicate"])


class TestPipelines:
    def test_simulate_outputs(self, tmp_path):
        code, out = run_cli(tmp_path, "simulate",
                            extra_cfg={"simulation": {"n_paths": 2000},
                                       "grid": {"N": 32}})
        assert code == 0
        man = read_manifest(out)
        assert man["pipeline"] == "simulate"
        assert man["files"]

    def test_solve_csv_columns(self, tmp_path):
        code, out = run_cli(tmp_path, "solve", extra_cfg=FAST_SOLVE)
        assert code == 0
        csvs = [f for f in os.listdir(out) if f.endswith(".csv")]
        assert csvs
        header = csv_header(out / csvs[0])
        assert header == ["node_index", "t", "k", "mean_Y", "sd_Y",
                          "mean_Y_on_exit_event", "mean_Y_on_survival_event",
                          "max_Y", "regression_condition_number"]

    def test_continuity_csv_columns(self, tmp_path):
        code, out = run_cli(tmp_path, "continuity",
                            extra_cfg={**FAST_SOLVE,
                                       "simulation": {"n_paths": 6000}})
        assert code == 0
        csvs = [f for f in os.listdir(out) if f.endswith(".csv")]
        header = csv_header(out / csvs[0])
        assert header == ["event", "delta", "mean_Y", "stderr",
                          "n_event_paths", "k_level"]

    def test_density_pipeline(self, tmp_path):
        code, out = run_cli(tmp_path, "density", preset="moving-domain-density",
                            extra_cfg={"simulation": {"n_paths": 8000},
                                       "grid": {"N": 64}})
        assert code == 0
        csvs = [f for f in os.listdir(out) if f.endswith(".csv")]
        headers = {tuple(csv_header(out / f)) for f in csvs}
        assert any("density" in h for hs in headers for h in hs)

    def test_bound_check_pass(self, tmp_path):
        code, out = run_cli(tmp_path, "bound-check", extra_cfg=FAST_SOLVE)
        assert code == 0

    def test_verify_all_failing_integrability_exits_4(self, tmp_path, capsys):
        # q=2 with ell=10 cannot attain kappa < 1: the xi1 gate must trip
        code, _ = run_cli(
            tmp_path, "verify-all",
            extra_cfg={**FAST_SOLVE, "driver": {"q": 2.0, "p": 2.0}})
        assert code == 4

    def test_seed_flag_changes_output(self, tmp_path):
        _, out_a = run_cli(tmp_path, "simulate", "--seed", "1",
                           extra_cfg={"simulation": {"n_paths": 1000},
                                      "grid": {"N": 16}})
        man_a = read_manifest(out_a)
        cfg_path = tmp_path / "cfg.json"
        out_b = tmp_path / "out_b"
        run(["simulate", "--config", str(cfg_path), "--seed", "2",
             "--out", str(out_b)])
        man_b = read_manifest(out_b)
        assert man_a["files"] != man_b["files"]

    def test_out_env_variable(self, tmp_path, monkeypatch):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"preset": "paper-xi1-q3",
                                        "simulation": {"n_paths": 1000},
                                        "grid": {"N": 16}}))
        monkeypatch.setenv("BSDELAB_OUT", str(tmp_path / "env-out"))
        assert run(["simulate", "--config", str(cfg_path)]) == 0
        assert (tmp_path / "env-out" / "manifest.json").exists()


class TestDeterminism:
    def test_manifest_identical_across_runs_and_workers(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"preset": "paper-xi1-q3", **FAST_SOLVE}))
        outs = []
        for name, workers in (("a", "1"), ("b", "1"), ("c", "8")):
            out = tmp_path / name
            assert run(["solve", "--config", str(cfg_path),
                        "--workers", workers, "--out", str(out)]) == 0
            outs.append(read_manifest(out))
        assert outs[0] == outs[1] == outs[2]
        assert "workers" not in outs[0]
