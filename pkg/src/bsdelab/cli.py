"""Command line entry point.

    bsdelab <pipeline> --config FILE [--preset NAME] [--seed S] [--workers W] [--out DIR]

Pipelines: simulate, solve, continuity, density, bound-check, verify-all.
Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 a verification check failed.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys

import numpy as np

from bsdelab import density as density_mod
from bsdelab import singular
from bsdelab.density import DensityError, PdeGrid
from bsdelab.forward import (PathBundle, SeedRecord, SimulationError,
                             detect_exit, empirical_exit_cdf, simulate_paths)
from bsdelab.model import (DomainFlow, DriverDescriptor, ForwardModel,
                           ModelError, TerminalDescriptor, TimeGrid,
                           validate_model, y_infinity)
from bsdelab.solver import (RegressionSpec, SolverError,
                            minimal_supersolution_ladder)

PIPELINES = ("simulate", "solve", "continuity", "density", "bound-check",
             "verify-all")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICS = 3
EXIT_CHECK = 4


class ConfigError(ValueError):
    pass


class CheckFailure(RuntimeError):
    pass


def _interval(a, b, T):
    return {"lower": [{"level": a}], "upper": [{"level": b}], "T": T}


PRESETS = {
    "paper-xi1-q3": {
        "model": {"dim": 1, "preset": "BM", "x0": [0.0],
                  "params": {"drift": [0.0], "sigma": [[1.0]]}},
        "grid": {"T": 1.0, "N": 256, "gamma": 2.0},
        "domain": _interval(-1.0, 1.0, 1.0),
        "driver": {"q": 3.0, "p": 1.5, "eta": 1.0, "f0": 0.0, "ell": 10.0},
        "terminal": {"kind": "XI1", "ladder": [5.0, 10.0, 20.0, 40.0]},
        "simulation": {"n_paths": 20000, "bridge_correction": True},
        "regression": {"degree": 2, "per_event": True, "ridge": 1e-9, "n_bins": 16},
        "continuity": {"delta0": 0.2, "n_halvings": 7},
        "seed": 20230,
    },
    "paper-xi2-q2": {
        "model": {"dim": 1, "preset": "BM", "x0": [0.0],
                  "params": {"drift": [0.0], "sigma": [[1.0]]}},
        "grid": {"T": 1.0, "N": 256, "gamma": 2.0},
        "domain": _interval(-1.0, 1.0, 1.0),
        "driver": {"q": 2.0, "p": 2.0, "eta": 1.0, "f0": 0.0, "ell": 10.0},
        "terminal": {"kind": "XI2", "ladder": [2.0, 5.0, 10.0]},
        "simulation": {"n_paths": 10000, "bridge_correction": True},
        "regression": {"degree": 2, "per_event": True, "ridge": 1e-9, "n_bins": 16},
        "tn_grid": [0.6, 0.8, 0.9],
        "continuity": {"delta0": 0.1, "n_halvings": 6},
        "seed": 20231,
    },
    "moving-domain-density": {
        "model": {"dim": 1, "preset": "BM", "x0": [0.0],
                  "params": {"drift": [0.0], "sigma": [[1.0]]}},
        "grid": {"T": 1.0, "N": 256, "gamma": 1.0},
        "domain": {"lower": [{"level": -1.0}],
                   "upper": [{"level": 1.0, "slope": -0.5}], "T": 1.0},
        "driver": {"q": 3.0, "p": 1.5, "eta": 1.0, "f0": 0.0, "ell": 10.0},
        "terminal": {"kind": "XI1", "ladder": [5.0, 10.0]},
        "simulation": {"n_paths": 20000, "bridge_correction": True},
        "regression": {"degree": 2, "per_event": True, "ridge": 1e-9, "n_bins": 16},
        "density": {"M": 200, "N": 400, "s_min": 0.05, "s_points": 96,
                    "window": 0.1},
        "seed": 20232,
    },
    "jump-poisson-xi1": {
        "model": {"dim": 1, "preset": "BM", "x0": [0.0],
                  "params": {"drift": [0.0], "sigma": [[1.0]]},
                  "jump": {"rate": 1.0, "mark_law": "gaussian",
                           "params": {"scale": [0.3]}, "theta": 1.0}},
        "grid": {"T": 1.0, "N": 256, "gamma": 2.0},
        "domain": _interval(-1.0, 1.0, 1.0),
        "driver": {"q": 3.0, "p": 1.5, "eta": 1.0, "f0": 0.0, "ell": 10.0},
        "terminal": {"kind": "XI1", "ladder": [5.0, 10.0, 20.0]},
        "simulation": {"n_paths": 10000, "bridge_correction": False},
        "regression": {"degree": 2, "per_event": True, "ridge": 1e-9, "n_bins": 16},
        "continuity": {"delta0": 0.2, "n_halvings": 6},
        "seed": 20233,
    },
}


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | None, preset: str | None) -> dict:
    cfg = {}
    if path is not None:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(
                f"malformed JSON in {path}: {e.msg} at line {e.lineno} column {e.colno}")
        if not isinstance(cfg, dict):
            raise ConfigError("config root must be a JSON object")
    name = preset or cfg.get("preset")
    if name is not None:
        if name not in PRESETS:
            known = ", ".join(sorted(PRESETS))
            raise ConfigError(f"unknown preset {name!r}; available presets: {known}")
        cfg = _deep_merge(PRESETS[name], {k: v for k, v in cfg.items() if k != "preset"})
        cfg["preset"] = name
    if "model" not in cfg:
        raise ConfigError("config needs a 'model' section or a preset")
    return cfg


class Experiment:
    """Config materialized into descriptor objects."""

    def __init__(self, cfg: dict, seed_override=None, workers: int = 1):
        self.cfg = cfg
        self.workers = max(1, int(workers))
        try:
            self.model = ForwardModel.from_dict(cfg["model"])
            self.grid = TimeGrid.from_dict(cfg["grid"])
            self.domain = DomainFlow.from_dict(cfg["domain"]) if cfg.get("domain") else None
            drv = dict(cfg["driver"])
            self.driver = DriverDescriptor.power(
                drv["q"], eta=drv.get("eta", 1.0), f0=drv.get("f0", 0.0),
                chi=drv.get("chi", 0.0), L=drv.get("L", 0.0), ell=drv.get("ell", 3.0))
            term = dict(cfg["terminal"])
            term.setdefault("domain", None)
            self.terminal = TerminalDescriptor.from_dict(term)
            if self.terminal.domain is None and self.domain is not None:
                self.terminal.domain = self.domain
            r = cfg.get("regression", {})
            self.regression = RegressionSpec(int(r.get("degree", 2)),
                                             bool(r.get("per_event", True)),
                                             float(r.get("ridge", 1e-9)),
                                             int(r.get("n_bins", 1)))
            sim = cfg.get("simulation", {})
            self.n_paths = int(sim.get("n_paths", 10000))
            self.bridge = bool(sim.get("bridge_correction", False))
            self.seed = SeedRecord(int(seed_override if seed_override is not None
                                       else cfg.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"bad config: {e}")
        report = validate_model(self.model, self.driver, self.terminal, self.grid)
        if not report.passed:
            names = ", ".join(c.name for c in report.failures())
            raise ConfigError(f"model validation failed: {names}")

    def bundle(self) -> PathBundle:
        paths = simulate_paths(self.model, self.grid, self.n_paths, self.seed,
                               workers=self.workers)
        if self.domain is not None:
            paths = detect_exit(paths, self.domain, self.bridge)
        return paths


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.12g}"


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def run_simulate(exp: Experiment, outdir: str) -> list:
    paths = exp.bundle()
    files = []
    if paths.exit_time is not None:
        s = exp.grid.nodes[1:]
        cdf, se = empirical_exit_cdf(paths, s)
        f = os.path.join(outdir, "exit_cdf.csv")
        write_csv(f, ["s", "exit_cdf", "se"], zip(s, cdf, se))
        files.append(f)
    f = os.path.join(outdir, "state_summary.csv")
    mean = paths.states.mean(axis=0)
    sd = paths.states.std(axis=0, ddof=1)
    rows = [(i, t) + tuple(mean[i]) + tuple(sd[i])
            for i, t in enumerate(exp.grid.nodes)]
    d = paths.dim
    write_csv(f, ["node", "t"] + [f"mean_x{j+1}" for j in range(d)]
              + [f"sd_x{j+1}" for j in range(d)], rows)
    files.append(f)
    return files


def run_solve(exp: Experiment, outdir: str) -> list:
    paths = exp.bundle()
    ladder = minimal_supersolution_ladder(paths, exp.driver, exp.terminal,
                                          exp.regression)
    have_exit = paths.exit_time is not None
    rows = []
    for k, sol in zip(ladder.levels, ladder.solutions):
        for i, t in enumerate(exp.grid.nodes):
            m, _, _ = sol.node_stats(i)
            sd = float(np.std(sol.Y[i], ddof=1))
            if have_exit:
                ex = paths.exit_flag_per_node[:, i]
                m_ex = float(np.mean(sol.Y[i][ex])) if ex.any() else math.nan
                m_sv = float(np.mean(sol.Y[i][~ex])) if (~ex).any() else math.nan
            else:
                m_ex, m_sv = math.nan, m
            cond = (float(sol.condition_numbers[i])
                    if sol.condition_numbers is not None and i < len(sol.condition_numbers)
                    else math.nan)
            rows.append((i, t, k, m, sd, m_ex, m_sv, float(np.max(sol.Y[i])), cond))
    f1 = os.path.join(outdir, "ladder_summary.csv")
    write_csv(f1, ["node_index", "t", "k", "mean_Y", "sd_Y", "mean_Y_on_exit_event",
                   "mean_Y_on_survival_event", "max_Y", "regression_condition_number"],
              rows)
    f2 = os.path.join(outdir, "ladder.json")
    write_json(f2, {"levels": list(ladder.levels),
                    "y0_levels": [float(v) for v in ladder.y0_levels],
                    "y_min_extrapolated": float(ladder.y_min_extrapolated),
                    "errors": {str(k): str(v) for k, v in ladder.errors.items()}})
    return [f1, f2]


def _continuity_events(exp):
    if exp.terminal.kind == "XI2":
        return ("tau<=T", "tau>T")
    return ("tau>T", "tau<=T")


def run_continuity(exp: Experiment, outdir: str) -> list:
    paths = exp.bundle()
    ladder = minimal_supersolution_ladder(paths, exp.driver, exp.terminal,
                                          exp.regression)
    ccfg = exp.cfg.get("continuity", {})
    d0 = float(ccfg.get("delta0", 0.2))
    nh = int(ccfg.get("n_halvings", 7))
    deltas = [d0 * 0.5 ** j for j in range(nh)]
    rows = []
    for event in _continuity_events(exp):
        prof = singular.continuity_profile(ladder.largest, paths, event, deltas)
        for dd, m, s, c in prof.rows():
            rows.append((event, dd, m, s, c, prof.k_level))
    f = os.path.join(outdir, "continuity.csv")
    write_csv(f, ["event", "delta", "mean_Y", "stderr", "n_event_paths", "k_level"], rows)
    return [f]


def run_density(exp: Experiment, outdir: str) -> list:
    if exp.domain is None:
        raise ConfigError("density pipeline needs a 'domain' section")
    dcfg = exp.cfg.get("density", {})
    T = exp.grid.T
    s = np.linspace(float(dcfg.get("s_min", 0.05)) * T, T,
                    int(dcfg.get("s_points", 96)))
    paths = exp.bundle()
    mc = density_mod.density_mc(paths, s)
    pde = density_mod.survival_pde(
        exp.model, exp.domain,
        PdeGrid(int(dcfg.get("M", 200)), int(dcfg.get("N", 400)), T))
    f1 = os.path.join(outdir, "density_mc.csv")
    mc.dump_csv(f1)
    f2 = os.path.join(outdir, "density_pde.csv")
    pde.dump_csv(f2)
    return [f1, f2]


def run_bound_check(exp: Experiment, outdir: str) -> tuple[list, bool]:
    paths = exp.bundle()
    ladder = minimal_supersolution_ladder(paths, exp.driver, exp.terminal,
                                          exp.regression)
    params = singular.AprioriBoundParams(exp.driver.ell, exp.driver.ell)
    nodes, T = exp.grid.nodes, exp.grid.T
    rows, ok = [], True
    top = ladder.largest
    for i, t in enumerate(nodes[:-1]):
        bound = singular.apriori_bound(exp.driver, params, t, T)
        m, se, _ = top.node_stats(i)
        violated = m > bound * 1.05 + 2 * se
        ok = ok and not violated
        rows.append((i, t, m, se, bound, violated))
    f = os.path.join(outdir, "bound.csv")
    write_csv(f, ["node", "t", "mean_Y", "se", "bound", "violated"], rows)
    return [f], ok


def run_verify_all(exp: Experiment, outdir: str) -> tuple[list, bool]:
    checks = {}
    paths = exp.bundle()
    ladder = minimal_supersolution_ladder(paths, exp.driver, exp.terminal,
                                          exp.regression)
    checks["ladder_solved"] = not ladder.errors

    params = singular.AprioriBoundParams(exp.driver.ell, exp.driver.ell)
    nodes, T = exp.grid.nodes, exp.grid.T
    top = ladder.largest
    ok_bound = True
    for i, t in enumerate(nodes[:-1]):
        bound = singular.apriori_bound(exp.driver, params, t, T)
        m, se, _ = top.node_stats(i)
        ok_bound = ok_bound and m <= bound * 1.05 + 2 * se
    checks["apriori_bound"] = ok_bound

    # the exit-time moment condition gates the xi1 construction only; the
    # xi2 upper sequence uses bounded terminals at each t_n
    integ = singular.integrability_check_xi1(exp.driver, params)
    if exp.terminal.kind == "XI1":
        checks["integrability"] = integ.passed
        if integ.passed and exp.model.jump is None:
            upper = singular.upper_bound_process_xi1(paths, exp.driver, exp.regression)
            sw = singular.sandwich_xi1(ladder, upper, paths)
            checks["sandwich"] = sw.passed
        ccfg = exp.cfg.get("continuity", {})
        d0 = float(ccfg.get("delta0", 0.2))
        deltas = [d0 * 0.5 ** j for j in range(int(ccfg.get("n_halvings", 7)))]
        prof = singular.continuity_profile(ladder.largest, paths, "tau>T", deltas)
        ref = y_infinity(DriverDescriptor.power(exp.driver.q), d0)
        checks["continuity_tau_gt_T"] = bool(prof.means[-1] <= 0.10 * ref)
    elif exp.terminal.kind == "XI2" and exp.model.jump is None:
        tn = exp.cfg.get("tn_grid", [0.6, 0.8, 0.9])
        rep = singular.xi2_sandwich(paths, exp.driver, exp.terminal, tn,
                                    exp.regression)
        checks["xi2_sandwich"] = rep.passed
        ccfg = exp.cfg.get("continuity", {})
        d0 = float(ccfg.get("delta0", 0.1))
        deltas = [d0 * 0.5 ** j for j in range(int(ccfg.get("n_halvings", 6)))]
        prof = singular.continuity_profile(
            ladder.largest, paths, f"tau<={exp.grid.T - 0.1:g}", deltas)
        ref = y_infinity(DriverDescriptor.power(exp.driver.q), 0.1)
        checks["continuity_early_exit"] = bool(prof.means[-1] <= 0.05 * ref)

    f = os.path.join(outdir, "verify.json")
    write_json(f, {"checks": {k: bool(v) for k, v in checks.items()},
                   "passed": all(checks.values()),
                   "integrability": integ.to_dict()})
    return [f], all(checks.values())


# ---------------------------------------------------------------------------
# manifest and entry point
# ---------------------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(outdir, pipeline, cfg, seed, files):
    cfg_canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    manifest = {
        "pipeline": pipeline,
        "preset": cfg.get("preset"),
        "seed": seed,
        "config_sha256": hashlib.sha256(cfg_canon.encode()).hexdigest(),
        "files": {os.path.basename(f): _sha256(f) for f in sorted(files)},
    }
    path = os.path.join(outdir, "manifest.json")
    write_json(path, manifest)
    return path


def build_parser():
    ap = argparse.ArgumentParser(prog="bsdelab",
                                 description="BSDE laboratory for singular terminal values")
    ap.add_argument("pipeline", choices=PIPELINES)
    ap.add_argument("--config", help="JSON experiment config")
    ap.add_argument("--preset", help="named preset (overridden by config keys)")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=None,
                    help="output directory (default: $BSDELAB_OUT or ./bsdelab-out)")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    outdir = args.out or os.environ.get("BSDELAB_OUT") or "bsdelab-out"
    try:
        cfg = load_config(args.config, args.preset)
        exp = Experiment(cfg, seed_override=args.seed, workers=args.workers)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    os.makedirs(outdir, exist_ok=True)
    check_ok = True
    try:
        if args.pipeline == "simulate":
            files = run_simulate(exp, outdir)
        elif args.pipeline == "solve":
            files = run_solve(exp, outdir)
        elif args.pipeline == "continuity":
            files = run_continuity(exp, outdir)
        elif args.pipeline == "density":
            files = run_density(exp, outdir)
        elif args.pipeline == "bound-check":
            files, check_ok = run_bound_check(exp, outdir)
        else:
            files, check_ok = run_verify_all(exp, outdir)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SimulationError, DensityError, ModelError,
            FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICS

    manifest = write_manifest(outdir, args.pipeline, cfg, exp.seed.seed, files)
    print(f"wrote {len(files)} file(s) and {os.path.basename(manifest)} to {outdir}")
    if not check_ok:
        print("verification checks failed; see output files", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
