"""Least-squares Monte Carlo solver for the truncated BSDE.

Backward recursion over the time grid: regression estimate of the
conditional expectation, control and jump-integral estimates, then an
implicit scalar solve of the driver equation per path.  The driver is
treated with a trapezoidal (Crank-Nicolson in y) step, implicit at the left
node; the monotone decay of the driver in y makes the root unique.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from bsdelab.model import DriverDescriptor, ModelError, TerminalDescriptor
from bsdelab.forward import PathBundle

COND_WARN_THRESHOLD = 1e12
MAX_NEWTON_ITERS = 100


class SolverError(RuntimeError):
    pass


class ConditioningWarning(UserWarning):
    pass


@dataclass
class RegressionSpec:
    """Polynomial-in-state basis with exit-indicator augmentation.

    per_event fits the exited and surviving subpopulations separately,
    which matters for singular terminals where the value function is
    discontinuous across the exit indicator.
    """

    degree: int = 2
    per_event: bool = True
    ridge: float = 1e-9
    # quantile cells per coordinate for local (piecewise) fits; 1 = global.
    # Local fits resolve boundary layers that low-degree global polynomials
    # over-smooth, which otherwise biases the driver dissipation term.
    n_bins: int = 1

    def __post_init__(self):
        if self.degree < 0 or self.ridge < 0:
            raise ModelError("need degree >= 0 and ridge >= 0")
        if self.n_bins < 1:
            raise ModelError("need n_bins >= 1")

    def to_dict(self):
        return {"degree": self.degree, "per_event": self.per_event,
                "ridge": self.ridge, "n_bins": self.n_bins}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d.get("degree", 2)), bool(d.get("per_event", True)),
                   float(d.get("ridge", 1e-9)), int(d.get("n_bins", 1)))


def _monomials(dim, degree):
    exps = []
    for total in range(degree + 1):
        for combo in combinations_with_replacement(range(dim), total):
            e = np.zeros(dim, dtype=int)
            for c in combo:
                e[c] += 1
            exps.append(e)
    return np.array(exps)


def _design(states, exps, exit_flag=None):
    X = np.ones((states.shape[0], len(exps)))
    for j, e in enumerate(exps):
        for c, p in enumerate(e):
            if p:
                X[:, j] *= states[:, c] ** p
    if exit_flag is not None:
        X = np.hstack([X, exit_flag[:, None].astype(float)])
    return X


def _ridge_fit(X, y, ridge):
    """Least squares with Tikhonov regularization; returns (fit, coef, cond)."""
    # degenerate designs (e.g. node 0 where every path sits at x0) collapse
    # to the plain mean
    if np.allclose(X, X[0]):
        m = float(np.mean(y))
        coef = np.zeros(X.shape[1])
        coef[0] = m
        return np.full(len(y), m), coef, 1.0
    G = X.T @ X + ridge * np.eye(X.shape[1])
    cond = float(np.linalg.cond(G))
    if cond > COND_WARN_THRESHOLD:
        warnings.warn(f"regression matrix condition number {cond:.3g}",
                      ConditioningWarning)
    coef = np.linalg.solve(G, X.T @ y)
    return X @ coef, coef, cond


@dataclass
class BackwardSolution:
    """Per-node value estimates plus regression/implicit-step diagnostics."""

    grid: object
    k: float
    Y: np.ndarray                      # (N+1, n_paths)
    Z: np.ndarray | None = None        # (N+1, n_paths, d) when z-dependent
    jump_integrals: np.ndarray | None = None  # (N+1, n_paths)
    coefficients: list = field(default_factory=list)
    condition_numbers: np.ndarray | None = None
    newton_iterations: np.ndarray | None = None
    min_implicit_slope: float = np.inf
    y0_se: float = 0.0
    # per-node standard error of the mean from the raw regression targets;
    # the smoothed Y values understate the noise of heavy-tailed targets
    node_se: np.ndarray | None = None

    @property
    def y0(self):
        return float(np.mean(self.Y[0]))

    def node_stats(self, node, mask=None):
        """(mean, standard error, count) of Y at a node, optionally on a mask."""
        vals = self.Y[node] if mask is None else self.Y[node][mask]
        n = len(vals)
        if n == 0:
            return np.nan, np.nan, 0
        se = float(np.std(vals, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return float(np.mean(vals)), se, n


def truncated_terminal(paths: PathBundle, terminal: TerminalDescriptor, k: float) -> np.ndarray:
    """Terminal payoff of the k-truncated BSDE, per path."""
    T = paths.grid.T
    if terminal.kind == "BOUNDED":
        return np.minimum(terminal.payoff(paths.states[:, -1, :]), float(k))
    if paths.exit_time is None:
        raise SolverError("XI1/XI2 terminals need exit detection on the bundle")
    if terminal.kind == "XI1":
        return float(k) * (paths.exit_time <= T)
    # XI2 with A_t = {tau > t}: xi = inf on A_T
    return float(k) * (paths.exit_time > T)


def _quantile_cells(states, per_dim):
    """Equal-count partition: split on each coordinate in turn by quantiles
    of the points remaining in the cell (adaptive hypercubes)."""
    cells = [np.arange(states.shape[0])]
    for c in range(states.shape[1]):
        split = []
        for cell in cells:
            vals = states[cell, c]
            edges = np.quantile(vals, np.linspace(0.0, 1.0, per_dim + 1)[1:-1])
            which = np.searchsorted(edges, vals, side="right")
            split.extend(cell[which == b] for b in range(per_dim))
        cells = split
    return [c for c in cells if len(c)]


def _binned_fit(states, targets, exps, ridge, n_bins):
    """Local polynomial fit on quantile cells, locally standardized.

    The cell count is capped so each cell keeps enough points for a stable
    fit; with too few points this degrades to the global fit.
    """
    m, dim = states.shape
    need = max(50, 3 * len(exps))
    per_dim = min(n_bins, max(1, int((m / need) ** (1.0 / dim))))
    if per_dim <= 1:
        return _ridge_fit(_design(states, exps), targets, ridge)
    fitted = np.empty(m)
    conds = []
    for cell in _quantile_cells(states, per_dim):
        s = states[cell]
        mu, sd = s.mean(axis=0), s.std(axis=0)
        sd[sd == 0] = 1.0
        fit, _, cond = _ridge_fit(_design((s - mu) / sd, exps),
                                  targets[cell], ridge)
        fitted[cell] = fit
        conds.append(cond)
    return fitted, None, max(conds)


def _population_fit(states, targets, exps, reg):
    if reg.n_bins > 1:
        return _binned_fit(states, targets, exps, reg.ridge, reg.n_bins)
    return _ridge_fit(_design(states, exps), targets, reg.ridge)


def conditional_expectation(paths: PathBundle, node: int, targets: np.ndarray,
                            reg: RegressionSpec):
    """Least-squares projection of targets on the basis at a grid node.

    Returns (fitted, info) where info carries coefficients and the condition
    number.  With per_event and available exit flags the two subpopulations
    are fitted separately.
    """
    targets = np.asarray(targets, dtype=float)
    if not np.all(np.isfinite(targets)):
        raise SolverError("regression targets must be finite")
    states = paths.states[:, node, :]
    exps = _monomials(paths.dim, reg.degree)
    n_basis = len(exps)
    have_exit = paths.exit_time is not None
    flags = paths.exit_flag_per_node[:, node] if have_exit else None

    # local (binned) fits always separate the subpopulations: a flag column
    # cannot be mixed into per-cell designs
    if have_exit and (reg.per_event or reg.n_bins > 1):
        fitted = np.empty(len(targets))
        conds, coefs = [], {}
        for label, mask in (("exited", flags), ("surviving", ~flags)):
            m = int(mask.sum())
            if m == 0:
                continue
            if m <= 2 * n_basis:
                fitted[mask] = np.mean(targets[mask])
                conds.append(1.0)
                continue
            fit, coef, cond = _population_fit(states[mask], targets[mask], exps, reg)
            fitted[mask] = fit
            coefs[label] = coef
            conds.append(cond)
        return fitted, {"coef": coefs, "cond": max(conds)}

    if reg.n_bins > 1:
        fitted, coef, cond = _population_fit(states, targets, exps, reg)
    else:
        X = _design(states, exps, flags if have_exit else None)
        fitted, coef, cond = _ridge_fit(X, targets, reg.ridge)
    return fitted, {"coef": coef, "cond": cond}


def _implicit_driver_solve(driver: DriverDescriptor, k: float, t: float,
                           dt_eff: float, rhs: np.ndarray, extra: np.ndarray,
                           allow_negative: bool):
    """Solve y = rhs + dt_eff * (fk(t, y) + extra) per path.

    fk is monotone decreasing in y beyond chi, so the residual is strictly
    increasing and the root unique.  Newton from rhs with the exact slope.
    Returns (y, iterations, min_slope).
    """
    eta_t = driver.eta(t)
    f0k = min(driver.f0(t), float(k))
    chi, q = driver.chi, driver.q
    scale = driver.power_scale
    c = f0k + extra

    # iterate unconstrained: the residual is strictly increasing in y, so
    # Newton converges from anywhere; nonnegativity is a final projection
    y = np.asarray(rhs, dtype=float).copy()
    iters = 0
    for iters in range(1, MAX_NEWTON_ITERS + 1):
        power = y * np.abs(y) ** (q - 1.0)
        F = y - dt_eff * (chi * y - scale * power / eta_t + c) - rhs
        slope = 1.0 - dt_eff * chi + dt_eff * scale * q * np.abs(y) ** (q - 1.0) / eta_t
        if np.all(np.abs(F) <= 1e-12 * (1.0 + np.abs(y))):
            break
        y = y - F / slope
    else:
        raise SolverError(f"implicit driver solve did not converge in {MAX_NEWTON_ITERS} iterations")
    min_slope = float(np.min(slope))
    if not allow_negative:
        y = np.maximum(y, 0.0)
    return y, iters, min_slope


def solve_truncated(paths: PathBundle, driver: DriverDescriptor,
                    terminal: TerminalDescriptor, k: float,
                    reg: RegressionSpec) -> BackwardSolution:
    """Solve the truncated BSDE on the bundle by backward regression stepping."""
    grid = paths.grid
    N, n = grid.N, paths.n_paths
    nodes, steps = grid.nodes, grid.steps

    YN = truncated_terminal(paths, terminal, k)
    clamp = bool(np.min(YN) >= 0.0)  # nonnegative solutions only under xi >= 0

    Y = np.empty((N + 1, n))
    Y[N] = YN
    Z = np.zeros((N + 1, n, paths.dim)) if driver.z_dep else None
    I = np.zeros((N + 1, n)) if driver.psi_dep else None
    conds = np.zeros(N)
    iters = np.zeros(N, dtype=int)
    coefficients = [None] * N
    min_slope = np.inf
    se0 = 0.0

    jump = paths.model.jump
    lam = jump.rate if jump else 0.0
    theta_bar = jump.theta if jump else 0.0

    for i in range(N - 1, -1, -1):
        dt = steps[i]
        t_left, t_right = nodes[i], nodes[i + 1]
        z_next = Z[i + 1] if driver.z_dep else None
        i_next = I[i + 1] if driver.psi_dep else None
        target = Y[i + 1] + 0.5 * dt * driver.evaluate_truncated(
            t_right, Y[i + 1], k, z_next, i_next)
        fitted, info = conditional_expectation(paths, i, target, reg)
        conds[i] = info["cond"]
        coefficients[i] = info["coef"]

        extra = np.zeros(n)
        if driver.z_dep:
            dw = paths.brownian_increments[:, i, :]
            for c in range(paths.dim):
                zfit, _ = conditional_expectation(paths, i, Y[i + 1] * dw[:, c] / dt, reg)
                Z[i][:, c] = zfit
            extra = extra + driver.L * np.sum(Z[i], axis=1)
        if driver.psi_dep:
            counts = np.array([np.sum((jt > t_left) & (jt <= t_right))
                               for jt in paths.jump_times]) if jump else np.zeros(n)
            comp = counts - lam * dt
            ifit, _ = conditional_expectation(paths, i, Y[i + 1] * comp * theta_bar, reg)
            I[i] = ifit
            extra = extra + I[i]

        y, it, slope = _implicit_driver_solve(
            driver, k, t_left, 0.5 * dt, fitted, extra, allow_negative=not clamp)
        iters[i] = it
        min_slope = min(min_slope, slope)
        Y[i] = np.maximum(y, 0.0) if clamp else y
        if i == 0:
            se0 = float(np.std(target, ddof=1) / np.sqrt(n)) if n > 1 else 0.0

    return BackwardSolution(grid=grid, k=float(k), Y=Y, Z=Z, jump_integrals=I,
                            coefficients=coefficients, condition_numbers=conds,
                            newton_iterations=iters, min_implicit_slope=min_slope,
                            y0_se=se0)


@dataclass
class LadderResult:
    """Truncation-ladder solutions on shared noise, plus the heuristic limit."""

    levels: tuple
    solutions: list
    errors: dict
    y0_levels: list
    y_min_extrapolated: float
    node_increments: np.ndarray | None  # (n_levels-1, N+1) mean Y increments

    @property
    def largest(self) -> BackwardSolution:
        return self.solutions[-1]


def extrapolate_ladder(levels, y0s) -> float:
    """Geometric (Richardson-style) extrapolation of Y0(k) as k -> inf.

    Heuristic: assumes roughly geometric increments along a geometric ladder,
    which holds for the power driver where Y0(inf) - Y0(k) ~ k^(1-q).
    """
    y = list(y0s)
    if len(y) < 3:
        return y[-1]
    d1, d2 = y[-2] - y[-3], y[-1] - y[-2]
    if d1 <= 0 or d2 <= 0:
        return y[-1]
    r = d2 / d1
    if not (0 < r < 1):
        return y[-1]
    return y[-1] + d2 * r / (1.0 - r)


def minimal_supersolution_ladder(paths: PathBundle, driver: DriverDescriptor,
                                 terminal: TerminalDescriptor,
                                 reg: RegressionSpec) -> LadderResult:
    """Solve the whole truncation ladder on the shared bundle.

    Solve errors at a level are recorded and the remaining levels continue;
    the Y^min estimate at t=0 is a geometric extrapolation (heuristic, no
    error bars).
    """
    if not terminal.ladder:
        raise SolverError("truncation ladder is empty")
    solutions, errors, levels_done = [], {}, []
    for k in terminal.ladder:
        try:
            solutions.append(solve_truncated(paths, driver, terminal, k, reg))
            levels_done.append(k)
        except SolverError as exc:
            errors[k] = str(exc)
    if not solutions:
        raise SolverError(f"every ladder level failed: {errors}")
    y0s = [s.y0 for s in solutions]
    incr = None
    if len(solutions) > 1:
        means = np.array([np.mean(s.Y, axis=1) for s in solutions])
        incr = np.diff(means, axis=0)
    return LadderResult(levels=tuple(levels_done), solutions=solutions, errors=errors,
                        y0_levels=y0s,
                        y_min_extrapolated=extrapolate_ladder(levels_done, y0s),
                        node_increments=incr)
