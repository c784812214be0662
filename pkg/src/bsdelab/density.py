"""Exit-time densities: Fokker-Planck with absorbing boundaries on a moving
domain, the reflection series for driftless Brownian motion, and kernel
estimates from simulated paths."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.stats import norm

from bsdelab.model import DomainFlow, ForwardModel, ModelError
from bsdelab.forward import PathBundle

NEGATIVITY_TOL = 1e-6


class DensityError(RuntimeError):
    pass


@dataclass
class PdeGrid:
    """Space-time discretization of the mapped unit interval."""

    M: int          # spatial cells; nodes 0..M
    N: int          # time steps
    T: float

    def __post_init__(self):
        if self.M < 16:
            raise ModelError("need at least 16 spatial cells")
        if self.N < 4 or self.T <= 0:
            raise ModelError("need N >= 4 time steps and T > 0")

    @property
    def dy(self):
        return 1.0 / self.M

    @property
    def dt(self):
        return self.T / self.N

    def accuracy_flag(self, diffusion: float) -> bool:
        """True when the parabolic mesh ratio is so large that time error
        dominates and the step count should be raised."""
        return diffusion * self.dt / self.dy ** 2 > 1e3


@dataclass
class DensityEstimate:
    """Exit-time density and survival on a common time grid."""

    s: np.ndarray
    density: np.ndarray
    survival: np.ndarray
    method: str                      # "PDE", "MC" or "SERIES"
    density_se: np.ndarray | None = None
    survival_se: np.ndarray | None = None
    error_estimate: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.survival) > 1e-10):
            raise DensityError("survival must be nonincreasing")
        if np.any(self.density < -1e-8):
            raise DensityError("density must be nonnegative up to rounding")

    def mass_balance_defect(self) -> float:
        """max_s | S(s) + int_0..s f - S(0) |, trapezoid quadrature."""
        acc = np.concatenate([[0.0], np.cumsum(
            0.5 * (self.density[1:] + self.density[:-1]) * np.diff(self.s))])
        return float(np.max(np.abs(self.survival + acc - self.survival[0])))

    def bound_near_horizon(self, window: float):
        """(sup density, error estimate) over the last `window` of time."""
        if window <= 0 or window >= self.s[-1] - self.s[0]:
            raise ModelError("window must lie inside the time grid")
        mask = self.s >= self.s[-1] - window
        if mask.sum() < 3:
            raise DensityError("too few grid points in the horizon window")
        sup = float(np.max(self.density[mask]))
        if self.density_se is not None:
            err = float(np.max(self.density_se[mask]))
        elif self.error_estimate is not None:
            err = self.error_estimate
        else:
            err = float(np.max(np.abs(np.diff(self.density[mask]))))
        return sup, err

    def dump_csv(self, path):
        cols = [self.s, self.density, self.survival]
        header = "s,density,survival"
        if self.density_se is not None:
            cols.append(self.density_se)
            header += ",density_se"
        np.savetxt(path, np.column_stack(cols), delimiter=",",
                   header=header, comments="")


def _coeff_probes(model: ForwardModel, t: float, x: float):
    """b, b_x, a, a_x, a_xx at a scalar state by central differences."""
    h = 1e-5 * (1.0 + abs(x))

    def b(xs):
        return float(model.drift(t, np.array([[xs]]))[0, 0])

    def a(xs):
        s = model.diffusion_matrix(t, np.array([xs]))
        return float(s[0, 0]) ** 2

    bx = (b(x + h) - b(x - h)) / (2 * h)
    ax = (a(x + h) - a(x - h)) / (2 * h)
    axx = (a(x + h) - 2 * a(x) + a(x - h)) / h ** 2
    return b(x), bx, a(x), ax, axx


def _mapped_operator(model, domain, t, y):
    """Tridiagonal coefficients (c, v, D) of the mapped forward equation.

    The density p(x, t) on the moving interval (alpha(t), beta(t)) becomes
    u(y, t) = p(alpha + J y, t) on the fixed interval, J = beta - alpha, and
    solves u_t = c u + v u_y + D u_yy with an extra advection from the
    moving map.
    """
    lo, up = domain.lower[0], domain.upper[0]
    alpha, beta = lo.value(t), up.value(t)
    J = beta - alpha
    ap, bp = lo.velocity(t), up.velocity(t)
    x = alpha + J * y
    b = np.empty_like(y)
    bx = np.empty_like(y)
    a = np.empty_like(y)
    ax = np.empty_like(y)
    axx = np.empty_like(y)
    for j, (yy, xx) in enumerate(zip(y, x)):
        b[j], bx[j], a[j], ax[j], axx[j] = _coeff_probes(model, t, xx)
    D = a / (2 * J * J)
    v = (ax - b + ap + (bp - ap) * y) / J
    c = 0.5 * axx - bx
    return c, v, D, J


def _tridiag(c, v, D, dy):
    """Interior-node tridiagonal (sub, diag, super) of c + v d_y + D d_yy."""
    lower = D / dy ** 2 - v / (2 * dy)
    diag = c - 2 * D / dy ** 2
    upper = D / dy ** 2 + v / (2 * dy)
    return lower, diag, upper


def survival_pde(model: ForwardModel, domain: DomainFlow, grid: PdeGrid,
                 error_estimate: bool = True) -> DensityEstimate:
    """Exit-time density of a one-dimensional diffusion from a moving
    interval, via Crank-Nicolson on the mapped forward equation with
    absorbing (zero Dirichlet) walls and damped implicit startup steps.
    """
    if model.dim != 1 or domain.dim != 1:
        raise ModelError("the PDE solver is one-dimensional")
    if model.jump is not None:
        raise ModelError("jump models are out of scope for the PDE solver")
    if domain.min_gap() <= 0:
        raise ModelError("domain must keep a positive gap")

    S, s_grid, neg = _march(model, domain, grid)
    if neg < -NEGATIVITY_TOL:
        raise DensityError(f"instability: mapped density reached {neg:.2e}")

    density = _neg_derivative(S, s_grid)
    err = None
    if error_estimate:
        coarse = PdeGrid(max(16, grid.M // 2), max(4, grid.N // 2), grid.T)
        S2, s2, _ = _march(model, domain, coarse)
        err = float(abs(S[-1] - S2[-1]))
    diffusion = float(model.diffusion_matrix(0.0, model.x0)[0, 0]) ** 2 / (
        2 * domain.min_gap() ** 2)
    return DensityEstimate(s=s_grid, density=np.maximum(density, 0.0),
                           survival=np.minimum.accumulate(S), method="PDE",
                           error_estimate=err,
                           diagnostics={"accuracy_flag": grid.accuracy_flag(diffusion),
                                        "min_value": neg})


def _march(model, domain, grid: PdeGrid):
    M, N, dt, dy = grid.M, grid.N, grid.dt, grid.dy
    y = np.linspace(0.0, 1.0, M + 1)
    y_int = y[1:-1]

    # delta approximation at the start point: narrow Gaussian, two cells wide
    lo0, up0 = domain.lower_at(0.0)[0], domain.upper_at(0.0)[0]
    J0 = up0 - lo0
    x0 = float(np.atleast_1d(model.x0)[0])
    if not (lo0 < x0 < up0):
        raise ModelError("start point must lie inside the domain")
    sd = 2.0 * dy * J0
    xs = lo0 + J0 * y_int
    u = np.exp(-0.5 * ((xs - x0) / sd) ** 2)
    u /= np.trapezoid(np.concatenate([[0.0], u, [0.0]]), lo0 + J0 * y)

    def survival(t, ui):
        lo, up = domain.lower_at(t)[0], domain.upper_at(t)[0]
        return float((up - lo) * np.trapezoid(np.concatenate([[0.0], ui, [0.0]]), y))

    S = np.empty(N + 1)
    s_grid = np.linspace(0.0, grid.T, N + 1)
    S[0] = survival(0.0, u)
    neg = 0.0
    n_int = M - 1

    def step(ui, t0, t1, theta):
        c0, v0, D0, _ = _mapped_operator(model, domain, t0, y_int)
        c1, v1, D1, _ = _mapped_operator(model, domain, t1, y_int)
        h = t1 - t0
        l0, d0, r0 = _tridiag(c0, v0, D0, dy)
        l1, d1, r1 = _tridiag(c1, v1, D1, dy)
        # explicit part
        rhs = ui + (1 - theta) * h * (d0 * ui)
        rhs[1:] += (1 - theta) * h * l0[1:] * ui[:-1]
        rhs[:-1] += (1 - theta) * h * r0[:-1] * ui[1:]
        # implicit banded system
        ab = np.zeros((3, n_int))
        ab[0, 1:] = -theta * h * r1[:-1]
        ab[1] = 1.0 - theta * h * d1
        ab[2, :-1] = -theta * h * l1[1:]
        return solve_banded((1, 1), ab, rhs)

    for n in range(N):
        t0, t1 = s_grid[n], s_grid[n + 1]
        if n < 2:
            # damped startup: the delta initial condition excites the
            # Crank-Nicolson checkerboard mode, so take implicit half-steps
            tm = 0.5 * (t0 + t1)
            u = step(u, t0, tm, theta=1.0)
            u = step(u, tm, t1, theta=1.0)
        else:
            u = step(u, t0, t1, theta=0.5)
        neg = min(neg, float(u.min()) * grid.dy)  # scaled by cell mass
        S[n + 1] = survival(t1, u)
    return S, s_grid, neg


def _neg_derivative(S, s):
    f = np.empty_like(S)
    f[1:-1] = -(S[2:] - S[:-2]) / (s[2:] - s[:-2])
    f[0] = -(S[1] - S[0]) / (s[1] - s[0])
    f[-1] = -(S[-1] - S[-2]) / (s[-1] - s[-2])
    return f


def bm_exit_series(x0: float, a: float, b: float, s_grid,
                   sigma: float = 1.0, tol: float = 1e-12,
                   max_terms: int = 200) -> DensityEstimate:
    """Exit-time density and survival of driftless Brownian motion from a
    fixed interval, by the reflection (method of images) series.

    Truncation is adaptive; the remainder bound must fall below 1e-6 or an
    error is raised.
    """
    if not (a < x0 < b):
        raise ModelError("start point must lie inside (a, b)")
    if sigma <= 0:
        raise ModelError("sigma must be positive")
    s = np.asarray(s_grid, dtype=float)
    if np.any(s <= 0):
        raise ModelError("series time grid must be positive")
    # rescale to unit volatility: tau_sigma = tau_1 / sigma^2
    u = sigma * sigma * s
    L = b - a

    surv = np.zeros_like(u)
    dens = np.zeros_like(u)
    root = np.sqrt(u)

    def add_term(k):
        c1 = b - x0 - 2 * k * L
        c2 = a - x0 - 2 * k * L
        c3 = b + x0 - 2 * a - 2 * k * L
        c4 = a + x0 - 2 * a - 2 * k * L
        sv = (norm.cdf(c1 / root) - norm.cdf(c2 / root)
              - norm.cdf(c3 / root) + norm.cdf(c4 / root))
        de = (c1 * norm.pdf(c1 / root) - c2 * norm.pdf(c2 / root)
              - c3 * norm.pdf(c3 / root) + c4 * norm.pdf(c4 / root)) / (2 * u * root)
        return sv, de

    tail = math.inf
    for k in range(max_terms):
        ks = (0,) if k == 0 else (k, -k)
        mx = 0.0
        for kk in ks:
            sv, de = add_term(kk)
            surv += sv
            dens += de
            mx = max(mx, float(np.max(np.abs(sv))), float(np.max(np.abs(de))))
        tail = mx
        if k >= 2 and tail < tol:
            break
    if tail > 1e-6:
        raise DensityError(f"series truncation bound {tail:.2e} exceeds 1e-6")

    dens *= sigma * sigma      # back to the original clock
    return DensityEstimate(s=s, density=np.maximum(dens, 0.0),
                           survival=np.clip(np.minimum.accumulate(surv), 0.0, 1.0),
                           method="SERIES", error_estimate=tail,
                           diagnostics={"terms": k + 1})


def density_mc(paths: PathBundle, s_grid, bandwidth: float | None = None,
               min_exits: int = 1000) -> DensityEstimate:
    """Triangular-kernel estimate of the exit-time sub-density from paths.

    Normalized by the full path count, so the density integrates to the exit
    probability before the horizon rather than to one.
    """
    paths.require_exit()
    T = paths.grid.T
    tau = paths.exit_time
    hits = tau[np.isfinite(tau) & (tau <= T)]
    n = paths.n_paths
    m = len(hits)
    if m < min_exits:
        raise DensityError(f"only {m} exits; need at least {min_exits} for a "
                           "stable kernel estimate")
    if bandwidth is None:
        # wider than the Gaussian-reference rule: exit densities are smooth
        # and the extra width mostly buys variance at the horizon edge
        bandwidth = 2.0 * float(np.std(hits)) * m ** (-0.2)
    s = np.asarray(s_grid, dtype=float)
    # reflect the sample about both edges of [0, T]: the kernel mass that
    # would leak outside folds back in, so the estimate stays unbiased to
    # first order at the edges and conserves total mass exactly
    K = np.zeros((len(s), m))
    for pts in (hits, -hits, 2.0 * T - hits):
        z = (s[:, None] - pts[None, :]) / bandwidth
        K += np.maximum(0.0, 1.0 - np.abs(z)) / bandwidth
    dens = K.sum(axis=1) / n
    se = np.sqrt(np.maximum((K ** 2).sum(axis=1) / n - dens ** 2, 0.0) / n)
    surv = 1.0 - np.searchsorted(np.sort(hits), s, side="right") / n
    surv_se = np.sqrt(surv * (1.0 - surv) / n)
    return DensityEstimate(s=s, density=dens, survival=surv, method="MC",
                           density_se=se, survival_se=surv_se,
                           diagnostics={"n_exits": m, "bandwidth": bandwidth})
