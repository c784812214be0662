"""Model descriptors: forward dynamics, driver, terminal condition, time grid.

All descriptors are plain dataclasses, immutable by convention, and
serializable to/from JSON-compatible dicts.  Validation of the structural
assumptions lives in :func:`validate_model`, which always returns a report
instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ELLIPTICITY_EPS = 1e-10

PRESETS = ("BM", "GBM", "OU", "AFFINE")
MARK_LAWS = ("point", "uniform", "gaussian")
TERMINAL_KINDS = ("BOUNDED", "XI1", "XI2")


class ModelError(ValueError):
    """Raised on structurally invalid descriptor usage."""


# ---------------------------------------------------------------------------
# piecewise-constant time functions (eta, f0)
# ---------------------------------------------------------------------------

@dataclass
class PiecewiseConstant:
    """Right-open piecewise-constant function of time.

    ``values[j]`` applies on ``[breaks[j], breaks[j+1])``; the last value
    extends to +inf.  ``breaks[0]`` must be 0.
    """

    breaks: tuple = (0.0,)
    values: tuple = (1.0,)

    def __post_init__(self):
        self.breaks = tuple(float(b) for b in self.breaks)
        self.values = tuple(float(v) for v in self.values)
        if len(self.breaks) != len(self.values):
            raise ModelError("breaks and values must have equal length")
        if self.breaks[0] != 0.0 or any(
            b2 <= b1 for b1, b2 in zip(self.breaks, self.breaks[1:])
        ):
            raise ModelError("breaks must start at 0 and be strictly increasing")

    @classmethod
    def constant(cls, v):
        return cls((0.0,), (float(v),))

    @property
    def is_constant(self):
        return len(self.values) == 1 or len(set(self.values)) == 1

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.breaks, t, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        out = np.asarray(self.values, dtype=float)[idx]
        return float(out) if out.ndim == 0 else out

    def min_value(self):
        return min(self.values)

    def integrate(self, a, b, transform=None):
        """Exact integral of transform(value) over [a, b] (transform pointwise)."""
        if b < a:
            raise ModelError("empty integration interval")
        total = 0.0
        edges = list(self.breaks) + [max(b, self.breaks[-1]) + 1.0]
        for j, v in enumerate(self.values):
            lo, hi = max(a, edges[j]), min(b, edges[j + 1])
            if hi > lo:
                fv = transform(v) if transform is not None else v
                total += fv * (hi - lo)
        return total

    def to_dict(self):
        return {"breaks": list(self.breaks), "values": list(self.values)}

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, (int, float)):
            return cls.constant(d)
        return cls(tuple(d["breaks"]), tuple(d["values"]))


def _as_pwc(x) -> PiecewiseConstant:
    if isinstance(x, PiecewiseConstant):
        return x
    return PiecewiseConstant.constant(float(x))


# ---------------------------------------------------------------------------
# time grid
# ---------------------------------------------------------------------------

@dataclass
class TimeGrid:
    """Backward-refined time grid, ``t_i = T * (1 - (1 - i/N)**gamma)``.

    gamma = 1 gives the uniform grid; gamma > 1 concentrates nodes near T,
    where the singular solutions blow up like (T-t)^(-1/(q-1)).
    """

    T: float
    N: int
    gamma: float = 2.0

    def __post_init__(self):
        if self.T <= 0 or self.N < 1 or self.gamma < 1.0:
            raise ModelError("need T > 0, N >= 1, gamma >= 1")
        i = np.arange(self.N + 1) / self.N
        nodes = self.T * (1.0 - (1.0 - i) ** self.gamma)
        nodes[-1] = self.T  # exact horizon
        self.nodes = nodes
        self.steps = np.diff(nodes)

    def nearest_node(self, t):
        return int(np.argmin(np.abs(self.nodes - t)))

    def to_dict(self):
        return {"T": self.T, "N": self.N, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["T"]), int(d["N"]), float(d.get("gamma", 2.0)))


# ---------------------------------------------------------------------------
# domain flow (moving box)
# ---------------------------------------------------------------------------

@dataclass
class BoundaryCurve:
    """Parametric boundary b(t) = level + slope*t + amp*sin(freq*t + phase)."""

    level: float
    slope: float = 0.0
    amp: float = 0.0
    freq: float = 0.0
    phase: float = 0.0

    def value(self, t):
        t = np.asarray(t, dtype=float)
        out = self.level + self.slope * t + self.amp * np.sin(self.freq * t + self.phase)
        return float(out) if out.ndim == 0 else out

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        out = self.slope + self.amp * self.freq * np.cos(self.freq * t + self.phase)
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        return {
            "level": self.level,
            "slope": self.slope,
            "amp": self.amp,
            "freq": self.freq,
            "phase": self.phase,
        }

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, (int, float)):
            return cls(float(d))
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass
class DomainFlow:
    """Moving box: per coordinate a lower and an upper boundary curve."""

    lower: tuple  # tuple[BoundaryCurve]
    upper: tuple  # tuple[BoundaryCurve]
    T: float

    def __post_init__(self):
        self.lower = tuple(self.lower)
        self.upper = tuple(self.upper)
        if len(self.lower) != len(self.upper):
            raise ModelError("lower/upper boundary counts differ")

    @classmethod
    def interval(cls, a, b, T, **kw):
        return cls((BoundaryCurve(a, **kw),), (BoundaryCurve(b),), T) if kw else cls(
            (BoundaryCurve(a),), (BoundaryCurve(b),), T
        )

    @property
    def dim(self):
        return len(self.lower)

    def lower_at(self, t):
        return np.array([c.value(t) for c in self.lower])

    def upper_at(self, t):
        return np.array([c.value(t) for c in self.upper])

    def min_gap(self, n_samples=512):
        ts = np.linspace(0.0, self.T, n_samples)
        gap = np.inf
        for lo, up in zip(self.lower, self.upper):
            gap = min(gap, float(np.min(up.value(ts) - lo.value(ts))))
        return gap

    def max_velocity(self, n_samples=512):
        ts = np.linspace(0.0, self.T, n_samples)
        v = 0.0
        for c in self.lower + self.upper:
            v = max(v, float(np.max(np.abs(c.velocity(ts)))))
        return v

    def contains(self, t, x):
        """x: (n, d) states; returns (n,) bool."""
        x = np.atleast_2d(x)
        lo, up = self.lower_at(t), self.upper_at(t)
        return np.all((x > lo) & (x < up), axis=1)

    def to_dict(self):
        return {
            "lower": [c.to_dict() for c in self.lower],
            "upper": [c.to_dict() for c in self.upper],
            "T": self.T,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(BoundaryCurve.from_dict(c) for c in d["lower"]),
            tuple(BoundaryCurve.from_dict(c) for c in d["upper"]),
            float(d["T"]),
        )


# ---------------------------------------------------------------------------
# jumps and forward model
# ---------------------------------------------------------------------------

@dataclass
class JumpSpec:
    """Finite-activity compound Poisson jumps added to the state.

    mark_law: 'point' (params: value per coordinate), 'uniform' (params: low,
    high box), 'gaussian' (params: mean, std).  theta is the bounded
    nonnegative kernel weight attached to every mark.
    """

    rate: float
    mark_law: str = "point"
    params: dict = field(default_factory=lambda: {"value": [0.1]})
    theta: float = 1.0

    def __post_init__(self):
        if self.rate < 0 or not math.isfinite(self.rate):
            raise ModelError("jump rate must be finite and nonnegative")
        if self.mark_law not in MARK_LAWS:
            raise ModelError(f"unknown mark law {self.mark_law!r}")
        if self.theta < 0:
            raise ModelError("theta must be nonnegative")

    def sample_marks(self, rng, n):
        p = self.params
        if self.mark_law == "point":
            v = np.asarray(p["value"], dtype=float)
            return np.tile(v, (n, 1))
        if self.mark_law == "uniform":
            lo, hi = np.asarray(p["low"], float), np.asarray(p["high"], float)
            return rng.uniform(lo, hi, size=(n, len(lo)))
        std = np.asarray(p.get("std", p.get("scale")), float)
        mean = np.asarray(p.get("mean", np.zeros_like(std)), float)
        return mean + std * rng.standard_normal((n, len(std)))

    def to_dict(self):
        return {
            "rate": self.rate,
            "mark_law": self.mark_law,
            "params": self.params,
            "theta": self.theta,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["rate"]), d.get("mark_law", "point"), d.get("params", {"value": [0.1]}),
                   float(d.get("theta", 1.0)))


@dataclass
class ForwardModel:
    """Forward diffusion preset with constant-or-affine coefficients.

    Presets:
      BM:     dX = b dt + sigma dW                  (b: (d,), sigma: (d,d))
      GBM:    dX_i = mu_i X_i dt + vol_i X_i dW_i   (mu, vol: (d,))
      OU:     dX = kappa (theta - X) dt + sigma dW
      AFFINE: dX = (b0 + B X) dt + sigma dW
    """

    dim: int
    preset: str
    x0: np.ndarray
    params: dict = field(default_factory=dict)
    jump: JumpSpec | None = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ModelError(f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if self.x0.shape != (self.dim,):
            raise ModelError("x0 dimension mismatch")
        self.params = {k: np.asarray(v, dtype=float) for k, v in self.params.items()}

    @classmethod
    def brownian(cls, dim=1, drift=0.0, sigma=1.0, x0=0.0, jump=None):
        drift = np.broadcast_to(np.asarray(drift, float), (dim,)).copy()
        sigma = np.asarray(sigma, float)
        if sigma.ndim == 0:
            sigma = sigma * np.eye(dim)
        x0 = np.broadcast_to(np.asarray(x0, float), (dim,)).copy()
        return cls(dim, "BM", x0, {"drift": drift, "sigma": sigma}, jump)

    @classmethod
    def gbm(cls, dim=1, mu=0.05, vol=0.2, x0=1.0, jump=None):
        mu = np.broadcast_to(np.asarray(mu, float), (dim,)).copy()
        vol = np.broadcast_to(np.asarray(vol, float), (dim,)).copy()
        x0 = np.broadcast_to(np.asarray(x0, float), (dim,)).copy()
        return cls(dim, "GBM", x0, {"mu": mu, "vol": vol}, jump)

    @classmethod
    def ou(cls, dim=1, kappa=1.0, theta=0.0, sigma=1.0, x0=0.0, jump=None):
        kappa = np.broadcast_to(np.asarray(kappa, float), (dim,)).copy()
        theta = np.broadcast_to(np.asarray(theta, float), (dim,)).copy()
        s = np.asarray(sigma, float)
        if s.ndim == 0:
            s = s * np.eye(dim)
        x0 = np.broadcast_to(np.asarray(x0, float), (dim,)).copy()
        return cls(dim, "OU", x0, {"kappa": kappa, "theta": theta, "sigma": s}, jump)

    def drift(self, t, x):
        """Drift b(t, x) for states x of shape (n, d); returns (n, d)."""
        x = np.atleast_2d(x)
        p = self.params
        if self.preset == "BM":
            return np.broadcast_to(p["drift"], x.shape)
        if self.preset == "GBM":
            return p["mu"] * x
        if self.preset == "OU":
            return p["kappa"] * (p["theta"] - x)
        return p["b0"] + x @ p["b1"].T

    def apply_diffusion(self, t, x, dw):
        """sigma(t, x) dW for states x (n, d) and increments dw (n, d)."""
        if self.preset == "GBM":
            return self.params["vol"] * np.atleast_2d(x) * dw
        return dw @ self.params["sigma"].T

    def diffusion_matrix(self, t, x):
        """sigma(t, x) at a single state x, shape (d, d)."""
        if self.preset == "GBM":
            return np.diag(self.params["vol"] * np.asarray(x, float))
        return self.params["sigma"]

    def coeff_shapes_ok(self):
        d, p = self.dim, self.params
        try:
            if self.preset == "BM":
                return p["drift"].shape == (d,) and p["sigma"].shape == (d, d)
            if self.preset == "GBM":
                return p["mu"].shape == (d,) and p["vol"].shape == (d,)
            if self.preset == "OU":
                return (p["kappa"].shape == (d,) and p["theta"].shape == (d,)
                        and p["sigma"].shape == (d, d))
            return p["b0"].shape == (d,) and p["b1"].shape == (d, d) and p["sigma"].shape == (d, d)
        except KeyError:
            return False

    def min_ellipticity(self, sample_states=None):
        """Smallest eigenvalue of sigma sigma' over x0 and sample states."""
        pts = [self.x0]
        if sample_states is not None:
            pts.extend(np.atleast_2d(sample_states))
        else:
            # default probes around the initial state
            for s in (-0.5, 0.5):
                pts.append(self.x0 * (1 + s) + 0.1 * s)
        lam = np.inf
        for x in pts:
            s = self.diffusion_matrix(0.0, x)
            a = s @ s.T
            lam = min(lam, float(np.linalg.eigvalsh(a)[0]))
        return lam

    def to_dict(self):
        return {
            "dim": self.dim,
            "preset": self.preset,
            "x0": self.x0.tolist(),
            "params": {k: v.tolist() for k, v in self.params.items()},
            "jump": self.jump.to_dict() if self.jump else None,
        }

    @classmethod
    def from_dict(cls, d):
        jump = JumpSpec.from_dict(d["jump"]) if d.get("jump") else None
        return cls(int(d["dim"]), d["preset"], d["x0"], d.get("params", {}), jump)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

@dataclass
class DriverDescriptor:
    """Monotone power driver with optional linear z and jump-integral terms.

    f(t, y, z, I) = chi*y - y|y|^{q-1}/eta(t) + f0(t) + L*sum(z)*[z_dep]
                    + I*[psi_dep]
    """

    q: float
    p: float
    eta: PiecewiseConstant
    f0: PiecewiseConstant
    chi: float = 0.0
    L: float = 0.0
    ell: float = 2.0
    z_dep: bool = False
    psi_dep: bool = False
    power_scale: float = 1.0  # 0 turns the decay term off (zero-driver reduction)

    def __post_init__(self):
        self.eta = _as_pwc(self.eta)
        self.f0 = _as_pwc(self.f0)

    @classmethod
    def power(cls, q, eta=1.0, f0=0.0, chi=0.0, L=0.0, ell=3.0, z_dep=False, psi_dep=False):
        return cls(float(q), float(q) / (float(q) - 1.0), _as_pwc(eta), _as_pwc(f0),
                   chi, L, ell, z_dep, psi_dep)

    @classmethod
    def zero(cls, ell=3.0):
        """f identically 0; the scheme then reduces to the regression martingale."""
        d = cls.power(2.0, ell=ell)
        d.power_scale = 0.0
        return d

    @property
    def is_pure_power(self):
        return (
            self.chi == 0.0
            and self.power_scale == 1.0
            and not self.z_dep
            and not self.psi_dep
            and self.f0.is_constant and self.f0.values[0] == 0.0
            and self.eta.is_constant and self.eta.values[0] == 1.0
        )

    @property
    def has_zero_f0(self):
        return all(v == 0.0 for v in self.f0.values)

    def evaluate(self, t, y, z=None, jump_integral=None):
        """Driver value; y may be a vector, z a (n, d) array."""
        y = np.asarray(y, dtype=float)
        out = (self.chi * y
               - self.power_scale * y * np.abs(y) ** (self.q - 1.0) / self.eta(t)
               + self.f0(t))
        if self.z_dep and z is not None:
            out = out + self.L * np.sum(np.atleast_2d(z), axis=1)
        if self.psi_dep and jump_integral is not None:
            out = out + jump_integral
        return out

    def evaluate_truncated(self, t, y, k, z=None, jump_integral=None):
        """Truncated generator: f with f0 replaced by min(f0, k)."""
        base = self.evaluate(t, y, z, jump_integral)
        f0t = self.f0(t)
        return base - f0t + np.minimum(f0t, float(k))

    def y_derivative(self, t, y):
        """d/dy of the driver at y >= 0 (z/I terms do not depend on y)."""
        y = np.asarray(y, dtype=float)
        return self.chi - self.power_scale * self.q * np.abs(y) ** (self.q - 1.0) / self.eta(t)

    def to_dict(self):
        return {
            "q": self.q, "p": self.p,
            "eta": self.eta.to_dict(), "f0": self.f0.to_dict(),
            "chi": self.chi, "L": self.L, "ell": self.ell,
            "z_dep": self.z_dep, "psi_dep": self.psi_dep,
            "power_scale": self.power_scale,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["q"]), float(d["p"]),
                   PiecewiseConstant.from_dict(d["eta"]), PiecewiseConstant.from_dict(d["f0"]),
                   float(d.get("chi", 0.0)), float(d.get("L", 0.0)), float(d.get("ell", 2.0)),
                   bool(d.get("z_dep", False)), bool(d.get("psi_dep", False)),
                   float(d.get("power_scale", 1.0)))


# ---------------------------------------------------------------------------
# terminal condition
# ---------------------------------------------------------------------------

@dataclass
class TerminalDescriptor:
    """Terminal condition: BOUNDED payoff g(X_T), or singular XI1 / XI2.

    XI1 is +inf on {tau <= T}; XI2 is +inf on A_T = {tau > T}; both carry
    the domain flow whose exit time defines tau, plus the truncation ladder.
    """

    kind: str
    ladder: tuple = (1.0, 2.0, 4.0, 8.0)
    domain: DomainFlow | None = None
    g_kind: str = "const"       # BOUNDED payoffs: 'const' | 'linear'
    g_params: dict = field(default_factory=lambda: {"c": 1.0})

    def __post_init__(self):
        if self.kind not in TERMINAL_KINDS:
            raise ModelError(f"unknown terminal kind {self.kind!r}")
        self.ladder = tuple(float(k) for k in self.ladder)

    @classmethod
    def bounded_const(cls, c, ladder=(1.0, 2.0, 4.0, 8.0)):
        return cls("BOUNDED", ladder, None, "const", {"c": float(c)})

    @classmethod
    def bounded_linear(cls, w=1.0, b=0.0, ladder=(1.0, 2.0, 4.0, 8.0)):
        return cls("BOUNDED", ladder, None, "linear", {"w": float(w), "b": float(b)})

    @classmethod
    def xi1(cls, domain, ladder=(1.0, 2.0, 4.0, 8.0)):
        return cls("XI1", ladder, domain)

    @classmethod
    def xi2(cls, domain, ladder=(1.0, 2.0, 4.0, 8.0)):
        return cls("XI2", ladder, domain)

    def payoff(self, x_T):
        """Bounded terminal payoff g evaluated at terminal states (n, d)."""
        if self.kind != "BOUNDED":
            raise ModelError("payoff only defined for BOUNDED terminals")
        x_T = np.atleast_2d(x_T)
        if self.g_kind == "const":
            return np.full(x_T.shape[0], float(self.g_params["c"]))
        w = float(self.g_params.get("w", 1.0))
        b = float(self.g_params.get("b", 0.0))
        return w * x_T[:, 0] + b

    def to_dict(self):
        return {
            "kind": self.kind,
            "ladder": list(self.ladder),
            "domain": self.domain.to_dict() if self.domain else None,
            "g_kind": self.g_kind,
            "g_params": {k: float(v) for k, v in self.g_params.items()},
        }

    @classmethod
    def from_dict(cls, d):
        dom = DomainFlow.from_dict(d["domain"]) if d.get("domain") else None
        return cls(d["kind"], tuple(d.get("ladder", (1.0, 2.0, 4.0, 8.0))), dom,
                   d.get("g_kind", "const"), d.get("g_params", {"c": 1.0}))


# ---------------------------------------------------------------------------
# closed forms of the power driver
# ---------------------------------------------------------------------------

def y_infinity(driver: DriverDescriptor, time_to_horizon: float) -> float:
    """Solution with identically infinite terminal value for the pure power
    driver: ((q-1)(T-t))^(-1/(q-1)).  Blows up as time_to_horizon -> 0."""
    if not driver.is_pure_power:
        raise ModelError("y_infinity requires the pure power driver (eta=1, f0=0, no z/psi)")
    if time_to_horizon <= 0:
        raise ModelError("time_to_horizon must be positive (blow-up at the horizon)")
    q = driver.q
    return ((q - 1.0) * time_to_horizon) ** (-1.0 / (q - 1.0))


def y_truncated_ode(driver: DriverDescriptor, k: float, time_to_horizon: float) -> float:
    """Deterministic truncated solution: backward ODE y' = y^q with y(T) = k.

    Closed form ((q-1)(T-t) + k^(1-q))^(-1/(q-1)); verified against RK4
    integration in the test suite before being used as a solver oracle.
    """
    if not driver.is_pure_power:
        raise ModelError("y_truncated_ode requires the pure power driver")
    if k <= 0:
        raise ModelError("truncation level k must be positive")
    if time_to_horizon < 0:
        raise ModelError("time_to_horizon must be nonnegative")
    q = driver.q
    return ((q - 1.0) * time_to_horizon + k ** (1.0 - q)) ** (-1.0 / (q - 1.0))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    witness: float | None = None
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed),
                "witness": self.witness, "detail": self.detail}


@dataclass
class ValidationReport:
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def to_dict(self):
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}


def validate_model(model: ForwardModel, driver: DriverDescriptor,
                   terminal: TerminalDescriptor, grid: TimeGrid) -> ValidationReport:
    """Check the structural assumptions on the descriptor tuple.

    Never raises; each assumption yields a named check with its witness
    quantity, and the overall report passes iff every check passes.
    """
    checks = []
    T = grid.T

    # driver exponents
    checks.append(Check("C1.q_gt_1", driver.q > 1.0, driver.q, "power exponent q > 1"))
    p_derived = driver.q / (driver.q - 1.0) if driver.q > 1.0 else float("nan")
    p_ok = driver.q > 1.0 and abs(driver.p - p_derived) <= 1e-12 * max(1.0, abs(p_derived))
    checks.append(Check("holder_conjugate", p_ok, driver.p, "p equals q/(q-1)"))
    checks.append(Check("C2.ell_gt_1", driver.ell > 1.0, driver.ell, "integrability exponent > 1"))

    # monotonicity shape: the power family satisfies the one-sided bound by
    # its own power term only when chi <= 0
    checks.append(Check("C1.monotone_shape", driver.chi <= 0.0, driver.chi,
                        "chi <= 0 so f(t,y,..) <= -y^q/eta + f(t,0,..)"))
    checks.append(Check("C1.superlinear_decay", driver.power_scale > 0.0, driver.power_scale,
                        "power decay term present"))
    checks.append(Check("A4.lipschitz_z", driver.L >= 0.0 and math.isfinite(driver.L),
                        driver.L, "finite Lipschitz constant in z"))

    # eta: positivity, 1/eta integrable, eta^{ell(p-1)} integrable
    eta_min = driver.eta.min_value()
    checks.append(Check("C1.eta_positive", eta_min > 0.0, eta_min, "eta bounded below by eta_min > 0"))
    if eta_min > 0.0 and driver.q > 1.0:
        inv_eta = driver.eta.integrate(0.0, T, lambda v: 1.0 / v)
        checks.append(Check("eta.inv_integrable", math.isfinite(inv_eta), inv_eta,
                            "int dt/eta over [0,T]"))
        pe = driver.ell * (p_derived - 1.0)
        eta_lp = driver.eta.integrate(0.0, T, lambda v: v ** pe)
        checks.append(Check("C2.eta_moment", math.isfinite(eta_lp), eta_lp,
                            "int eta^{ell(p-1)} dt over [0,T]"))
    else:
        checks.append(Check("eta.inv_integrable", False, None, "skipped: eta or q invalid"))
        checks.append(Check("C2.eta_moment", False, None, "skipped: eta or q invalid"))

    # f0: sign and ell-moment
    f0_min = min(driver.f0.values)
    checks.append(Check("C4.f0_nonnegative", f0_min >= 0.0, f0_min, "f0(t) >= 0"))
    if driver.ell > 1.0:
        f0_mom = driver.f0.integrate(0.0, T, lambda v: abs(v) ** driver.ell)
        checks.append(Check("C4.f0_moment", math.isfinite(f0_mom), f0_mom,
                            "int f0^ell dt over [0,T]"))
    else:
        checks.append(Check("C4.f0_moment", False, None, "skipped: ell invalid"))

    # forward model
    checks.append(Check("model.coeff_shapes", model.coeff_shapes_ok(), None,
                        "coefficient arrays consistent with dim"))
    if model.coeff_shapes_ok():
        lam = model.min_ellipticity()
        checks.append(Check("model.ellipticity", lam >= ELLIPTICITY_EPS, lam,
                            "min eigenvalue of sigma sigma' at probe states"))
    else:
        checks.append(Check("model.ellipticity", False, None, "skipped: bad coefficient shapes"))
    checks.append(Check("model.holder_coefficients", True, None,
                        "assumed by construction: presets are analytic (GBM only locally Holder)"))

    # jumps
    if model.jump is not None:
        j = model.jump
        checks.append(Check("jump.finite_activity", math.isfinite(j.rate) and j.rate >= 0,
                            j.rate, "lambda < inf"))
        # C3 for bounded theta and finite lambda: int theta^w mu(de) = lambda*theta^w
        w = 3.0
        checks.append(Check("C3.theta_moment", j.theta >= 0 and math.isfinite(j.theta),
                            j.rate * j.theta ** w, "lambda * theta^varpi finite for all varpi"))

    # terminal
    lad = terminal.ladder
    lad_ok = len(lad) > 0 and lad[0] > 0 and all(a < b for a, b in zip(lad, lad[1:]))
    checks.append(Check("terminal.ladder_increasing", lad_ok,
                        lad[0] if lad else None, "truncation ladder strictly increasing, positive"))
    if terminal.kind in ("XI1", "XI2"):
        dom = terminal.domain
        if dom is None:
            checks.append(Check("terminal.domain_present", False, None,
                                "XI1/XI2 require a DomainFlow"))
        else:
            gap = dom.min_gap()
            checks.append(Check("terminal.domain_gap", gap > 0.0, gap,
                                "positive minimum boundary gap"))
            vel = dom.max_velocity()
            checks.append(Check("terminal.domain_velocity", math.isfinite(vel), vel,
                                "bounded boundary velocity"))
            checks.append(Check("terminal.domain_dim", dom.dim == model.dim, dom.dim,
                                "domain dimension matches state dimension"))
            checks.append(Check("terminal.domain_horizon", abs(dom.T - T) < 1e-12, dom.T,
                                "domain horizon equals grid horizon"))

    # grid
    checks.append(Check("grid.nodes_increasing", bool(np.all(grid.steps > 0)),
                        float(np.min(grid.steps)), "strictly increasing nodes"))
    checks.append(Check("grid.horizon_exact", grid.nodes[-1] == T, grid.nodes[-1],
                        "t_N equals T exactly"))
    checks.append(Check("grid.max_step", float(np.max(grid.steps)) <= T,
                        float(np.max(grid.steps)), "max step at most T"))

    return ValidationReport(checks)
