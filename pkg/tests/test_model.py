import numpy as np
import pytest

from bsdelab.model import (
    BoundaryCurve,
    DomainFlow,
    DriverDescriptor,
    ForwardModel,
    JumpSpec,
    ModelError,
    PiecewiseConstant,
    TerminalDescriptor,
    TimeGrid,
    validate_model,
    y_infinity,
    y_truncated_ode,
)


def rk4_truncated(q, k, time_to_horizon, n=4000):
    """Independent oracle for the truncated backward ODE.

    In the time-to-horizon variable u the solution satisfies dY/du = -Y^q
    with Y(0) = k; classic fourth-order Runge-Kutta.
    """
    y = float(k)
    h = time_to_horizon / n
    f = lambda v: -v ** q
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


class TestClosedForms:
    def test_truncated_ode_matches_rk4(self):
        for q, k, u in [(2.0, 1.0, 1.0), (3.0, 5.0, 0.7), (1.5, 2.0, 1.0),
                        (2.0, 40.0, 1.0), (3.0, 40.0, 0.5)]:
            drv = DriverDescriptor.power(q)
            assert y_truncated_ode(drv, k, u) == pytest.approx(
                rk4_truncated(q, k, u), rel=1e-7)

    def test_known_values(self):
        d2 = DriverDescriptor.power(2.0)
        assert y_infinity(d2, 0.5) == pytest.approx(2.0)
        assert y_infinity(d2, 1.0) == pytest.approx(1.0)
        assert y_infinity(d2, 1e-6) == pytest.approx(1e6)
        assert y_truncated_ode(d2, 1.0, 1.0) == pytest.approx(0.5)

    def test_truncated_solves_the_ode_pointwise(self):
        # central-difference residual of dY/dt = Y^q along the solution
        d3 = DriverDescriptor.power(3.0)
        h = 1e-5
        for u in (0.2, 0.5, 0.9):
            y = y_truncated_ode(d3, 4.0, u)
            dy_dt = (y_truncated_ode(d3, 4.0, u - h)
                     - y_truncated_ode(d3, 4.0, u + h)) / (2 * h)
            assert dy_dt == pytest.approx(y ** 3, rel=1e-8)

    def test_monotone_in_k_and_bounded_by_blowup(self):
        d2 = DriverDescriptor.power(2.0)
        vals = [y_truncated_ode(d2, k, 0.7) for k in (1, 2, 4, 8, 16)]
        assert all(a < b for a, b in zip(vals, vals[1:]))
        assert vals[-1] < y_infinity(d2, 0.7)

    def test_blowup_requires_positive_time(self):
        with pytest.raises(ModelError):
            y_infinity(DriverDescriptor.power(2.0), 0.0)

    def test_conjugate_exponent(self):
        for q in (1.5, 2.0, 3.0):
            d = DriverDescriptor.power(q)
            assert d.p * (q - 1.0) == pytest.approx(q)
            assert (d.p - 1.0) * (q - 1.0) == pytest.approx(1.0)


class TestPiecewiseConstant:
    def test_lookup_and_integral(self):
        f = PiecewiseConstant((0.0, 0.5), (1.0, 3.0))
        assert f(0.2) == 1.0
        assert f(0.5) == 3.0
        assert f.integrate(0.0, 1.0) == pytest.approx(0.5 + 1.5)

    def test_constant_round_trip(self):
        f = PiecewiseConstant.constant(2.5)
        assert f.is_constant and f(0.9) == 2.5
        assert PiecewiseConstant.from_dict(f.to_dict())(0.1) == 2.5


class TestTimeGrid:
    def test_refined_toward_horizon(self):
        g = TimeGrid(1.0, 100, gamma=2.0)
        assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0
        steps = g.steps
        assert np.all(steps > 0)
        # later steps are finer
        assert steps[-1] < steps[0]

    def test_nearest_node(self):
        g = TimeGrid(1.0, 10, gamma=1.0)
        assert g.nearest_node(0.31) == 3

    def test_uniform_when_gamma_one(self):
        g = TimeGrid(2.0, 8, gamma=1.0)
        assert np.allclose(np.diff(g.nodes), 0.25)


class TestDescriptors:
    def test_driver_evaluate(self):
        d = DriverDescriptor.power(2.0, eta=2.0, f0=0.3, chi=-0.1)
        y = np.array([1.0, 2.0])
        expect = -0.1 * y - y * np.abs(y) / 2.0 + 0.3
        assert np.allclose(d.evaluate(0.1, y), expect)

    def test_truncated_driver_caps_f0(self):
        d = DriverDescriptor.power(2.0, f0=5.0)
        y = np.array([1.0])
        assert d.evaluate_truncated(0.0, y, 2.0)[0] == pytest.approx(
            -1.0 + 2.0)

    def test_zero_driver(self):
        d = DriverDescriptor.zero()
        assert np.allclose(d.evaluate(0.0, np.array([3.0, -1.0])), 0.0)

    def test_serialization_round_trips(self):
        d = DriverDescriptor.power(3.0, eta=1.5, f0=0.2, chi=-0.5, ell=10.0)
        d2 = DriverDescriptor.from_dict(d.to_dict())
        assert d2.q == d.q and d2.chi == d.chi and d2.eta(0.3) == 1.5
        m = ForwardModel.brownian(2, drift=[0.1, -0.2])
        m2 = ForwardModel.from_dict(m.to_dict())
        assert np.allclose(m2.drift(0.0, np.zeros((1, 2))), [0.1, -0.2])
        dom = DomainFlow.interval(-1.0, 1.0, 1.0)
        dom2 = DomainFlow.from_dict(dom.to_dict())
        assert dom2.lower_at(0.5)[0] == -1.0

    def test_terminal_payoffs(self):
        t = TerminalDescriptor.bounded_linear(w=2.0, b=1.0)
        assert t.payoff(np.array([[3.0]]))[0] == pytest.approx(7.0)

    def test_moving_boundary(self):
        c = BoundaryCurve(1.0, slope=-0.5)
        assert c.value(1.0) == pytest.approx(0.5)
        assert c.velocity(0.3) == pytest.approx(-0.5)


class TestValidation:
    def _tuple(self, **over):
        model = over.pop("model", ForwardModel.brownian(1))
        driver = over.pop("driver", DriverDescriptor.power(3.0, ell=10.0))
        dom = DomainFlow.interval(-1.0, 1.0, 1.0)
        terminal = over.pop("terminal", TerminalDescriptor.xi1(dom))
        grid = over.pop("grid", TimeGrid(1.0, 64))
        return model, driver, terminal, grid

    def test_good_tuple_passes(self):
        rep = validate_model(*self._tuple())
        assert rep.passed, [c.name for c in rep.failures()]

    def test_bad_q_fails(self):
        drv = DriverDescriptor(q=0.9, p=-9.0, eta=PiecewiseConstant.constant(1.0),
                               f0=PiecewiseConstant.constant(0.0), ell=3.0)
        rep = validate_model(*self._tuple(driver=drv))
        assert not rep.passed
        assert any("q" in c.name for c in rep.failures())

    def test_degenerate_diffusion_fails(self):
        model = ForwardModel.brownian(1, sigma=0.0)
        rep = validate_model(*self._tuple(model=model))
        assert any(c.name == "model.ellipticity" for c in rep.failures())

    def test_decreasing_ladder_fails(self):
        dom = DomainFlow.interval(-1.0, 1.0, 1.0)
        term = TerminalDescriptor.xi1(dom, ladder=(8.0, 4.0))
        rep = validate_model(*self._tuple(terminal=term))
        assert any("ladder" in c.name for c in rep.failures())

    def test_jump_spec_sampling(self):
        j = JumpSpec(rate=2.0, mark_law="gaussian", params={"scale": [0.3]})
        g = np.random.default_rng(0)
        marks = j.sample_marks(g, 5000)
        assert marks.shape == (5000, 1)
        assert abs(marks.std() - 0.3) < 0.02
