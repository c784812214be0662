import numpy as np
import pytest

from bsdelab.forward import SeedRecord, detect_exit, simulate_paths
from bsdelab.model import (
    DomainFlow,
    DriverDescriptor,
    ForwardModel,
    TerminalDescriptor,
    TimeGrid,
    y_truncated_ode,
)
from bsdelab.solver import (
    BackwardSolution,
    RegressionSpec,
    SolverError,
    conditional_expectation,
    extrapolate_ladder,
    minimal_supersolution_ladder,
    solve_truncated,
    truncated_terminal,
)

REG = RegressionSpec(degree=2, per_event=True)


@pytest.fixture(scope="module")
def bm_paths():
    model = ForwardModel.brownian(1)
    grid = TimeGrid(1.0, 100, gamma=1.0)
    return simulate_paths(model, grid, 100_000, SeedRecord(31))


@pytest.fixture(scope="module")
def exit_paths():
    model = ForwardModel.brownian(1)
    grid = TimeGrid(1.0, 100)
    paths = simulate_paths(model, grid, 20_000, SeedRecord(32))
    return detect_exit(paths, DomainFlow.interval(-1.0, 1.0, 1.0), True)


class TestConditionalExpectation:
    def test_constant_targets(self, bm_paths):
        fitted, _ = conditional_expectation(
            bm_paths, 40, np.full(bm_paths.n_paths, 3.7), REG)
        assert np.allclose(fitted, 3.7, atol=1e-8)

    def test_martingale_projection(self, bm_paths):
        node = bm_paths.grid.nearest_node(0.5)
        xT = bm_paths.states[:, -1, 0]
        fitted, info = conditional_expectation(bm_paths, node, xT, REG)
        x = bm_paths.states[:, node, 0]
        coef = np.polyfit(x, fitted, 1)
        assert coef[0] == pytest.approx(1.0, abs=0.02)
        assert coef[1] == pytest.approx(0.0, abs=0.02)

    def test_square_moment_oracle(self, bm_paths):
        # E[X_T^2 | X_t = x] = x^2 + (T - t)
        node = bm_paths.grid.nearest_node(0.5)
        xT = bm_paths.states[:, -1, 0]
        fitted, _ = conditional_expectation(bm_paths, node, xT ** 2, REG)
        x = bm_paths.states[:, node, 0]
        sel = np.abs(x) <= 1.0
        err = np.max(np.abs(fitted[sel] - (x[sel] ** 2 + 0.5)))
        assert err <= 0.05

    def test_rejects_nonfinite_targets(self, bm_paths):
        bad = np.full(bm_paths.n_paths, np.inf)
        with pytest.raises(SolverError):
            conditional_expectation(bm_paths, 10, bad, REG)


class TestTerminal:
    def test_bounded_cap(self, exit_paths):
        term = TerminalDescriptor.bounded_const(7.0)
        assert np.allclose(truncated_terminal(exit_paths, term, 3.0), 3.0)

    def test_xi1_indicator(self, exit_paths):
        term = TerminalDescriptor.xi1(exit_paths.domain)
        vals = truncated_terminal(exit_paths, term, 5.0)
        exited = exit_paths.exit_time <= 1.0
        assert np.all(vals[exited] == 5.0)
        assert np.all(vals[~exited] == 0.0)

    def test_xi2_is_complement(self, exit_paths):
        v1 = truncated_terminal(exit_paths, TerminalDescriptor.xi1(exit_paths.domain), 2.0)
        v2 = truncated_terminal(exit_paths, TerminalDescriptor.xi2(exit_paths.domain), 2.0)
        assert np.allclose(v1 + v2, 2.0)


class TestScheme:
    def test_zero_driver_reduces_to_regression(self, bm_paths):
        # with f = 0 the recursion is the plain projection chain, exactly
        term = TerminalDescriptor.bounded_linear(w=1.0, b=0.0)
        sol = solve_truncated(bm_paths, DriverDescriptor.zero(), term, 1e9, REG)
        xT = bm_paths.states[:, -1, 0]
        target = np.minimum(xT, 1e9)
        for node in (80, 40):
            expect = target
            for i in range(bm_paths.grid.N - 1, node - 1, -1):
                expect, _ = conditional_expectation(bm_paths, i, expect, REG)
            assert np.array_equal(sol.Y[node], expect)
            break  # one node is enough; the chain is O(N) regressions

    def test_ode_oracle_constant_terminal(self):
        # deterministic benchmark: constant terminal, pure power driver
        model = ForwardModel.brownian(1)
        grid = TimeGrid(1.0, 200, gamma=2.0)
        paths = simulate_paths(model, grid, 10_000, SeedRecord(40))
        drv = DriverDescriptor.power(2.0)
        term = TerminalDescriptor.bounded_const(1.0)
        sol = solve_truncated(paths, drv, term, 1.0, REG)
        assert sol.y0 == pytest.approx(y_truncated_ode(drv, 1.0, 1.0), rel=2e-3)
        assert sol.min_implicit_slope > 0

    def test_comparison_principle(self, bm_paths):
        drv = DriverDescriptor.power(2.0)
        lo = solve_truncated(bm_paths, drv, TerminalDescriptor.bounded_const(1.0), 1.0, REG)
        hi = solve_truncated(bm_paths, drv, TerminalDescriptor.bounded_const(2.0), 2.0, REG)
        assert lo.y0 <= hi.y0 + 2 * np.hypot(lo.y0_se, hi.y0_se)

    def test_monotone_ladder_and_extrapolation(self, exit_paths):
        drv = DriverDescriptor.power(3.0, ell=10.0)
        term = TerminalDescriptor.xi1(exit_paths.domain, ladder=(2.0, 4.0, 8.0, 16.0))
        lad = minimal_supersolution_ladder(exit_paths, drv, term, REG)
        assert not lad.errors
        y0 = lad.y0_levels
        for a, b in zip(y0, y0[1:]):
            assert b >= a - 2 * 2 * lad.solutions[0].y0_se
        assert lad.y_min_extrapolated >= y0[-1]

    def test_nonnegative_under_nonnegative_terminal(self, exit_paths):
        drv = DriverDescriptor.power(3.0, ell=10.0)
        term = TerminalDescriptor.xi1(exit_paths.domain)
        sol = solve_truncated(exit_paths, drv, term, 4.0, REG)
        assert np.min(sol.Y) >= 0.0

    def test_empty_ladder_raises(self, exit_paths):
        term = TerminalDescriptor.xi1(exit_paths.domain, ladder=())
        with pytest.raises(SolverError):
            minimal_supersolution_ladder(exit_paths, DriverDescriptor.power(2.0),
                                         term, REG)


class TestExtrapolation:
    def test_geometric_sequence_recovers_limit(self):
        # y_k = 1 - 0.5^k: increments geometric with ratio 0.5, limit 1
        levels = (1, 2, 3, 4)
        y0s = [1.0 - 0.5 ** k for k in levels]
        assert extrapolate_ladder(levels, y0s) == pytest.approx(1.0, rel=1e-12)

    def test_short_ladder_falls_back_to_last(self):
        assert extrapolate_ladder((1, 2), [0.3, 0.4]) == 0.4
