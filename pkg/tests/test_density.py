import numpy as np
import pytest

from bsdelab.density import (
    DensityError,
    DensityEstimate,
    PdeGrid,
    bm_exit_series,
    density_mc,
    survival_pde,
)
from bsdelab.forward import SeedRecord, detect_exit, simulate_paths
from bsdelab.model import BoundaryCurve, DomainFlow, ForwardModel, ModelError, TimeGrid

S_GRID = np.linspace(0.01, 1.0, 200)


@pytest.fixture(scope="module")
def series_fixed():
    return bm_exit_series(0.0, -1.0, 1.0, S_GRID)


@pytest.fixture(scope="module")
def pde_fixed():
    model = ForwardModel.brownian(1)
    domain = DomainFlow.interval(-1.0, 1.0, 1.0)
    return survival_pde(model, domain, PdeGrid(200, 400, 1.0))


@pytest.fixture(scope="module")
def pde_moving():
    model = ForwardModel.brownian(1)
    domain = DomainFlow(
        (BoundaryCurve(-1.0),), (BoundaryCurve(1.0, slope=-0.5),), 1.0)
    return survival_pde(model, domain, PdeGrid(200, 400, 1.0))


@pytest.fixture(scope="module")
def mc_fixed():
    model = ForwardModel.brownian(1)
    domain = DomainFlow.interval(-1.0, 1.0, 1.0)
    paths = detect_exit(
        simulate_paths(model, TimeGrid(1.0, 200, gamma=1.0), 100_000,
                       SeedRecord(314)),
        domain, bridge_correction=True)
    return density_mc(paths, S_GRID)


class TestSeries:
    def test_symmetric_start_known_survival(self, series_fixed):
        # P(tau > 1) for BM from the center of (-1, 1)
        i = np.argmin(np.abs(series_fixed.s - 1.0))
        assert abs(series_fixed.survival[i] - 0.3708) < 2e-4

    def test_symmetry_in_start_point(self):
        left = bm_exit_series(-0.3, -1.0, 1.0, S_GRID)
        right = bm_exit_series(0.3, -1.0, 1.0, S_GRID)
        np.testing.assert_allclose(left.density, right.density, atol=1e-10)
        np.testing.assert_allclose(left.survival, right.survival, atol=1e-10)

    def test_short_time_survival_is_one(self):
        est = bm_exit_series(0.0, -1.0, 1.0, [1e-4, 1e-3])
        assert np.all(est.survival > 1.0 - 1e-12)
        assert np.all(est.density < 1e-12)

    def test_sigma_rescaling(self):
        # tau under sigma has the law of tau_1 / sigma^2
        base = bm_exit_series(0.0, -1.0, 1.0, 4.0 * S_GRID)
        scaled = bm_exit_series(0.0, -1.0, 1.0, S_GRID, sigma=2.0)
        np.testing.assert_allclose(scaled.survival, base.survival, atol=1e-10)
        np.testing.assert_allclose(scaled.density, 4.0 * base.density, atol=1e-8)

    def test_mass_balance(self, series_fixed):
        assert series_fixed.mass_balance_defect() < 1e-3

    def test_rejects_start_outside_interval(self):
        with pytest.raises(ModelError):
            bm_exit_series(1.5, -1.0, 1.0, S_GRID)

    def test_rejects_nonpositive_times(self):
        with pytest.raises(ModelError):
            bm_exit_series(0.0, -1.0, 1.0, [0.0, 0.5])


class TestPde:
    def test_huge_domain_no_exit(self):
        model = ForwardModel.brownian(1)
        domain = DomainFlow.interval(-50.0, 50.0, 1.0)
        est = survival_pde(model, domain, PdeGrid(200, 200, 1.0))
        assert est.survival[-1] > 1.0 - 1e-6
        assert np.max(est.density) < 1e-6

    def test_matches_series_survival(self, pde_fixed, series_fixed):
        assert abs(pde_fixed.survival[-1] - series_fixed.survival[-1]) < 1e-3

    def test_matches_series_density_pointwise(self, pde_fixed, series_fixed):
        dens = np.interp(series_fixed.s, pde_fixed.s, pde_fixed.density)
        late = series_fixed.s >= 0.2       # early times: delta start not resolved
        assert np.max(np.abs(dens[late] - series_fixed.density[late])) < 5e-3

    def test_mass_balance(self, pde_fixed, pde_moving):
        assert pde_fixed.mass_balance_defect() < 1e-3
        assert pde_moving.mass_balance_defect() < 1e-3

    def test_error_estimate_present_and_small(self, pde_fixed):
        assert pde_fixed.error_estimate is not None
        assert pde_fixed.error_estimate < 1e-3

    def test_accuracy_flag_trips_on_starved_time_grid(self):
        model = ForwardModel.brownian(1)
        domain = DomainFlow.interval(-1.0, 1.0, 1.0)
        est = survival_pde(model, domain, PdeGrid(512, 4, 1.0),
                           error_estimate=False)
        assert est.diagnostics["accuracy_flag"]

    def test_moving_domain_exits_faster(self, pde_fixed, pde_moving):
        assert pde_moving.survival[-1] < pde_fixed.survival[-1]

    def test_rejects_collapsing_domain(self):
        model = ForwardModel.brownian(1)
        domain = DomainFlow(
            (BoundaryCurve(-1.0),), (BoundaryCurve(1.0, slope=-2.5),), 1.0)
        with pytest.raises(ModelError):
            survival_pde(model, domain, PdeGrid(64, 64, 1.0))


class TestBoundNearHorizon:
    def test_stable_under_resolution_doubling_fixed(self, pde_fixed):
        model = ForwardModel.brownian(1)
        domain = DomainFlow.interval(-1.0, 1.0, 1.0)
        fine = survival_pde(model, domain, PdeGrid(400, 800, 1.0))
        b0, _ = pde_fixed.bound_near_horizon(0.2)
        b1, _ = fine.bound_near_horizon(0.2)
        assert abs(b1 - b0) <= 0.05 * max(b0, b1)

    def test_stable_under_resolution_doubling_moving(self, pde_moving):
        model = ForwardModel.brownian(1)
        domain = DomainFlow(
            (BoundaryCurve(-1.0),), (BoundaryCurve(1.0, slope=-0.5),), 1.0)
        fine = survival_pde(model, domain, PdeGrid(400, 800, 1.0))
        b0, _ = pde_moving.bound_near_horizon(0.2)
        b1, _ = fine.bound_near_horizon(0.2)
        assert abs(b1 - b0) <= 0.05 * max(b0, b1)

    def test_shrinking_domain_raises_bound(self, pde_fixed, pde_moving):
        b_fixed, _ = pde_fixed.bound_near_horizon(0.2)
        b_moving, _ = pde_moving.bound_near_horizon(0.2)
        assert np.isfinite(b_moving) and b_moving > b_fixed

    def test_window_validation(self, pde_fixed):
        with pytest.raises(ModelError):
            pde_fixed.bound_near_horizon(0.0)
        with pytest.raises(ModelError):
            pde_fixed.bound_near_horizon(2.0)


class TestMonteCarlo:
    def test_matches_series_density(self, mc_fixed, series_fixed):
        diff = np.abs(mc_fixed.density - series_fixed.density)
        assert np.max(diff) < 0.05

    def test_density_integrates_to_exit_probability(self, mc_fixed):
        mass = np.trapezoid(mc_fixed.density, mc_fixed.s)
        p_hat = 1.0 - mc_fixed.survival[-1]
        assert abs(mass - p_hat) < 1e-2

    def test_survival_matches_series_binomially(self, mc_fixed, series_fixed):
        i = np.argmin(np.abs(mc_fixed.s - 1.0))
        se = mc_fixed.survival_se[i]
        assert abs(mc_fixed.survival[i] - series_fixed.survival[i]) < 4 * se

    def test_se_reported_and_positive_where_density_is(self, mc_fixed):
        busy = mc_fixed.density > 0.1
        assert np.all(mc_fixed.density_se[busy] > 0)
        assert np.max(mc_fixed.density_se) < 0.05

    def test_requires_enough_exits(self):
        model = ForwardModel.brownian(1)
        domain = DomainFlow.interval(-1.0, 1.0, 1.0)
        paths = detect_exit(
            simulate_paths(model, TimeGrid(1.0, 50, gamma=1.0), 500,
                           SeedRecord(7)),
            domain, bridge_correction=True)
        with pytest.raises(DensityError):
            density_mc(paths, S_GRID)

    def test_explicit_bandwidth_respected(self, mc_fixed):
        assert mc_fixed.diagnostics["bandwidth"] > 0


class TestEstimateInvariants:
    def test_rejects_increasing_survival(self):
        s = np.linspace(0.1, 1.0, 5)
        with pytest.raises(DensityError):
            DensityEstimate(s=s, density=np.zeros(5),
                            survival=np.array([0.9, 0.95, 0.8, 0.7, 0.6]),
                            method="MC")

    def test_rejects_negative_density(self):
        s = np.linspace(0.1, 1.0, 5)
        with pytest.raises(DensityError):
            DensityEstimate(s=s, density=np.array([0.1, -0.2, 0.1, 0.1, 0.1]),
                            survival=np.ones(5), method="MC")

    def test_csv_round_trip(self, tmp_path, series_fixed):
        out = tmp_path / "d.csv"
        series_fixed.dump_csv(out)
        data = np.loadtxt(out, delimiter=",", skiprows=1)
        np.testing.assert_allclose(data[:, 1], series_fixed.density)
