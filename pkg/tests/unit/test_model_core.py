# tests/unit/test_model_core.py
import os
import sys
import unittest

import numpy as np
import pandas as pd
import pytest

# Add the project root to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

from feedflow.core.config import RunConfig
from feedflow.core.errors import ConfigError, DataError, DomainError
from feedflow.models import (
    CovariateSet,
    CovariateTable,
    DyadicFlowModel,
    FeedPanel,
    LinearTerm,
    ParamVector,
    PoissonTripModel,
    SmoothTerm,
    SmoothTermSpec,
    StationFlowModel,
    VarianceComponents,
    build_basis,
    build_covariates,
    distance_transform,
    fisher_inverse,
    margins_dyadic,
    margins_station,
)

N_STATIONS = 3
N_TIMES = 10


def _panel(seed: int = 1) -> FeedPanel:
    rng = np.random.default_rng(seed)
    differences = rng.integers(-3, 4, size=(N_STATIONS, N_TIMES)).astype(float)
    timepoints = pd.date_range("2024-03-01 18:00", periods=N_TIMES, freq="D", tz="UTC")
    return FeedPanel.from_differences(["a", "b", "c"], timepoints, differences)


def _covariates(dyadic: bool, seed: int = 2) -> CovariateSet:
    rng = np.random.default_rng(seed)
    temp = rng.uniform(0.0, 1.0, N_TIMES)
    linear = [
        LinearTerm("rain", "time", rng.normal(size=N_TIMES)),
        LinearTerm("hubout", "station_out", rng.normal(size=(N_STATIONS, N_TIMES))),
        LinearTerm("hubin", "station_in", rng.normal(size=N_STATIONS)),
    ]
    if dyadic:
        dist = rng.uniform(0.5, 3.0, size=(N_STATIONS, N_STATIONS))
        linear.append(LinearTerm("dist", "dyadic", 0.5 * (dist + dist.T)))
    basis = build_basis(SmoothTermSpec("temp", num_basis=5, domain=(0.0, 1.0)), temp)
    return CovariateSet(N_STATIONS, N_TIMES, linear=linear, smooth=[SmoothTerm("temp", "time", basis, temp)])


def _params(model, seed: int = 3) -> ParamVector:
    rng = np.random.default_rng(seed)
    theta = rng.normal(scale=0.2, size=model.layout.size)
    theta[0] = 0.3
    return ParamVector.from_flat(model.layout, theta)


def _numeric_gradient(f, theta, step=1e-6):
    grad = np.zeros_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = step
        grad[k] = (f(theta + e) - f(theta - e)) / (2 * step)
    return grad


def _numeric_jacobian(g, theta, step=1e-6):
    columns = []
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = step
        columns.append((g(theta + e) - g(theta - e)) / (2 * step))
    return np.stack(columns, axis=1)


@pytest.mark.parametrize("seed", [1, 7, 19, 42])
@pytest.mark.parametrize("model_cls,dyadic", [(DyadicFlowModel, True), (DyadicFlowModel, False), (StationFlowModel, False)])
def test_gradient_and_hessian_match_finite_differences(model_cls, dyadic, seed):
    """Analytic gradient and Hessian agree with central differences on random instances"""
    model = model_cls(_panel(seed), _covariates(dyadic, seed + 1))
    params = _params(model, seed + 2)
    layout = model.layout
    theta = params.flatten()

    def ll(x):
        return model.loglik(ParamVector.from_flat(layout, x))

    def grad(x):
        return model.loglik_gradient(ParamVector.from_flat(layout, x))

    np.testing.assert_allclose(model.loglik_gradient(params), _numeric_gradient(ll, theta), rtol=1e-5, atol=1e-5)
    np.testing.assert_allclose(model.loglik_hessian(params), _numeric_jacobian(grad, theta), rtol=1e-4, atol=1e-4)


@pytest.mark.parametrize("seed", [1, 7, 19, 42])
def test_penalized_score_and_fisher(seed):
    """Penalized score and observed Fisher agree with central differences on random instances"""
    model = DyadicFlowModel(_panel(seed), _covariates(True, seed + 1))
    params = _params(model, seed + 2)
    rng = np.random.default_rng(seed)
    root = rng.normal(size=(2, 2))
    vc = VarianceComponents(sigma=root @ root.T + 0.5 * np.eye(2), lam=np.exp(rng.uniform(-1.0, 3.0, size=1)))
    layout = model.layout
    theta = params.flatten()

    def pll(x):
        return model.penalized_loglik(ParamVector.from_flat(layout, x), vc)

    def score(x):
        return model.penalized_score(ParamVector.from_flat(layout, x), vc)

    np.testing.assert_allclose(model.penalized_score(params, vc), _numeric_gradient(pll, theta), rtol=1e-5, atol=1e-5)
    fisher = model.observed_fisher(params, vc)
    np.testing.assert_allclose(fisher, fisher.T)
    np.testing.assert_allclose(fisher, -_numeric_jacobian(score, theta), rtol=1e-4, atol=1e-4)


def test_poisson_gradient_matches_finite_differences():
    """Trip-model gradient and Hessian agree with central differences"""
    covs = _covariates(True)
    rng = np.random.default_rng(5)
    trips = rng.poisson(1.5, size=(N_STATIONS, N_STATIONS, N_TIMES))
    model = PoissonTripModel(trips, covs, ["a", "b", "c"])
    params = _params(model)
    layout = model.layout

    def ll(x):
        return model.loglik(ParamVector.from_flat(layout, x))

    def grad(x):
        return model.loglik_gradient(ParamVector.from_flat(layout, x))

    theta = params.flatten()
    np.testing.assert_allclose(model.loglik_gradient(params), _numeric_gradient(ll, theta), rtol=1e-5, atol=1e-5)
    np.testing.assert_allclose(model.loglik_hessian(params), _numeric_jacobian(grad, theta), rtol=1e-4, atol=1e-4)


class TestMargins(unittest.TestCase):
    """Margins of the dyadic and station-based parameterisations"""

    def setUp(self):
        self.panel = _panel()
        self.covs = _covariates(False)
        self.dyadic = DyadicFlowModel(self.panel, self.covs)
        self.station = StationFlowModel(self.panel, self.covs)
        self.params = _params(self.dyadic)

    def test_parameterisations_agree(self):
        """Dyadic and station-based margins and likelihoods coincide"""
        for t in (0, 4, N_TIMES - 1):
            a = margins_dyadic(self.dyadic, self.params, t)
            b = margins_station(self.station, self.params, t)
            np.testing.assert_allclose(a.mu_out, b.mu_out, rtol=1e-10)
            np.testing.assert_allclose(a.mu_in, b.mu_in, rtol=1e-10)
        self.assertAlmostEqual(self.dyadic.loglik(self.params), self.station.loglik(self.params), places=8)

    def test_margins_equal_pair_sums_on_random_configurations(self):
        """Both margin computations equal explicit sums over pair intensities"""
        rng = np.random.default_rng(99)
        latent = N_STATIONS
        for trial in range(50):
            seed = int(rng.integers(1_000_000))
            covs = _covariates(False, seed)
            dyadic = DyadicFlowModel(_panel(seed + 1), covs)
            station = StationFlowModel(_panel(seed + 1), covs)
            params = _params(dyadic, seed + 2)
            t = int(rng.integers(N_TIMES))

            nu = np.array(
                [
                    [0.0 if i == j == latent else dyadic.nu(params, i, j, t) for j in range(latent + 1)]
                    for i in range(latent + 1)
                ]
            )
            for margins in (margins_dyadic(dyadic, params, t), margins_station(station, params, t)):
                np.testing.assert_allclose(margins.mu_out[:, 0], nu.sum(axis=1), rtol=1e-10, err_msg=f"trial {trial}")
                np.testing.assert_allclose(margins.mu_in[:, 0], nu.sum(axis=0), rtol=1e-10, err_msg=f"trial {trial}")

    def test_latent_self_loop_excluded(self):
        """The (w, w) intensity is zero and margins sum the pair field"""
        field = self.dyadic.margins(self.params)
        nu = field.nu
        np.testing.assert_array_equal(nu[-1, -1], 0.0)
        np.testing.assert_allclose(field.mu_out, nu.sum(axis=1))
        np.testing.assert_allclose(field.mu_out.sum(axis=0), field.mu_in.sum(axis=0))

    def test_pair_accessors(self):
        """eta and nu address pairs by label or index"""
        eta = self.dyadic.eta(self.params, "a", "w", 2)
        self.assertAlmostEqual(np.exp(eta), self.dyadic.margins(self.params).nu[0, N_STATIONS, 2], places=10)
        self.assertAlmostEqual(self.dyadic.nu(self.params, 1, 2, 0), self.dyadic.margins(self.params).nu[1, 2, 0])
        with self.assertRaises(DomainError):
            self.dyadic.eta(self.params, "w", "w", 0)
        with self.assertRaises(DomainError):
            self.dyadic.eta(self.params, "zz", 0, 0)

    def test_station_model_rejects_dyadic_terms(self):
        """The station-based model refuses dyadic covariates"""
        with self.assertRaises(ConfigError):
            StationFlowModel(self.panel, _covariates(True))

    def test_missing_cells_are_skipped(self):
        """Missing differences drop out of the likelihood"""
        differences = self.panel.differences[:N_STATIONS].copy()
        differences[1, 3] = np.nan
        panel = FeedPanel.from_differences(self.panel.station_ids, self.panel.timepoints, differences)
        model = DyadicFlowModel(panel, self.covs)
        self.assertEqual(panel.n_missing, 1)
        self.assertTrue(np.isfinite(model.loglik(self.params)))


class TestFisherInverse(unittest.TestCase):
    """Eigenvalue-floored inversion"""

    def test_floors_indefinite_matrix(self):
        """Negative eigenvalues are floored to give a positive definite inverse"""
        model = DyadicFlowModel(_panel(), CovariateSet.intercept_only(N_STATIONS, N_TIMES))
        size = model.layout.size
        fisher = np.eye(size)
        fisher[0, 0] = -1.0
        inverse = fisher_inverse(fisher, model.layout, floor=1e-3)
        self.assertEqual(inverse.n_floored, 1)
        self.assertAlmostEqual(inverse.matrix[0, 0], 1e3)
        self.assertTrue(np.all(np.linalg.eigvalsh(inverse.matrix) > 0))
        self.assertEqual(inverse.unit_standard_errors().shape, (N_STATIONS + 1, 2))


class TestInitialParams(unittest.TestCase):
    """Starting values of the inner maximisation"""

    def test_intercept_from_mean_absolute_difference(self):
        """Intercept starts at log(mean |D| + 0.01), everything else at zero"""
        panel = FeedPanel.from_differences(["a", "b"], ["t1", "t2"], [[2.0, -1.0], [0.0, np.nan]])
        model = DyadicFlowModel(panel, CovariateSet.intercept_only(2, 2))
        params = model.initial_params()
        self.assertAlmostEqual(params.beta[0], np.log(1.0 + 0.01))
        self.assertFalse(np.any(params.u))


class TestPanelAndCovariates(unittest.TestCase):
    """Panels, covariate tables and the distance transform"""

    def test_latent_row_balances(self):
        """The latent row is minus the column sum of station differences"""
        panel = FeedPanel.from_series(["a", "b"], ["t1"], [[5, 4], [3, 4]])
        np.testing.assert_array_equal(panel.differences[:, 0], [-1.0, 1.0, 0.0])
        self.assertEqual(panel.index_of("w"), 2)

    def test_reserved_label(self):
        """A station cannot use the latent label"""
        with self.assertRaises(DataError):
            FeedPanel.from_differences(["a", "w"], ["t1"], [[1.0], [2.0]])

    def test_latent_endpoint_reads_zero(self):
        """Station and dyadic covariates read zero at a latent endpoint"""
        covs = _covariates(True)
        self.assertEqual(covs.value("hubout", "w", 0, 1), 0.0)
        self.assertEqual(covs.value("dist", 0, "w", 1), 0.0)
        self.assertNotEqual(covs.value("rain", "w", "w", 1), 0.0)

    def test_distance_transform_peaks_at_alpha(self):
        """The distance transform peaks at alpha and needs alpha > 0"""
        grid = np.linspace(0.01, 6.0, 600)
        values = distance_transform(grid, 1.7)
        self.assertAlmostEqual(grid[np.argmax(values)], 1.7, delta=0.01)
        with self.assertRaises(DomainError):
            distance_transform(grid, 0.0)

    def test_build_covariates_from_config(self):
        """Configured terms and the distance transform resolve against a table"""
        table = CovariateTable(N_STATIONS, N_TIMES)
        table.add("time", "temp", np.linspace(0.0, 1.0, N_TIMES))
        table.add("dyadic", "dist", np.ones((N_STATIONS, N_STATIONS)))
        config = RunConfig.model_validate(
            {"smooth": [{"name": "temp", "num_basis": 6}], "distance_transform": {"enabled": True, "alpha": 2.0}}
        )
        covs = build_covariates(table, config)
        self.assertEqual(covs.beta_names, ["(Intercept)", "f2_dist"])
        self.assertEqual(covs.gamma_sizes, [6])
        self.assertAlmostEqual(covs.value("f2_dist", 0, 1, 0), np.exp(-1.0))
        with self.assertRaises(ConfigError):
            build_covariates(table, RunConfig.model_validate({"linear": [{"name": "rain", "scope": "time"}]}))

    def test_constant_smooth_covariate_is_named(self):
        """A smooth term over a constant covariate fails with the covariate's name"""
        table = CovariateTable(N_STATIONS, N_TIMES)
        table.add("time", "temp", np.full(N_TIMES, 12.5))
        config = RunConfig.model_validate({"smooth": [{"name": "temp"}]})
        with self.assertRaises(ConfigError) as ctx:
            build_covariates(table, config)
        self.assertIn("temp", str(ctx.exception))

        config = RunConfig.model_validate({"smooth": [{"name": "temp", "num_basis": 5, "domain": [0.0, 20.0]}]})
        self.assertEqual(build_covariates(table, config).gamma_sizes, [5])


if __name__ == '__main__':
    unittest.main()
