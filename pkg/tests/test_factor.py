import numpy as np
import pytest

from hifreq.errors import NotPositiveSemidefiniteError, NumericFailureError
from hifreq.factor import (
    FactorFit,
    assemble_sigma_y,
    factor_adjusted_estimate,
    fit,
    precision_of_sigma_y,
    residual_precision,
)
from hifreq.glasso import GlassoSolution, solve_weighted
from hifreq.matcore import refined_inverse, symmetrize
from hifreq.quadcov import PathPanel, realized_cov
from hifreq.simlab import SimDesign, simulate_panel
from hifreq.tuning import lambda_grid, select

from oracles import random_spd


def make_solution(theta):
    theta = symmetrize(np.asarray(theta, dtype=float))
    return GlassoSolution(
        theta=theta, w=refined_inverse(theta), lam=0.1,
        weights=np.sqrt(np.diag(refined_inverse(theta))), iters=1,
        kkt_residual=0.0,
    )


def make_fit(rng, d, r, beta=None, sigma_x=None):
    beta = rng.standard_normal((d, r)) if beta is None else beta
    sigma_x = random_spd(rng, r) if sigma_x is None else sigma_x
    sigma_z = random_spd(rng, d, eig_low=0.5, eig_high=1.5)
    sigma_yx = beta @ sigma_x
    return FactorFit(sigma_x=sigma_x, sigma_yx=sigma_yx, beta_hat=beta,
                     sigma_z=sigma_z, sigma_x_invertible=True,
                     condition_sigma_x=1.0)


class TestFit:
    def test_exact_factor_model(self):
        rng = np.random.default_rng(0)
        x = PathPanel(rng.standard_normal((40, 3)))
        beta = rng.standard_normal((6, 3))
        y = PathPanel(x.values @ beta.T)
        result = fit(y, x)
        assert np.max(np.abs(result.beta_hat - beta)) <= 1e-10
        assert np.max(np.abs(result.sigma_z)) <= 1e-12 * max(
            1.0, np.max(np.abs(realized_cov(y)))
        )
        assert result.sigma_x_invertible

    def test_scalar_factor(self):
        rng = np.random.default_rng(1)
        x = PathPanel(rng.standard_normal((30, 1)))
        y = PathPanel(rng.standard_normal((30, 4)))
        result = fit(y, x)
        from hifreq.quadcov import realized_crosscov

        q = realized_cov(x)[0, 0]
        expected = realized_crosscov(y, x) / q
        np.testing.assert_allclose(result.beta_hat, expected, atol=1e-12)

    def test_identity_holds_when_invertible(self):
        rng = np.random.default_rng(2)
        x = PathPanel(rng.standard_normal((50, 3)).cumsum(axis=0))
        y = PathPanel(rng.standard_normal((50, 8)).cumsum(axis=0))
        result = fit(y, x)
        resid = np.max(np.abs(result.beta_hat @ result.sigma_x - result.sigma_yx))
        assert resid <= 1e-8 * max(1.0, np.max(np.abs(result.sigma_yx)))

    def test_sigma_z_definition(self):
        rng = np.random.default_rng(3)
        x = PathPanel(rng.standard_normal((25, 2)))
        y = PathPanel(rng.standard_normal((25, 5)))
        result = fit(y, x)
        expected = realized_cov(y) - result.beta_hat @ result.sigma_x @ result.beta_hat.T
        np.testing.assert_allclose(result.sigma_z, symmetrize(expected), atol=1e-12)

    def test_warns_when_r_not_small(self):
        rng = np.random.default_rng(4)
        x = PathPanel(rng.standard_normal((4, 3)))
        y = PathPanel(rng.standard_normal((4, 5)))
        with pytest.warns(UserWarning, match="factors"):
            fit(y, x)

    def test_beta_consistency_simulated(self):
        # loading error stays below 0.5 in sup norm at the d=20, n=780 design
        design = SimDesign(design=1)
        misses = 0
        for rep in range(8):
            rng = np.random.default_rng([2024, rep])
            panel_y, panel_x, truth = simulate_panel(design, 20, 780, rng)
            result = fit(panel_y, panel_x)
            if np.max(np.abs(result.beta_hat - truth.beta)) >= 0.5:
                misses += 1
        assert misses == 0


class TestResidualPrecision:
    def test_diagonal_residual(self):
        rng = np.random.default_rng(5)
        f = make_fit(rng, 4, 2)
        f.sigma_z = np.diag([0.3, 0.4, 0.25, 0.5])
        sol = residual_precision(f, 0.2)
        np.testing.assert_allclose(sol.theta, np.diag(1.0 / np.diag(f.sigma_z)),
                                   atol=1e-10)

    def test_delegates_to_solve_weighted(self):
        rng = np.random.default_rng(6)
        f = make_fit(rng, 2, 1)
        f.sigma_z = np.array([[4.0, 1.2], [1.2, 1.0]])
        sol = residual_precision(f, 0.2)
        direct = solve_weighted(f.sigma_z, 0.2)
        np.testing.assert_allclose(sol.theta, direct.theta, atol=1e-12)

    def test_rejects_negative_diagonal(self):
        rng = np.random.default_rng(7)
        f = make_fit(rng, 3, 1)
        f.sigma_z = np.diag([0.5, -0.1, 0.2])
        with pytest.raises(NotPositiveSemidefiniteError, match="diagonal"):
            residual_precision(f, 0.1)

    def test_rejects_indefinite_residual(self):
        rng = np.random.default_rng(8)
        f = make_fit(rng, 3, 1)
        f.sigma_z = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 2.0], [0.0, 2.0, 1.0]])
        with pytest.raises(NotPositiveSemidefiniteError, match="eigenvalue"):
            residual_precision(f, 0.1)

    def test_support_recovery_design1(self):
        # BIC-selected residual precision finds most within-block edges
        design = SimDesign(design=1)
        rates = []
        for rep in range(5):
            rng = np.random.default_rng([77, rep])
            panel_y, panel_x, truth = simulate_panel(design, 20, 390, rng)
            f = fit(panel_y, panel_x)
            grid = lambda_grid(f.sigma_z, 390, use_correlation_threshold=True)
            _, sol = select(f.sigma_z, 390, grid)
            hits = sum(
                1 for (i, j) in truth.support_true.support if sol.theta[i, j] != 0
            )
            rates.append(hits / truth.support_true.s)
        assert np.median(rates) >= 0.6


class TestAssembleAndInvert:
    def test_zero_loadings(self):
        rng = np.random.default_rng(9)
        f = make_fit(rng, 5, 2, beta=np.zeros((5, 2)))
        sol = make_solution(random_spd(rng, 5))
        np.testing.assert_allclose(assemble_sigma_y(f, sol), sol.w, atol=1e-12)
        np.testing.assert_allclose(precision_of_sigma_y(f, sol), sol.theta, atol=1e-10)

    def test_identity_theta(self):
        rng = np.random.default_rng(10)
        f = make_fit(rng, 4, 2)
        sol = make_solution(np.eye(4))
        m = f.beta_hat @ f.sigma_x @ f.beta_hat.T
        np.testing.assert_allclose(assemble_sigma_y(f, sol), m + np.eye(4), atol=1e-12)

    def test_woodbury_matches_dense_inverse(self):
        rng = np.random.default_rng(11)
        f = make_fit(rng, 5, 2)
        sol = make_solution(random_spd(rng, 5))
        sigma_y = assemble_sigma_y(f, sol)
        dense = refined_inverse(sigma_y)
        fast = precision_of_sigma_y(f, sol)
        scale = np.max(np.sum(np.abs(dense), axis=1))
        assert np.max(np.abs(fast - dense)) <= 1e-8 * scale

    def test_rank_one_sherman_morrison(self):
        rng = np.random.default_rng(12)
        f = make_fit(rng, 3, 1, sigma_x=np.array([[0.7]]))
        sol = make_solution(random_spd(rng, 3))
        tz = sol.theta
        b = f.beta_hat[:, 0]
        q = f.sigma_x[0, 0]
        # closed-form rank-one update of (theta_z^{-1} + q b b^T)^{-1}
        tb = tz @ b
        expected = tz - np.outer(tb, tb) / (1.0 / q + b @ tb)
        np.testing.assert_allclose(precision_of_sigma_y(f, sol), expected, atol=1e-10)

    def test_woodbury_product_is_identity(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            d = int(rng.integers(4, 12))
            r = int(rng.integers(1, 4))
            f = make_fit(rng, d, r)
            sol = make_solution(random_spd(rng, d))
            sigma_y = assemble_sigma_y(f, sol)
            prec = precision_of_sigma_y(f, sol)
            resid = np.max(np.abs(prec @ sigma_y - np.eye(d)))
            assert resid <= 1e-6 * np.max(np.sum(np.abs(prec), axis=1))

    def test_sigma_y_positive_definite(self):
        rng = np.random.default_rng(14)
        f = make_fit(rng, 6, 2)
        sol = make_solution(random_spd(rng, 6))
        sigma_y = assemble_sigma_y(f, sol)
        lo_sum = np.linalg.eigvalsh(sigma_y)[0]
        lo_w = np.linalg.eigvalsh(sol.w)[0]
        assert lo_sum >= lo_w - 1e-10

    def test_singular_inner_matrix_raises(self):
        rng = np.random.default_rng(15)
        f = make_fit(rng, 4, 2)
        sol = make_solution(random_spd(rng, 4))
        f.sigma_x_invertible = False
        f.sigma_x = np.zeros((2, 2))
        f.beta_hat = np.zeros((4, 2))
        with pytest.raises(NumericFailureError):
            precision_of_sigma_y(f, sol)


class TestPipelineTrend:
    def test_sigma_y_error_shrinks_with_n(self):
        design = SimDesign(design=1)
        medians = []
        for n in (78, 390, 780):
            errs = []
            for rep in range(10):
                rng = np.random.default_rng([55, n, rep])
                panel_y, panel_x, truth = simulate_panel(design, 20, n, rng)
                est = factor_adjusted_estimate(panel_y, panel_x, 0.2)
                errs.append(np.max(np.abs(est.sigma_y_lambda - truth.sigma_y_true)))
            medians.append(np.median(errs))
        assert medians[0] > medians[1] > medians[2]
