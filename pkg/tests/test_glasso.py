import numpy as np
import pytest

from hifreq.errors import (
    ConvergenceWarning,
    InvalidInputError,
    NotPositiveSemidefiniteError,
)
from hifreq.glasso import (
    SolveOptions,
    kkt_residual,
    solve_correlation,
    solve_unweighted,
    solve_weighted,
)

from oracles import prox_grad_correlation, prox_grad_weighted, random_correlation, random_spd


class TestSolveCorrelation:
    def test_identity_input(self):
        sol = solve_correlation(np.eye(4), 0.3)
        np.testing.assert_allclose(sol.theta, np.eye(4), atol=1e-12)
        assert sol.kkt_residual <= 1e-6

    def test_closed_form_2x2(self):
        r = np.array([[1.0, 0.6], [0.6, 1.0]])
        sol = solve_correlation(r, 0.2)
        # soft-threshold KKT solution: W_12 = rho - lambda
        assert sol.w[0, 1] == pytest.approx(0.4, abs=1e-6)
        assert sol.theta[0, 1] == pytest.approx(-0.4 / (1 - 0.16), abs=1e-6)
        oracle = prox_grad_correlation(r, 0.2)
        np.testing.assert_allclose(sol.theta, oracle, atol=1e-6)

    def test_large_lambda_gives_diagonal(self):
        rng = np.random.default_rng(0)
        r = random_correlation(rng, 5)
        lam = np.max(np.abs(r - np.eye(5))) + 1e-6
        sol = solve_correlation(r, lam)
        off = ~np.eye(5, dtype=bool)
        assert np.count_nonzero(sol.theta[off]) == 0
        np.testing.assert_allclose(np.diag(sol.theta), np.ones(5), atol=1e-10)
        oracle = prox_grad_correlation(r, lam)
        np.testing.assert_allclose(sol.theta, oracle, atol=1e-6)

    def test_tiny_lambda_recovers_inverse(self):
        rng = np.random.default_rng(1)
        r = random_correlation(rng, 6, eig_low=0.5, eig_high=2.0)
        sol = solve_correlation(r, 1e-8)
        np.testing.assert_allclose(sol.theta, np.linalg.inv(r), atol=1e-4)

    def test_oracle_agreement_random_instances(self):
        rng = np.random.default_rng(42)
        for trial in range(10):
            d = int(rng.integers(3, 9))
            lam = float(rng.choice([0.05, 0.1, 0.3]))
            r = random_correlation(rng, d)
            sol = solve_correlation(r, lam)
            oracle = prox_grad_correlation(r, lam)
            assert np.max(np.abs(sol.theta - oracle)) <= 1e-4
            assert sol.kkt_residual <= 1e-6

    def test_rejects_non_unit_diagonal(self):
        with pytest.raises(InvalidInputError):
            solve_correlation(np.diag([1.0, 2.0]), 0.1)

    def test_rejects_indefinite(self):
        r = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(NotPositiveSemidefiniteError):
            solve_correlation(r, 0.1)

    def test_inverse_pair_identity(self):
        rng = np.random.default_rng(2)
        r = random_correlation(rng, 6)
        sol = solve_correlation(r, 0.1)
        resid = np.max(np.abs(sol.theta @ sol.w - np.eye(6)))
        theta_inf = np.max(np.sum(np.abs(sol.theta), axis=1))
        assert resid <= 1e-8 * theta_inf

    def test_nonconvergence_flagged(self):
        rng = np.random.default_rng(3)
        r = random_correlation(rng, 8)
        with pytest.warns(ConvergenceWarning):
            sol = solve_correlation(r, 0.01, SolveOptions(max_outer_iters=1, tol=1e-14))
        assert not sol.converged

    def test_objective_monotone_across_sweeps(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            r = random_correlation(rng, 7)
            sol = solve_correlation(r, 0.08, record_objective=True)
            trace = np.array(sol.objective_trace)
            assert len(trace) >= 1
            diffs = np.diff(trace)
            assert np.all(diffs <= 1e-8 * np.maximum(1.0, np.abs(trace[:-1])))


class TestSolveWeighted:
    def test_diagonal_input(self):
        sol = solve_weighted(np.diag([2.0, 0.5]), 0.3)
        np.testing.assert_allclose(sol.theta, np.diag([0.5, 2.0]), atol=1e-12)

    def test_2x2_rescaling_identity(self):
        # vols 2 and 1 with correlation 0.6 => covariance 0.6 * 2 * 1
        sigma = np.array([[4.0, 1.2], [1.2, 1.0]])
        sol = solve_weighted(sigma, 0.2)
        ksol = solve_correlation(np.array([[1.0, 0.6], [0.6, 1.0]]), 0.2)
        d_inv = np.diag([0.5, 1.0])
        np.testing.assert_allclose(sol.theta, d_inv @ ksol.theta @ d_inv, atol=1e-6)
        oracle = prox_grad_weighted(sigma, 0.2)
        np.testing.assert_allclose(sol.theta, oracle, atol=1e-6)

    def test_scale_invariance(self):
        rng = np.random.default_rng(5)
        sigma = random_spd(rng, 5)
        scale = np.diag(rng.uniform(0.5, 2.0, size=5))
        sol_base = solve_weighted(sigma, 0.15)
        sol_scaled = solve_weighted(scale @ sigma @ scale, 0.15)
        d_inv = np.linalg.inv(scale)
        np.testing.assert_allclose(
            sol_scaled.theta, d_inv @ sol_base.theta @ d_inv, atol=1e-8
        )

    def test_matches_correlation_rescaling(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            sigma = random_spd(rng, 5)
            v = np.sqrt(np.diag(sigma))
            lam = float(rng.uniform(0.05, 0.4))
            sol_w = solve_weighted(sigma, lam)
            # exact by construction: theta is the rescaled correlation solve
            rebuilt = sol_w.correlation_solution.theta / np.outer(v, v)
            assert np.max(np.abs(sol_w.theta - rebuilt)) <= 1e-10
            # an independent correlation-scale solve agrees to solver tolerance
            r = sigma / np.outer(v, v)
            np.fill_diagonal(r, 1.0)
            sol_k = solve_correlation((r + r.T) / 2, lam)
            assert np.max(np.abs(sol_w.theta - sol_k.theta / np.outer(v, v))) <= 1e-5

    def test_weighted_oracle_direct(self):
        rng = np.random.default_rng(7)
        sigma = random_spd(rng, 6)
        sol = solve_weighted(sigma, 0.2)
        oracle = prox_grad_weighted(sigma, 0.2)
        np.testing.assert_allclose(sol.theta, oracle, atol=1e-5)

    def test_rejects_nonpositive_diagonal(self):
        sigma = np.diag([1.0, -0.5])
        with pytest.raises(InvalidInputError):
            solve_weighted(sigma, 0.1)

    def test_accepts_singular_psd(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((3, 6))
        sigma = a.T @ a  # rank 3, PSD singular, positive diagonal
        sol = solve_weighted(sigma, 0.3)
        assert np.linalg.eigvalsh(sol.theta)[0] > 0
        assert sol.converged


class TestSolveUnweighted:
    def test_diagonal_at_large_lambda(self):
        rng = np.random.default_rng(9)
        sigma = random_spd(rng, 5)
        off = ~np.eye(5, dtype=bool)
        lam = float(np.max(np.abs(sigma[off])))
        sol = solve_unweighted(sigma, lam)
        assert np.count_nonzero(sol.theta[off]) == 0
        np.testing.assert_allclose(np.diag(sol.theta), 1.0 / np.diag(sigma), atol=1e-10)

    def test_matches_oracle(self):
        rng = np.random.default_rng(10)
        sigma = random_spd(rng, 5)
        pen = np.full((5, 5), 0.1)
        np.fill_diagonal(pen, 0.0)
        from oracles import prox_grad_glasso

        sol = solve_unweighted(sigma, 0.1)
        oracle = prox_grad_glasso(sigma, pen)
        np.testing.assert_allclose(sol.theta, oracle, atol=1e-5)


class TestKktResidual:
    def test_solved_instance_below_tol(self):
        rng = np.random.default_rng(11)
        r = random_correlation(rng, 6)
        sol = solve_correlation(r, 0.1)
        res = kkt_residual(sol.theta, r, 0.1, np.ones(6))
        assert res <= 1e-6

    def test_unpenalized_mle_is_exact(self):
        rng = np.random.default_rng(12)
        sigma = random_spd(rng, 5)
        theta = np.linalg.inv(sigma)
        theta = (theta + theta.T) / 2
        assert kkt_residual(theta, sigma, 0.0, np.ones(5)) <= 1e-10

    def test_perturbation_matches_direct_formula(self):
        rng = np.random.default_rng(13)
        r = random_correlation(rng, 3)
        sol = solve_correlation(r, 0.1, SolveOptions(tol=1e-10))
        theta = sol.theta.copy()
        theta[0, 1] += 0.01
        theta[1, 0] += 0.01
        res = kkt_residual(theta, r, 0.1, np.ones(3))
        # direct evaluation of the stationarity conditions
        g = r - np.linalg.inv(theta)
        expected = np.abs(np.diag(g)).max()
        for i in range(3):
            for j in range(3):
                if i == j:
                    continue
                if theta[i, j] != 0:
                    expected = max(expected, abs(g[i, j] + 0.1 * np.sign(theta[i, j])))
                else:
                    expected = max(expected, max(0.0, abs(g[i, j]) - 0.1))
        assert res == pytest.approx(expected, rel=1e-6)
        assert res > 1e-4

    def test_weighted_weights_enter_thresholds(self):
        rng = np.random.default_rng(14)
        sigma = random_spd(rng, 4)
        sol = solve_weighted(sigma, 0.2)
        res = kkt_residual(sol.theta, sigma, 0.2, sol.weights)
        assert res <= 1e-6


class TestWarmStart:
    def test_warm_start_matches_cold(self):
        rng = np.random.default_rng(15)
        r = random_correlation(rng, 7)
        opts = SolveOptions(tol=1e-8)
        cold_03 = solve_correlation(r, 0.3, opts)
        warm_opts = SolveOptions(tol=1e-8, warm_start=cold_03)
        warm_01 = solve_correlation(r, 0.1, warm_opts)
        cold_01 = solve_correlation(r, 0.1, SolveOptions(tol=1e-8))
        assert np.max(np.abs(warm_01.theta - cold_01.theta)) <= 1e-6
