"""Monte Carlo engine: stochastic-volatility factors, residual designs,
panel synthesis, and the replication runner with error/coverage metrics.

All randomness flows through numpy Generators; every replication derives its
own generator from (seed, replication index), so runs are reproducible and
independent of how replications are scheduled across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import debias, factor, tuning
from .errors import DesignDegeneracyError, InvalidParameterError
from .matcore import SparsityStats, refined_inverse, symmetrize
from .quadcov import PathPanel, realized_cov

METHODS = ("rc", "glasso", "wglasso", "f-glasso", "f-wglasso", "f-thr")

_DEFAULT_LOADING_RANGES = ((0.25, 2.25), (-0.5, 0.5), (-0.5, 0.5))


@dataclass
class HestonParams:
    """Mean-reverting square-root volatility factors with leverage.

    eta == 0 is allowed as the degenerate deterministic-volatility case; the
    initial variance then sits at its stationary mean instead of being drawn
    from the (degenerate) gamma law.
    """

    kappa: tuple = (3.0, 4.0, 5.0)
    theta: tuple = (0.09, 0.04, 0.06)
    eta: tuple = (0.3, 0.4, 0.3)
    rho: tuple = (-0.6, -0.4, -0.25)
    mu: tuple = (0.05, 0.03, 0.02)

    def __post_init__(self):
        arrays = [np.asarray(v, dtype=float) for v in
                  (self.kappa, self.theta, self.eta, self.rho, self.mu)]
        r = arrays[0].size
        if any(a.size != r for a in arrays):
            raise InvalidParameterError("parameter vectors must share length")
        kappa, theta, eta, rho, _ = arrays
        if np.any(kappa <= 0) or np.any(theta <= 0):
            raise InvalidParameterError("kappa and theta must be positive")
        if np.any(eta < 0):
            raise InvalidParameterError("eta must be nonnegative")
        if np.any(np.abs(rho) >= 1):
            raise InvalidParameterError("|rho| must be below 1")
        self.kappa, self.theta, self.eta, self.rho, self.mu = (tuple(a) for a in arrays)

    @property
    def r(self) -> int:
        return len(self.kappa)

    @property
    def feller_ok(self) -> bool:
        k = np.asarray(self.kappa)
        t = np.asarray(self.theta)
        e = np.asarray(self.eta)
        return bool(np.all(2.0 * k * t >= e * e))


@njit(cache=True)
def _heston_steps(dt, mu, kappa, theta, eta, rho, v0, z1, z2):
    """Euler scheme with full truncation: the nonnegative part of v drives
    both diffusions while v itself may go (slightly) negative."""
    n_steps, r = z1.shape
    x = np.zeros((n_steps + 1, r))
    v = v0.copy()
    vbar = np.zeros(r)
    sq_dt = math.sqrt(dt)
    for h in range(n_steps):
        for j in range(r):
            vplus = v[j] if v[j] > 0.0 else 0.0
            sv = math.sqrt(vplus)
            x[h + 1, j] = x[h, j] + mu[j] * dt + sv * sq_dt * z1[h, j]
            vbar[j] += vplus * dt
            shock = rho[j] * z1[h, j] + math.sqrt(1.0 - rho[j] * rho[j]) * z2[h, j]
            v[j] = v[j] + kappa[j] * (theta[j] - vplus) * dt + eta[j] * sv * sq_dt * shock
    return x, vbar


def _draw_initial_variance(params: HestonParams, rng) -> np.ndarray:
    v0 = np.empty(params.r)
    for j in range(params.r):
        eta = params.eta[j]
        if eta == 0.0:
            v0[j] = params.theta[j]
        else:
            shape = 2.0 * params.kappa[j] * params.theta[j] / eta**2
            scale = eta**2 / (2.0 * params.kappa[j])
            v0[j] = rng.gamma(shape, scale)
    return v0


def simulate_heston_factors(params: HestonParams, n: int, substeps: int, rng,
                            return_diagnostics: bool = False):
    """Simulate the factor panel on the grid h/n.

    The path is built with n*substeps Euler steps and subsampled every
    substeps-th point. With return_diagnostics the fine-grid realized
    quadratic variation and the integrated variances are returned as well.
    """
    if n < 1 or substeps < 1:
        raise InvalidParameterError("n and substeps must be positive")
    n_steps = n * substeps
    dt = 1.0 / n_steps
    v0 = _draw_initial_variance(params, rng)
    z1 = rng.standard_normal((n_steps, params.r))
    z2 = rng.standard_normal((n_steps, params.r))
    x, vbar = _heston_steps(dt, np.asarray(params.mu), np.asarray(params.kappa),
                            np.asarray(params.theta), np.asarray(params.eta),
                            np.asarray(params.rho), v0, z1, z2)
    panel = PathPanel(x[::substeps])
    if not return_diagnostics:
        return panel
    dx = np.diff(x, axis=0)
    fine_qv = symmetrize(dx.T @ dx)
    return panel, fine_qv, vbar


def gen_loadings(d: int, rng, ranges=None) -> np.ndarray:
    """Loadings with independent uniform entries, column j on ranges[j]."""
    ranges = _DEFAULT_LOADING_RANGES if ranges is None else tuple(ranges)
    beta = np.empty((d, len(ranges)))
    for j, (lo, hi) in enumerate(ranges):
        beta[:, j] = rng.uniform(lo, hi, size=d)
    return beta


@dataclass
class ResidualDesign:
    sigma_z: np.ndarray
    theta_z: np.ndarray
    support: SparsityStats


def design1_residual_cov(d: int, rng) -> ResidualDesign:
    """Block-diagonal residual covariance: 10 blocks of size d/10 with
    U[0.2, 0.5] variances and constant within-block correlation 0.25."""
    if d % 10 != 0:
        raise InvalidParameterError(f"design 1 needs d divisible by 10, got {d}")
    b = d // 10
    variances = rng.uniform(0.2, 0.5, size=d)
    sigma = np.zeros((d, d))
    theta = np.zeros((d, d))
    pairs = []
    for k in range(10):
        sl = slice(k * b, (k + 1) * b)
        sq = np.sqrt(variances[sl])
        block = 0.25 * np.outer(sq, sq)
        np.fill_diagonal(block, variances[sl])
        sigma[sl, sl] = block
        theta[sl, sl] = refined_inverse(block)
        for i in range(k * b, (k + 1) * b):
            for j in range(k * b, (k + 1) * b):
                if i != j:
                    pairs.append((i, j))
    support = SparsityStats(support=frozenset(pairs), s=len(pairs),
                            max_degree=b - 1)
    return ResidualDesign(sigma_z=sigma, theta_z=theta, support=support)


def chung_lu_weights(d: int, alpha: float) -> np.ndarray:
    """Power-law vertex weights capped at floor(d^0.45)."""
    if alpha <= 2:
        raise InvalidParameterError("alpha must exceed 2")
    c = (alpha - 2.0) / (alpha - 1.0)
    w_max = math.floor(d**0.45)
    i0 = d * (c / w_max) ** (alpha - 1.0)
    i = np.arange(1, d + 1, dtype=float)
    return c * ((i + i0 - 1.0) / d) ** (-1.0 / (alpha - 1.0))


def design2_residual_cov(d: int, alpha: float, rng, weights=None,
                         precision_reading: bool = True) -> ResidualDesign:
    """Chung-Lu random-graph residual design.

    The matrix E + D - A (identity plus graph Laplacian) is read as the
    residual *precision*, so that the zero/nonzero partition of the precision
    follows the simulated graph; precision_reading=False restores the literal
    reading of E + D - A as the covariance.
    """
    if d < 2:
        raise InvalidParameterError("d must be at least 2")
    if weights is None:
        weights = chung_lu_weights(d, alpha)
    weights = np.asarray(weights, dtype=float)
    total = float(np.sum(weights))
    if total > 0:
        prob = np.minimum(1.0, np.outer(weights, weights) / total)
    else:
        prob = np.zeros((d, d))
    upper = np.triu(rng.random((d, d)) < prob, k=1)
    adj = (upper | upper.T).astype(float)
    degrees = adj.sum(axis=0)
    laplacian_plus_eye = np.eye(d) + np.diag(degrees) - adj
    ii, jj = np.nonzero(adj)
    support = SparsityStats(
        support=frozenset(zip(ii.tolist(), jj.tolist())),
        s=int(adj.sum()),
        max_degree=int(degrees.max()) if adj.any() else 0,
    )
    if precision_reading:
        theta = laplacian_plus_eye
        sigma = refined_inverse(theta)
    else:
        sigma = laplacian_plus_eye
        theta = refined_inverse(sigma)
        from .matcore import sparsity_stats

        support = sparsity_stats(theta, 0.0)
    return ResidualDesign(sigma_z=sigma, theta_z=theta, support=support)


@dataclass
class SimDesign:
    """Design configuration shared by all replications of one experiment."""

    design: int = 1
    alpha: float = 2.5
    substeps: int = 10
    heston: HestonParams = field(default_factory=HestonParams)
    loading_ranges: tuple = _DEFAULT_LOADING_RANGES
    design2_precision_reading: bool = True

    def __post_init__(self):
        if self.design not in (1, 2):
            raise InvalidParameterError("design must be 1 or 2")
        if self.substeps < 1:
            raise InvalidParameterError("substeps must be positive")


@dataclass
class SimTruth:
    beta: np.ndarray
    sigma_z_true: np.ndarray
    theta_z_true: np.ndarray
    support_true: SparsityStats
    sigma_y_true: np.ndarray


def simulate_panel(design: SimDesign, d: int, n: int, rng):
    """Draw one replication: loadings, residual design, factor paths, and the
    observation panels Y = beta X + Z on the grid h/n.

    The target covariance records the realized fine-grid factor quadratic
    variation, which is the random estimand of this replication.
    """
    beta = gen_loadings(d, rng, design.loading_ranges)
    if design.design == 1:
        res = design1_residual_cov(d, rng)
    else:
        res = design2_residual_cov(d, design.alpha, rng,
                                   precision_reading=design.design2_precision_reading)
    panel_x, fine_qv, _ = simulate_heston_factors(
        design.heston, n, design.substeps, rng, return_diagnostics=True
    )
    try:
        chol = np.linalg.cholesky(res.sigma_z)
    except np.linalg.LinAlgError as exc:
        raise DesignDegeneracyError(
            f"residual covariance is not factorizable: {exc}"
        ) from exc
    z_inc = rng.standard_normal((n, d)) @ chol.T / math.sqrt(n)
    z_levels = np.zeros((n + 1, d))
    np.cumsum(z_inc, axis=0, out=z_levels[1:])
    panel_y = PathPanel(panel_x.values @ beta.T + z_levels)
    sigma_y_true = symmetrize(beta @ fine_qv @ beta.T + res.sigma_z)
    truth = SimTruth(beta=beta, sigma_z_true=res.sigma_z, theta_z_true=res.theta_z,
                     support_true=res.support, sigma_y_true=sigma_y_true)
    return panel_y, panel_x, truth


def _pseudo_inverse(a: np.ndarray) -> np.ndarray:
    """Moore-Penrose inverse used for the unregularized baselines; reduces to
    the ordinary inverse away from singularity."""
    return np.linalg.pinv(a, hermitian=True, rcond=1e-12)


@dataclass
class RepResult:
    rep: int
    errors: dict            # method -> (prec_err_inf, prec_err_2, sigma_err_linf)
    theta_z_err_2: dict     # method -> float, factor methods only
    selected_lambda: dict   # method -> float, glasso methods only
    coverage: dict          # (cls, level) -> (covered, total)
    failures: dict          # method -> message


def _op_norms(delta: np.ndarray) -> tuple[float, float]:
    inf_norm = float(np.max(np.sum(np.abs(delta), axis=1)))
    two_norm = float(np.max(np.abs(np.linalg.eigvalsh(symmetrize(delta)))))
    return inf_norm, two_norm


def run_replication(design: SimDesign, d: int, n: int, methods, seed: int,
                    rep: int, levels=(0.95, 0.99)) -> RepResult:
    """Simulate one panel and apply every requested method to it."""
    for m in methods:
        if m not in METHODS:
            raise InvalidParameterError(f"unknown method {m!r}")
        if m == "f-thr" and design.design != 1:
            raise InvalidParameterError("f-thr requires design 1 (known support)")
    rng = np.random.default_rng([seed, rep])
    panel_y, panel_x, truth = simulate_panel(design, d, n, rng)
    prec_true = refined_inverse(truth.sigma_y_true)

    errors: dict = {}
    theta_z_err: dict = {}
    sel_lambda: dict = {}
    failures: dict = {}
    coverage: dict = {}

    rc = realized_cov(panel_y)
    fit_result = None
    if any(m.startswith("f-") for m in methods):
        fit_result = factor.fit(panel_y, panel_x)

    def record(method, sigma_est, prec_est):
        e_inf, e_2 = _op_norms(prec_est - prec_true)
        e_linf = float(np.max(np.abs(sigma_est - truth.sigma_y_true)))
        errors[method] = (e_inf, e_2, e_linf)

    for method in methods:
        try:
            if method == "rc":
                record(method, rc, _pseudo_inverse(rc))
            elif method in ("glasso", "wglasso"):
                grid = tuning.lambda_grid(rc, n)
                _, sol = tuning.select(rc, n, grid, weighted=(method == "wglasso"))
                sel_lambda[method] = sol.lam
                record(method, sol.w, sol.theta)
            elif method in ("f-glasso", "f-wglasso"):
                grid = tuning.lambda_grid(fit_result.sigma_z, n)
                _, sol = tuning.select(fit_result.sigma_z, n, grid,
                                       weighted=(method == "f-wglasso"))
                sel_lambda[method] = sol.lam
                sigma_est = factor.assemble_sigma_y(fit_result, sol)
                prec_est = factor.precision_of_sigma_y(fit_result, sol)
                record(method, sigma_est, prec_est)
                theta_z_err[method] = _op_norms(sol.theta - truth.theta_z_true)[1]
                if method == "f-wglasso":
                    coverage = _coverage_counts(panel_y, panel_x, fit_result, sol,
                                                truth, n, levels)
            elif method == "f-thr":
                mask = np.eye(d, dtype=bool)
                for (i, j) in truth.support_true.support:
                    mask[i, j] = True
                sigma_z_thr = fit_result.sigma_z * mask
                sigma_est = symmetrize(
                    fit_result.beta_hat @ fit_result.sigma_x @ fit_result.beta_hat.T
                    + sigma_z_thr
                )
                record(method, sigma_est, _pseudo_inverse(sigma_est))
        except Exception as exc:  # per-method failures recorded, not fatal
            failures[method] = f"{type(exc).__name__}: {exc}"
    return RepResult(rep=rep, errors=errors, theta_z_err_2=theta_z_err,
                     selected_lambda=sel_lambda, coverage=coverage,
                     failures=failures)


def _coverage_counts(panel_y, panel_x, fit_result, sol, truth, n, levels):
    """Entrywise CI coverage of the de-biased factor-aware estimator, split
    by the zero/nonzero entries of the true residual precision (upper
    triangle, diagonal included in the nonzero class)."""
    deb = debias.debiased(sol.theta, fit_result.sigma_z, sol.lam)
    ctx = debias.build_avar_context(panel_y, panel_x, fit_result.beta_hat, sol.theta)
    d = truth.theta_z_true.shape[0]
    iu, ju = np.triu_indices(d)
    pairs = list(zip(iu.tolist(), ju.tolist()))
    variances = np.array(debias.avar_entries(ctx, [(p, p) for p in pairs]))
    se = np.sqrt(np.maximum(variances, 0.0)) / math.sqrt(n)
    t_vals = deb.t_matrix[iu, ju]
    true_vals = truth.theta_z_true[iu, ju]
    zero_mask = true_vals == 0.0
    usable = variances > 0.0
    counts = {}
    for level in levels:
        z = debias.normal_quantile((1.0 + level) / 2.0)
        covered = np.abs(t_vals - true_vals) <= z * se
        for cls, cls_mask in (("zero", zero_mask), ("nonzero", ~zero_mask)):
            sel = cls_mask & usable
            counts[(cls, level)] = (int(np.sum(covered & sel)), int(np.sum(sel)))
    return counts


@dataclass
class McMetrics:
    """Per-replication error records plus pooled coverage counts."""

    methods: tuple
    reps: int
    d: int
    n: int
    design: int
    levels: tuple
    prec_err_inf: dict
    prec_err_2: dict
    sigma_err_linf: dict
    theta_z_err_2: dict
    selected_lambda: dict
    coverage_counts: dict
    coverage_frac: dict
    failures: list

    def coverage_percent(self, cls: str, level: float) -> float:
        covered, total = self.coverage_counts.get((cls, level), (0, 0))
        return 100.0 * covered / total if total else math.nan

    def aggregate(self) -> dict:
        """JSON-ready summary: mean and median errors per method, pooled
        coverage percentages, failure count."""
        out = {
            "design": self.design, "d": self.d, "n": self.n, "reps": self.reps,
            "methods": {}, "coverage": {}, "num_failures": len(self.failures),
        }
        for m in self.methods:
            entry = {}
            for label, store in (("prec_err_op_inf", self.prec_err_inf),
                                 ("prec_err_op_2", self.prec_err_2),
                                 ("sigma_err_linf", self.sigma_err_linf)):
                vals = store[m]
                ok = vals[~np.isnan(vals)]
                entry[label] = {
                    "mean": float(np.mean(ok)) if ok.size else math.nan,
                    "median": float(np.median(ok)) if ok.size else math.nan,
                }
            if m in self.theta_z_err_2:
                vals = self.theta_z_err_2[m]
                ok = vals[~np.isnan(vals)]
                entry["theta_z_err_op_2"] = {
                    "mean": float(np.mean(ok)) if ok.size else math.nan,
                    "median": float(np.median(ok)) if ok.size else math.nan,
                }
            out["methods"][m] = entry
        for (cls, level), (covered, total) in sorted(self.coverage_counts.items()):
            out["coverage"][f"{cls}@{level:g}"] = {
                "percent": self.coverage_percent(cls, level),
                "covered": covered, "total": total,
            }
        return out


def _worker(args):
    return run_replication(*args)


def mc_run(design: SimDesign, d: int, n: int, methods, reps: int,
           parallelism: int | None = None, seed: int = 0,
           levels=(0.95, 0.99)) -> McMetrics:
    """Run the Monte Carlo study: simulate `reps` replications, apply every
    method, and aggregate error and coverage metrics.

    Replications are pure functions of (seed, replication index); running
    them in parallel changes nothing but wall time.
    """
    if reps < 1:
        raise InvalidParameterError("reps must be at least 1")
    methods = tuple(methods)
    tasks = [(design, d, n, methods, seed, rep, tuple(levels)) for rep in range(reps)]
    if parallelism and parallelism > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_worker, tasks,
                                    chunksize=max(1, reps // (4 * parallelism))))
    else:
        results = [_worker(t) for t in tasks]
    results.sort(key=lambda r: r.rep)

    prec_inf = {m: np.full(reps, np.nan) for m in methods}
    prec_2 = {m: np.full(reps, np.nan) for m in methods}
    sigma_linf = {m: np.full(reps, np.nan) for m in methods}
    theta_z_2 = {m: np.full(reps, np.nan) for m in methods
                 if m in ("f-glasso", "f-wglasso")}
    sel_lambda = {m: np.full(reps, np.nan) for m in methods
                  if m in ("glasso", "wglasso", "f-glasso", "f-wglasso")}
    cov_counts: dict = {}
    cov_frac: dict = {}
    failures = []
    for res in results:
        for m, (e_inf, e_2, e_linf) in res.errors.items():
            prec_inf[m][res.rep] = e_inf
            prec_2[m][res.rep] = e_2
            sigma_linf[m][res.rep] = e_linf
        for m, v in res.theta_z_err_2.items():
            theta_z_2[m][res.rep] = v
        for m, v in res.selected_lambda.items():
            sel_lambda[m][res.rep] = v
        for key, (covered, total) in res.coverage.items():
            c0, t0 = cov_counts.get(key, (0, 0))
            cov_counts[key] = (c0 + covered, t0 + total)
            cov_frac.setdefault(key, np.full(reps, np.nan))[res.rep] = (
                covered / total if total else np.nan
            )
        for m, msg in res.failures.items():
            failures.append((res.rep, m, msg))
    return McMetrics(methods=methods, reps=reps, d=d, n=n, design=design.design,
                     levels=tuple(levels), prec_err_inf=prec_inf,
                     prec_err_2=prec_2, sigma_err_linf=sigma_linf,
                     theta_z_err_2=theta_z_2, selected_lambda=sel_lambda,
                     coverage_counts=cov_counts, coverage_frac=cov_frac,
                     failures=failures)
