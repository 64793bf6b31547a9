"""Factor-adjusted covariance pipeline.

Given panels of the target process Y and a known factor process X, estimate
loadings from realized covariations, form the residual covariance, run the
weighted graphical Lasso on it, and assemble the factor-adjusted covariance
estimate together with its fast low-rank-update inverse.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveSemidefiniteError, NumericFailureError
from .glasso import GlassoSolution, SolveOptions, solve_weighted
from .matcore import symmetrize
from .quadcov import PathPanel, realized_cov, realized_crosscov

# Condition-number ceiling for solving against sigma_x directly; beyond it
# we fall back to the Moore-Penrose pseudo-inverse.
COND_LIMIT = 1e12
PINV_RCOND = 1e-12


@dataclass
class FactorFit:
    sigma_x: np.ndarray        # r x r realized factor covariance
    sigma_yx: np.ndarray       # d x r realized cross covariance
    beta_hat: np.ndarray       # d x r estimated loadings
    sigma_z: np.ndarray        # d x d residual covariance
    sigma_x_invertible: bool
    condition_sigma_x: float


@dataclass
class FactorAdjustedEstimate:
    fit: FactorFit
    theta_z: GlassoSolution
    sigma_y_lambda: np.ndarray
    lam: float


def fit(panel_y: PathPanel, panel_x: PathPanel) -> FactorFit:
    """Estimate loadings and the residual covariance from realized covariations.

    beta_hat solves against sigma_x when it is well-conditioned, otherwise it
    uses the pseudo-inverse (and sigma_x_invertible is set False).
    """
    sigma_x = realized_cov(panel_x)
    sigma_yx = realized_crosscov(panel_y, panel_x)
    sigma_y = realized_cov(panel_y)
    r = panel_x.dim
    if r >= panel_x.n:
        warnings.warn(
            f"number of factors r={r} is not small relative to n={panel_x.n}; "
            "loading estimates may be unstable"
        )
    eigvals = np.linalg.eigvalsh(sigma_x)
    lam_min, lam_max = float(eigvals[0]), float(eigvals[-1])
    cond = np.inf if lam_min <= 0 else lam_max / lam_min
    if cond <= COND_LIMIT:
        beta_hat = np.linalg.solve(sigma_x, sigma_yx.T).T
        invertible = True
    else:
        beta_hat = sigma_yx @ np.linalg.pinv(sigma_x, rcond=PINV_RCOND)
        invertible = False
    sigma_z = symmetrize(sigma_y - beta_hat @ sigma_x @ beta_hat.T)
    return FactorFit(
        sigma_x=sigma_x,
        sigma_yx=sigma_yx,
        beta_hat=beta_hat,
        sigma_z=sigma_z,
        sigma_x_invertible=invertible,
        condition_sigma_x=cond,
    )


def residual_precision(fit_result: FactorFit, lam: float,
                       opts: SolveOptions | None = None) -> GlassoSolution:
    """Weighted graphical Lasso on the residual covariance.

    The residual covariance must have a strictly positive diagonal and be PSD
    up to -1e-8 * trace; small negative eigenvalues are clipped inside the
    solver's correlation computation, anything worse raises.
    """
    sigma_z = fit_result.sigma_z
    dmin = float(np.min(np.diag(sigma_z)))
    if dmin <= 0:
        raise NotPositiveSemidefiniteError(
            f"residual covariance has a nonpositive diagonal entry ({dmin:.6e})"
        )
    return solve_weighted(sigma_z, lam, opts, psd_tol=1e-8)


def assemble_sigma_y(fit_result: FactorFit, theta_z: GlassoSolution) -> np.ndarray:
    """Factor-adjusted covariance estimate: beta sigma_x beta^T + theta_z^{-1}."""
    low_rank = fit_result.beta_hat @ fit_result.sigma_x @ fit_result.beta_hat.T
    return symmetrize(low_rank + theta_z.w)


def sigma_x_dagger(fit_result: FactorFit) -> np.ndarray:
    """Concrete pseudo-inverse of sigma_x: the exact inverse when
    well-conditioned, Moore-Penrose with truncated singular values otherwise."""
    if fit_result.sigma_x_invertible:
        return np.linalg.inv(fit_result.sigma_x)
    return np.linalg.pinv(fit_result.sigma_x, rcond=PINV_RCOND)


def precision_of_sigma_y(fit_result: FactorFit, theta_z: GlassoSolution) -> np.ndarray:
    """Inverse of the assembled covariance via the low-rank update identity:
    theta_z - theta_z B (sigma_x^+ + B^T theta_z B)^{-1} B^T theta_z,
    using only r x r inversions."""
    tz = theta_z.theta
    beta = fit_result.beta_hat
    tz_beta = tz @ beta
    inner = sigma_x_dagger(fit_result) + beta.T @ tz_beta
    try:
        middle = np.linalg.solve(inner, tz_beta.T)
    except np.linalg.LinAlgError as exc:
        raise NumericFailureError(
            f"inner r x r system is singular: {exc}"
        ) from exc
    return symmetrize(tz - tz_beta @ middle)


def factor_adjusted_estimate(panel_y: PathPanel, panel_x: PathPanel, lam: float,
                             opts: SolveOptions | None = None) -> FactorAdjustedEstimate:
    """Full pipeline at a fixed penalty."""
    fit_result = fit(panel_y, panel_x)
    theta_z = residual_precision(fit_result, lam, opts)
    return FactorAdjustedEstimate(
        fit=fit_result,
        theta_z=theta_z,
        sigma_y_lambda=assemble_sigma_y(fit_result, theta_z),
        lam=float(lam),
    )
