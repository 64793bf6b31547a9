"""Weighted graphical Lasso solver.

The covariance-scale problem with penalty weights sqrt(S_ii S_jj) is solved by
rescaling to the correlation matrix, running an l1-penalized precision solve
there, and mapping back. The correlation-scale problem itself is solved by
block coordinate descent over columns (glasso-style), each column being a
lasso with covariance updates. The returned solution is certified by its KKT
residual, which is the authoritative convergence measure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import (
    ConvergenceWarning,
    InvalidInputError,
    InvalidParameterError,
    NotPositiveSemidefiniteError,
    NumericFailureError,
)
from .matcore import as_sym_matrix, psd_clip, refined_inverse, symmetrize


@dataclass
class SolveOptions:
    """Iteration budget and tolerances for one solve.

    tol governs both the sweep-level stopping rule and the final KKT check;
    the KKT check decides success. The diagonal is never penalized.
    """

    max_outer_iters: int = 1000
    tol: float = 1e-6
    warm_start: "GlassoSolution | None" = None
    penalize_diagonal: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise InvalidParameterError("tol must be positive")
        if self.max_outer_iters < 1:
            raise InvalidParameterError("max_outer_iters must be >= 1")
        if self.penalize_diagonal:
            raise InvalidParameterError("diagonal penalization is not supported")


@dataclass
class GlassoSolution:
    theta: np.ndarray          # precision estimate, positive definite
    w: np.ndarray              # its inverse (estimated covariance)
    lam: float
    weights: np.ndarray        # sqrt of the input diagonal (ones on corr scale)
    iters: int
    kkt_residual: float
    converged: bool = True
    objective_trace: list[float] | None = field(default=None, repr=False)
    # correlation-scale solution the weighted solve was rescaled from
    correlation_solution: "GlassoSolution | None" = field(default=None, repr=False)


@njit(cache=True)
def _cd_sweeps(s, pen, w, b, thresh, inner_tol, max_inner, max_sweeps):
    """Run up to max_sweeps full column sweeps of glasso coordinate descent.

    s: input matrix; pen: entrywise penalty (zero diagonal); w: working
    covariance, updated in place; b: per-column lasso coefficients, updated in
    place (b[j, j] == 0). Returns (sweeps done, converged flag).
    """
    d = s.shape[0]
    offdiag = d * (d - 1)
    c = np.empty(d)
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        total_change = 0.0
        for j in range(d):
            # c[i] = sum_k w[i, k] * b[k, j]; b[j, j] = 0 keeps column j out
            for i in range(d):
                acc = 0.0
                for k in range(d):
                    acc += w[i, k] * b[k, j]
                c[i] = acc
            for _ in range(max_inner):
                change = 0.0
                for i in range(d):
                    if i == j:
                        continue
                    r = s[i, j] - (c[i] - w[i, i] * b[i, j])
                    p = pen[i, j]
                    if r > p:
                        bi = (r - p) / w[i, i]
                    elif r < -p:
                        bi = (r + p) / w[i, i]
                    else:
                        bi = 0.0
                    delta = bi - b[i, j]
                    if delta != 0.0:
                        b[i, j] = bi
                        for k in range(d):
                            c[k] += w[k, i] * delta
                        change += abs(delta)
                if change / max(d - 1, 1) <= inner_tol:
                    break
            for i in range(d):
                if i != j:
                    total_change += abs(c[i] - w[i, j])
                    w[i, j] = c[i]
                    w[j, i] = c[i]
        if total_change / offdiag <= thresh:
            return sweeps, True
    return sweeps, False


def _reconstruct_theta(s, w, b) -> np.ndarray:
    """Recover the precision matrix from the working covariance and the
    per-column lasso coefficients."""
    d = s.shape[0]
    theta = np.empty((d, d))
    for j in range(d):
        denom = w[j, j] - float(w[:, j] @ b[:, j])
        if denom <= 0.0 or not np.isfinite(denom):
            raise NumericFailureError(
                "precision reconstruction failed (nonpositive pivot); "
                "input may be too ill-conditioned"
            )
        tjj = 1.0 / denom
        theta[:, j] = -b[:, j] * tjj
        theta[j, j] = tjj
    return symmetrize(theta)


def _kkt_residual_pen(theta, sigma, pen, w_inv=None) -> float:
    """Max KKT violation of theta for the penalized problem with entrywise
    penalty matrix pen (zero diagonal)."""
    if w_inv is None:
        w_inv = refined_inverse(theta)
    g = sigma - w_inv
    d = theta.shape[0]
    off = ~np.eye(d, dtype=bool)
    active = off & (theta != 0.0)
    inactive = off & (theta == 0.0)
    res = float(np.max(np.abs(np.diag(g))))
    if np.any(active):
        res = max(res, float(np.max(np.abs(g[active] + pen[active] * np.sign(theta[active])))))
    if np.any(inactive):
        res = max(res, float(np.max(np.maximum(0.0, np.abs(g[inactive]) - pen[inactive]))))
    return res


def kkt_residual(theta, sigma_hat, lam: float, weights) -> float:
    """Max KKT violation of a candidate precision matrix.

    With G = sigma_hat - theta^{-1}: |G_ij + lam w_i w_j sign(theta_ij)| on
    the active off-diagonal set, max(0, |G_ij| - lam w_i w_j) on the zero set,
    |G_ii| on the (unpenalized) diagonal.
    """
    theta = as_sym_matrix(theta, name="theta")
    sigma_hat = as_sym_matrix(sigma_hat, name="sigma_hat")
    weights = np.asarray(weights, dtype=float)
    pen = lam * np.outer(weights, weights)
    np.fill_diagonal(pen, 0.0)
    return _kkt_residual_pen(theta, sigma_hat, pen)


def _objective(theta, sigma, pen) -> float:
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        return np.inf
    mask = ~np.eye(theta.shape[0], dtype=bool)
    return float(np.sum(theta * sigma) - logdet + np.sum(pen[mask] * np.abs(theta[mask])))


def _solve_core(s, pen, opts: SolveOptions, kkt_tol: float,
                warm: tuple[np.ndarray, np.ndarray] | None = None,
                record_objective: bool = False) -> GlassoSolution:
    d = s.shape[0]
    mean_off = float(np.mean(np.abs(s[~np.eye(d, dtype=bool)])))
    thresh = opts.tol * (mean_off if mean_off > 0 else 1.0)
    inner_tol = 0.1 * thresh
    if warm is not None:
        w, b = warm[0].copy(), warm[1].copy()
        np.fill_diagonal(w, np.diag(s))
        np.fill_diagonal(b, 0.0)
    else:
        w = s.copy()
        b = np.zeros((d, d))

    total_sweeps = 0
    trace: list[float] | None = [] if record_objective else None
    theta = None
    w_inv = None
    kkt = np.inf
    converged = False
    while total_sweeps < opts.max_outer_iters:
        budget = opts.max_outer_iters - total_sweeps
        if record_objective:
            sweeps_done = 0
            while sweeps_done < budget:
                did, swept = _cd_sweeps(s, pen, w, b, thresh, inner_tol, 200, 1)
                sweeps_done += did
                trace.append(_objective(_reconstruct_theta(s, w, b), s, pen))
                if swept:
                    break
        else:
            sweeps_done, _ = _cd_sweeps(s, pen, w, b, thresh, inner_tol, 200, budget)
        total_sweeps += sweeps_done
        theta = _reconstruct_theta(s, w, b)
        w_inv = refined_inverse(theta)
        kkt = _kkt_residual_pen(theta, s, pen, w_inv)
        if kkt <= kkt_tol:
            converged = True
            break
        # KKT check is authoritative: tighten the sweep criterion and resume
        thresh *= 0.02
        inner_tol *= 0.02
    if not converged:
        warnings.warn(
            f"glasso did not reach KKT tolerance {kkt_tol:.1e} within "
            f"{opts.max_outer_iters} sweeps (residual {kkt:.3e})",
            ConvergenceWarning,
        )
    return GlassoSolution(
        theta=theta, w=w_inv, lam=np.nan, weights=np.ones(d), iters=total_sweeps,
        kkt_residual=kkt, converged=converged, objective_trace=trace,
    )


def _warm_state(sol: GlassoSolution) -> tuple[np.ndarray, np.ndarray]:
    """Rebuild the coordinate-descent state (W, B) from a solution."""
    theta = sol.theta
    b = -theta / np.diag(theta)[np.newaxis, :]
    np.fill_diagonal(b, 0.0)
    return sol.w.copy(), b


def solve_correlation(r, lam: float, opts: SolveOptions | None = None,
                      record_objective: bool = False) -> GlassoSolution:
    """Graphical Lasso on a correlation matrix with off-diagonal-only penalty.

    r must be PSD with unit diagonal; lam > 0. The returned kkt_residual is
    the max KKT violation at tolerance opts.tol.
    """
    opts = opts or SolveOptions()
    r = as_sym_matrix(r, name="correlation matrix")
    if lam <= 0:
        raise InvalidParameterError("lambda must be positive")
    if np.max(np.abs(np.diag(r) - 1.0)) > 1e-10:
        raise InvalidInputError("correlation matrix must have unit diagonal")
    if np.linalg.eigvalsh(r)[0] < -1e-10:
        raise NotPositiveSemidefiniteError(
            "correlation matrix is not PSD within tolerance"
        )
    d = r.shape[0]
    pen = np.full((d, d), float(lam))
    np.fill_diagonal(pen, 0.0)
    warm = _warm_state(opts.warm_start) if opts.warm_start is not None else None
    sol = _solve_core(r, pen, opts, kkt_tol=opts.tol, warm=warm,
                      record_objective=record_objective)
    sol.lam = float(lam)
    return sol


def solve_weighted(sigma_hat, lam: float, opts: SolveOptions | None = None,
                   psd_tol: float = 1e-8) -> GlassoSolution:
    """Weighted graphical Lasso: penalty lam * sqrt(S_ii S_jj) off-diagonal.

    Solves the correlation-scale problem on R = V^-1 S V^-1 with
    V = diag(S)^(1/2) and returns theta = V^-1 K V^-1 together with its
    inverse V K^-1 V. Eigenvalues of sigma_hat down to -psd_tol*trace are
    accepted and clipped to zero for the internal correlation computation.
    """
    opts = opts or SolveOptions()
    sigma_hat = as_sym_matrix(sigma_hat, name="sigma_hat")
    diag = np.diag(sigma_hat)
    if np.any(diag <= 0):
        raise InvalidInputError(
            f"sigma_hat needs a strictly positive diagonal (min {diag.min():.3e})"
        )
    sigma_hat = psd_clip(sigma_hat, rel_tol=psd_tol)
    diag = np.diag(sigma_hat).copy()
    if np.any(diag <= 0):
        raise InvalidInputError("PSD clipping produced a nonpositive diagonal")
    v = np.sqrt(diag)
    r = sigma_hat / np.outer(v, v)
    np.fill_diagonal(r, 1.0)
    r = symmetrize(r)

    # solve the correlation problem tight enough that the weighted-scale KKT
    # residual (which scales by v_i v_j) still meets opts.tol
    scale = max(1.0, float(np.max(v)) ** 2)
    corr_opts = SolveOptions(max_outer_iters=opts.max_outer_iters,
                             tol=opts.tol / scale)
    if opts.warm_start is not None:
        prev = opts.warm_start
        corr_opts.warm_start = GlassoSolution(
            theta=symmetrize(prev.theta * np.outer(v, v)),
            w=symmetrize(prev.w / np.outer(v, v)),
            lam=prev.lam, weights=np.ones(len(v)), iters=prev.iters,
            kkt_residual=prev.kkt_residual, converged=prev.converged,
        )
    ksol = solve_correlation(r, lam, corr_opts)

    theta = symmetrize(ksol.theta / np.outer(v, v))
    w = symmetrize(ksol.w * np.outer(v, v))
    pen = lam * np.outer(v, v)
    np.fill_diagonal(pen, 0.0)
    kkt = _kkt_residual_pen(theta, sigma_hat, pen)
    return GlassoSolution(theta=theta, w=w, lam=float(lam), weights=v,
                          iters=ksol.iters, kkt_residual=kkt,
                          converged=ksol.converged, correlation_solution=ksol)


def solve_unweighted(sigma_hat, lam: float, opts: SolveOptions | None = None,
                     psd_tol: float = 1e-8) -> GlassoSolution:
    """Plain graphical Lasso on the covariance scale: constant off-diagonal
    penalty lam. Used as the unweighted baseline in the Monte Carlo study."""
    opts = opts or SolveOptions()
    sigma_hat = as_sym_matrix(sigma_hat, name="sigma_hat")
    if np.any(np.diag(sigma_hat) <= 0):
        raise InvalidInputError("sigma_hat needs a strictly positive diagonal")
    if lam <= 0:
        raise InvalidParameterError("lambda must be positive")
    sigma_hat = psd_clip(sigma_hat, rel_tol=psd_tol)
    d = sigma_hat.shape[0]
    pen = np.full((d, d), float(lam))
    np.fill_diagonal(pen, 0.0)
    off = ~np.eye(d, dtype=bool)
    kkt_scale = max(1.0, float(np.max(np.abs(sigma_hat[off]))))
    warm = _warm_state(opts.warm_start) if opts.warm_start is not None else None
    sol = _solve_core(sigma_hat, pen, opts, kkt_tol=opts.tol * kkt_scale, warm=warm)
    sol.lam = float(lam)
    return sol
