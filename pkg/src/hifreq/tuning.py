"""Penalty selection: BIC objective and the log-spaced lambda grid.

The grid runs from epsilon * lambda_max up to lambda_max (the largest
off-diagonal modulus of the input covariance), equispaced on the log scale.
Selection solves the graphical Lasso from the largest penalty downward with
warm starts and keeps the BIC argmin, ties broken toward the larger penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateGridError,
    InvalidParameterError,
    NumericFailureError,
)
from .glasso import GlassoSolution, SolveOptions, solve_unweighted, solve_weighted
from .matcore import as_sym_matrix


@dataclass(frozen=True)
class LambdaGrid:
    values: tuple          # strictly increasing penalties, values[-1] == lambda_max
    lambda_max: float
    lambda_min: float
    epsilon: float
    m: int


def lambda_grid(sigma_z_hat, n: int, m: int = 10, epsilon: float | None = None,
                use_correlation_threshold: bool = False) -> LambdaGrid:
    """Log-equispaced penalty grid anchored at the largest off-diagonal
    modulus of sigma_z_hat (of its correlation matrix when
    use_correlation_threshold is set). Defaults: m = 10 and
    epsilon = sqrt(log(d)/n)."""
    sigma_z_hat = as_sym_matrix(sigma_z_hat, name="sigma_z_hat")
    d = sigma_z_hat.shape[0]
    if m < 2:
        raise InvalidParameterError("grid needs m >= 2")
    if epsilon is None:
        epsilon = math.sqrt(math.log(d) / n)
    if not 0.0 < epsilon < 1.0:
        raise InvalidParameterError(f"epsilon must be in (0, 1), got {epsilon}")
    target = sigma_z_hat
    if use_correlation_threshold:
        v = np.sqrt(np.diag(sigma_z_hat))
        if np.any(v <= 0):
            raise InvalidParameterError(
                "correlation threshold needs a positive diagonal"
            )
        target = sigma_z_hat / np.outer(v, v)
    off = np.abs(target[~np.eye(d, dtype=bool)])
    lambda_max = float(np.max(off))
    if lambda_max == 0.0:
        raise DegenerateGridError("all off-diagonal entries are zero")
    lambda_min = epsilon * lambda_max
    log_min = math.log(lambda_min)
    ratio = math.log(lambda_max / lambda_min)
    values = [math.exp(log_min + (i - 1) / (m - 1) * ratio) for i in range(1, m + 1)]
    values[0] = lambda_min
    values[-1] = lambda_max
    return LambdaGrid(values=tuple(values), lambda_max=lambda_max,
                      lambda_min=lambda_min, epsilon=float(epsilon), m=m)


def bic(theta, sigma_z_hat, n: int) -> float:
    """n * (trace(theta sigma) - log det(theta)) plus log(n) per nonzero
    upper-triangular entry, diagonal included."""
    theta = as_sym_matrix(theta, name="theta")
    sigma_z_hat = as_sym_matrix(sigma_z_hat, name="sigma_z_hat")
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        raise NumericFailureError("theta must have a positive determinant")
    fit_term = float(np.sum(theta * sigma_z_hat)) - logdet
    nonzero_upper = int(np.count_nonzero(np.triu(theta)))
    return n * fit_term + math.log(n) * nonzero_upper


@dataclass
class BicRecord:
    lam: float
    bic_value: float
    nonzero_upper_count: int
    solution: GlassoSolution | None
    error: str | None = None


@dataclass
class BicTrace:
    records: list[BicRecord]
    argmin_index: int

    @property
    def selected(self) -> BicRecord:
        return self.records[self.argmin_index]


def select(sigma_z_hat, n: int, grid: LambdaGrid,
           opts: SolveOptions | None = None,
           weighted: bool = True) -> tuple[BicTrace, GlassoSolution]:
    """Grid search for the BIC-minimizing penalty.

    Penalties are solved from largest to smallest, each warm-started from the
    previous solution. A penalty whose solve fails is recorded with its error
    and excluded from the argmin. Ties go to the larger penalty.
    """
    opts = opts or SolveOptions()
    sigma_z_hat = as_sym_matrix(sigma_z_hat, name="sigma_z_hat")
    solver = solve_weighted if weighted else solve_unweighted
    records: list[BicRecord] = []
    previous: GlassoSolution | None = None
    for lam in reversed(grid.values):
        lam_opts = SolveOptions(max_outer_iters=opts.max_outer_iters, tol=opts.tol,
                                warm_start=previous)
        try:
            sol = solver(sigma_z_hat, lam, lam_opts)
            value = bic(sol.theta, sigma_z_hat, n)
            nonzero = int(np.count_nonzero(np.triu(sol.theta)))
            records.append(BicRecord(lam=float(lam), bic_value=value,
                                     nonzero_upper_count=nonzero, solution=sol))
            previous = sol
        except Exception as exc:  # recorded, not fatal
            records.append(BicRecord(lam=float(lam), bic_value=math.nan,
                                     nonzero_upper_count=0, solution=None,
                                     error=f"{type(exc).__name__}: {exc}"))
    records.reverse()  # ascending in lambda, matching grid.values
    best = None
    for idx, rec in enumerate(records):
        if rec.solution is None:
            continue
        # >= moves ties toward the larger penalty (records are ascending)
        if best is None or records[best].bic_value >= rec.bic_value:
            best = idx
    if best is None:
        raise NumericFailureError("every grid penalty failed to solve")
    trace = BicTrace(records=records, argmin_index=best)
    return trace, records[best].solution
