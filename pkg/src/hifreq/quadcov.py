"""Realized covariation estimators from equidistant path observations.

A panel holds levels of a multivariate process observed on the grid h/n,
h = 0..n; all estimators act on its increments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidParameterError
from .matcore import symmetrize


@dataclass
class PathPanel:
    """Equidistant observations: values[h] is the level at time h/n."""

    values: np.ndarray
    n: int = field(init=False)
    dim: int = field(init=False)

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=float)
        if values.ndim != 2:
            raise InvalidParameterError("panel values must be a 2-d array")
        if values.shape[0] < 2:
            raise InvalidParameterError("panel needs at least one increment (n >= 1)")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("panel contains non-finite entries")
        values.flags.writeable = False
        self.values = values
        self.n = values.shape[0] - 1
        self.dim = values.shape[1]


@dataclass
class IncrementSet:
    """Increments of a panel: increments[h-1] = values[h] - values[h-1]."""

    n: int
    dim: int
    increments: np.ndarray


def increments(panel: PathPanel) -> IncrementSet:
    deltas = np.diff(panel.values, axis=0)
    return IncrementSet(n=panel.n, dim=panel.dim, increments=deltas)


def realized_cov(panel: PathPanel) -> np.ndarray:
    """Realized covariance: sum over h of the outer products of increments.

    Two-pass accumulation (increments first, then one BLAS product) keeps the
    d x d sums stable up to n ~ 1e5 and makes the result a Gram matrix, hence
    PSD up to roundoff.
    """
    deltas = np.diff(panel.values, axis=0)
    return symmetrize(deltas.T @ deltas)


def realized_crosscov(panel_a: PathPanel, panel_b: PathPanel) -> np.ndarray:
    """Realized cross-covariation sum_h (dA_h)(dB_h)^T, shape dimA x dimB."""
    if panel_a.n != panel_b.n:
        raise InvalidParameterError(
            f"panels must share n, got {panel_a.n} and {panel_b.n}"
        )
    da = np.diff(panel_a.values, axis=0)
    db = np.diff(panel_b.values, axis=0)
    return da.T @ db


def panel_from_returns(returns, start=None) -> PathPanel:
    """Cumulate per-interval returns into a level panel starting at zero
    (or at the supplied start row)."""
    returns = np.asarray(returns, dtype=float)
    if returns.ndim != 2:
        raise InvalidParameterError("returns must be a 2-d array")
    levels = np.empty((returns.shape[0] + 1, returns.shape[1]))
    levels[0] = 0.0 if start is None else np.asarray(start, dtype=float)
    np.cumsum(returns, axis=0, out=levels[1:])
    levels[1:] += levels[0]
    return PathPanel(levels)
