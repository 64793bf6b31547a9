"""Dense symmetric-matrix primitives: norms, sparsity functionals, eigenvalues.

Matrices are plain float ndarrays; symmetric inputs are validated (and stored
exactly symmetric) rather than wrapped in a dedicated class. All operations
are pure functions, safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, NumericFailureError

# Absolute tolerance on |A[i,j] - A[j,i]| when validating symmetric input.
SYMMETRY_ATOL = 1e-8


def as_sym_matrix(a, *, name: str = "matrix") -> np.ndarray:
    """Validate a square symmetric matrix (d >= 2) and return it exactly
    symmetrized: entries are averaged with their transpose so that storage
    satisfies A[i,j] == A[j,i] bit-for-bit.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidParameterError(f"{name} must be square, got shape {a.shape}")
    if a.shape[0] < 2:
        raise InvalidParameterError(f"{name} must have dimension >= 2")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    scale = max(1.0, float(np.max(np.abs(a))))
    if asym > SYMMETRY_ATOL * scale:
        raise InvalidInputError(
            f"{name} is not symmetric (max |A - A^T| = {asym:.3e})"
        )
    return symmetrize(a)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return (A + A^T)/2, which is exactly symmetric in floating point."""
    return (a + a.T) / 2.0


@dataclass(frozen=True)
class SparsityStats:
    """Off-diagonal support of a symmetric matrix.

    support: set of ordered pairs (i, j), i != j, both orientations present.
    s: number of such pairs.  max_degree: max over columns of the number of
    off-diagonal nonzeros in that column.
    """

    support: frozenset
    s: int
    max_degree: int


def elementwise_norm(a, w) -> float:
    """Entrywise l_w norm: (sum |a_ij|^w)^(1/w) for finite w, max |a_ij| for
    w = inf. Defined for any rectangular matrix and w in [1, inf]."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix contains non-finite entries")
    if w == np.inf:
        return float(np.max(np.abs(a))) if a.size else 0.0
    w = float(w)
    if w < 1.0:
        raise InvalidParameterError(f"elementwise norm needs w >= 1, got {w}")
    return float(np.sum(np.abs(a) ** w) ** (1.0 / w))


def operator_norm(a, w) -> float:
    """l_w operator norm for w in {1, 2, inf}: max column abs-sum, largest
    singular value, max row abs-sum respectively."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix contains non-finite entries")
    if w == 1:
        return float(np.max(np.sum(np.abs(a), axis=0)))
    if w == np.inf:
        return float(np.max(np.sum(np.abs(a), axis=1)))
    if w == 2:
        if a.shape[0] == a.shape[1] and np.array_equal(a, a.T):
            return float(np.max(np.abs(np.linalg.eigvalsh(a))))
        return float(np.linalg.svd(a, compute_uv=False)[0])
    raise InvalidParameterError(f"operator norm supports w in {{1, 2, inf}}, got {w}")


def sparsity_stats(a, zero_tol: float = 0.0) -> SparsityStats:
    """Off-diagonal support, its size s, and the max per-column degree.

    Entries with |a_ij| <= zero_tol count as zero; the diagonal never counts.
    """
    a = as_sym_matrix(a)
    if zero_tol < 0:
        raise InvalidParameterError("zero_tol must be nonnegative")
    mask = np.abs(a) > zero_tol
    np.fill_diagonal(mask, False)
    ii, jj = np.nonzero(mask)
    support = frozenset(zip(ii.tolist(), jj.tolist()))
    degrees = mask.sum(axis=0)
    return SparsityStats(
        support=support,
        s=len(support),
        max_degree=int(degrees.max()) if len(support) else 0,
    )


def max_degree(a, zero_tol: float = 0.0) -> int:
    """Max over columns of the number of off-diagonal nonzeros."""
    return sparsity_stats(a, zero_tol).max_degree


def eigen_range(a) -> tuple[float, float]:
    """Extreme eigenvalues (lambda_min, lambda_max) of a symmetric matrix."""
    a = as_sym_matrix(a)
    try:
        vals = np.linalg.eigvalsh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericFailureError(f"eigensolver failed: {exc}") from exc
    return float(vals[0]), float(vals[-1])


def kron_apply(a, b, x) -> np.ndarray:
    """Apply the Kronecker product (A (x) B) to vec(X) without forming it:
    returns B X A^T, whose vec equals (A (x) B) vec(X)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    if b.shape[1] != x.shape[0] or x.shape[1] != a.shape[1]:
        raise InvalidParameterError(
            f"dimension mismatch: B {b.shape} X {x.shape} A^T {a.T.shape}"
        )
    return b @ x @ a.T


def refined_inverse(a: np.ndarray) -> np.ndarray:
    """Dense inverse of a symmetric matrix with one Newton refinement step,
    keeping ||a a^{-1} - I||_max near machine precision."""
    try:
        inv = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise NumericFailureError(f"singular matrix: {exc}") from exc
    eye = np.eye(a.shape[0])
    inv = inv @ (2.0 * eye - a @ inv)
    return symmetrize(inv)


def psd_clip(a, rel_tol: float = 1e-8) -> np.ndarray:
    """Clip small negative eigenvalues of a symmetric matrix to zero.

    Eigenvalues below -rel_tol * trace(A) raise NotPositiveSemidefiniteError;
    negatives within tolerance are set to 0 and the matrix is reconstructed.
    """
    from .errors import NotPositiveSemidefiniteError

    a = as_sym_matrix(a)
    vals, vecs = np.linalg.eigh(a)
    floor = -rel_tol * max(float(np.trace(a)), np.finfo(float).tiny)
    if vals[0] < floor:
        raise NotPositiveSemidefiniteError(
            f"matrix is not PSD: min eigenvalue {vals[0]:.6e} < {floor:.3e}"
        )
    if vals[0] >= 0.0:
        return a
    return symmetrize((vecs * np.maximum(vals, 0.0)) @ vecs.T)
