"""Dense linear-algebra kernels: Cholesky factorization, stable rank-one
downdating, triangular solves and a conjugate-gradient solver.

All functions are pure: inputs are never mutated, returned arrays are marked
read-only, and identical inputs produce bit-identical outputs. Everything is
computed in float64; there is no single-precision mode because the pruning
loop differences nearly-equal losses.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import DowndateBreaksPD, NotPositiveDefinite
from .validation import as_square_matrix, as_vector, readonly

# Maximum admissible relative asymmetry of a matrix passed to the factorizer.
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L of a symmetric positive-definite matrix.

    Satisfies ``L @ L.T == A`` for the factored matrix A, with a strictly
    positive diagonal. Instances are immutable; the stored array is
    read-only.
    """

    lower: np.ndarray

    @property
    def dim(self):
        return self.lower.shape[0]

    def reconstruct(self):
        """Return ``L @ L.T``, the matrix this factor represents."""
        return self.lower @ self.lower.T


@dataclass(frozen=True)
class CgSolution:
    """Result of a conjugate-gradient solve.

    ``converged`` is True when the relative residual ``|A x - b| / |b|``
    reached the requested tolerance; otherwise ``x`` is the best iterate
    seen and ``relative_residual`` records what it achieved.
    """

    x: np.ndarray
    converged: bool
    relative_residual: float
    iterations: int


def cholesky_factorize(a):
    """Factor a symmetric positive-definite matrix as ``L @ L.T``.

    The input is symmetrized as ``(A + A.T) / 2`` to absorb accumulation
    round-off, but an asymmetry larger than ``SYMMETRY_TOL`` (relative to
    the largest entry) is rejected outright.

    Raises
    ------
    NotPositiveDefinite
        If a non-positive pivot is encountered.
    """
    a = as_square_matrix(a, name="a")
    scale = np.max(np.abs(a)) or 1.0
    asym = np.max(np.abs(a - a.T))
    if asym > SYMMETRY_TOL * scale:
        raise ValueError(
            f"matrix is not symmetric: max |A - A.T| = {asym:.3e} "
            f"exceeds {SYMMETRY_TOL:.0e} * max|A|"
        )
    sym = (a + a.T) / 2.0
    try:
        lower = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(
            "Cholesky factorization failed: matrix is not positive definite "
            "(ridge penalty too small or degenerate Gram matrix?)"
        ) from exc
    return CholeskyFactor(lower=readonly(lower))


def cholesky_downdate(factor, v):
    """Downdate a Cholesky factor after a rank-one subtraction.

    Given ``L`` with ``L @ L.T = A``, returns ``L_new`` with
    ``L_new @ L_new.T = A - outer(v, v)`` in O(dim^2) time using hyperbolic
    (Givens-style) plane rotations applied column by column.

    Raises
    ------
    DowndateBreaksPD
        If the downdated matrix would lose positive definiteness. The
        caller should refactorize the reduced matrix from scratch.
    """
    v = as_vector(v, name="v")
    if v.size != factor.dim:
        raise ValueError(f"v has length {v.size}, factor has dim {factor.dim}")
    n = factor.dim
    lower = factor.lower.copy()
    work = v.copy()
    for k in range(n):
        lkk = lower[k, k]
        r2 = (lkk - work[k]) * (lkk + work[k])  # lkk^2 - work[k]^2
        if not (r2 > 0.0) or not np.isfinite(r2):
            raise DowndateBreaksPD(
                f"downdate makes pivot {k} non-positive "
                f"(pivot^2 - v^2 = {r2:.3e}); refactorize instead"
            )
        r = np.sqrt(r2)
        c = r / lkk
        s = work[k] / lkk
        lower[k, k] = r
        if k + 1 < n:
            col = (lower[k + 1 :, k] - s * work[k + 1 :]) / c
            lower[k + 1 :, k] = col
            work[k + 1 :] = c * work[k + 1 :] - s * col
    return CholeskyFactor(lower=readonly(lower))


def solve_with_factor(factor, b):
    """Solve ``(L @ L.T) x = b`` with two triangular solves."""
    b = as_vector(b, name="b")
    if b.size != factor.dim:
        raise ValueError(f"b has length {b.size}, factor has dim {factor.dim}")
    y = solve_triangular(factor.lower, b, lower=True, check_finite=False)
    x = solve_triangular(factor.lower.T, y, lower=False, check_finite=False)
    return readonly(np.ascontiguousarray(x))


def conjugate_gradient_solve(apply_a, b, tol=1e-8, max_iter=None):
    """Conjugate gradients on a symmetric positive-definite operator.

    Parameters
    ----------
    apply_a : callable
        Maps a vector to ``A @ v`` for the (implicit) SPD matrix A.
    b : array
        Right-hand side.
    tol : float
        Target on the relative residual ``|A x - b| / |b|``.
    max_iter : int, optional
        Iteration cap; defaults to ``10 * len(b)``.

    Returns
    -------
    CgSolution
        Converged solution, or the best iterate found with
        ``converged=False``. The reported residual is recomputed from the
        operator, not the recursive CG residual.
    """
    b = as_vector(b, name="b")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = b.size
    if max_iter is None:
        max_iter = 10 * n
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return CgSolution(
            x=readonly(np.zeros(n)), converged=True, relative_residual=0.0, iterations=0
        )

    x = np.zeros(n)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    best_x = x.copy()
    best_rnorm = np.sqrt(rs)
    iterations = 0
    for _ in range(max_iter):
        if np.sqrt(rs) / b_norm <= tol:
            break
        ap = apply_a(p)
        denom = float(p @ ap)
        if denom <= 0.0 or not np.isfinite(denom):
            break  # operator is not SPD in this subspace; keep best iterate
        gamma = rs / denom
        x = x + gamma * p
        r = r - gamma * ap
        rs_new = float(r @ r)
        iterations += 1
        if np.sqrt(rs_new) < best_rnorm:
            best_rnorm = np.sqrt(rs_new)
            best_x = x.copy()
        beta = rs_new / rs
        rs = rs_new
        p = r + beta * p

    true_resid = float(np.linalg.norm(apply_a(best_x) - b) / b_norm)
    return CgSolution(
        x=readonly(best_x),
        converged=true_resid <= tol,
        relative_residual=true_resid,
        iterations=iterations,
    )
