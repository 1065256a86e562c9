"""Ridge head on fixed features and the representer influence machinery.

With features ``phi`` frozen, the final layer is an L2-regularized least
squares problem. Its primal solution ``w*``, the dual coefficients
``alpha = phi @ w*``, the cached inner-product matrix
``T = phi_val @ phi_train.T`` and the influence matrix
``S[:, j] = alpha[j] * T[:, j]`` together describe, in closed form, how much
each training point contributes to every validation prediction. The pruning
engine consumes these through a single immutable `RepresenterState`.
"""

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import NotConverged
from .linalg import (
    CholeskyFactor,
    cholesky_factorize,
    conjugate_gradient_solve,
    solve_with_factor,
)
from .validation import as_matrix, as_vector, check_lengths, readonly

# Conservative floor used whenever the closed-form estimate of the ridge
# penalty is degenerate, non-positive or non-finite.
LAMBDA_FLOOR = 1e-5

# Defaults for the dual conjugate-gradient route (kept as a cross-check of
# the factorized primal route; the iteration cap is 10 * n_train).
CG_TOL = 1e-8


@dataclass(frozen=True)
class LambdaEstimate:
    """Closed-form surrogate for the ridge penalty.

    ``raw_value`` is the estimator before clamping; ``fallback_used`` marks
    that a degenerate input forced the conservative floor.
    """

    value: float
    fallback_used: bool
    raw_value: float


@dataclass(frozen=True)
class RepresenterState:
    """Everything one pruning cycle needs, under a fixed feature map.

    Arrays are read-only; updates produce new states. ``train_indices``
    carries the stable original-dataset ids of the rows of ``phi_train`` so
    that removals can be reported independently of storage position.

    Invariants (checked by the test suite):
      * ``alpha == (y_train - phi_train @ w_star) / lam``, equivalently
        ``w_star == phi_train.T @ alpha``
      * ``s[:, j] == alpha[j] * t_cache[:, j]``
      * ``residuals == y_val - s.sum(axis=1)``
    """

    phi_train: np.ndarray  # (n_train, dim)
    phi_val: np.ndarray  # (n_val, dim)
    y_train: np.ndarray  # (n_train,)
    y_val: np.ndarray  # (n_val,)
    lam: float
    chol: CholeskyFactor  # factor of phi_train.T @ phi_train + lam * I
    w_star: np.ndarray  # (dim,)
    alpha: np.ndarray  # (n_train,)
    t_cache: np.ndarray  # (n_val, n_train)
    s: np.ndarray  # (n_val, n_train)
    residuals: np.ndarray  # (n_val,)
    train_indices: np.ndarray  # (n_train,) stable ids

    @property
    def n_train(self):
        return self.phi_train.shape[0]

    @property
    def n_val(self):
        return self.phi_val.shape[0]

    @property
    def dim(self):
        return self.phi_train.shape[1]


def fit_ridge_primal(phi, y, lam):
    """Solve the regularized normal equations for the head weights.

    Returns the Cholesky factor of ``phi.T @ phi + lam * I`` together with
    ``w_star = (phi.T @ phi + lam * I)^-1 @ phi.T @ y``, obtained via two
    triangular solves.
    """
    phi = as_matrix(phi, name="phi")
    y = as_vector(y, name="y")
    check_lengths(phi, y, "phi rows", "y")
    if lam <= 0:
        raise ValueError("lam must be positive")
    dim = phi.shape[1]
    gram = phi.T @ phi + lam * np.eye(dim)
    chol = cholesky_factorize(gram)
    w_star = solve_with_factor(chol, phi.T @ y)
    return chol, w_star


def compute_alpha(phi, y, w_star, lam):
    """Dual coefficients through the primal route.

    The solution of ``(phi @ phi.T + lam * I) alpha = y`` satisfies
    ``alpha = (y - phi @ w*) / lam`` (training residuals over the penalty),
    so once the factorized primal solve has produced ``w*`` no further
    matrix inversion is needed. The reverse identity ``w* = phi.T @ alpha``
    holds exactly and is what makes the influence-matrix row sums equal the
    head predictions.
    """
    phi = as_matrix(phi, name="phi")
    y = as_vector(y, name="y")
    check_lengths(phi, y, "phi rows", "y")
    w_star = as_vector(w_star, name="w_star", allow_empty=True)
    if lam <= 0:
        raise ValueError("lam must be positive")
    return readonly((y - phi @ w_star) / lam)


def compute_alpha_cg(phi, y, lam, tol=CG_TOL, max_iter=None):
    """Dual coefficients by solving ``(phi @ phi.T + lam * I) alpha = y``.

    Uses conjugate gradients on the dual system without forming it; kept as
    an independent cross-check of `compute_alpha` and for the regime with
    many more features than samples.

    Raises
    ------
    NotConverged
        If CG does not reach ``tol``; the achieved residual is attached.
    """
    phi = as_matrix(phi, name="phi")
    y = as_vector(y, name="y")
    check_lengths(phi, y, "phi rows", "y")
    if max_iter is None:
        max_iter = 10 * phi.shape[0]
    sol = conjugate_gradient_solve(
        lambda v: phi @ (phi.T @ v) + lam * v, y, tol=tol, max_iter=max_iter
    )
    if not sol.converged:
        raise NotConverged(
            f"dual CG stalled at relative residual {sol.relative_residual:.3e} "
            f"(tol {tol:.0e}); consider a larger ridge penalty",
            residual=sol.relative_residual,
            iterations=sol.iterations,
        )
    return sol.x


def build_t_cache(phi_val, phi_train):
    """Unscaled feature inner products ``T = phi_val @ phi_train.T``.

    Independent of the ridge penalty and of ``alpha``; computed once per
    outer cycle and reused by column scaling as points are removed.
    """
    phi_val = as_matrix(phi_val, name="phi_val")
    phi_train = as_matrix(phi_train, name="phi_train")
    if phi_val.shape[1] != phi_train.shape[1]:
        raise ValueError(
            f"feature dims differ: {phi_val.shape[1]} vs {phi_train.shape[1]}"
        )
    return readonly(phi_val @ phi_train.T)


def build_influence_matrix(t_cache, alpha):
    """Scale the cached inner products column-wise by the dual coefficients.

    ``S[i, j] = alpha[j] * T[i, j]`` is the contribution of training point j
    to the prediction at validation point i; each row sums to that row's
    prediction.
    """
    t_cache = as_matrix(t_cache, name="t_cache")
    alpha = as_vector(alpha, name="alpha", allow_empty=True)
    if t_cache.shape[1] != alpha.size:
        raise ValueError(
            f"t_cache has {t_cache.shape[1]} columns, alpha has {alpha.size}"
        )
    return readonly(t_cache * alpha)


def predict(phi_query, w_star):
    """Head predictions: per-row dot products with ``w*``."""
    phi_query = as_matrix(phi_query, name="phi_query")
    w_star = as_vector(w_star, name="w_star", allow_empty=True)
    return readonly(phi_query @ w_star)


def estimate_lambda(phi, y, w_nn, b_nn=0.0):
    """Closed-form surrogate for the ridge penalty from trained head weights.

    If ``w_nn`` solved the ridge system exactly at some penalty, then with
    centered targets ``y_c = y - b_nn``, ``A = phi.T @ phi`` and
    ``b = phi.T @ y_c`` the identity
    ``lambda = w_nn @ (b - A @ w_nn) / |w_nn|^2`` recovers it. Applied to
    back-propagation weights it yields an effective penalty without solving
    any system. Degenerate inputs (near-zero ``|w_nn|``, non-positive or
    non-finite estimate) fall back to `LAMBDA_FLOOR`.
    """
    phi = as_matrix(phi, name="phi")
    y = as_vector(y, name="y")
    check_lengths(phi, y, "phi rows", "y")
    w_nn = as_vector(w_nn, name="w_nn")
    if w_nn.size != phi.shape[1]:
        raise ValueError(f"w_nn has length {w_nn.size}, phi has {phi.shape[1]} columns")

    y_c = y - b_nn
    norm_sq = float(w_nn @ w_nn)
    if norm_sq < 1e-12:
        return LambdaEstimate(value=LAMBDA_FLOOR, fallback_used=True, raw_value=0.0)
    # w_nn @ (phi.T @ y_c - phi.T @ (phi @ w_nn)), without forming phi.T @ phi
    raw = float(w_nn @ (phi.T @ (y_c - phi @ w_nn))) / norm_sq
    if not np.isfinite(raw) or raw <= 0.0:
        return LambdaEstimate(value=LAMBDA_FLOOR, fallback_used=True, raw_value=raw)
    return LambdaEstimate(value=raw, fallback_used=False, raw_value=raw)


def build_state(phi_train, phi_val, y_train, y_val, lam, train_indices=None):
    """Assemble a full `RepresenterState` from scratch.

    Fits the ridge head, derives the dual coefficients through the primal
    route, builds the inner-product cache and the influence matrix, and
    evaluates validation residuals as row sums of the influence matrix.
    """
    phi_train = as_matrix(phi_train, name="phi_train")
    phi_val = as_matrix(phi_val, name="phi_val")
    y_train = as_vector(y_train, name="y_train")
    y_val = as_vector(y_val, name="y_val")
    check_lengths(phi_train, y_train, "phi_train rows", "y_train")
    check_lengths(phi_val, y_val, "phi_val rows", "y_val")
    if train_indices is None:
        train_indices = np.arange(phi_train.shape[0], dtype=np.int64)
    else:
        train_indices = np.asarray(train_indices, dtype=np.int64)
        if train_indices.size != phi_train.shape[0]:
            raise ValueError("train_indices length must match phi_train rows")
        if np.unique(train_indices).size != train_indices.size:
            raise ValueError("train_indices must be unique")

    chol, w_star = fit_ridge_primal(phi_train, y_train, lam)
    alpha = compute_alpha(phi_train, y_train, w_star, lam)
    t_cache = build_t_cache(phi_val, phi_train)
    s = build_influence_matrix(t_cache, alpha)
    residuals = readonly(y_val - s.sum(axis=1))
    return RepresenterState(
        phi_train=readonly(phi_train.copy()),
        phi_val=readonly(phi_val.copy()),
        y_train=readonly(y_train.copy()),
        y_val=readonly(y_val.copy()),
        lam=float(lam),
        chol=chol,
        w_star=w_star,
        alpha=alpha,
        t_cache=t_cache,
        s=s,
        residuals=residuals,
        train_indices=readonly(train_indices.copy()),
    )


def refresh_state_after_removal(state, keep_mask, chol):
    """Rebuild the dependent fields of a state after rows were dropped.

    ``keep_mask`` selects the surviving training rows; ``chol`` must already
    factor the reduced Gram matrix (downdated or refactorized). The head is
    re-solved, the dual coefficients recomputed, the cached columns sliced
    and rescaled, and residuals refreshed. Only `t_cache` survives untouched
    (column-subset); nothing is recomputed from the validation features.
    """
    phi_new = state.phi_train[keep_mask]
    y_new = state.y_train[keep_mask]
    w_star = solve_with_factor(chol, phi_new.T @ y_new)
    alpha = compute_alpha(phi_new, y_new, w_star, state.lam)
    t_new = readonly(np.ascontiguousarray(state.t_cache[:, keep_mask]))
    s_new = build_influence_matrix(t_new, alpha)
    residuals = readonly(state.y_val - s_new.sum(axis=1))
    return replace(
        state,
        phi_train=readonly(phi_new),
        y_train=readonly(y_new),
        chol=chol,
        w_star=w_star,
        alpha=alpha,
        t_cache=t_new,
        s=s_new,
        residuals=residuals,
        train_indices=readonly(state.train_indices[keep_mask]),
    )
