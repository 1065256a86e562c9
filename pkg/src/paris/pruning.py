"""Greedy training-set pruning guided by representer influence.

Inner loop: find the validation point with the largest squared residual,
score every remaining training point by the closed-form change in that
residual's loss if its influence column were zeroed, remove the argmin,
downdate the Cholesky factor, re-solve the head and rescale the influence
matrix. Outer loop: retrain the feature extractor on the surviving points
and repeat until the pruning budget is met, so the fixed-feature assumption
of the inner loop is refreshed periodically.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .data import GroupedDataset, apply_normalization, fit_normalization
from .exceptions import DatasetExhausted, DowndateBreaksPD, NotPositiveDefinite
from .linalg import cholesky_downdate, cholesky_factorize
from .mlp import MlpConfig, train_mlp
from .representer import (
    build_state,
    estimate_lambda,
    refresh_state_after_removal,
)
from .validation import readonly

_LAMBDA_POLICIES = ("auto", "fixed")
_POSITIVE_DELTA_POLICIES = ("prune_anyway", "stop_cycle")


@dataclass(frozen=True)
class PruneConfig:
    """Budget and policy knobs for the pruning loops.

    ``prune_fraction_per_cycle`` (p) sets the inner-loop batch as a fraction
    of the current set; ``total_prune_fraction`` (P_max) is the overall
    budget relative to the original set. ``lambda_policy="auto"`` re-derives
    the ridge penalty each cycle from the freshly trained head via the
    closed-form surrogate; ``"fixed"`` uses ``fixed_lambda`` throughout.
    ``positive_delta_policy`` decides what happens when even the best
    removal is predicted to increase the tracked validation loss: keep
    pruning (default, matching the unconditional argmin of the inner loop)
    or end the cycle. Ties are always broken toward the lowest index.
    """

    prune_fraction_per_cycle: float = 0.25
    total_prune_fraction: float = 0.75
    lambda_policy: str = "auto"
    fixed_lambda: float | None = None
    positive_delta_policy: str = "prune_anyway"
    tie_break: str = "lowest_index"

    def __post_init__(self):
        p, pmax = self.prune_fraction_per_cycle, self.total_prune_fraction
        if not 0.0 < p < 1.0:
            raise ValueError("prune_fraction_per_cycle must be in (0, 1)")
        if not 0.0 < pmax < 1.0:
            raise ValueError("total_prune_fraction must be in (0, 1)")
        if p > pmax:
            raise ValueError("prune_fraction_per_cycle cannot exceed total_prune_fraction")
        if self.lambda_policy not in _LAMBDA_POLICIES:
            raise ValueError(f"lambda_policy must be one of {_LAMBDA_POLICIES}")
        if self.lambda_policy == "fixed":
            if self.fixed_lambda is None or self.fixed_lambda <= 0:
                raise ValueError("fixed lambda_policy needs a positive fixed_lambda")
        if self.positive_delta_policy not in _POSITIVE_DELTA_POLICIES:
            raise ValueError(
                f"positive_delta_policy must be one of {_POSITIVE_DELTA_POLICIES}"
            )
        if self.tie_break != "lowest_index":
            raise ValueError("only lowest_index tie-breaking is supported")


@dataclass(frozen=True)
class DeletionResidualRow:
    """Loss deltas for zeroing each remaining point's influence column.

    ``delta[k] = 2 * r * S[v, k] + S[v, k]^2`` exactly, the expansion of
    ``(r + S[v, k])^2 - r^2``; entries are aligned with ``train_indices``.
    A negative delta marks a detrimental training point.
    """

    v_star: int
    r_vstar: float
    delta: np.ndarray
    train_indices: np.ndarray


@dataclass(frozen=True)
class PruneStep:
    """One removal: who was hardest, who was pruned, and what it did."""

    v_star: int
    k_star: int  # stable original-dataset id
    delta_loss: float
    influence: float  # S[v_star, k_star] before removal
    residual_before: float
    residual_after: float  # after the head was re-solved
    refactorizations: int


@dataclass
class PruneTrace:
    """Audit trail of one inner cycle."""

    steps: list = field(default_factory=list)
    k_planned: int = 0
    k_promoted: bool = False
    aborted_reason: str | None = None

    @property
    def pruned_ids(self):
        return [s.k_star for s in self.steps]

    def to_dict(self):
        return {
            "k_planned": self.k_planned,
            "k_promoted": self.k_promoted,
            "aborted_reason": self.aborted_reason,
            "steps": [
                {
                    "v_star": s.v_star,
                    "k_star": s.k_star,
                    "delta_loss": s.delta_loss,
                    "influence": s.influence,
                    "residual_before": s.residual_before,
                    "residual_after": s.residual_after,
                    "refactorizations": s.refactorizations,
                }
                for s in self.steps
            ],
        }


@dataclass
class CycleRecord:
    """Per-outer-cycle bookkeeping: penalty, sizes and diagnostics."""

    cycle: int
    seed: int
    lam: float
    lam_fallback: bool
    lam_raw: float
    n_before: int
    n_after: int
    head_discrepancy: float  # |w_nn - w*| / |w*|, logged not asserted
    val_rmse_before: float
    val_rmse_after: float
    trace: PruneTrace = None

    def to_dict(self, include_steps=True):
        out = {
            "cycle": self.cycle,
            "seed": self.seed,
            "lambda": self.lam,
            "lambda_fallback": self.lam_fallback,
            "lambda_raw": self.lam_raw,
            "n_before": self.n_before,
            "n_after": self.n_after,
            "head_discrepancy": self.head_discrepancy,
            "val_rmse_before": self.val_rmse_before,
            "val_rmse_after": self.val_rmse_after,
        }
        if include_steps:
            out["trace"] = self.trace.to_dict()
        else:
            out["trace"] = {
                "k_planned": self.trace.k_planned,
                "k_promoted": self.trace.k_promoted,
                "aborted_reason": self.trace.aborted_reason,
                "n_steps": len(self.trace.steps),
            }
        return out


@dataclass
class PruneRunReport:
    """Complete outcome of one pruning run on one train/validation pair."""

    n_original: int
    target_retained: int
    retained_ids: np.ndarray  # sorted stable ids
    pruned_ids: list  # in removal order
    cycles: list

    @property
    def retained_fraction(self):
        return len(self.retained_ids) / self.n_original

    @property
    def pruned_fraction(self):
        return len(self.pruned_ids) / self.n_original

    def budget_trajectory(self):
        """Retained fraction after each cycle."""
        return [c.n_after / self.n_original for c in self.cycles]

    def to_dict(self, include_steps=True):
        return {
            "n_original": self.n_original,
            "target_retained": self.target_retained,
            "retained_fraction": self.retained_fraction,
            "pruned_fraction": self.pruned_fraction,
            "retained_ids": [int(i) for i in self.retained_ids],
            "pruned_ids": [int(i) for i in self.pruned_ids],
            "budget_trajectory": self.budget_trajectory(),
            "cycles": [c.to_dict(include_steps=include_steps) for c in self.cycles],
        }


# ------------------------------------------------------------------ scoring


def select_hardest_validation(residuals):
    """Index of the largest squared residual; ties go to the lowest index."""
    residuals = np.asarray(residuals)
    if residuals.size == 0:
        raise ValueError("residuals must be non-empty")
    return int(np.argmax(residuals * residuals))


def deletion_residuals(state, v_star, pruned=()):
    """Exact loss change at ``v_star`` for zeroing each influence column.

    Holding the dual coefficients fixed, removing training point k shifts
    the tracked residual by its influence entry, so the squared-residual
    loss changes by exactly ``2 r S[v,k] + S[v,k]^2``. Points whose stable
    id is in ``pruned`` are excluded from the row.
    """
    if not 0 <= v_star < state.n_val:
        raise ValueError(f"v_star {v_star} out of range for {state.n_val} points")
    r = float(state.residuals[v_star])
    s_row = state.s[v_star]
    ids = state.train_indices
    if len(pruned):
        keep = ~np.isin(ids, np.asarray(list(pruned), dtype=np.int64))
        s_row = s_row[keep]
        ids = ids[keep]
    delta = 2.0 * r * s_row + s_row * s_row
    return DeletionResidualRow(
        v_star=int(v_star),
        r_vstar=r,
        delta=readonly(delta),
        train_indices=readonly(np.array(ids)),
    )


# ----------------------------------------------------------------- one step


def prune_one(state, config):
    """Remove the single most detrimental training point.

    Picks the hardest validation point, scores all remaining training
    points, removes the argmin (lowest index on ties), downdates the
    Cholesky factor (full refactorization of the reduced Gram matrix if the
    downdate loses definiteness), re-solves the head against the reduced
    targets, rescales the influence columns and refreshes residuals.

    Returns ``(new_state, step)``; ``step`` is None when the
    ``stop_cycle`` policy vetoed a removal because every delta was
    positive.
    """
    if state.n_train < 2:
        raise DatasetExhausted(
            f"cannot prune: only {state.n_train} training point(s) remain"
        )
    v_star = select_hardest_validation(state.residuals)
    row = deletion_residuals(state, v_star)
    k_pos = int(np.argmin(row.delta))
    if row.delta[k_pos] > 0.0 and config.positive_delta_policy == "stop_cycle":
        return state, None

    phi_k = state.phi_train[k_pos]
    keep = np.ones(state.n_train, dtype=bool)
    keep[k_pos] = False
    refactorizations = 0
    try:
        chol = cholesky_downdate(state.chol, phi_k)
    except DowndateBreaksPD:
        refactorizations = 1
        phi_new = state.phi_train[keep]
        gram = phi_new.T @ phi_new + state.lam * np.eye(state.dim)
        chol = cholesky_factorize(gram)  # NotPositiveDefinite propagates

    new_state = refresh_state_after_removal(state, keep, chol)
    step = PruneStep(
        v_star=v_star,
        k_star=int(state.train_indices[k_pos]),
        delta_loss=float(row.delta[k_pos]),
        influence=float(state.s[v_star, k_pos]),
        residual_before=float(state.residuals[v_star]),
        residual_after=float(new_state.residuals[v_star]),
        refactorizations=refactorizations,
    )
    return new_state, step


# -------------------------------------------------------------- inner cycle


def run_inner_cycle(state, config, max_removals=None):
    """Run one fixed-feature pruning batch.

    The batch size is ``floor(p * n_current)``; a floor of zero is promoted
    to one (and flagged) so the outer loop always makes progress. When
    ``max_removals`` is given (remaining budget), the batch is capped by it.
    A failed refactorization aborts the cycle, recording the reason.
    """
    k_target = int(math.floor(config.prune_fraction_per_cycle * state.n_train))
    promoted = False
    if k_target == 0:
        k_target = 1
        promoted = True
    if max_removals is not None:
        k_target = min(k_target, int(max_removals))
    trace = PruneTrace(k_planned=k_target, k_promoted=promoted)
    for _ in range(k_target):
        try:
            state, step = prune_one(state, config)
        except NotPositiveDefinite as exc:
            trace.aborted_reason = str(exc)
            break
        if step is None:
            break
        trace.steps.append(step)
    return state, trace


# --------------------------------------------------------------- outer loop


def _rmse(a, b):
    d = np.asarray(a) - np.asarray(b)
    return float(np.sqrt(np.mean(d * d)))


def run_paris(train, val, prune_config, mlp_config, fine_tune=False):
    """Full pruning run: alternate extractor retraining and inner cycles.

    ``train`` and ``val`` are grouped datasets in physical units and must
    not overlap. Inputs are z-scored and targets centered with statistics
    from the training fold before any model sees them. Each outer cycle
    trains a fresh extractor (seed ``mlp_config.seed + cycle``; with
    ``fine_tune`` it resumes from the previous parameters), re-estimates
    the ridge penalty unless fixed, builds the representer state and prunes
    an inner batch. The loop stops once at most
    ``ceil(n * (1 - total_prune_fraction))`` points remain, never
    overshooting the budget.

    Returns the pruned dataset (physical units, original ids intact) and a
    `PruneRunReport`.
    """
    if len(train) < 2:
        raise DatasetExhausted("training set too small to prune")
    overlap = set(train.original_indices.tolist()) & set(val.original_indices.tolist())
    if overlap:
        raise ValueError(f"train and validation sets share ids: {sorted(overlap)[:5]}")

    norm = fit_normalization(train)
    current = apply_normalization(train, norm)
    val_n = apply_normalization(val, norm)

    n_original = len(train)
    target_retained = int(math.ceil(n_original * (1.0 - prune_config.total_prune_fraction)))
    target_retained = max(target_retained, 1)

    cycles = []
    pruned_ids = []
    extractor = None
    cycle = 0
    while len(current) > target_retained:
        seed = mlp_config.seed + cycle
        cycle_config = MlpConfig(
            hidden_sizes=mlp_config.hidden_sizes,
            learning_rate=mlp_config.learning_rate,
            batch_size=mlp_config.batch_size,
            max_epochs=mlp_config.max_epochs,
            patience=mlp_config.patience,
            seed=seed,
        )
        if fine_tune and extractor is not None:
            extractor.warm_start = True
            extractor.seed = seed
            extractor.fit(
                current.inputs, current.targets, X_val=val_n.inputs, y_val=val_n.targets
            )
        else:
            extractor = train_mlp(current, val_n, cycle_config)

        phi = extractor.transform(current.inputs)
        phi_val = extractor.transform(val_n.inputs)

        if prune_config.lambda_policy == "fixed":
            lam, fallback, raw = float(prune_config.fixed_lambda), False, float(
                prune_config.fixed_lambda
            )
        else:
            w_nn, b_nn = extractor.head_weights
            est = estimate_lambda(phi[:, :-1], current.targets, w_nn, b_nn)
            lam, fallback, raw = est.value, est.fallback_used, est.raw_value

        state = build_state(
            phi,
            phi_val,
            current.targets,
            val_n.targets,
            lam,
            train_indices=current.original_indices,
        )
        head_vec = extractor.head_vector
        denom = float(np.linalg.norm(state.w_star)) or 1.0
        head_discrepancy = float(np.linalg.norm(head_vec - state.w_star)) / denom
        val_rmse_before = _rmse(state.s.sum(axis=1), val_n.targets)

        budget_left = len(current) - target_retained
        state, trace = run_inner_cycle(state, prune_config, max_removals=budget_left)
        removed = trace.pruned_ids
        val_rmse_after = _rmse(state.s.sum(axis=1), state.y_val)

        current = current.drop_original_ids(removed)
        pruned_ids.extend(removed)
        cycles.append(
            CycleRecord(
                cycle=cycle,
                seed=seed,
                lam=lam,
                lam_fallback=fallback,
                lam_raw=raw,
                n_before=len(current) + len(removed),
                n_after=len(current),
                head_discrepancy=head_discrepancy,
                val_rmse_before=val_rmse_before,
                val_rmse_after=val_rmse_after,
                trace=trace,
            )
        )
        cycle += 1
        if not removed:
            break  # stop_cycle policy vetoed everything or the cycle aborted

    pruned_dataset = train.drop_original_ids(pruned_ids)
    report = PruneRunReport(
        n_original=n_original,
        target_retained=target_retained,
        retained_ids=np.sort(pruned_dataset.original_indices),
        pruned_ids=pruned_ids,
        cycles=cycles,
    )
    return pruned_dataset, report


# ---------------------------------------------------------------- estimator


class ParisPruner(BaseEstimator):
    """Sample selector: fit on arrays, then subset rows by learned support.

    Wraps `run_paris` behind the estimator API. `fit` requires an explicit
    validation pair (the signal pruning optimizes); afterwards ``support_``
    is a boolean mask over the training rows, ``retained_indices_`` /
    ``pruned_indices_`` list row positions, and `transform` subsets any
    array with one row per original training sample.

    Parameters mirror `PruneConfig` plus the extractor settings.
    """

    def __init__(
        self,
        prune_fraction_per_cycle=0.25,
        total_prune_fraction=0.5,
        lambda_policy="auto",
        fixed_lambda=None,
        positive_delta_policy="prune_anyway",
        hidden_sizes=(32, 16),
        learning_rate=1e-3,
        batch_size=256,
        max_epochs=100,
        patience=20,
        seed=0,
        fine_tune=False,
    ):
        self.prune_fraction_per_cycle = prune_fraction_per_cycle
        self.total_prune_fraction = total_prune_fraction
        self.lambda_policy = lambda_policy
        self.fixed_lambda = fixed_lambda
        self.positive_delta_policy = positive_delta_policy
        self.hidden_sizes = hidden_sizes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.fine_tune = fine_tune

    def fit(self, X, y, X_val=None, y_val=None):
        if X_val is None or y_val is None:
            raise ValueError("ParisPruner.fit requires X_val and y_val")
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).ravel()
        X_val = np.asarray(X_val, dtype=np.float64)
        y_val = np.asarray(y_val, dtype=np.float64).ravel()
        n = X.shape[0]
        train = GroupedDataset(
            inputs=X,
            targets=y,
            group_ids=np.zeros(n, dtype=np.int64),
            original_indices=np.arange(n, dtype=np.int64),
        )
        val = GroupedDataset(
            inputs=X_val,
            targets=y_val,
            group_ids=np.zeros(len(y_val), dtype=np.int64),
            original_indices=np.arange(n, n + len(y_val), dtype=np.int64),
        )
        prune_config = PruneConfig(
            prune_fraction_per_cycle=self.prune_fraction_per_cycle,
            total_prune_fraction=self.total_prune_fraction,
            lambda_policy=self.lambda_policy,
            fixed_lambda=self.fixed_lambda,
            positive_delta_policy=self.positive_delta_policy,
        )
        mlp_config = MlpConfig(
            hidden_sizes=tuple(self.hidden_sizes),
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
        )
        pruned, report = run_paris(
            train, val, prune_config, mlp_config, fine_tune=self.fine_tune
        )
        self.n_samples_in_ = n
        self.report_ = report
        self.retained_indices_ = np.asarray(report.retained_ids, dtype=np.int64)
        self.pruned_indices_ = np.asarray(report.pruned_ids, dtype=np.int64)
        support = np.zeros(n, dtype=bool)
        support[self.retained_indices_] = True
        self.support_ = support
        return self

    def transform(self, X):
        """Keep the retained rows of an array aligned with the fit inputs."""
        if not hasattr(self, "support_"):
            raise RuntimeError("ParisPruner is not fitted")
        X = np.asarray(X)
        if X.shape[0] != self.n_samples_in_:
            raise ValueError(
                f"X has {X.shape[0]} rows, expected {self.n_samples_in_} "
                "(one per training sample seen in fit)"
            )
        return X[self.support_]

    def fit_prune(self, X, y, X_val, y_val):
        """Fit and return the pruned ``(X, y)`` pair."""
        self.fit(X, y, X_val=X_val, y_val=y_val)
        return self.transform(X), self.transform(np.asarray(y).ravel())
