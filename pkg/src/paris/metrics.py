"""Evaluation metrics for imbalanced regression.

Besides plain RMSE, everything here conditions on target severity: RMSE
restricted to samples whose true value lies at or below a threshold (or a
lower-tail percentile), and the absolute errors on the most extreme events.
Empty conditional subsets are reported as explicitly empty (value None with
a zero count), never as zero error.
"""

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .validation import check_lengths


class ConditionalMetric(NamedTuple):
    """A conditional RMSE with its subset size; value is None when empty."""

    value: float | None
    n_samples: int


class ExtremeEvent(NamedTuple):
    true_value: float
    prediction: float
    absolute_error: float


def _as_pair(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    check_lengths(y_true, y_pred, "y_true", "y_pred")
    return y_true, y_pred


def rmse(y_true, y_pred):
    """Root mean squared error."""
    y_true, y_pred = _as_pair(y_true, y_pred)
    if y_true.size == 0:
        raise ValueError("rmse needs at least one sample")
    d = y_true - y_pred
    return float(np.sqrt(np.mean(d * d)))


def conditional_rmse(y_true, y_pred, threshold):
    """RMSE over the samples with ``y_true <= threshold``.

    Returns a `ConditionalMetric`; an empty subset yields ``(None, 0)``.
    """
    y_true, y_pred = _as_pair(y_true, y_pred)
    mask = y_true <= threshold
    n = int(mask.sum())
    if n == 0:
        return ConditionalMetric(value=None, n_samples=0)
    return ConditionalMetric(value=rmse(y_true[mask], y_pred[mask]), n_samples=n)


def percentile_threshold(y_true, q):
    """Lower-tail threshold: the q-th percentile of the true targets.

    Linear interpolation between order statistics (the common type-7
    convention), so conditional-by-percentile results are reproducible.
    """
    if not 0.0 < q <= 100.0:
        raise ValueError("q must be in (0, 100]")
    return float(np.percentile(np.asarray(y_true, dtype=np.float64), q))


def conditional_rmse_percentile(y_true, y_pred, q):
    """RMSE over the lower q-percent tail of the true targets."""
    y_true, y_pred = _as_pair(y_true, y_pred)
    return conditional_rmse(y_true, y_pred, percentile_threshold(y_true, q))


def extreme_event_errors(y_true, y_pred, n):
    """Absolute errors on the ``n`` most severe (smallest) true targets.

    Sorted most severe first; ties at the cutoff keep the lower index.
    """
    y_true, y_pred = _as_pair(y_true, y_pred)
    if n > y_true.size:
        raise ValueError(f"asked for {n} events but only {y_true.size} samples")
    order = np.argsort(y_true, kind="stable")[:n]
    return [
        ExtremeEvent(
            true_value=float(y_true[i]),
            prediction=float(y_pred[i]),
            absolute_error=float(abs(y_true[i] - y_pred[i])),
        )
        for i in order
    ]


DEFAULT_PERCENTILES = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)


@dataclass
class MetricReport:
    """Bundle of severity-aware metrics for one prediction set.

    ``crmse_by_threshold`` rows are ``(threshold, value-or-None, n)``;
    ``crmse_by_percentile`` rows are ``(percentile, threshold, value-or-None,
    n)``. Serializes to JSON and to tidy CSV rows (one conditional entry per
    row) for external curve plotting.
    """

    rmse: float
    crmse_by_threshold: list
    crmse_by_percentile: list
    extreme_events: list
    n_samples: int

    def to_dict(self):
        return {
            "n_samples": self.n_samples,
            "rmse": self.rmse,
            "crmse_by_threshold": [
                {"threshold": t, "crmse": v, "n_samples": n}
                for t, v, n in self.crmse_by_threshold
            ],
            "crmse_by_percentile": [
                {"percentile": q, "threshold": t, "crmse": v, "n_samples": n}
                for q, t, v, n in self.crmse_by_percentile
            ],
            "extreme_events": [
                {
                    "true_value": e.true_value,
                    "prediction": e.prediction,
                    "absolute_error": e.absolute_error,
                }
                for e in self.extreme_events
            ],
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    def to_csv_rows(self):
        """Tidy rows: (kind, key, threshold, crmse, n_samples)."""
        rows = [("rmse", "", "", self.rmse, self.n_samples)]
        for t, v, n in self.crmse_by_threshold:
            rows.append(("crmse_threshold", t, t, v, n))
        for q, t, v, n in self.crmse_by_percentile:
            rows.append(("crmse_percentile", q, t, v, n))
        for rank, e in enumerate(self.extreme_events):
            rows.append(("extreme_event", rank, e.true_value, e.absolute_error, 1))
        return rows


def evaluate_predictions(
    y_true,
    y_pred,
    percentiles=DEFAULT_PERCENTILES,
    thresholds=None,
    n_extreme=10,
    n_threshold_points=21,
):
    """Build a full `MetricReport`.

    When ``thresholds`` is None, a curve grid of ``n_threshold_points``
    evenly spaced values from the minimum true target up to its median is
    used (the severe half of the distribution).
    """
    y_true, y_pred = _as_pair(y_true, y_pred)
    if thresholds is None:
        lo = float(np.min(y_true))
        hi = float(np.median(y_true))
        thresholds = np.linspace(lo, hi, n_threshold_points)

    by_threshold = []
    for t in thresholds:
        m = conditional_rmse(y_true, y_pred, float(t))
        by_threshold.append((float(t), m.value, m.n_samples))

    by_percentile = []
    for q in percentiles:
        t = percentile_threshold(y_true, float(q))
        m = conditional_rmse(y_true, y_pred, t)
        by_percentile.append((float(q), t, m.value, m.n_samples))

    events = extreme_event_errors(y_true, y_pred, min(n_extreme, y_true.size))
    return MetricReport(
        rmse=rmse(y_true, y_pred),
        crmse_by_threshold=by_threshold,
        crmse_by_percentile=by_percentile,
        extreme_events=events,
        n_samples=int(y_true.size),
    )
