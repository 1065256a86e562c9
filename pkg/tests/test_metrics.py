import numpy as np
import pytest

from paris.exceptions import LengthMismatch
from paris.metrics import (
    DEFAULT_PERCENTILES,
    conditional_rmse,
    conditional_rmse_percentile,
    evaluate_predictions,
    extreme_event_errors,
    percentile_threshold,
    rmse,
)


def naive_rmse(y, p):
    total = 0.0
    for a, b in zip(y, p):
        total += (a - b) ** 2
    return (total / len(y)) ** 0.5


# --------------------------------------------------------------------- rmse


def test_rmse_perfect():
    y = np.array([1.0, -2.0, 3.0])
    assert rmse(y, y) == 0.0


def test_rmse_hand_value():
    assert abs(rmse([0.0, 0.0], [3.0, 4.0]) - 3.53553391) <= 1e-8


def test_rmse_matches_naive_loop():
    rng = np.random.default_rng(1)
    for _ in range(20):
        y = rng.standard_normal(37)
        p = rng.standard_normal(37)
        assert abs(rmse(y, p) - naive_rmse(y, p)) <= 1e-12


def test_rmse_length_mismatch():
    with pytest.raises(LengthMismatch):
        rmse([1.0], [1.0, 2.0])


# -------------------------------------------------------------------- crmse


def test_conditional_hand_subset():
    y = np.array([-10.0, -5.0, 0.0])
    p = np.array([-8.0, -5.0, 1.0])
    value, n = conditional_rmse(y, p, threshold=-5.0)
    assert n == 2
    assert abs(value - 1.41421356) <= 1e-8


def test_conditional_empty_subset():
    value, n = conditional_rmse([1.0, 2.0], [1.0, 2.0], threshold=0.0)
    assert value is None
    assert n == 0


def test_conditional_full_subset_is_rmse():
    rng = np.random.default_rng(2)
    y = rng.standard_normal(50)
    p = rng.standard_normal(50)
    value, n = conditional_rmse(y, p, threshold=np.inf)
    assert n == 50
    assert value == rmse(y, p)


def test_percentile_100_is_rmse():
    rng = np.random.default_rng(3)
    y = rng.standard_normal(40)
    p = rng.standard_normal(40)
    value, n = conditional_rmse_percentile(y, p, 100.0)
    assert n == 40
    assert value == rmse(y, p)


def test_percentile_median_split_symmetric():
    y = np.array([-2.0, -1.0, 1.0, 2.0])
    p = np.zeros(4)
    value, n = conditional_rmse_percentile(y, p, 50.0)
    assert n == 2  # lower half
    assert abs(value - np.sqrt((4.0 + 1.0) / 2)) <= 1e-12


def test_percentile_matches_brute_force_oracle():
    rng = np.random.default_rng(5)
    for _ in range(30):
        n = int(rng.integers(5, 60))
        y = rng.standard_normal(n)
        p = rng.standard_normal(n)
        q = float(rng.uniform(1.0, 100.0))
        # brute force: type-7 interpolation on sorted values, then subset scan
        ys = np.sort(y)
        h = (n - 1) * q / 100.0
        lo = int(np.floor(h))
        frac = h - lo
        t = ys[lo] if lo + 1 >= n else ys[lo] + frac * (ys[lo + 1] - ys[lo])
        subset = [(a, b) for a, b in zip(y, p) if a <= t]
        got_value, got_n = conditional_rmse_percentile(y, p, q)
        assert got_n == len(subset)
        want = naive_rmse([a for a, _ in subset], [b for _, b in subset])
        assert abs(got_value - want) <= 1e-12


def test_percentile_threshold_consistency_exact():
    rng = np.random.default_rng(7)
    y = rng.standard_normal(80)
    p = rng.standard_normal(80)
    for q in DEFAULT_PERCENTILES:
        t = percentile_threshold(y, q)
        assert conditional_rmse_percentile(y, p, q) == conditional_rmse(y, p, t)


def test_nested_thresholds_monotone_counts():
    rng = np.random.default_rng(9)
    y = rng.standard_normal(100)
    p = rng.standard_normal(100)
    counts = [conditional_rmse(y, p, t).n_samples for t in np.linspace(-3, 3, 13)]
    assert counts == sorted(counts)


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(11)
    y = rng.standard_normal(60)
    p = rng.standard_normal(60)
    perm = rng.permutation(60)
    assert rmse(y, p) == rmse(y[perm], p[perm])
    a = conditional_rmse(y, p, -0.5)
    b = conditional_rmse(y[perm], p[perm], -0.5)
    assert a.n_samples == b.n_samples
    assert abs(a.value - b.value) <= 1e-12


# ----------------------------------------------------------------- extremes


def test_extreme_events_single():
    events = extreme_event_errors([-413.0, -100.0], [-412.5, -50.0], n=1)
    assert len(events) == 1
    assert events[0].true_value == -413.0
    assert abs(events[0].absolute_error - 0.5) <= 1e-12


def test_extreme_events_whole_set_sorted():
    y = np.array([3.0, -1.0, 2.0, -5.0])
    p = np.zeros(4)
    events = extreme_event_errors(y, p, n=4)
    assert [e.true_value for e in events] == [-5.0, -1.0, 2.0, 3.0]


def test_extreme_events_tie_keeps_lower_index():
    y = np.array([0.0, -1.0, -1.0, 5.0])
    p = np.array([0.0, 10.0, 20.0, 0.0])
    events = extreme_event_errors(y, p, n=1)
    assert events[0].absolute_error == 11.0  # index 1, not index 2


def test_extreme_events_rejects_overlong_request():
    with pytest.raises(ValueError):
        extreme_event_errors([1.0], [1.0], n=2)


# ------------------------------------------------------------------- report


def test_report_perfect_predictions_all_zero():
    y = np.linspace(-5, 5, 30)
    report = evaluate_predictions(y, y)
    assert report.rmse == 0.0
    for _, v, n in report.crmse_by_threshold:
        assert v == 0.0 or (v is None and n == 0)
    for _, _, v, _ in report.crmse_by_percentile:
        assert v == 0.0
    assert all(e.absolute_error == 0.0 for e in report.extreme_events)


def test_report_default_percentiles():
    y = np.linspace(-5, 5, 200)
    rng = np.random.default_rng(13)
    report = evaluate_predictions(y, y + rng.standard_normal(200))
    assert tuple(q for q, _, _, _ in report.crmse_by_percentile) == DEFAULT_PERCENTILES
    assert len(report.extreme_events) == 10


def test_report_serialization_roundtrip():
    import json

    y = np.linspace(-3, 3, 50)
    rng = np.random.default_rng(15)
    report = evaluate_predictions(y, y + 0.1 * rng.standard_normal(50))
    blob = json.loads(report.to_json())
    assert blob["rmse"] == report.rmse
    assert len(blob["crmse_by_percentile"]) == len(DEFAULT_PERCENTILES)
    rows = report.to_csv_rows()
    assert rows[0][0] == "rmse"
    kinds = {r[0] for r in rows}
    assert {"rmse", "crmse_threshold", "crmse_percentile", "extreme_event"} <= kinds


def test_report_marks_empty_subsets_not_zero():
    y = np.array([1.0, 2.0, 3.0])
    report = evaluate_predictions(y, y, thresholds=[0.0, 2.0])
    t0 = report.crmse_by_threshold[0]
    assert t0[1] is None and t0[2] == 0
    blob = report.to_dict()
    assert blob["crmse_by_threshold"][0]["crmse"] is None
