"""Dataset model, CSV ingestion, windowing, fold construction and synthetic
benchmarks.

The central type is `GroupedDataset`: windowed samples carrying a group id
(one group per storm-like event) and a stable ``original_index`` that
survives pruning, so removal decisions can always be reported against the
source dataset. Windows are built strictly inside groups; fold plans rank
groups by severity (minimum target, most negative first).
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .exceptions import (
    EmptyGroup,
    GroupTooShort,
    InsufficientGroups,
    MissingColumn,
    UnparseableRow,
)
from .validation import readonly


@dataclass(frozen=True)
class Normalization:
    """Feature z-scoring and target centering statistics.

    Computed from training folds only; stored so reported quantities can be
    mapped back to physical units. Features with zero spread keep a unit
    scale.
    """

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float

    def normalize_inputs(self, x):
        return (x - self.x_mean) / self.x_std

    def denormalize_inputs(self, x):
        return x * self.x_std + self.x_mean

    def normalize_targets(self, y):
        return y - self.y_mean

    def denormalize_targets(self, y):
        return y + self.y_mean


@dataclass(frozen=True)
class GroupedDataset:
    """Samples with inputs, targets, per-sample group ids and stable ids.

    ``original_indices`` are unique and preserved by every subsetting
    operation; ``normalization`` records the statistics applied to this
    view's values (None means physical units).
    """

    inputs: np.ndarray  # (n, d)
    targets: np.ndarray  # (n,)
    group_ids: np.ndarray  # (n,)
    original_indices: np.ndarray  # (n,) unique int64
    normalization: Normalization | None = None

    def __post_init__(self):
        # private copies so marking them read-only cannot alias caller arrays
        inputs = readonly(np.array(self.inputs, dtype=np.float64, order="C"))
        targets = readonly(np.array(self.targets, dtype=np.float64))
        groups = readonly(np.array(self.group_ids))
        idx = readonly(np.array(self.original_indices, dtype=np.int64))
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "group_ids", groups)
        object.__setattr__(self, "original_indices", idx)
        n = inputs.shape[0]
        if inputs.ndim != 2:
            raise ValueError("inputs must be 2-D")
        if targets.shape != (n,) or groups.shape != (n,) or idx.shape != (n,):
            raise ValueError("inputs, targets, group_ids, original_indices disagree on length")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(targets))):
            raise ValueError("dataset contains NaN or Inf")
        if np.unique(idx).size != n:
            raise ValueError("original_indices must be unique")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_features(self):
        return self.inputs.shape[1]

    def unique_groups(self):
        """Group ids in order of first appearance."""
        _, first = np.unique(self.group_ids, return_index=True)
        return self.group_ids[np.sort(first)]

    def select(self, positions):
        """Row subset by positional index or boolean mask; ids preserved."""
        positions = np.asarray(positions)
        return replace(
            self,
            inputs=self.inputs[positions],
            targets=self.targets[positions],
            group_ids=self.group_ids[positions],
            original_indices=self.original_indices[positions],
        )

    def select_groups(self, group_ids):
        wanted = set(np.asarray(group_ids).tolist())
        mask = np.array([g in wanted for g in self.group_ids.tolist()])
        return self.select(mask)

    def drop_original_ids(self, ids):
        """Remove the rows whose stable ids appear in ``ids``."""
        dropped = set(int(i) for i in np.asarray(ids).ravel())
        mask = np.array([int(i) not in dropped for i in self.original_indices])
        return self.select(mask)

    def to_frame(self):
        """Canonical tabular view (one row per sample)."""
        cols = {
            "original_index": self.original_indices,
            "group_id": self.group_ids,
            "target": self.targets,
        }
        for j in range(self.n_features):
            cols[f"f{j}"] = self.inputs[:, j]
        return pd.DataFrame(cols)

    def save_csv(self, path):
        """Dump to CSV with full float precision (round-trip exact)."""
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def load_dataset_csv(path):
    """Load a dump written by `GroupedDataset.save_csv`."""
    frame = pd.read_csv(path, float_precision="round_trip")
    feature_cols = [c for c in frame.columns if c.startswith("f") and c[1:].isdigit()]
    feature_cols.sort(key=lambda c: int(c[1:]))
    if not feature_cols or "target" not in frame.columns:
        raise MissingColumn(f"{path} is not a dataset dump")
    return GroupedDataset(
        inputs=frame[feature_cols].to_numpy(dtype=np.float64),
        targets=frame["target"].to_numpy(dtype=np.float64),
        group_ids=frame["group_id"].to_numpy(),
        original_indices=frame["original_index"].to_numpy(dtype=np.int64),
    )


def fit_normalization(dataset):
    """Z-score statistics for inputs and the target mean, from one dataset."""
    x_std = dataset.inputs.std(axis=0)
    x_std = np.where(x_std < 1e-12, 1.0, x_std)
    return Normalization(
        x_mean=readonly(dataset.inputs.mean(axis=0)),
        x_std=readonly(x_std),
        y_mean=float(dataset.targets.mean()),
    )


def apply_normalization(dataset, norm):
    return replace(
        dataset,
        inputs=norm.normalize_inputs(dataset.inputs),
        targets=norm.normalize_targets(dataset.targets),
        normalization=norm,
    )


# -------------------------------------------------------------------- series


@dataclass(frozen=True)
class GroupedTimeSeries:
    """Per-group feature/target series produced by ingestion.

    ``groups`` maps group id -> (features (T, k), targets (T,)) in file
    order; counters record rows dropped during parsing and filtering.
    """

    groups: dict
    feature_names: tuple
    dropped_unparseable: int = 0
    dropped_missing: int = 0


@dataclass(frozen=True)
class CsvSchema:
    """Column-role declaration for ingestion.

    ``sentinel_limits`` maps a column name to the magnitude at or above
    which a value counts as a fill/sentinel and the row is dropped.
    ``delimiter`` defaults to comma; pass a tab for TSV inputs.
    """

    group_column: str
    target_column: str
    feature_columns: tuple
    sentinel_limits: dict = field(default_factory=dict)
    delimiter: str = ","


def ingest_csv(path, schema, strict=False):
    """Read a delimited file into per-group time series.

    Rows with unparseable numerics are skipped and counted (raised as
    `UnparseableRow` with their line number when ``strict``); rows with
    missing values or sentinel fills are dropped and counted. Row order
    within a group is preserved.

    Raises
    ------
    MissingColumn
        A declared column is absent.
    EmptyGroup
        The file has no usable rows.
    """
    frame = pd.read_csv(path, dtype=str, skipinitialspace=True, sep=schema.delimiter)
    needed = [schema.group_column, schema.target_column, *schema.feature_columns]
    for col in needed:
        if col not in frame.columns:
            raise MissingColumn(f"column {col!r} not found in {path}")
    if len(frame) == 0:
        raise EmptyGroup(f"{path} contains no data rows")

    numeric_cols = [schema.target_column, *schema.feature_columns]
    values = {}
    unparseable = np.zeros(len(frame), dtype=bool)
    for col in numeric_cols:
        raw = frame[col]
        parsed = pd.to_numeric(raw, errors="coerce")
        bad = parsed.isna() & raw.notna() & (raw.str.strip() != "")
        unparseable |= bad.to_numpy()
        values[col] = parsed.to_numpy(dtype=np.float64)

    if strict and unparseable.any():
        line = int(np.flatnonzero(unparseable)[0]) + 2  # 1-based, after header
        raise UnparseableRow(f"unparseable value at line {line} of {path}", line_number=line)

    missing = np.zeros(len(frame), dtype=bool)
    for col in numeric_cols:
        missing |= np.isnan(values[col])
        limit = schema.sentinel_limits.get(col)
        if limit is not None:
            with np.errstate(invalid="ignore"):
                missing |= np.abs(values[col]) >= limit
    missing &= ~unparseable

    keep = ~(unparseable | missing)
    if not keep.any():
        raise EmptyGroup(f"no usable rows remain in {path}")

    group_labels = frame[schema.group_column].to_numpy()
    features = np.column_stack([values[c] for c in schema.feature_columns])
    targets = values[schema.target_column]

    groups = {}
    for gid in pd.unique(group_labels[keep]):
        sel = keep & (group_labels == gid)
        groups[gid] = (features[sel], targets[sel])

    return GroupedTimeSeries(
        groups=groups,
        feature_names=tuple(schema.feature_columns),
        dropped_unparseable=int(unparseable.sum()),
        dropped_missing=int(missing.sum()),
    )


# ------------------------------------------------------------------- windows


@dataclass(frozen=True)
class WindowSpec:
    """Time-history windowing: how many past steps feed each sample.

    A sample at time t concatenates the feature rows over
    ``[t - history_len + 1, ..., t]`` (oldest first) and predicts the target
    at ``t + horizon``. Windows never span group boundaries.
    """

    history_len: int = 6
    horizon: int = 1
    feature_names: tuple = ()

    def __post_init__(self):
        if self.history_len < 1:
            raise ValueError("history_len must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def make_windows(series, spec):
    """Slice grouped time series into supervised samples.

    Each group of length T yields ``T - history_len - horizon + 1`` windows;
    groups too short for a single window are skipped with a warning.
    Stable original indices are assigned consecutively in group order.
    """
    all_inputs = []
    all_targets = []
    all_groups = []
    for gid, (features, targets) in series.groups.items():
        t_len = features.shape[0]
        n_windows = t_len - spec.history_len - spec.horizon + 1
        if n_windows < 1:
            warnings.warn(
                f"group {gid!r} has {t_len} rows, too short for "
                f"history {spec.history_len} + horizon {spec.horizon}; skipped",
                stacklevel=2,
            )
            continue
        for t in range(spec.history_len - 1, t_len - spec.horizon):
            window = features[t - spec.history_len + 1 : t + 1]
            all_inputs.append(window.reshape(-1))
            all_targets.append(targets[t + spec.horizon])
            all_groups.append(gid)
    if not all_inputs:
        raise GroupTooShort("no group is long enough to produce a window")
    n = len(all_inputs)
    return GroupedDataset(
        inputs=np.vstack(all_inputs),
        targets=np.asarray(all_targets, dtype=np.float64),
        group_ids=np.asarray(all_groups),
        original_indices=np.arange(n, dtype=np.int64),
    )


# --------------------------------------------------------------------- folds


@dataclass(frozen=True)
class FoldPlan:
    """One cross-validation fold over whole groups.

    ``test_group`` is held out entirely; ``val_groups`` steer pruning and
    early stopping; ``train_groups`` form the initial training set. The
    three sets partition the dataset's groups.
    """

    test_group: object
    val_groups: tuple
    train_groups: tuple


def rank_groups_by_severity(dataset):
    """Group ids ordered most-severe first (smallest minimum target).

    Severity ties are broken by ascending group id.
    """
    frame = pd.DataFrame({"g": dataset.group_ids, "y": dataset.targets})
    severity = frame.groupby("g")["y"].min()
    order = sorted(severity.index.tolist(), key=lambda g: (severity[g], g))
    return order


def build_fold_plans(dataset, n_test_groups, n_val_groups):
    """Leave-one-group-out plans over the most severe groups.

    Groups are ranked by severity; each of the top ``n_test_groups`` becomes
    the test set of one plan, with the ``n_val_groups`` most severe of the
    remaining groups as validation and everything else as training.

    Raises
    ------
    InsufficientGroups
        Fewer groups than one test + ``n_val_groups`` + one train group.
    """
    order = rank_groups_by_severity(dataset)
    if len(order) < n_val_groups + 2 or len(order) < n_test_groups:
        raise InsufficientGroups(
            f"have {len(order)} groups, need at least "
            f"max(n_test_groups, n_val_groups + 2) = "
            f"{max(n_test_groups, n_val_groups + 2)}"
        )
    plans = []
    for test in order[:n_test_groups]:
        rest = [g for g in order if g != test]
        val = tuple(rest[:n_val_groups])
        train = tuple(rest[n_val_groups:])
        plans.append(FoldPlan(test_group=test, val_groups=val, train_groups=train))
    return plans


def split_dataset_by_plan(dataset, plan):
    """Materialize (train, val, test) subsets for one fold plan."""
    return (
        dataset.select_groups(plan.train_groups),
        dataset.select_groups(plan.val_groups),
        dataset.select_groups([plan.test_group]),
    )


def severity_interleaved_split(dataset, val_fraction=0.2, offset=1):
    """Train/validation split with validation groups spread across severity.

    Groups are ranked most-severe first and every k-th one (k chosen from
    ``val_fraction``) goes to validation, starting at ``offset`` so the
    single most severe group stays in training by default.
    """
    order = rank_groups_by_severity(dataset)
    k = max(2, int(round(1.0 / val_fraction)))
    val_groups = order[offset::k]
    if not val_groups or len(val_groups) == len(order):
        raise InsufficientGroups("val_fraction leaves no groups for one of the sides")
    train_groups = [g for g in order if g not in set(val_groups)]
    return dataset.select_groups(train_groups), dataset.select_groups(val_groups)


# ----------------------------------------------------------------- synthetic


def corrupt_majority_labels(
    dataset,
    fraction,
    rng,
    shift_exponent=2.5,
    shift_scale=(1.0, 3.0),
    majority_quantile=0.3,
):
    """Inflate the labels of a random fraction of majority samples.

    Majority means the least severe ``1 - majority_quantile`` share of the
    targets. Shifts are heavy-tailed positive values, so corrupted samples
    drag a fitted model toward the calm side, the failure mode that
    severity-guided pruning is meant to detect. Returns the corrupted
    dataset and the stable ids of the altered samples. Keep evaluation
    splits clean: corrupt only training-side data.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must be in [0, 1)")
    if fraction == 0.0:
        return dataset, np.array([], dtype=np.int64)
    targets = dataset.targets.copy()
    majority = np.flatnonzero(targets >= np.quantile(targets, majority_quantile))
    n_corrupt = int(round(fraction * majority.size))
    if n_corrupt == 0:
        return dataset, np.array([], dtype=np.int64)
    chosen = rng.choice(majority, size=n_corrupt, replace=False)
    shift = (1.0 + rng.pareto(shift_exponent, size=n_corrupt)) * rng.uniform(
        shift_scale[0], shift_scale[1], size=n_corrupt
    )
    targets[chosen] = targets[chosen] + shift
    corrupted = replace(dataset, targets=targets)
    return corrupted, np.sort(dataset.original_indices[chosen])


def generate_synthetic_longtail(
    seed,
    n,
    tail_exponent=2.0,
    noise_sd=0.05,
    corrupt_fraction=0.0,
    n_groups=None,
    n_nuisance=2,
):
    """Seeded long-tail regression benchmark with grouped "events".

    Each group draws a Pareto-distributed amplitude and traces a smooth
    bump; the target is a nonlinear, deterministic function of the inputs
    (severity driver, shape modifiers, phase) plus Gaussian noise, so with
    ``noise_sd=0`` an interpolating model can reach zero error. Large
    ``tail_exponent`` shrinks the amplitude tail toward a light-tailed
    baseline.

    ``corrupt_fraction`` of the majority samples (the least severe 70%) get
    their labels inflated by heavy-tailed positive shifts. Such samples push
    a fitted model toward the calm majority and away from severe events,
    which is precisely the failure mode severity-guided pruning should
    detect and remove.
    """
    if n < 100:
        raise ValueError("n must be >= 100")
    if not 0.0 <= corrupt_fraction < 1.0:
        raise ValueError("corrupt_fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    if n_groups is None:
        n_groups = max(8, n // 50)
    sizes = np.full(n_groups, n // n_groups, dtype=int)
    sizes[: n % n_groups] += 1

    rows_x = []
    rows_y = []
    rows_g = []
    for g in range(n_groups):
        m = int(sizes[g])
        amplitude = 1.0 + rng.pareto(tail_exponent)
        center = rng.uniform(0.3, 0.7)
        width = rng.uniform(0.08, 0.2)
        t = np.linspace(0.0, 1.0, m)
        driver = amplitude * np.exp(-((t - center) ** 2) / (2.0 * width**2))
        shape = rng.standard_normal((m, 2))
        nuisance = rng.standard_normal((m, n_nuisance))
        x = np.column_stack([driver, shape, t, nuisance])
        # response grows super-linearly in the driver, so extremes are
        # systematically under-fit by a majority-dominated squared loss
        y = (
            -(driver**1.5) * (1.0 + 0.3 * np.tanh(shape[:, 0]))
            + 0.5 * np.sin(np.pi * shape[:, 1])
        )
        rows_x.append(x)
        rows_y.append(y)
        rows_g.append(np.full(m, g, dtype=np.int64))

    inputs = np.vstack(rows_x)
    targets = np.concatenate(rows_y)
    groups = np.concatenate(rows_g)

    if noise_sd > 0:
        targets = targets + noise_sd * rng.standard_normal(n)

    dataset = GroupedDataset(
        inputs=inputs,
        targets=targets,
        group_ids=groups,
        original_indices=np.arange(n, dtype=np.int64),
    )
    if corrupt_fraction > 0:
        dataset, _ = corrupt_majority_labels(dataset, corrupt_fraction, rng)
    return dataset
