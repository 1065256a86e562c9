"""Run configuration: schema, parsing, seed derivation and manifests.

A run is described by one YAML (or JSON) file with the following tree; every
key is optional unless marked required, and unknown keys are rejected at
every level:

    seed: 0                    # global seed, root of all randomness
    output_dir: runs/out       # overridable by --output-dir / PARIS_OUTPUT_DIR
    jobs: 1                    # fold-level parallelism bound
    ensemble_members: 1        # models per evaluation ensemble
    data:
      source: synthetic        # or csv
      synthetic:
        n: 2000
        n_groups: null         # default n // 50
        tail_exponent: 2.0
        noise_sd: 0.05
        corrupt_fraction: 0.0
      csv:
        path: data.csv         # required for csv source
        group_column: storm    # required
        target_column: dst     # required
        feature_columns: [bx, by, bz]   # required, non-empty
        sentinel_limits: {bx: 999.0}    # |value| >= limit drops the row
    window:                    # applied to csv sources only
      history_len: 6
      horizon: 1
    folds:
      n_test_groups: 1
      n_val_groups: 3
    mlp:
      hidden_sizes: [100, 100, 50]
      learning_rate: 0.001
      batch_size: 256
      max_epochs: 500
      patience: 20
    prune:
      prune_fraction_per_cycle: 0.25
      total_prune_fraction: 0.75
      lambda_policy: auto      # or fixed (then fixed_lambda required)
      fixed_lambda: null
      positive_delta_policy: prune_anyway   # or stop_cycle
    evaluation:
      percentiles: [1, 2, 5, 10, 20, 50]
      n_extreme: 10
      n_threshold_points: 21

All component randomness is derived from the global seed with
`derive_seed(seed, *tags)` (tags such as ``fold3`` / ``mlp`` /
``random_prune``), so any single component can be reproduced in isolation.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field

import yaml

from .exceptions import ConfigError


def _take(mapping, allowed, context):
    if mapping is None:
        return {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"{context}: expected a mapping, got {type(mapping).__name__}")
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"{context}: unknown key(s) {sorted(unknown)}")
    return mapping


@dataclass(frozen=True)
class SyntheticSource:
    n: int = 2000
    n_groups: int | None = None
    tail_exponent: float = 2.0
    noise_sd: float = 0.05
    corrupt_fraction: float = 0.0

    @classmethod
    def from_dict(cls, d):
        d = _take(d, cls.__dataclass_fields__, "data.synthetic")
        return cls(**d)


@dataclass(frozen=True)
class CsvSource:
    path: str = ""
    group_column: str = ""
    target_column: str = ""
    feature_columns: tuple = ()
    sentinel_limits: dict = field(default_factory=dict)
    delimiter: str = ","

    @classmethod
    def from_dict(cls, d):
        d = dict(_take(d, cls.__dataclass_fields__, "data.csv"))
        if "feature_columns" in d:
            d["feature_columns"] = tuple(d["feature_columns"])
        return cls(**d)

    def validate(self):
        if not self.path:
            raise ConfigError("data.csv.path is required for csv sources")
        for key in ("group_column", "target_column"):
            if not getattr(self, key):
                raise ConfigError(f"data.csv.{key} is required for csv sources")
        if not self.feature_columns:
            raise ConfigError("data.csv.feature_columns must be non-empty")


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"
    synthetic: SyntheticSource = field(default_factory=SyntheticSource)
    csv: CsvSource = field(default_factory=CsvSource)

    @classmethod
    def from_dict(cls, d):
        d = _take(d, cls.__dataclass_fields__, "data")
        source = d.get("source", "synthetic")
        if source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be synthetic or csv, got {source!r}")
        section = cls(
            source=source,
            synthetic=SyntheticSource.from_dict(d.get("synthetic")),
            csv=CsvSource.from_dict(d.get("csv")),
        )
        if source == "csv":
            section.csv.validate()
        return section


@dataclass(frozen=True)
class WindowSection:
    history_len: int = 6
    horizon: int = 1

    @classmethod
    def from_dict(cls, d):
        return cls(**_take(d, cls.__dataclass_fields__, "window"))


@dataclass(frozen=True)
class FoldSection:
    n_test_groups: int = 1
    n_val_groups: int = 3

    @classmethod
    def from_dict(cls, d):
        return cls(**_take(d, cls.__dataclass_fields__, "folds"))


@dataclass(frozen=True)
class MlpSection:
    hidden_sizes: tuple = (100, 100, 50)
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 500
    patience: int = 20

    @classmethod
    def from_dict(cls, d):
        d = dict(_take(d, cls.__dataclass_fields__, "mlp"))
        if "hidden_sizes" in d:
            d["hidden_sizes"] = tuple(int(h) for h in d["hidden_sizes"])
        section = cls(**d)
        from .mlp import MlpConfig

        try:  # fail before any compute, with the trainer's own rules
            MlpConfig(**{**d, "hidden_sizes": section.hidden_sizes, "seed": 0})
        except ValueError as exc:
            raise ConfigError(f"mlp: {exc}") from exc
        return section


@dataclass(frozen=True)
class PruneSection:
    prune_fraction_per_cycle: float = 0.25
    total_prune_fraction: float = 0.75
    lambda_policy: str = "auto"
    fixed_lambda: float | None = None
    positive_delta_policy: str = "prune_anyway"

    @classmethod
    def from_dict(cls, d):
        d = _take(d, cls.__dataclass_fields__, "prune")
        section = cls(**d)
        from .pruning import PruneConfig

        try:  # surface budget/policy violations at parse time
            PruneConfig(**asdict(section))
        except ValueError as exc:
            raise ConfigError(f"prune: {exc}") from exc
        return section


@dataclass(frozen=True)
class EvaluationSection:
    percentiles: tuple = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)
    n_extreme: int = 10
    n_threshold_points: int = 21

    @classmethod
    def from_dict(cls, d):
        d = dict(_take(d, cls.__dataclass_fields__, "evaluation"))
        if "percentiles" in d:
            d["percentiles"] = tuple(float(q) for q in d["percentiles"])
        return cls(**d)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/out"
    jobs: int = 1
    ensemble_members: int = 1
    data: DataSection = field(default_factory=DataSection)
    window: WindowSection = field(default_factory=WindowSection)
    folds: FoldSection = field(default_factory=FoldSection)
    mlp: MlpSection = field(default_factory=MlpSection)
    prune: PruneSection = field(default_factory=PruneSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    @classmethod
    def from_dict(cls, d):
        d = _take(d, cls.__dataclass_fields__, "config")
        try:
            return cls(
                seed=int(d.get("seed", 0)),
                output_dir=str(d.get("output_dir", "runs/out")),
                jobs=int(d.get("jobs", 1)),
                ensemble_members=int(d.get("ensemble_members", 1)),
                data=DataSection.from_dict(d.get("data")),
                window=WindowSection.from_dict(d.get("window")),
                folds=FoldSection.from_dict(d.get("folds")),
                mlp=MlpSection.from_dict(d.get("mlp")),
                prune=PruneSection.from_dict(d.get("prune")),
                evaluation=EvaluationSection.from_dict(d.get("evaluation")),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        """Canonical plain-dict form (tuples as lists, stable key order)."""
        return json.loads(json.dumps(asdict(self)))


def parse_config(path):
    """Load and validate a YAML/JSON run configuration file."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return RunConfig.from_dict(raw)


def config_hash(config):
    """Stable hash of the canonical configuration."""
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def derive_seed(base_seed, *tags):
    """Deterministic per-component seed from the global one.

    Hashes ``base_seed`` together with the component tags (e.g.
    ``derive_seed(seed, "fold3", "mlp")``) into a 32-bit integer.
    """
    text = f"{int(base_seed)}/" + "/".join(str(t) for t in tags)
    digest = hashlib.sha256(text.encode()).hexdigest()
    return int(digest[:8], 16)


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(config, artifact_paths, base_dir):
    """Manifest payload: config (and its hash), seed, artifact checksums."""
    artifacts = {}
    for p in sorted(artifact_paths):
        rel = str(p.relative_to(base_dir)) if hasattr(p, "relative_to") else str(p)
        artifacts[rel] = file_sha256(p)
    return {
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "seed": config.seed,
        "artifacts": artifacts,
    }
