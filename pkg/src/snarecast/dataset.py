"""Data model, CSV ingestion, normalization and the synthetic generator.

A data point is one grid cell in one patrol season. Labels are tri-state:
1 = poaching sign found, 0 = patrolled with no sign found, -1 = never
patrolled (unlabeled, stored once per grid, season-agnostic with season "").
All features except ``land_type`` live in [0, 1] after normalization.
"""

from __future__ import annotations

import csv
import hashlib
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DuplicationError, SchemaError, ValidationError

FEATURE_NAMES: tuple[str, ...] = (
    "dist_stream",
    "dist_village",
    "dist_patrol_post",
    "dist_river",
    "dist_marsh",
    "dist_village_road",
    "dist_provincial_road",
    "dist_national_road",
    "dist_highway",
    "dist_boundary",
    "land_type",
    "elevation",
    "slope",
    "patrol_length_prev",
)
N_FEATURES = len(FEATURE_NAMES)
LAND_TYPE_COL = FEATURE_NAMES.index("land_type")
NORMALIZED_COLS = tuple(i for i in range(N_FEATURES) if i != LAND_TYPE_COL)

POSITIVE, NEGATIVE, UNLABELED = 1, 0, -1
VALID_LABELS = (POSITIVE, NEGATIVE, UNLABELED)


class DegenerateColumnWarning(UserWarning):
    """A column was constant, so min-max scaling mapped it to 0.0."""


@dataclass(frozen=True)
class DataPoint:
    grid_id: str
    season: str
    features: np.ndarray  # (14,)
    label: int

    def key(self) -> tuple[str, str]:
        return (self.grid_id, self.season)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of data points backed by numpy arrays."""

    X: np.ndarray          # (n, 14) float64
    labels: np.ndarray     # (n,) int8, values in {1, 0, -1}
    grid_ids: np.ndarray   # (n,) str
    seasons: np.ndarray    # (n,) str, "" for unlabeled rows
    feature_names: tuple[str, ...] = FEATURE_NAMES
    provenance: str = ""

    def __post_init__(self):
        for arr in (self.X, self.labels, self.grid_ids, self.seasons):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return self.X.shape[0]

    def __eq__(self, other) -> bool:
        # provenance is excluded: a round trip through CSV preserves content,
        # not the source digest
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.feature_names == other.feature_names
            and self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.grid_ids, other.grid_ids)
            and np.array_equal(self.seasons, other.seasons)
        )

    def counts(self) -> tuple[int, int, int]:
        labels = self.labels
        return (
            int(np.sum(labels == POSITIVE)),
            int(np.sum(labels == NEGATIVE)),
            int(np.sum(labels == UNLABELED)),
        )

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.labels != UNLABELED

    def point(self, i: int) -> DataPoint:
        return DataPoint(
            grid_id=str(self.grid_ids[i]),
            season=str(self.seasons[i]),
            features=self.X[i].copy(),
            label=int(self.labels[i]),
        )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(self.feature_names).encode())
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        h.update("\x00".join(self.grid_ids.tolist()).encode())
        h.update("\x00".join(self.seasons.tolist()).encode())
        return h.hexdigest()

    def unlabeled_pool(self) -> "UnlabeledPool":
        m = self.labels == UNLABELED
        return UnlabeledPool(grid_ids=self.grid_ids[m].copy(), X=self.X[m].copy())


@dataclass(frozen=True)
class UnlabeledPool:
    """The never-patrolled cells, one row per grid."""

    grid_ids: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.grid_ids.setflags(write=False)
        self.X.setflags(write=False)

    def __len__(self) -> int:
        return len(self.grid_ids)


@dataclass(frozen=True)
class NormalizationParams:
    """Per-column min-max scale fitted at training time.

    ``land_type`` is passed through untouched; constant columns scale to 0.0.
    """

    mins: np.ndarray
    maxs: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def apply(self, X: np.ndarray) -> np.ndarray:
        out = np.array(X, dtype=np.float64, copy=True)
        for j in NORMALIZED_COLS:
            span = self.maxs[j] - self.mins[j]
            if span > 0:
                out[:, j] = (out[:, j] - self.mins[j]) / span
            else:
                out[:, j] = 0.0
        return out

    def invert(self, X: np.ndarray) -> np.ndarray:
        out = np.array(X, dtype=np.float64, copy=True)
        for j in NORMALIZED_COLS:
            out[:, j] = out[:, j] * (self.maxs[j] - self.mins[j]) + self.mins[j]
        return out

    def to_dict(self) -> dict:
        return {
            "mins": self.mins.tolist(),
            "maxs": self.maxs.tolist(),
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        return cls(
            mins=np.asarray(d["mins"], dtype=np.float64),
            maxs=np.asarray(d["maxs"], dtype=np.float64),
            feature_names=tuple(d["feature_names"]),
        )


def _validate_arrays(X, labels, grid_ids, seasons, check_range=True):
    n = X.shape[0]
    if X.shape != (n, N_FEATURES):
        raise ValidationError(f"feature matrix must be (n, {N_FEATURES}), got {X.shape}")
    bad_label = ~np.isin(labels, VALID_LABELS)
    if bad_label.any():
        i = int(np.argmax(bad_label))
        raise ValidationError(f"row {i}: label {labels[i]} not in {{1, 0, -1}}")
    if not np.isfinite(X).all():
        i = int(np.argmax(~np.isfinite(X).all(axis=1)))
        raise ValidationError(f"row {i}: non-finite feature value")
    if check_range:
        for j in NORMALIZED_COLS:
            out = (X[:, j] < 0.0) | (X[:, j] > 1.0)
            if out.any():
                i = int(np.argmax(out))
                raise ValidationError(
                    f"row {i}: {FEATURE_NAMES[j]} = {X[i, j]} outside [0, 1]"
                )
    labeled = labels != UNLABELED
    keys = [
        (g, s) for g, s in zip(grid_ids[labeled].tolist(), seasons[labeled].tolist())
    ]
    if len(keys) != len(set(keys)):
        seen = set()
        for g, s in keys:
            if (g, s) in seen:
                raise DuplicationError(f"duplicate labeled point (grid {g}, season {s})")
            seen.add((g, s))
    unl = grid_ids[~labeled].tolist()
    if len(unl) != len(set(unl)):
        seen = set()
        for g in unl:
            if g in seen:
                raise DuplicationError(f"unlabeled grid {g} appears more than once")
            seen.add(g)


def make_dataset(X, labels, grid_ids, seasons, provenance="", validate=True,
                 check_range=True) -> Dataset:
    X = np.ascontiguousarray(X, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int8)
    grid_ids = np.asarray(grid_ids, dtype=object)
    seasons = np.asarray(seasons, dtype=object)
    if validate:
        _validate_arrays(X, labels, grid_ids, seasons, check_range=check_range)
    return Dataset(X=X, labels=labels, grid_ids=grid_ids, seasons=seasons,
                   provenance=provenance)


# ---------------------------------------------------------------------------
# CSV ingestion / emission
#
# Format: header row; columns grid_id, season, the 14 feature columns in
# FEATURE_NAMES order, label (1/0/-1). UTF-8, comma separated, '.' decimal.
# ---------------------------------------------------------------------------

def ingest_csv(path, schema: dict[str, str] | None = None,
               require_normalized: bool = True) -> Dataset:
    """Read and validate a dataset CSV.

    ``schema`` maps canonical column names to the file's column names when
    they differ. Non-land-type features outside [0, 1] are rejected unless
    ``require_normalized`` is False (raw data headed for ``normalize``).
    """
    canonical = ["grid_id", "season", *FEATURE_NAMES, "label"]
    schema = schema or {}
    wanted = {name: schema.get(name, name) for name in canonical}

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        col_idx = {}
        for name, file_col in wanted.items():
            if file_col not in header:
                raise SchemaError(f"{path}: missing column '{file_col}'")
            col_idx[name] = header.index(file_col)

        grid_ids, seasons, rows, labels = [], [], [], []
        for i, row in enumerate(reader):
            try:
                grid_ids.append(row[col_idx["grid_id"]])
                seasons.append(row[col_idx["season"]])
                feats = [float(row[col_idx[f]]) for f in FEATURE_NAMES]
                raw_label = row[col_idx["label"]]
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"row {i}: {exc}") from None
            rows.append(feats)
            try:
                labels.append(int(raw_label))
            except ValueError:
                raise ValidationError(f"row {i}: label '{raw_label}' is not an integer") from None

    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), N_FEATURES)
    labels = np.asarray(labels, dtype=np.int8)
    grid_arr = np.asarray(grid_ids, dtype=object)
    season_arr = np.asarray(seasons, dtype=object)
    _validate_arrays(X, labels, grid_arr, season_arr, check_range=require_normalized)

    with open(path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    return Dataset(X=X, labels=labels, grid_ids=grid_arr, seasons=season_arr,
                   provenance=f"sha256:{digest}")


def emit_csv(d: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["grid_id", "season", *d.feature_names, "label"])
        for i in range(len(d)):
            feats = [repr(float(v)) for v in d.X[i]]
            writer.writerow([d.grid_ids[i], d.seasons[i], *feats, int(d.labels[i])])


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def normalize(raw: Dataset) -> tuple[Dataset, NormalizationParams]:
    """Min-max rescale every non-land-type column to [0, 1].

    Constant columns map to 0.0 with a DegenerateColumnWarning. The fitted
    parameters must be kept with any model trained on the result so that
    prediction-time inputs use the training-time scale.
    """
    if not np.isfinite(raw.X).all():
        raise ValidationError("raw features must be finite")
    mins = np.full(N_FEATURES, np.nan)
    maxs = np.full(N_FEATURES, np.nan)
    X = raw.X.copy()
    for j in NORMALIZED_COLS:
        lo = float(X[:, j].min())
        hi = float(X[:, j].max())
        mins[j], maxs[j] = lo, hi
        if hi > lo:
            X[:, j] = (X[:, j] - lo) / (hi - lo)
        else:
            warnings.warn(
                f"column {FEATURE_NAMES[j]} is constant ({lo}); mapped to 0.0",
                DegenerateColumnWarning,
                stacklevel=2,
            )
            X[:, j] = 0.0
    params = NormalizationParams(mins=mins, maxs=maxs, feature_names=raw.feature_names)
    scaled = Dataset(
        X=X,
        labels=raw.labels.copy(),
        grid_ids=raw.grid_ids.copy(),
        seasons=raw.seasons.copy(),
        feature_names=raw.feature_names,
        provenance=raw.provenance,
    )
    return scaled, params


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

# hidden logistic threat rule: weights over the features the pruned expert
# ranges cover, so range-based sampling experiments have detectable signal
THREAT_WEIGHTS: dict[str, float] = {
    "dist_village": 3.0,
    "dist_patrol_post": 3.0,
    "elevation": 2.0,
    "slope": 2.0,
}


@dataclass(frozen=True)
class SyntheticConfig:
    positives_per_season: int = 30
    negatives_per_season: int = 9300
    unlabeled_cells: int = 44500
    n_seasons: int = 4
    first_season_year: int = 2014
    land_types: int = 4
    threat_center: float = 0.85
    threat_sharpness: float = 50.0
    patrol_bias: float = 8.0

    @property
    def seasons(self) -> tuple[str, ...]:
        y0 = self.first_season_year
        return tuple(f"{y}-{y + 1}" for y in range(y0, y0 + self.n_seasons))

    @property
    def n_cells(self) -> int:
        return self.positives_per_season + self.negatives_per_season + self.unlabeled_cells

    def validate(self) -> None:
        if self.positives_per_season <= 0:
            raise ConfigError("positives_per_season must be positive")
        if self.negatives_per_season < 0 or self.unlabeled_cells < 0:
            raise ConfigError("negative cell counts are infeasible")
        if self.n_seasons <= 0:
            raise ConfigError("n_seasons must be positive")
        if self.positives_per_season > self.n_cells:
            raise ConfigError("more positives requested than grid cells")
        if self.land_types < 1:
            raise ConfigError("land_types must be at least 1")


@dataclass(frozen=True)
class GroundTruth:
    """Planting record of the synthetic generator, for oracle evaluation."""

    grid_ids: np.ndarray          # (n_cells,)
    threat: np.ndarray            # (n_cells,) logistic threat in (0, 1)
    seasons: tuple[str, ...]
    occurred: np.ndarray          # (n_cells, n_seasons) bool

    def cell_threat(self) -> dict[str, float]:
        return {g: float(t) for g, t in zip(self.grid_ids.tolist(), self.threat)}

    def occurrence_rate(self) -> dict[str, float]:
        rate = self.occurred.mean(axis=1)
        return {g: float(r) for g, r in zip(self.grid_ids.tolist(), rate)}

    def true_label(self, grid_id: str, season: str) -> int:
        i = int(np.nonzero(self.grid_ids == grid_id)[0][0])
        j = self.seasons.index(season)
        return int(self.occurred[i, j])


def emit_ground_truth_csv(gt: GroundTruth, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["grid_id", "season", "true_label"])
        for j, season in enumerate(gt.seasons):
            for i, g in enumerate(gt.grid_ids.tolist()):
                writer.writerow([g, season, int(gt.occurred[i, j])])


def read_ground_truth_rates(path) -> dict[str, float]:
    """Per-grid mean true_label from a ground-truth sidecar CSV."""
    totals: dict[str, list[int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for name in ("grid_id", "season", "true_label"):
            if name not in (reader.fieldnames or []):
                raise SchemaError(f"{path}: missing column '{name}'")
        for row in reader:
            acc = totals.setdefault(row["grid_id"], [0, 0])
            acc[0] += int(row["true_label"])
            acc[1] += 1
    return {g: s / n for g, (s, n) in totals.items()}


def _weighted_sample_without_replacement(rng, weights: np.ndarray, size: int) -> np.ndarray:
    # Gumbel top-k: equivalent to sequential draws proportional to weights
    keys = np.log(weights) + rng.gumbel(size=weights.shape[0])
    return np.argpartition(-keys, size - 1)[:size] if size else np.empty(0, dtype=np.intp)


def generate_synthetic(config: SyntheticConfig, seed: int) -> tuple[Dataset, GroundTruth]:
    """Build a skew-matched dataset plus the ground truth that planted it.

    Class counts are exact per season. Positives are drawn proportionally to
    a logistic threat over dist_village, dist_patrol_post, elevation and
    slope; patrol coverage is biased toward high-threat cells.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    n_cells = config.n_cells
    n_labeled = config.positives_per_season + config.negatives_per_season

    cols = int(np.ceil(np.sqrt(n_cells)))
    grid_ids = np.asarray(
        [f"r{i // cols:03d}c{i % cols:03d}" for i in range(n_cells)], dtype=object
    )

    X_cell = rng.random((n_cells, N_FEATURES))
    X_cell[:, LAND_TYPE_COL] = rng.integers(1, config.land_types + 1, size=n_cells)
    patrol_col = FEATURE_NAMES.index("patrol_length_prev")
    X_cell[:, patrol_col] = 0.0

    w_total = sum(THREAT_WEIGHTS.values())
    z = np.zeros(n_cells)
    for name, w in THREAT_WEIGHTS.items():
        z += w * X_cell[:, FEATURE_NAMES.index(name)]
    z /= w_total
    threat = 1.0 / (1.0 + np.exp(-config.threat_sharpness * (z - config.threat_center)))

    patrol_w = 1.0 + config.patrol_bias * threat
    patrolled = np.sort(_weighted_sample_without_replacement(rng, patrol_w, n_labeled))
    unpatrolled = np.setdiff1d(np.arange(n_cells), patrolled)

    occurred = np.zeros((n_cells, config.n_seasons), dtype=bool)
    rows_X, rows_label, rows_grid, rows_season = [], [], [], []
    for j, season in enumerate(config.seasons):
        pos_local = _weighted_sample_without_replacement(
            rng, threat[patrolled], config.positives_per_season
        )
        pos_idx = patrolled[np.sort(pos_local)]
        occurred[pos_idx, j] = True
        # plant occurrences in never-patrolled cells at the same per-cell rate
        if len(unpatrolled):
            n_hidden = int(round(config.positives_per_season * len(unpatrolled) / n_labeled))
            n_hidden = min(n_hidden, len(unpatrolled))
            if n_hidden:
                hid_local = _weighted_sample_without_replacement(
                    rng, threat[unpatrolled], n_hidden
                )
                occurred[unpatrolled[np.sort(hid_local)], j] = True

        Xs = X_cell[patrolled].copy()
        Xs[:, patrol_col] = rng.random(n_labeled)
        labels = np.zeros(n_labeled, dtype=np.int8)
        labels[np.isin(patrolled, pos_idx)] = POSITIVE
        rows_X.append(Xs)
        rows_label.append(labels)
        rows_grid.extend(grid_ids[patrolled].tolist())
        rows_season.extend([season] * n_labeled)

    X_unl = X_cell[unpatrolled].copy()
    rows_X.append(X_unl)
    rows_label.append(np.full(len(unpatrolled), UNLABELED, dtype=np.int8))
    rows_grid.extend(grid_ids[unpatrolled].tolist())
    rows_season.extend([""] * len(unpatrolled))

    X = np.vstack(rows_X)
    labels = np.concatenate(rows_label)
    dataset = make_dataset(
        X,
        labels,
        np.asarray(rows_grid, dtype=object),
        np.asarray(rows_season, dtype=object),
        provenance=f"synthetic:seed={seed}",
    )
    gt = GroundTruth(
        grid_ids=grid_ids, threat=threat, seasons=config.seasons, occurred=occurred
    )
    return dataset, gt


# ---------------------------------------------------------------------------
# Skew report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeasonCounts:
    season: str
    positives: int
    negatives: int
    unlabeled: int


def skew_report(d: Dataset) -> list[SeasonCounts]:
    """Class counts per season; unlabeled rows report under season ''."""
    out: dict[str, list[int]] = {}
    for season, label in zip(d.seasons.tolist(), d.labels.tolist()):
        acc = out.setdefault(season, [0, 0, 0])
        if label == POSITIVE:
            acc[0] += 1
        elif label == NEGATIVE:
            acc[1] += 1
        else:
            acc[2] += 1
    return [
        SeasonCounts(season=s, positives=a[0], negatives=a[1], unlabeled=a[2])
        for s, a in sorted(out.items())
    ]


def format_skew_report(rows: list[SeasonCounts]) -> str:
    lines = [f"{'season':<12} {'positives':>9} {'negatives':>9} {'unlabeled':>9}"]
    for r in rows:
        name = r.season or "(never patrolled)"
        lines.append(f"{name:<12} {r.positives:>9} {r.negatives:>9} {r.unlabeled:>9}")
    return "\n".join(lines)
