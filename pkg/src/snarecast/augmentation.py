"""Training-set transformations: DD, SMOTE, NS, PS and PSFR.

Every step is pure given (input view, seed), never mutates the base dataset,
and tags what it added so a training view can always be audited back to its
origins. Steps that draw from the unlabeled pool never add a cell twice and
never add a cell that is already labeled.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    FEATURE_NAMES,
    LAND_TYPE_COL,
    NEGATIVE,
    NORMALIZED_COLS,
    POSITIVE,
    DataPoint,
    Dataset,
    UnlabeledPool,
)
from .elicitation import AggregatedScoreMap
from .errors import (
    AugmentationError,
    ConfigError,
    CoverageError,
    ParameterError,
    ValidationError,
)

PATROL_COL = FEATURE_NAMES.index("patrol_length_prev")

# full-scale PSFR selection keeps 1000 cells out of a ~44.5k pool
PSFR_TOP_RATIO = 1000 / 44493


# ---------------------------------------------------------------------------
# Training view
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AddedBlock:
    tag: str                 # DD | SMOTE | NS | PS | PSFR
    X: np.ndarray
    y: np.ndarray            # {1, 0}
    grid_ids: np.ndarray
    seasons: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class TrainingView:
    """Labeled slice of a base dataset plus augmentation blocks."""

    base: Dataset
    base_indices: np.ndarray                 # rows of base included (labeled)
    blocks: tuple[AddedBlock, ...] = ()

    @classmethod
    def from_dataset(cls, d: Dataset, indices=None) -> "TrainingView":
        if indices is None:
            indices = np.nonzero(d.labeled_mask)[0]
        else:
            indices = np.asarray(indices, dtype=np.intp)
        return cls(base=d, base_indices=indices)

    def with_block(self, block: AddedBlock) -> "TrainingView":
        return TrainingView(base=self.base, base_indices=self.base_indices,
                            blocks=(*self.blocks, block))

    def features(self) -> np.ndarray:
        parts = [self.base.X[self.base_indices]]
        parts += [b.X for b in self.blocks]
        return np.vstack(parts) if len(parts) > 1 else parts[0].copy()

    def labels(self) -> np.ndarray:
        parts = [self.base.labels[self.base_indices].astype(np.int64)]
        parts += [b.y.astype(np.int64) for b in self.blocks]
        return np.concatenate(parts) if len(parts) > 1 else parts[0]

    def grid_ids(self) -> np.ndarray:
        parts = [self.base.grid_ids[self.base_indices]]
        parts += [b.grid_ids for b in self.blocks]
        return np.concatenate(parts) if len(parts) > 1 else parts[0].copy()

    def seasons(self) -> np.ndarray:
        parts = [self.base.seasons[self.base_indices]]
        parts += [b.seasons for b in self.blocks]
        return np.concatenate(parts) if len(parts) > 1 else parts[0].copy()

    def keys(self) -> set[tuple[str, str]]:
        return set(zip(self.grid_ids().tolist(), self.seasons().tolist()))

    def counts(self) -> tuple[int, int]:
        y = self.labels()
        return int(np.sum(y == POSITIVE)), int(np.sum(y == NEGATIVE))

    def added_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for b in self.blocks:
            out[b.tag] = out.get(b.tag, 0) + len(b)
        return out

    def added_grid_set(self) -> set[str]:
        out: set[str] = set()
        for b in self.blocks:
            out.update(b.grid_ids.tolist())
        return out

    def iter_added(self):
        for b in self.blocks:
            for i in range(len(b)):
                yield (
                    DataPoint(
                        grid_id=str(b.grid_ids[i]),
                        season=str(b.seasons[i]),
                        features=b.X[i].copy(),
                        label=int(b.y[i]),
                    ),
                    b.tag,
                )


def _remaining_pool(pool: UnlabeledPool, view: TrainingView) -> np.ndarray:
    """Pool indices not yet consumed by an earlier step."""
    taken = view.added_grid_set()
    if not taken:
        return np.arange(len(pool))
    mask = np.asarray([g not in taken for g in pool.grid_ids.tolist()])
    return np.nonzero(mask)[0]


# ---------------------------------------------------------------------------
# Data Duplication
# ---------------------------------------------------------------------------

def duplicate_positives(view: TrainingView) -> TrainingView:
    """Replicate positives (whole copies, round-robin) until the class
    counts balance exactly. No-op when positives already match or exceed
    negatives."""
    X = view.features()
    y = view.labels()
    pos_idx = np.nonzero(y == POSITIVE)[0]
    n_pos, n_neg = view.counts()
    if n_pos == 0:
        raise AugmentationError(
            "no positive examples to duplicate; the model would be degenerate"
        )
    deficit = n_neg - n_pos
    if deficit <= 0:
        return view
    take = np.tile(pos_idx, deficit // n_pos + 1)[:deficit]
    grid_ids = view.grid_ids()
    seasons = view.seasons()
    block = AddedBlock(
        tag="DD",
        X=X[take].copy(),
        y=np.ones(deficit, dtype=np.int8),
        grid_ids=grid_ids[take].copy(),
        seasons=seasons[take].copy(),
    )
    return view.with_block(block)


# ---------------------------------------------------------------------------
# SMOTE
# ---------------------------------------------------------------------------

def interpolate_point(x_i: np.ndarray, x_j: np.ndarray, u: float) -> np.ndarray:
    """x_i + u * (x_j - x_i) on the continuous columns; land_type from x_i."""
    out = x_i + u * (x_j - x_i)
    out[LAND_TYPE_COL] = x_i[LAND_TYPE_COL]
    return out


def smote(view: TrainingView, k_neighbors: int, amount: int | None,
          seed: int) -> TrainingView:
    """Add synthetic positives by interpolating between k-nearest positive
    neighbors until the positive count reaches ``amount`` (defaults to the
    negative count)."""
    X = view.features()
    y = view.labels()
    pos_idx = np.nonzero(y == POSITIVE)[0]
    n_pos, n_neg = view.counts()
    if n_pos < 2:
        raise AugmentationError(f"SMOTE needs at least 2 positives, found {n_pos}")
    if k_neighbors < 1:
        raise ParameterError("k_neighbors must be >= 1")
    if k_neighbors >= n_pos:
        warnings.warn(
            f"k_neighbors={k_neighbors} >= positive count {n_pos}; "
            f"clamped to {n_pos - 1}",
            stacklevel=2,
        )
        k_neighbors = n_pos - 1
    if amount is None:
        amount = n_neg
    n_new = amount - n_pos
    if n_new <= 0:
        return view

    P = X[pos_idx]
    cont = [j for j in NORMALIZED_COLS]
    Pc = P[:, cont]
    d2 = (
        np.einsum("ij,ij->i", Pc, Pc)[:, None]
        - 2.0 * (Pc @ Pc.T)
        + np.einsum("ij,ij->i", Pc, Pc)[None, :]
    )
    np.fill_diagonal(d2, np.inf)
    neighbors = np.argsort(d2, axis=1, kind="stable")[:, :k_neighbors]

    rng = np.random.default_rng(seed)
    base_choice = rng.integers(0, len(pos_idx), size=n_new)
    nbr_choice = rng.integers(0, k_neighbors, size=n_new)
    u = rng.random(n_new)
    X_new = np.empty((n_new, X.shape[1]))
    for r in range(n_new):
        i = base_choice[r]
        j = neighbors[i, nbr_choice[r]]
        X_new[r] = interpolate_point(P[i], P[j], u[r])
    block = AddedBlock(
        tag="SMOTE",
        X=X_new,
        y=np.ones(n_new, dtype=np.int8),
        grid_ids=np.asarray([f"smote:{r}" for r in range(n_new)], dtype=object),
        seasons=np.asarray([""] * n_new, dtype=object),
    )
    return view.with_block(block)


# ---------------------------------------------------------------------------
# Negative Sampling
# ---------------------------------------------------------------------------

def negative_sample(view: TrainingView, pool: UnlabeledPool, fraction: float,
                    seed: int) -> TrainingView:
    """Add a uniform random partition of the unlabeled pool as negatives,
    one data point per grid (unlabeled cells are year-agnostic)."""
    if not (0.0 < fraction <= 1.0):
        raise ParameterError(f"fraction must be in (0, 1], got {fraction}")
    if len(pool) == 0:
        raise AugmentationError("unlabeled pool is empty")
    remaining = _remaining_pool(pool, view)
    if len(remaining) == 0:
        raise AugmentationError("unlabeled pool already fully consumed")
    m = int(np.ceil(fraction * len(remaining)))
    rng = np.random.default_rng(seed)
    take = remaining[np.sort(rng.choice(len(remaining), size=m, replace=False))]
    block = AddedBlock(
        tag="NS",
        X=pool.X[take].copy(),
        y=np.zeros(m, dtype=np.int8),
        grid_ids=pool.grid_ids[take].copy(),
        seasons=np.asarray([""] * m, dtype=object),
    )
    return view.with_block(block)


# ---------------------------------------------------------------------------
# Score-based Positive Sampling
# ---------------------------------------------------------------------------

def positive_sample_scores(view: TrainingView, pool: UnlabeledPool,
                           scores: AggregatedScoreMap,
                           threshold: int = 6) -> TrainingView:
    """Add every unlabeled cell with aggregated score >= threshold as a
    positive, one data point per grid."""
    pool_cells = pool.grid_ids.tolist()
    missing = [g for g in pool_cells if g not in scores.scores]
    if missing:
        raise CoverageError(
            f"{len(missing)} pool cells missing from the score map, e.g. {missing[:5]}"
        )
    remaining = _remaining_pool(pool, view)
    take = np.asarray(
        [i for i in remaining if scores.scores[pool_cells[i]] >= threshold],
        dtype=np.intp,
    )
    block = AddedBlock(
        tag="PS",
        X=pool.X[take].copy() if len(take) else np.empty((0, pool.X.shape[1])),
        y=np.ones(len(take), dtype=np.int8),
        grid_ids=pool.grid_ids[take].copy() if len(take) else np.empty(0, dtype=object),
        seasons=np.asarray([""] * len(take), dtype=object),
    )
    return view.with_block(block)


# ---------------------------------------------------------------------------
# Positive Sampling via Feature Ranges
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureRange:
    """Expert-provided low/high threat intervals for one feature, in
    normalized units. Interval bounds are inclusive."""

    feature: str
    low: tuple[float, float]
    high: tuple[float, float]

    def __post_init__(self):
        if self.feature not in FEATURE_NAMES:
            raise ValidationError(f"unknown feature '{self.feature}'")
        for lo, hi in (self.low, self.high):
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValidationError(
                    f"{self.feature}: interval [{lo}, {hi}] not within [0, 1]"
                )

    @property
    def column(self) -> int:
        return FEATURE_NAMES.index(self.feature)


def default_ranges() -> list[FeatureRange]:
    """The four pruned expert ranges used by range-based positive sampling."""
    return [
        FeatureRange("dist_village", low=(0.0, 0.3), high=(0.3, 1.0)),
        FeatureRange("dist_patrol_post", low=(0.0, 0.03), high=(0.03, 1.0)),
        FeatureRange("elevation", low=(0.0, 0.5), high=(0.5, 1.0)),
        FeatureRange("slope", low=(0.0, 0.4), high=(0.4, 1.0)),
    ]


def read_ranges_csv(path) -> list[FeatureRange]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for name in ("feature", "low_lo", "low_hi", "high_lo", "high_hi"):
            if name not in (reader.fieldnames or []):
                raise ValidationError(f"{path}: missing column '{name}'")
        for row in reader:
            out.append(
                FeatureRange(
                    feature=row["feature"],
                    low=(float(row["low_lo"]), float(row["low_hi"])),
                    high=(float(row["high_lo"]), float(row["high_hi"])),
                )
            )
    return out


def write_ranges_csv(ranges: list[FeatureRange], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "low_lo", "low_hi", "high_lo", "high_hi"])
        for r in ranges:
            writer.writerow([r.feature, *map(repr, (*r.low, *r.high))])


def range_membership_counts(X: np.ndarray, ranges: list[FeatureRange]) -> np.ndarray:
    """m per row: how many features fall inside their high-threat interval."""
    m = np.zeros(X.shape[0], dtype=np.int64)
    for r in ranges:
        col = X[:, r.column]
        m += (col >= r.high[0]) & (col <= r.high[1])
    return m


def psfr_probability(x: np.ndarray, ranges: list[FeatureRange],
                     p: float, q: float) -> float:
    """Unnormalized naive-Bayes positive probability p^m * q^(n-m), where m
    counts features inside their high-threat interval. Only the ranking
    matters, so the normalization constant is omitted."""
    if not ranges:
        raise ParameterError("ranges must be non-empty")
    if not (0.0 < q <= p < 1.0):
        raise ParameterError(f"need 0 < q <= p < 1, got p={p}, q={q}")
    m = int(range_membership_counts(np.asarray(x, dtype=np.float64)[None, :], ranges)[0])
    n = len(ranges)
    return float(p ** m * q ** (n - m))


def positive_sample_ranges(view: TrainingView, pool: UnlabeledPool,
                           ranges: list[FeatureRange], p: float = 0.04,
                           q: float = 0.01, top_n: int | None = None) -> TrainingView:
    """Add the top_n pool cells by range-based probability as positives.
    Ties break on grid_id so the selection is reproducible."""
    if not ranges:
        raise ParameterError("ranges must be non-empty")
    if not (0.0 < q <= p < 1.0):
        raise ParameterError(f"need 0 < q <= p < 1, got p={p}, q={q}")
    if top_n is None:
        top_n = int(round(PSFR_TOP_RATIO * len(pool)))
    if top_n > len(pool):
        raise ParameterError(f"top_n={top_n} exceeds pool size {len(pool)}")
    remaining = _remaining_pool(pool, view)
    if top_n > len(remaining):
        raise ParameterError(
            f"top_n={top_n} exceeds the {len(remaining)} unconsumed pool cells"
        )
    if top_n == 0:
        return view.with_block(
            AddedBlock(
                tag="PSFR",
                X=np.empty((0, pool.X.shape[1])),
                y=np.empty(0, dtype=np.int8),
                grid_ids=np.empty(0, dtype=object),
                seasons=np.empty(0, dtype=object),
            )
        )
    m = range_membership_counts(pool.X[remaining], ranges)
    n = len(ranges)
    scores = (p ** m.astype(np.float64)) * (q ** (n - m).astype(np.float64))
    order = sorted(
        range(len(remaining)),
        key=lambda i: (-scores[i], pool.grid_ids[remaining[i]]),
    )
    take = remaining[np.asarray(order[:top_n], dtype=np.intp)]
    block = AddedBlock(
        tag="PSFR",
        X=pool.X[take].copy(),
        y=np.ones(top_n, dtype=np.int8),
        grid_ids=pool.grid_ids[take].copy(),
        seasons=np.asarray([""] * top_n, dtype=object),
    )
    return view.with_block(block)


# ---------------------------------------------------------------------------
# Feature audit
# ---------------------------------------------------------------------------

N_AUDIT_BINS = 20


@dataclass(frozen=True)
class RangeAgreement:
    feature: str
    inside_rate: float
    outside_rate: float
    verdict: str  # "concordant" | "discordant"


@dataclass(frozen=True)
class AuditReport:
    edges: np.ndarray                              # 21 bin edges over [0, 1]
    histograms: dict[str, tuple[np.ndarray, np.ndarray]]  # feature -> (pos, neg)
    agreements: list[RangeAgreement]


def feature_audit(d: Dataset, ranges: list[FeatureRange]) -> AuditReport:
    """Label-split histograms for every normalized feature plus a
    concordance check of each expert range against the data."""
    labeled = d.labeled_mask
    y = d.labels[labeled]
    X = d.X[labeled]
    n_pos = int(np.sum(y == POSITIVE))
    n_neg = int(np.sum(y == NEGATIVE))
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("audit needs at least one positive and one negative")

    edges = np.linspace(0.0, 1.0, N_AUDIT_BINS + 1)
    histograms = {}
    for j in NORMALIZED_COLS:
        pos_counts, _ = np.histogram(X[y == POSITIVE, j], bins=edges)
        neg_counts, _ = np.histogram(X[y == NEGATIVE, j], bins=edges)
        histograms[FEATURE_NAMES[j]] = (pos_counts, neg_counts)

    global_rate = n_pos / (n_pos + n_neg)
    agreements = []
    for r in ranges:
        col = X[:, r.column]
        inside = (col >= r.high[0]) & (col <= r.high[1])
        rates = []
        for mask in (inside, ~inside):
            total = int(mask.sum())
            if total == 0:
                # an empty side carries no evidence; fall back to the
                # overall rate so all-covering ranges read as uninformative
                rates.append(global_rate)
            else:
                rates.append(float(np.sum(y[mask] == POSITIVE)) / total)
        inside_rate, outside_rate = rates
        verdict = "discordant" if inside_rate <= outside_rate else "concordant"
        agreements.append(
            RangeAgreement(
                feature=r.feature,
                inside_rate=inside_rate,
                outside_rate=outside_rate,
                verdict=verdict,
            )
        )
    return AuditReport(edges=edges, histograms=histograms, agreements=agreements)


def write_audit_histograms(report: AuditReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "bin_lo", "bin_hi", "pos_count", "neg_count"])
        for feature, (pos_counts, neg_counts) in report.histograms.items():
            for b in range(N_AUDIT_BINS):
                writer.writerow(
                    [feature, repr(float(report.edges[b])), repr(float(report.edges[b + 1])),
                     int(pos_counts[b]), int(neg_counts[b])]
                )


def write_audit_agreement(report: AuditReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "inside_rate", "outside_rate", "verdict"])
        for a in report.agreements:
            writer.writerow([a.feature, repr(a.inside_rate), repr(a.outside_rate), a.verdict])


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DD:
    name: str = field(default="DD", init=False)
    fold_local = True


@dataclass(frozen=True)
class SMOTE:
    k_neighbors: int = 5
    amount: int | None = None
    name: str = field(default="SMOTE", init=False)
    fold_local = True


@dataclass(frozen=True)
class NS:
    fraction: float = 0.2
    name: str = field(default="NS", init=False)
    fold_local = False


@dataclass(frozen=True)
class PS:
    threshold: int = 6
    name: str = field(default="PS", init=False)
    fold_local = False


@dataclass(frozen=True)
class PSFR:
    p: float = 0.04
    q: float = 0.01
    top_n: int | None = None
    name: str = field(default="PSFR", init=False)
    fold_local = False


Step = DD | SMOTE | NS | PS | PSFR


@dataclass(frozen=True)
class AugmentationPlan:
    """Ordered augmentation steps plus the seed their sampling derives from."""

    steps: tuple[Step, ...]
    seed: int = 0

    @classmethod
    def from_spec(cls, spec: str, seed: int = 0, ns_fraction: float = 0.2,
                  ps_threshold: int = 6, smote_k: int = 5,
                  smote_amount: int | None = None, psfr_p: float = 0.04,
                  psfr_q: float = 0.01, psfr_top_n: int | None = None
                  ) -> "AugmentationPlan":
        """Parse a comma list like "DD,NS,PS". DD moves to the end so class
        balance holds after the sampling steps change the counts."""
        steps: list[Step] = []
        names = [s.strip().upper() for s in spec.split(",") if s.strip()]
        if names in ([], ["NONE"]):
            return cls(steps=(), seed=seed)
        for name in names:
            if name == "DD":
                steps.append(DD())
            elif name == "SMOTE":
                steps.append(SMOTE(k_neighbors=smote_k, amount=smote_amount))
            elif name == "NS":
                steps.append(NS(fraction=ns_fraction))
            elif name == "PS":
                steps.append(PS(threshold=ps_threshold))
            elif name == "PSFR":
                steps.append(PSFR(p=psfr_p, q=psfr_q, top_n=psfr_top_n))
            else:
                raise ConfigError(f"unknown augmentation step '{name}'")
        ordered = [s for s in steps if not isinstance(s, DD)]
        ordered += [s for s in steps if isinstance(s, DD)]
        return cls(steps=tuple(ordered), seed=seed)

    def spec(self) -> str:
        return ",".join(s.name for s in self.steps) if self.steps else "none"

    def needs_scores(self) -> bool:
        return any(isinstance(s, PS) for s in self.steps)

    def needs_ranges(self) -> bool:
        return any(isinstance(s, PSFR) for s in self.steps)

    def apply(self, view: TrainingView, pool: UnlabeledPool | None = None,
              scores: AggregatedScoreMap | None = None,
              ranges: list[FeatureRange] | None = None,
              repeat: int = 0, fold: int = 0,
              resample_per_fold: bool = False) -> TrainingView:
        """Apply steps in order. Pool-based steps derive their randomness
        from (seed, repeat) only, so within a CV repeat every fold sees the
        same pool sample unless ``resample_per_fold`` is set."""
        for i, step in enumerate(self.steps):
            fold_part = fold if (step.fold_local or resample_per_fold) else 0
            step_seed = np.random.SeedSequence(
                entropy=(self.seed & 0xFFFFFFFF),
                spawn_key=(repeat, fold_part, i),
            ).generate_state(1)[0]
            if isinstance(step, DD):
                view = duplicate_positives(view)
            elif isinstance(step, SMOTE):
                view = smote(view, step.k_neighbors, step.amount, int(step_seed))
            elif isinstance(step, NS):
                if pool is None:
                    raise ConfigError("NS step requires the unlabeled pool")
                view = negative_sample(view, pool, step.fraction, int(step_seed))
            elif isinstance(step, PS):
                if pool is None or scores is None:
                    raise ConfigError("PS step requires the pool and a score map")
                view = positive_sample_scores(view, pool, scores, step.threshold)
            elif isinstance(step, PSFR):
                if pool is None or ranges is None:
                    raise ConfigError("PSFR step requires the pool and feature ranges")
                view = positive_sample_ranges(
                    view, pool, ranges, step.p, step.q, step.top_n
                )
        return view
