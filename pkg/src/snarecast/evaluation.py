"""Metrics, repeated stratified 4-fold cross-validation, ablation tables.

Augmentation is fold-local: it runs on the training fold only, the test
fold is never touched, and the base dataset is immutable throughout. Rows
with zero positive predictions render as ll 0.0 / recall nan / precision
0.0 / f1 0.000, the established reporting convention for that failure
mode, while the in-memory report flags precision and ll as the undefined
quantities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .augmentation import AugmentationPlan, FeatureRange, TrainingView
from .dataset import Dataset, POSITIVE
from .elicitation import AggregatedScoreMap
from .errors import ConfigError
from .models import RandomModel, ThreatModel, train_nets, train_trees
from .models.nets import NetParams
from .models.trees import TreeParams

METRIC_NAMES = ("ll_score", "recall", "precision", "f1")


# ---------------------------------------------------------------------------
# Confusion counts and the four metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ConfigError("confusion counts must be non-negative")

    @property
    def test_set_size(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, y_true: np.ndarray, y_pred: np.ndarray) -> "ConfusionCounts":
        y_true = np.asarray(y_true).astype(bool)
        y_pred = np.asarray(y_pred).astype(bool)
        return cls(
            tp=int(np.sum(y_true & y_pred)),
            fp=int(np.sum(~y_true & y_pred)),
            tn=int(np.sum(~y_true & ~y_pred)),
            fn=int(np.sum(y_true & ~y_pred)),
        )


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    ll_score: float
    precision_defined: bool
    recall_defined: bool
    f1_defined: bool
    ll_defined: bool

    def values(self) -> np.ndarray:
        """(ll, recall, precision, f1) with nan in undefined slots."""
        return np.asarray(
            [
                self.ll_score if self.ll_defined else np.nan,
                self.recall if self.recall_defined else np.nan,
                self.precision if self.precision_defined else np.nan,
                self.f1 if self.f1_defined else np.nan,
            ]
        )


def metrics(c: ConfusionCounts) -> MetricsReport:
    """precision, recall, F1 and ll = recall * test_set_size / (tp + fp).

    0/0 cases are flagged undefined, not thrown: no positive predictions
    leaves precision and ll undefined; no actual positives leaves recall
    undefined.
    """
    pred_pos = c.tp + c.fp
    actual_pos = c.tp + c.fn
    p_def = pred_pos > 0
    r_def = actual_pos > 0
    precision = c.tp / pred_pos if p_def else float("nan")
    recall = c.tp / actual_pos if r_def else float("nan")
    f1_def = p_def and r_def and (precision + recall) > 0
    f1 = 2.0 * precision * recall / (precision + recall) if f1_def else float("nan")
    ll_def = p_def and r_def
    ll = recall * c.test_set_size / pred_pos if ll_def else float("nan")
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        ll_score=ll,
        precision_defined=p_def,
        recall_defined=r_def,
        f1_defined=f1_def,
        ll_defined=ll_def,
    )


def random_baseline(y_true: np.ndarray, seed: int) -> MetricsReport:
    """Metrics of a labeler that marks any example positive w.p. 0.5."""
    rng = np.random.default_rng(seed)
    y_pred = rng.random(len(y_true)) < 0.5
    return metrics(ConfusionCounts.from_predictions(y_true, y_pred))


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CVConfig:
    n_folds: int = 4
    n_repeats: int = 10
    seed: int = 0
    resample_pool_per_fold: bool = False

    def validate(self):
        if self.n_folds < 2:
            raise ConfigError("n_folds must be >= 2")
        if self.n_repeats < 1:
            raise ConfigError("n_repeats must be >= 1")


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "tree"  # tree | net | random
    tree: TreeParams = TreeParams()
    net: NetParams = NetParams()
    threshold: float = 0.5

    def validate(self):
        if self.kind not in ("tree", "net", "random"):
            raise ConfigError(f"unknown model kind '{self.kind}'")


@dataclass(frozen=True)
class FoldRecord:
    repeat: int
    fold: int
    counts: ConfusionCounts
    report: MetricsReport
    train_keys: frozenset | None = None
    test_keys: frozenset | None = None


@dataclass(frozen=True)
class CVResult:
    values: np.ndarray              # (n_runs, 4) in METRIC_NAMES order
    folds: tuple[FoldRecord, ...]

    @property
    def n_runs(self) -> int:
        return self.values.shape[0]

    def mean(self) -> dict[str, float]:
        return self._agg(np.mean)

    def std(self) -> dict[str, float]:
        return self._agg(np.std)

    def _agg(self, fn) -> dict[str, float]:
        out = {}
        for j, name in enumerate(METRIC_NAMES):
            col = self.values[:, j]
            defined = col[np.isfinite(col)]
            out[name] = float(fn(defined)) if defined.size else float("nan")
        return out

    def undefined_runs(self) -> dict[str, int]:
        return {
            name: int(np.sum(~np.isfinite(self.values[:, j])))
            for j, name in enumerate(METRIC_NAMES)
        }


def stratified_folds(y: np.ndarray, n_folds: int, rng: np.random.Generator) -> np.ndarray:
    """Round-robin fold ids per class after a shuffle: every fold's class
    counts differ from the mean by at most one."""
    y = np.asarray(y)
    n_pos = int(np.sum(y == POSITIVE))
    if n_pos < n_folds:
        raise ConfigError(
            f"cannot stratify: {n_pos} positives across {n_folds} folds "
            "would leave a fold without positives"
        )
    fold = np.empty(len(y), dtype=np.int64)
    for cls in np.unique(y):
        idx = np.nonzero(y == cls)[0]
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = np.arange(len(idx)) % n_folds
    return fold


def _derived_seed(*parts: int) -> int:
    return int(
        np.random.SeedSequence(entropy=parts[0] & 0xFFFFFFFF,
                               spawn_key=tuple(parts[1:])).generate_state(1)[0]
    )


def train_model(spec: ModelSpec, view: TrainingView, seed: int) -> ThreatModel:
    spec.validate()
    if spec.kind == "tree":
        return train_trees(view, spec.tree, seed, threshold=spec.threshold)
    if spec.kind == "net":
        return train_nets(view, spec.net, seed, threshold=spec.threshold)
    return ThreatModel(kind="random", ensemble=RandomModel(seed),
                       threshold=spec.threshold)


def cross_validate(d: Dataset, plan: AugmentationPlan, spec: ModelSpec,
                   cv: CVConfig, scores: AggregatedScoreMap | None = None,
                   ranges: list[FeatureRange] | None = None,
                   record_keys: bool = False) -> CVResult:
    """Repeat x fold training/evaluation; augmentation touches the training
    fold only and the mean/std aggregate all repeat x fold runs."""
    cv.validate()
    spec.validate()
    labeled_idx = np.nonzero(d.labeled_mask)[0]
    if labeled_idx.size == 0:
        raise ConfigError("dataset has no labeled points")
    y_labeled = d.labels[labeled_idx].astype(np.int64)
    pool = d.unlabeled_pool()

    records: list[FoldRecord] = []
    values = []
    for r in range(cv.n_repeats):
        fold_rng = np.random.default_rng(_derived_seed(cv.seed, r, 1))
        fold_of = stratified_folds(y_labeled, cv.n_folds, fold_rng)
        for f in range(cv.n_folds):
            train_idx = labeled_idx[fold_of != f]
            test_idx = labeled_idx[fold_of == f]
            view = TrainingView.from_dataset(d, train_idx)
            view = plan.apply(
                view, pool=pool, scores=scores, ranges=ranges,
                repeat=r, fold=f, resample_per_fold=cv.resample_pool_per_fold,
            )
            test_keys = frozenset(
                zip(d.grid_ids[test_idx].tolist(), d.seasons[test_idx].tolist())
            )
            train_keys = frozenset(view.keys())
            leaked = train_keys & test_keys
            if leaked:
                raise AssertionError(
                    f"augmented training keys leaked into the test fold: "
                    f"{sorted(leaked)[:5]}"
                )
            model = train_model(spec, view, _derived_seed(cv.seed, r, f, 2))
            y_pred = model.predict_label(d.X[test_idx])
            counts = ConfusionCounts.from_predictions(
                d.labels[test_idx] == POSITIVE, y_pred
            )
            report = metrics(counts)
            records.append(
                FoldRecord(
                    repeat=r,
                    fold=f,
                    counts=counts,
                    report=report,
                    train_keys=train_keys if record_keys else None,
                    test_keys=test_keys if record_keys else None,
                )
            )
            values.append(report.values())
    return CVResult(values=np.asarray(values), folds=tuple(records))


# ---------------------------------------------------------------------------
# Ablation tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    name: str
    plan: AugmentationPlan
    spec: ModelSpec


@dataclass(frozen=True)
class AblationTable:
    rows: tuple[tuple[str, CVResult], ...]


def ablation_table(d: Dataset, rows: list[AblationRow], cv: CVConfig,
                   scores: AggregatedScoreMap | None = None,
                   ranges: list[FeatureRange] | None = None) -> AblationTable:
    out = []
    for row in rows:
        result = cross_validate(d, row.plan, row.spec, cv, scores=scores,
                                ranges=ranges)
        out.append((row.name, result))
    return AblationTable(rows=tuple(out))


def _rendered_cells(result: CVResult) -> list[str]:
    mean = result.mean()
    undef = result.undefined_runs()
    if undef["precision"] == result.n_runs:
        # no run ever predicted a positive
        return ["0.0", "nan", "0.0", "0.000"]
    out = []
    for name in METRIC_NAMES:
        v = mean[name]
        out.append("nan" if not np.isfinite(v) else f"{v:.4f}")
    return out


def format_table(table: AblationTable) -> str:
    header = f"{'Models':<24} {'LL score':>10} {'Recall':>8} {'Precision':>10} {'F1 score':>9}"
    lines = [header, "-" * len(header)]
    for name, result in table.rows:
        cells = _rendered_cells(result)
        lines.append(
            f"{name:<24} {cells[0]:>10} {cells[1]:>8} {cells[2]:>10} {cells[3]:>9}"
        )
    return "\n".join(lines)


def write_table_csv(table: AblationTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["name", "ll_score", "recall", "precision", "f1",
             "ll_score_std", "recall_std", "precision_std", "f1_std", "n_runs"]
        )
        for name, result in table.rows:
            cells = _rendered_cells(result)
            std = result.std()
            writer.writerow(
                [name, *cells,
                 *[repr(std[m]) if np.isfinite(std[m]) else "nan" for m in METRIC_NAMES],
                 result.n_runs]
            )
