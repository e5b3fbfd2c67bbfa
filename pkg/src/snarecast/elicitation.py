"""Cluster cells, exchange questionnaire files with experts, aggregate scores.

Cells are clustered once per grid in the 14-feature space with land_type
one-hot expanded and patrol_length_prev averaged over seasons, so each cell
receives exactly one score per questionnaire. The per-cell aggregated score
is the minimum of the scores from the two cluster resolutions.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .dataset import FEATURE_NAMES, LAND_TYPE_COL, Dataset, NormalizationParams
from .errors import (
    CompletenessError,
    CoverageError,
    FileError,
    ParameterError,
    ValidationError,
)

SCORE_MIN, SCORE_MAX = 1, 10


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray           # (k, d) in embedded space
    grid_ids: np.ndarray            # (n_cells,)
    assignment_idx: np.ndarray      # (n_cells,) cluster index per cell
    inertia: float
    inertia_history: tuple[float, ...]
    seed: int
    land_categories: tuple[int, ...]  # one-hot expansion order

    @property
    def assignment(self) -> dict[str, int]:
        return {g: int(c) for g, c in zip(self.grid_ids.tolist(), self.assignment_idx)}

    def cell_set(self) -> frozenset:
        return frozenset(self.grid_ids.tolist())

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "centroids": self.centroids.tolist(),
            "grid_ids": self.grid_ids.tolist(),
            "assignment_idx": self.assignment_idx.tolist(),
            "inertia": self.inertia,
            "inertia_history": list(self.inertia_history),
            "seed": self.seed,
            "land_categories": list(self.land_categories),
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"format_version": 1, "cluster_model": self.to_dict()}, fh)

    @classmethod
    def load(cls, path) -> "ClusterModel":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)["cluster_model"]
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise FileError(f"cannot read cluster model {path}: {exc}") from None
        return cls(
            k=int(raw["k"]),
            centroids=np.asarray(raw["centroids"], dtype=np.float64),
            grid_ids=np.asarray(raw["grid_ids"], dtype=object),
            assignment_idx=np.asarray(raw["assignment_idx"], dtype=np.int64),
            inertia=float(raw["inertia"]),
            inertia_history=tuple(raw["inertia_history"]),
            seed=int(raw["seed"]),
            land_categories=tuple(raw["land_categories"]),
        )


@dataclass(frozen=True)
class ScoreSheet:
    k: int
    scores: dict[int, int]  # cluster index -> score in [1, 10]

    def __post_init__(self):
        if set(self.scores) != set(range(self.k)):
            missing = sorted(set(range(self.k)) - set(self.scores))
            raise CompletenessError(f"score sheet missing clusters {missing}")
        for c, s in self.scores.items():
            if not (SCORE_MIN <= s <= SCORE_MAX):
                raise ValidationError(f"cluster {c}: score {s} outside [1, 10]")


@dataclass(frozen=True)
class AggregatedScoreMap:
    scores: dict[str, int]
    sources: tuple[str, str]

    def __getitem__(self, grid_id: str) -> int:
        return self.scores[grid_id]


# ---------------------------------------------------------------------------
# Cell embedding
# ---------------------------------------------------------------------------

def cell_table(d: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """One row per grid cell: geographic features from the first occurrence,
    patrol_length_prev averaged across seasons."""
    patrol_col = FEATURE_NAMES.index("patrol_length_prev")
    first: dict[str, int] = {}
    sums: dict[str, list[float]] = {}
    for i, g in enumerate(d.grid_ids.tolist()):
        if g not in first:
            first[g] = i
            sums[g] = [0.0, 0]
        acc = sums[g]
        acc[0] += d.X[i, patrol_col]
        acc[1] += 1
    grid_ids = np.asarray(sorted(first), dtype=object)
    X = np.empty((len(grid_ids), len(FEATURE_NAMES)))
    for r, g in enumerate(grid_ids.tolist()):
        X[r] = d.X[first[g]]
        X[r, patrol_col] = sums[g][0] / sums[g][1]
    return grid_ids, X


def embed_cells(X_cell: np.ndarray, land_categories=None) -> tuple[np.ndarray, tuple[int, ...]]:
    """Expand land_type to one-hot columns; other features pass through."""
    land = X_cell[:, LAND_TYPE_COL].astype(np.int64)
    if land_categories is None:
        land_categories = tuple(int(c) for c in np.unique(land))
    other = np.delete(X_cell, LAND_TYPE_COL, axis=1)
    onehot = np.zeros((X_cell.shape[0], len(land_categories)))
    for j, cat in enumerate(land_categories):
        onehot[:, j] = land == cat
    return np.hstack([other, onehot]), land_categories


def _unembed_centroid(centroid: np.ndarray, land_categories) -> np.ndarray:
    """Back to the 14-column layout; land_type = dominant category."""
    n_other = len(FEATURE_NAMES) - 1
    out = np.empty(len(FEATURE_NAMES))
    other = centroid[:n_other]
    onehot = centroid[n_other:]
    dominant = land_categories[int(np.argmax(onehot))] if len(onehot) else 0
    out[:LAND_TYPE_COL] = other[:LAND_TYPE_COL]
    out[LAND_TYPE_COL] = dominant
    out[LAND_TYPE_COL + 1:] = other[LAND_TYPE_COL:]
    return out


# ---------------------------------------------------------------------------
# K-means (Lloyd's iteration, k-means++ seeding, farthest-point repair)
# ---------------------------------------------------------------------------

def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    # (n, k) squared Euclidean distances, computed blockwise to bound memory
    n = X.shape[0]
    out = np.empty((n, C.shape[0]))
    x2 = np.einsum("ij,ij->i", X, X)
    c2 = np.einsum("ij,ij->i", C, C)
    step = max(1, 2_000_000 // max(1, C.shape[0]))
    for s in range(0, n, step):
        e = min(n, s + step)
        out[s:e] = x2[s:e, None] - 2.0 * (X[s:e] @ C.T) + c2[None, :]
    return np.maximum(out, 0.0)


def _kmeans_pp_init(X: np.ndarray, k: int, rng) -> np.ndarray:
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = _sq_dists(X, centroids[:1]).ravel()
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i] = X[rng.integers(n)]
            continue
        probs = d2 / total
        centroids[i] = X[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, _sq_dists(X, centroids[i:i + 1]).ravel())
    return centroids


def lloyd(X: np.ndarray, k: int, seed: int, max_iter: int = 100,
          tol: float = 1e-6, init: np.ndarray | None = None):
    """Runs Lloyd's iteration; returns (centroids, assignment, inertia_history).

    Empty clusters are reseeded at the point currently farthest from its
    centroid, which keeps k fixed and strictly lowers inertia.
    """
    rng = np.random.default_rng(seed)
    C = _kmeans_pp_init(X, k, rng) if init is None else init.copy()
    history: list[float] = []
    assign = np.zeros(X.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        D = _sq_dists(X, C)
        assign = np.argmin(D, axis=1)
        point_d2 = D[np.arange(X.shape[0]), assign]
        # repair empty clusters before the update step
        for c in range(k):
            if not np.any(assign == c):
                far = int(np.argmax(point_d2))
                C[c] = X[far]
                assign[far] = c
                point_d2[far] = 0.0
        history.append(float(point_d2.sum()))
        newC = np.empty_like(C)
        for c in range(k):
            newC[c] = X[assign == c].mean(axis=0)
        shift = float(np.sqrt(((newC - C) ** 2).sum(axis=1)).max())
        C = newC
        if shift < tol:
            break
    D = _sq_dists(X, C)
    assign = np.argmin(D, axis=1)
    history.append(float(D[np.arange(X.shape[0]), assign].sum()))
    return C, assign, history


def kmeans(d: Dataset, k: int, seed: int, max_iter: int = 100,
           tol: float = 1e-6) -> ClusterModel:
    grid_ids, X_cell = cell_table(d)
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if k > len(grid_ids):
        raise ParameterError(f"k={k} exceeds the {len(grid_ids)} distinct cells")
    X, land_categories = embed_cells(X_cell)
    C, assign, history = lloyd(X, k, seed=seed, max_iter=max_iter, tol=tol)
    return ClusterModel(
        k=k,
        centroids=C,
        grid_ids=grid_ids,
        assignment_idx=assign,
        inertia=history[-1],
        inertia_history=tuple(history),
        seed=seed,
        land_categories=land_categories,
    )


# ---------------------------------------------------------------------------
# Questionnaire and score-sheet files
# ---------------------------------------------------------------------------

N_EXAMPLE_CELLS = 5


def emit_questionnaire(cm: ClusterModel, d: Dataset, path,
                       norm_params: NormalizationParams | None = None) -> None:
    """One row per cluster: size, centroid in real units when the training
    scale is known, the 5 cells nearest the centroid, and a blank score."""
    grid_ids, X_cell = cell_table(d)
    if not np.array_equal(grid_ids, cm.grid_ids):
        raise CoverageError("cluster model was not built over this dataset")
    X, _ = embed_cells(X_cell, cm.land_categories)
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise FileError(f"cannot write questionnaire: {exc}") from None
    with fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster_id", "cell_count", *FEATURE_NAMES, "example_cells", "score"])
        for c in range(cm.k):
            member_mask = cm.assignment_idx == c
            members = np.nonzero(member_mask)[0]
            d2 = _sq_dists(X[members], cm.centroids[c:c + 1]).ravel()
            nearest = members[np.argsort(d2, kind="stable")[:N_EXAMPLE_CELLS]]
            examples = ";".join(grid_ids[nearest].tolist())
            centroid14 = _unembed_centroid(cm.centroids[c], cm.land_categories)
            if norm_params is not None:
                centroid14 = norm_params.invert(centroid14[None, :])[0]
            writer.writerow(
                [c, int(member_mask.sum()), *[repr(float(v)) for v in centroid14],
                 examples, ""]
            )


def ingest_scores(path, cm: ClusterModel) -> ScoreSheet:
    scores: dict[int, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for name in ("cluster_id", "score"):
            if name not in (reader.fieldnames or []):
                raise ValidationError(f"{path}: missing column '{name}'")
        for row in reader:
            c = int(row["cluster_id"])
            raw = row["score"].strip()
            try:
                s = int(raw)
            except ValueError:
                raise ValidationError(
                    f"cluster {c}: score '{raw}' is not an integer"
                ) from None
            if not (SCORE_MIN <= s <= SCORE_MAX):
                raise ValidationError(f"cluster {c}: score {s} outside [1, 10]")
            scores[c] = s
    missing = sorted(set(range(cm.k)) - set(scores))
    if missing:
        raise CompletenessError(f"score sheet missing clusters {missing}")
    extra = sorted(set(scores) - set(range(cm.k)))
    if extra:
        raise ValidationError(f"score sheet has unknown clusters {extra}")
    return ScoreSheet(k=cm.k, scores=scores)


def write_scores(sheet: ScoreSheet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster_id", "score"])
        for c in range(sheet.k):
            writer.writerow([c, sheet.scores[c]])


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def aggregate(s1: tuple[ClusterModel, ScoreSheet],
              s2: tuple[ClusterModel, ScoreSheet]) -> AggregatedScoreMap:
    """Per-cell score = min of the cell's cluster scores in the two sheets."""
    cm1, sheet1 = s1
    cm2, sheet2 = s2
    cells1, cells2 = cm1.cell_set(), cm2.cell_set()
    if cells1 != cells2:
        diff = sorted(cells1 ^ cells2)
        raise CoverageError(f"cluster models cover different cells: {diff[:10]}"
                            + ("..." if len(diff) > 10 else ""))
    a2 = cm2.assignment
    scores = {}
    for g, c1 in zip(cm1.grid_ids.tolist(), cm1.assignment_idx):
        scores[g] = min(sheet1.scores[int(c1)], sheet2.scores[a2[g]])
    return AggregatedScoreMap(
        scores=scores,
        sources=(f"k{cm1.k}-seed{cm1.seed}", f"k{cm2.k}-seed{cm2.seed}"),
    )


def score_disagreement(s1: tuple[ClusterModel, ScoreSheet],
                       s2: tuple[ClusterModel, ScoreSheet]) -> Counter:
    """Distribution of |score1 - score2| per cell (reported, never acted on)."""
    cm1, sheet1 = s1
    cm2, sheet2 = s2
    a2 = cm2.assignment
    out: Counter = Counter()
    for g, c1 in zip(cm1.grid_ids.tolist(), cm1.assignment_idx):
        out[abs(sheet1.scores[int(c1)] - sheet2.scores[a2[g]])] += 1
    return out


def write_score_map(m: AggregatedScoreMap, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["grid_id", "score"])
        for g in sorted(m.scores):
            writer.writerow([g, m.scores[g]])


def read_score_map(path) -> AggregatedScoreMap:
    scores = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for name in ("grid_id", "score"):
            if name not in (reader.fieldnames or []):
                raise ValidationError(f"{path}: missing column '{name}'")
        for row in reader:
            scores[row["grid_id"]] = int(row["score"])
    return AggregatedScoreMap(scores=scores, sources=(str(path), str(path)))


# ---------------------------------------------------------------------------
# Simulated expert (desk-scale runs without a human in the loop)
# ---------------------------------------------------------------------------

def score_clusters_from_values(cm: ClusterModel, cell_values: dict[str, float]) -> ScoreSheet:
    """Score each cluster 1-10 by min-max scaling its mean per-cell value.

    ``cell_values`` is any per-cell threat proxy, e.g. ground-truth threat or
    occurrence rates from a sidecar file.
    """
    means = np.empty(cm.k)
    try:
        vals = np.asarray([cell_values[g] for g in cm.grid_ids.tolist()])
    except KeyError as exc:
        raise CoverageError(f"no value for cell {exc.args[0]}") from None
    for c in range(cm.k):
        means[c] = vals[cm.assignment_idx == c].mean()
    lo, hi = means.min(), means.max()
    if hi > lo:
        scaled = (means - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(means)
    scores = {c: int(SCORE_MIN + round(scaled[c] * (SCORE_MAX - SCORE_MIN)))
              for c in range(cm.k)}
    return ScoreSheet(k=cm.k, scores=scores)
