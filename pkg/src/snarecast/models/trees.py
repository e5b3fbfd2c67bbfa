"""Bagging ensemble of entropy decision trees, grown from scratch.

Each tree trains on its own random 10% subsample (with replacement by
default) and grows greedily by maximum information gain until nodes are
pure or hit the minimum leaf size. land_type splits natively on category
subsets; numeric features split at midpoints between consecutive distinct
values. Duplicate rows are collapsed into integer weights before growth,
so heavily duplicated training views stay cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..dataset import LAND_TYPE_COL
from ..errors import ParameterError, ShapeError, TrainingError

MAX_CATEGORIES = 64


@njit(cache=True)
def _entropy_bits(p):
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * np.log2(p) + (1.0 - p) * np.log2(1.0 - p))


@njit(cache=True)
def _search_node(X, y, w, order, s, e, cat_col, min_leaf, W, WP):
    """Best split of rows order[:, s:e] by information gain.

    Returns (gain, feature, threshold, category_mask); feature -1 means no
    valid split (pure node or no candidate). Impure nodes accept the best
    candidate even at zero gain (an exact-XOR node must still split). Ties
    resolve to the lowest feature index, then the lowest threshold, by
    scanning features and thresholds in ascending order and only accepting
    strict improvements.
    """
    n_features = X.shape[1]
    if WP <= 0.0 or WP >= W:
        return 0.0, -1, 0.0, np.uint64(0)
    h_parent = _entropy_bits(WP / W)
    best_gain = -1.0
    best_feature = -1
    best_thr = 0.0
    best_mask = np.uint64(0)

    cat_w = np.zeros(MAX_CATEGORIES)
    cat_wp = np.zeros(MAX_CATEGORIES)
    cat_vals = np.zeros(MAX_CATEGORIES, np.int64)
    cat_order = np.zeros(MAX_CATEGORIES, np.int64)

    for j in range(n_features):
        if j == cat_col:
            # category-subset split: categories ordered by positive rate,
            # prefix cut (optimal for binary entropy)
            for c in range(MAX_CATEGORIES):
                cat_w[c] = 0.0
                cat_wp[c] = 0.0
            n_cats = 0
            i = s
            while i < e:
                idx = order[j, i]
                cat = np.int64(X[idx, j])
                found = -1
                for c in range(n_cats):
                    if cat_vals[c] == cat:
                        found = c
                        break
                if found < 0:
                    found = n_cats
                    cat_vals[found] = cat
                    n_cats += 1
                cat_w[found] += w[idx]
                cat_wp[found] += w[idx] * y[idx]
                i += 1
            if n_cats < 2:
                continue
            # insertion sort by (positive rate, category value)
            for c in range(n_cats):
                cat_order[c] = c
            for a in range(1, n_cats):
                key = cat_order[a]
                kr = cat_wp[key] / cat_w[key]
                b = a - 1
                while b >= 0:
                    cur = cat_order[b]
                    cr = cat_wp[cur] / cat_w[cur]
                    if cr > kr or (cr == kr and cat_vals[cur] > cat_vals[key]):
                        cat_order[b + 1] = cur
                        b -= 1
                    else:
                        break
                cat_order[b + 1] = key
            cw = 0.0
            cp = 0.0
            mask = np.uint64(0)
            for t in range(n_cats - 1):
                c = cat_order[t]
                cw += cat_w[c]
                cp += cat_wp[c]
                mask |= np.uint64(1) << np.uint64(cat_vals[c])
                if cw < min_leaf or (W - cw) < min_leaf:
                    continue
                gain = (
                    h_parent
                    - (cw / W) * _entropy_bits(cp / cw)
                    - ((W - cw) / W) * _entropy_bits((WP - cp) / (W - cw))
                )
                if gain > best_gain:
                    best_gain = gain
                    best_feature = j
                    best_thr = 0.0
                    best_mask = mask
        else:
            cw = 0.0
            cp = 0.0
            for i in range(s, e - 1):
                idx = order[j, i]
                cw += w[idx]
                cp += w[idx] * y[idx]
                nxt = order[j, i + 1]
                v, vn = X[idx, j], X[nxt, j]
                if vn <= v:
                    continue
                if cw < min_leaf or (W - cw) < min_leaf:
                    continue
                gain = (
                    h_parent
                    - (cw / W) * _entropy_bits(cp / cw)
                    - ((W - cw) / W) * _entropy_bits((WP - cp) / (W - cw))
                )
                if gain > best_gain:
                    thr = v + 0.5 * (vn - v)
                    if thr >= vn:  # midpoint collapsed onto the upper value
                        thr = v
                    best_gain = gain
                    best_feature = j
                    best_thr = thr
                    best_mask = np.uint64(0)
    if best_feature < 0:
        best_gain = 0.0
    return best_gain, best_feature, best_thr, best_mask


@njit(cache=True)
def _grow_tree(X, y, w, cat_col, min_leaf):
    """Grow one tree; returns flat node arrays (feature -1 marks a leaf)."""
    n, n_features = X.shape
    max_nodes = 2 * n + 3
    feature = np.full(max_nodes, -1, np.int32)
    threshold = np.zeros(max_nodes, np.float64)
    cat_mask = np.zeros(max_nodes, np.uint64)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    value = np.zeros(max_nodes, np.float64)

    order = np.empty((n_features, n), np.int32)
    for j in range(n_features):
        order[j] = np.argsort(X[:, j], kind="mergesort").astype(np.int32)

    goes_left = np.zeros(n, np.uint8)
    tmp = np.empty(n, np.int32)
    stack_s = np.empty(max_nodes, np.int64)
    stack_e = np.empty(max_nodes, np.int64)
    stack_id = np.empty(max_nodes, np.int64)
    stack_s[0] = 0
    stack_e[0] = n
    stack_id[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        s, e, nid = stack_s[top], stack_e[top], stack_id[top]
        W = 0.0
        WP = 0.0
        for i in range(s, e):
            idx = order[0, i]
            W += w[idx]
            WP += w[idx] * y[idx]
        value[nid] = WP / W
        if WP <= 0.0 or WP >= W or (e - s) < 2 or W < 2.0 * min_leaf:
            continue
        gain, best_f, best_t, best_m = _search_node(
            X, y, w, order, s, e, cat_col, min_leaf, W, WP
        )
        if best_f < 0:
            continue
        if best_m != np.uint64(0):
            for i in range(s, e):
                idx = order[best_f, i]
                cat = np.uint64(np.int64(X[idx, best_f]))
                goes_left[idx] = 1 if (best_m >> cat) & np.uint64(1) else 0
        else:
            for i in range(s, e):
                idx = order[best_f, i]
                goes_left[idx] = 1 if X[idx, best_f] <= best_t else 0
        n_left = 0
        for j in range(n_features):
            a = s
            b = 0
            for i in range(s, e):
                idx = order[j, i]
                if goes_left[idx]:
                    order[j, a] = idx
                    a += 1
                else:
                    tmp[b] = idx
                    b += 1
            for i in range(b):
                order[j, a + i] = tmp[i]
            n_left = a - s
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[nid] = best_f
        threshold[nid] = best_t
        cat_mask[nid] = best_m
        left[nid] = lid
        right[nid] = rid
        stack_s[top] = s
        stack_e[top] = s + n_left
        stack_id[top] = lid
        top += 1
        stack_s[top] = s + n_left
        stack_e[top] = e
        stack_id[top] = rid
        top += 1

    return (
        feature[:n_nodes],
        threshold[:n_nodes],
        cat_mask[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        value[:n_nodes],
    )


@njit(cache=True)
def _predict_forest(X, feature, threshold, cat_mask, left, right, value, offsets):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros(n)
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = 0
            while feature[base + node] >= 0:
                f = feature[base + node]
                if cat_mask[base + node] != np.uint64(0):
                    cat = np.uint64(np.int64(X[i, f]))
                    go_left = (cat_mask[base + node] >> cat) & np.uint64(1)
                else:
                    go_left = X[i, f] <= threshold[base + node]
                node = left[base + node] if go_left else right[base + node]
            out[i] += value[base + node]
    return out / n_trees


def best_split(X, y, w=None, cat_col=LAND_TYPE_COL):
    """Production split search on one node set; used directly by tests.

    Returns (gain, feature, threshold, category_mask); gain 0.0 with
    feature -1 means no valid split exists.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ones(len(y)) if w is None else np.ascontiguousarray(w, dtype=np.float64)
    order = np.empty((X.shape[1], X.shape[0]), np.int32)
    for j in range(X.shape[1]):
        order[j] = np.argsort(X[:, j], kind="mergesort").astype(np.int32)
    W = float(w.sum())
    WP = float((w * y).sum())
    return _search_node(X, y, w, order, 0, X.shape[0], cat_col, 1.0, W, WP)


@dataclass(frozen=True)
class TreeParams:
    n_trees: int = 1000
    subsample_fraction: float = 0.10
    min_leaf: float = 1.0
    with_replacement: bool = True

    def validate(self):
        if self.n_trees < 1:
            raise ParameterError("n_trees must be >= 1")
        if not (0.0 < self.subsample_fraction <= 1.0):
            raise ParameterError("subsample_fraction must be in (0, 1]")
        if self.min_leaf < 1.0:
            raise ParameterError("min_leaf must be >= 1")


class TreeEnsemble:
    """Mean-of-trees threat probability model."""

    def __init__(self, params: TreeParams, seed: int, n_features: int,
                 trees: list[dict] | None = None):
        self.params = params
        self.seed = seed
        self.n_features = n_features
        self._trees = trees or []
        self._flat = None

    @property
    def n_trees(self) -> int:
        return len(self._trees)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "TreeEnsemble":
        self.params.validate()
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise ShapeError(f"bad training shapes {X.shape} vs {y.shape}")
        if np.unique(y).size < 2:
            raise TrainingError(
                "training data contains a single class; apply data "
                "duplication (DD) or another balancing step first"
            )
        land = X[:, LAND_TYPE_COL]
        if (land < 0).any() or (land >= MAX_CATEGORIES).any() or (land != np.round(land)).any():
            raise ShapeError(f"land_type must be integers in [0, {MAX_CATEGORIES})")

        # collapse duplicate (x, y) rows into integer weights
        stacked = np.column_stack([X, y])
        uniq, counts = np.unique(stacked, axis=0, return_counts=True)
        Xu = np.ascontiguousarray(uniq[:, :-1])
        yu = np.ascontiguousarray(uniq[:, -1])
        cum = np.cumsum(counts)
        n_total = int(cum[-1])
        m = max(1, int(round(self.params.subsample_fraction * n_total)))

        children = np.random.SeedSequence(self.seed).spawn(self.params.n_trees)
        self._trees = []
        for t in range(self.params.n_trees):
            rng = np.random.default_rng(children[t])
            if self.params.with_replacement:
                draws = rng.integers(0, n_total, size=m)
            else:
                draws = rng.choice(n_total, size=min(m, n_total), replace=False)
            rows = np.searchsorted(cum, draws, side="right")
            w = np.bincount(rows, minlength=len(counts)).astype(np.float64)
            sel = w > 0
            feats = _grow_tree(
                Xu[sel], yu[sel], w[sel], LAND_TYPE_COL, self.params.min_leaf
            )
            self._trees.append(
                {
                    "feature": feats[0],
                    "threshold": feats[1],
                    "cat_mask": feats[2],
                    "left": feats[3],
                    "right": feats[4],
                    "value": feats[5],
                }
            )
        self._flat = None
        return self

    def _flatten(self):
        if self._flat is None:
            offsets = np.zeros(len(self._trees) + 1, np.int64)
            for t, tr in enumerate(self._trees):
                offsets[t + 1] = offsets[t] + len(tr["feature"])
            self._flat = (
                np.concatenate([tr["feature"] for tr in self._trees]),
                np.concatenate([tr["threshold"] for tr in self._trees]),
                np.concatenate([tr["cat_mask"] for tr in self._trees]),
                np.concatenate([tr["left"] for tr in self._trees]),
                np.concatenate([tr["right"] for tr in self._trees]),
                np.concatenate([tr["value"] for tr in self._trees]),
                offsets,
            )
        return self._flat

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(
                f"expected (n, {self.n_features}) features, got {X.shape}"
            )
        if not self._trees:
            raise TrainingError("ensemble is not fitted")
        return _predict_forest(X, *self._flatten())

    def member_proba(self, X: np.ndarray) -> np.ndarray:
        """(n_trees, n) per-member predictions; the ensemble is their mean."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty((len(self._trees), X.shape[0]))
        for t, tr in enumerate(self._trees):
            offsets = np.asarray([0, len(tr["feature"])], np.int64)
            out[t] = _predict_forest(
                X, tr["feature"], tr["threshold"], tr["cat_mask"],
                tr["left"], tr["right"], tr["value"], offsets,
            )
        return out

    def to_dict(self) -> dict:
        return {
            "params": {
                "n_trees": self.params.n_trees,
                "subsample_fraction": self.params.subsample_fraction,
                "min_leaf": self.params.min_leaf,
                "with_replacement": self.params.with_replacement,
            },
            "seed": self.seed,
            "n_features": self.n_features,
            "trees": [
                {
                    "feature": tr["feature"].tolist(),
                    "threshold": tr["threshold"].tolist(),
                    "cat_mask": [int(v) for v in tr["cat_mask"]],
                    "left": tr["left"].tolist(),
                    "right": tr["right"].tolist(),
                    "value": tr["value"].tolist(),
                }
                for tr in self._trees
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        params = TreeParams(**d["params"])
        trees = [
            {
                "feature": np.asarray(tr["feature"], np.int32),
                "threshold": np.asarray(tr["threshold"], np.float64),
                "cat_mask": np.asarray(tr["cat_mask"], np.uint64),
                "left": np.asarray(tr["left"], np.int32),
                "right": np.asarray(tr["right"], np.int32),
                "value": np.asarray(tr["value"], np.float64),
            }
            for tr in d["trees"]
        ]
        return cls(params=params, seed=d["seed"], n_features=d["n_features"],
                   trees=trees)
