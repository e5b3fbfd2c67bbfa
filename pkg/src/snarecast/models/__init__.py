"""Unified threat-model interface over the tree and net ensembles.

A ThreatModel carries the fitted ensemble, the decision threshold, and the
normalization parameters (when training consumed raw-unit data) so that
prediction-time inputs are scaled exactly like the training inputs.
Artifacts round-trip through JSON bit-for-bit at the probability level.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from ..dataset import Dataset, NormalizationParams
from ..errors import FileError, ShapeError
from .nets import NetEnsemble, NetParams
from .trees import TreeEnsemble, TreeParams

FORMAT_VERSION = 1


class RandomModel:
    """Labels any example positive with probability 0.5 (baseline)."""

    def __init__(self, seed: int):
        self.seed = seed

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        if X.ndim != 2:
            raise ShapeError(f"expected a 2-d feature matrix, got {X.shape}")
        rng = np.random.default_rng(self.seed)
        return rng.random(X.shape[0])

    def to_dict(self) -> dict:
        return {"seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "RandomModel":
        return cls(seed=d["seed"])


_KINDS = {"tree": TreeEnsemble, "net": NetEnsemble, "random": RandomModel}


@dataclass
class ThreatModel:
    kind: str                       # "tree" | "net" | "random"
    ensemble: TreeEnsemble | NetEnsemble | RandomModel
    threshold: float = 0.5
    normalization: NormalizationParams | None = None

    def predict_proba(self, X: np.ndarray, raw: bool = False) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:  # single feature vector
            return self.predict_proba(X[None, :], raw=raw)[0]
        if raw:
            if self.normalization is None:
                raise ShapeError(
                    "model has no stored normalization; pass normalized features"
                )
            X = self.normalization.apply(X)
        return self.ensemble.predict_proba(X)

    def predict_label(self, X: np.ndarray, raw: bool = False) -> np.ndarray:
        return (self.predict_proba(X, raw=raw) >= self.threshold).astype(np.int64)

    def save(self, path) -> None:
        payload = {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "threshold": self.threshold,
            "normalization": (
                self.normalization.to_dict() if self.normalization else None
            ),
            "ensemble": self.ensemble.to_dict(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "ThreatModel":
        try:
            with open(path, encoding="utf-8") as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise FileError(f"cannot read model artifact {path}: {exc}") from None
        if payload.get("format_version") != FORMAT_VERSION:
            raise FileError(
                f"unsupported artifact version {payload.get('format_version')}"
            )
        kind = payload["kind"]
        if kind not in _KINDS:
            raise FileError(f"unknown model kind '{kind}'")
        ensemble = _KINDS[kind].from_dict(payload["ensemble"])
        norm = payload.get("normalization")
        return cls(
            kind=kind,
            ensemble=ensemble,
            threshold=payload["threshold"],
            normalization=NormalizationParams.from_dict(norm) if norm else None,
        )


def train_trees(view, params: TreeParams, seed: int,
                normalization: NormalizationParams | None = None,
                threshold: float = 0.5) -> ThreatModel:
    """Fit the bagging tree ensemble on a training view."""
    X = view.features()
    y = view.labels().astype(np.float64)
    ens = TreeEnsemble(params=params, seed=seed, n_features=X.shape[1]).fit(X, y)
    return ThreatModel(kind="tree", ensemble=ens, threshold=threshold,
                       normalization=normalization)


def train_nets(view, params: NetParams, seed: int,
               normalization: NormalizationParams | None = None,
               threshold: float = 0.5) -> ThreatModel:
    """Fit the feedforward-network ensemble on a training view."""
    X = view.features()
    y = view.labels().astype(np.float64)
    ens = NetEnsemble(params=params, seed=seed).fit(X, y)
    return ThreatModel(kind="net", ensemble=ens, threshold=threshold,
                       normalization=normalization)


def predict_map(model: ThreatModel, d: Dataset) -> list[tuple[str, str, float]]:
    """Per-cell threat scores, sorted by descending score so the file reads
    as a patrol priority ranking."""
    scores = model.predict_proba(d.X)
    rows = [
        (str(d.grid_ids[i]), str(d.seasons[i]), float(scores[i]))
        for i in range(len(d))
    ]
    rows.sort(key=lambda r: (-r[2], r[0], r[1]))
    return rows


def write_prediction_csv(rows: list[tuple[str, str, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["grid_id", "season", "threat_score"])
        for grid_id, season, score in rows:
            writer.writerow([grid_id, season, repr(score)])
