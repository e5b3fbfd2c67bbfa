"""Flat key-value run configuration.

Files hold ``key = value`` lines ('#' starts a comment). Precedence is
CLI flag > config file > built-in default. Every run echoes its effective
configuration into the output directory for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

DEFAULTS: dict[str, object] = {
    # global
    "seed": 0,
    "out": "out",
    # input files
    "dataset": "",
    "ground_truth": "",
    "score_map": "",
    "ranges": "",
    "model_artifact": "",
    # synthetic generator
    "positives_per_season": 30,
    "negatives_per_season": 9300,
    "unlabeled_cells": 44500,
    "n_seasons": 4,
    "first_season_year": 2014,
    "land_types": 4,
    "threat_center": 0.85,
    "threat_sharpness": 50.0,
    "patrol_bias": 8.0,
    # elicitation
    "cluster_ks": "40,50",
    "kmeans_max_iter": 100,
    "kmeans_tol": 1e-6,
    "auto_score": False,
    # aggregation
    "cluster_models": "",
    "score_files": "",
    # augmentation plan
    "plan": "DD,NS,PS",
    "ns_fraction": 0.2,
    "ps_threshold": 6,
    "smote_k": 5,
    "smote_amount": 0,          # 0 means "match the negative count"
    "psfr_p": 0.04,
    "psfr_q": 0.01,
    "psfr_top_n": 0,            # 0 means "keep the 1000-per-44.5k pool ratio"
    # model
    "model": "tree",
    "n_trees": 1000,
    "subsample_fraction": 0.10,
    "min_leaf": 1.0,
    "with_replacement": True,
    "n_members": 100,
    "epochs": 50,
    "batch_size": 64,
    "learning_rate": 0.001,
    "l2": 0.1,
    "threshold": 0.5,
    # cross-validation
    "n_folds": 4,
    "n_repeats": 10,
    "resample_pool_per_fold": False,
    # evaluation
    "rows": "auto",
}


def _parse_value(key: str, raw: str) -> object:
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: '{raw}'")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


@dataclass
class RunConfig:
    values: dict[str, object] = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key: str):
        return self.values[key]

    def set(self, key: str, raw: str) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key '{key}'")
        self.values[key] = _parse_value(key, raw)

    def set_typed(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key '{key}'")
        self.values[key] = value

    @classmethod
    def load(cls, path) -> "RunConfig":
        cfg = cls()
        cfg.read_file(path)
        return cfg

    def read_file(self, path) -> None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
            self.values[key] = _parse_value(key, raw)

    def echo(self, path) -> None:
        lines = [f"{key} = {self._fmt(self.values[key])}" for key in DEFAULTS]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @staticmethod
    def _fmt(v) -> str:
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        return str(v)

    def int_list(self, key: str) -> list[int]:
        raw = str(self.values[key])
        try:
            return [int(s.strip()) for s in raw.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"{key} must be a comma list of integers, got '{raw}'") from None

    def str_list(self, key: str) -> list[str]:
        raw = str(self.values[key])
        return [s.strip() for s in raw.split(",") if s.strip()]
