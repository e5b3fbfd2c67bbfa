import numpy as np
import pytest

from snarecast.dataset import (
    FEATURE_NAMES,
    LAND_TYPE_COL,
    SyntheticConfig,
    generate_synthetic,
    make_dataset,
)

N = len(FEATURE_NAMES)
PATROL_COL = FEATURE_NAMES.index("patrol_length_prev")


def feature_row(rng=None, **overrides):
    """A valid 14-feature row; named overrides address columns by name."""
    if rng is None:
        x = np.full(N, 0.5)
    else:
        x = rng.random(N)
    x[LAND_TYPE_COL] = 1.0
    for name, value in overrides.items():
        x[FEATURE_NAMES.index(name)] = value
    return x


def build_dataset(rows):
    """rows: list of (grid_id, season, features, label)."""
    X = np.vstack([r[2] for r in rows])
    return make_dataset(
        X,
        [r[3] for r in rows],
        [r[0] for r in rows],
        [r[1] for r in rows],
    )


SMALL_CONFIG = SyntheticConfig(
    positives_per_season=10,
    negatives_per_season=400,
    unlabeled_cells=1500,
    n_seasons=2,
)


@pytest.fixture(scope="session")
def small_synth():
    return generate_synthetic(SMALL_CONFIG, seed=7)


@pytest.fixture(scope="session")
def default_synth():
    return generate_synthetic(SyntheticConfig(), seed=7)
