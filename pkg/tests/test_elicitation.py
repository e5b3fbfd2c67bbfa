import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snarecast.dataset import FEATURE_NAMES, NormalizationParams, make_dataset
from snarecast.elicitation import (
    AggregatedScoreMap,
    ClusterModel,
    ScoreSheet,
    aggregate,
    cell_table,
    embed_cells,
    emit_questionnaire,
    ingest_scores,
    kmeans,
    lloyd,
    score_clusters_from_values,
    score_disagreement,
    write_score_map,
    read_score_map,
    write_scores,
)
from snarecast.errors import (
    CompletenessError,
    CoverageError,
    ParameterError,
    ValidationError,
)

from conftest import build_dataset, feature_row


def grid_dataset(points, labels=None, seasons=None):
    """Build a dataset whose first two feature columns carry the geometry."""
    rows = []
    for i, (x0, x1) in enumerate(points):
        feats = feature_row(dist_stream=x0, dist_village=x1)
        season = seasons[i] if seasons else "2015"
        label = labels[i] if labels else 0
        rows.append((f"g{i:03d}", season, feats, label))
    return build_dataset(rows)


def brute_force_assignment(X, centroids):
    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def test_four_corners_k4_zero_inertia():
    d = grid_dataset([(0, 0), (0, 1), (1, 0), (1, 1)])
    cm = kmeans(d, k=4, seed=0)
    assert cm.inertia == pytest.approx(0.0)
    assert sorted(cm.assignment_idx.tolist()) == [0, 1, 2, 3]


def test_two_blobs_match_exhaustive_oracle():
    rng = np.random.default_rng(5)
    blob_a = 0.05 * rng.random((50, 2)) + np.asarray([0.1, 0.1])
    blob_b = 0.05 * rng.random((50, 2)) + np.asarray([0.8, 0.8])
    d = grid_dataset(np.vstack([blob_a, blob_b]))
    cm = kmeans(d, k=2, seed=1)
    _, X_cell = cell_table(d)
    X, _ = embed_cells(X_cell, cm.land_categories)
    assert np.array_equal(cm.assignment_idx, brute_force_assignment(X, cm.centroids))
    # assignment equals blob membership
    first_half = set(cm.assignment_idx[:50].tolist())
    second_half = set(cm.assignment_idx[50:].tolist())
    assert len(first_half) == 1 and len(second_half) == 1
    assert first_half != second_half


def test_inertia_history_non_increasing():
    rng = np.random.default_rng(11)
    d = grid_dataset(rng.random((120, 2)))
    cm = kmeans(d, k=7, seed=3)
    hist = np.asarray(cm.inertia_history)
    assert np.all(np.diff(hist) <= 1e-9)


def test_kmeans_deterministic():
    rng = np.random.default_rng(2)
    d = grid_dataset(rng.random((60, 2)))
    a = kmeans(d, k=5, seed=42)
    b = kmeans(d, k=5, seed=42)
    assert np.array_equal(a.assignment_idx, b.assignment_idx)
    assert np.array_equal(a.centroids, b.centroids)


def test_empty_cluster_reseeded_at_farthest_point():
    # an init centroid far outside the data captures nothing on the first
    # assignment; the repair must keep k clusters and not crash
    X = np.asarray([[0.0, 0.0], [0.1, 0.0], [1.0, 1.0], [0.9, 1.0]])
    init = np.asarray([[0.05, 0.0], [0.95, 1.0], [50.0, 50.0]])
    centroids, assign, history = lloyd(X, k=3, seed=0, init=init)
    assert len(set(assign.tolist())) == 3
    assert np.all(np.diff(history) <= 1e-9)


def test_kmeans_k_larger_than_cells():
    d = grid_dataset([(0, 0), (1, 1)])
    with pytest.raises(ParameterError):
        kmeans(d, k=3, seed=0)
    with pytest.raises(ParameterError):
        kmeans(d, k=0, seed=0)


def test_cell_table_season_averaged_patrol():
    f1 = feature_row(patrol_length_prev=0.2)
    f2 = feature_row(patrol_length_prev=0.6)
    d = build_dataset([
        ("g1", "2015", f1, 0),
        ("g1", "2016", f2, 1),
    ])
    grid_ids, X = cell_table(d)
    assert grid_ids.tolist() == ["g1"]
    assert X[0, FEATURE_NAMES.index("patrol_length_prev")] == pytest.approx(0.4)


def questionnaire_rows(path):
    import csv

    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_questionnaire_row_counts(tmp_path, small_synth):
    d, _ = small_synth
    cm40 = kmeans(d, 40, seed=0)
    cm50 = kmeans(d, 50, seed=1)
    p40, p50 = tmp_path / "q40.csv", tmp_path / "q50.csv"
    emit_questionnaire(cm40, d, p40)
    emit_questionnaire(cm50, d, p50)
    rows40 = questionnaire_rows(p40)
    rows50 = questionnaire_rows(p50)
    assert len(rows40) == 40 and len(rows50) == 50
    assert len(rows40) + len(rows50) == 90  # total score slots
    assert all(r["score"] == "" for r in rows40)
    assert sum(int(r["cell_count"]) for r in rows40) == len(cm40.grid_ids)


def test_questionnaire_single_cluster(tmp_path):
    rng = np.random.default_rng(0)
    d = grid_dataset(rng.random((10, 2)))
    cm = kmeans(d, 1, seed=0)
    path = tmp_path / "q.csv"
    emit_questionnaire(cm, d, path)
    rows = questionnaire_rows(path)
    assert len(rows) == 1
    assert rows[0]["cell_count"] == "10"
    assert len(rows[0]["example_cells"].split(";")) == 5


def test_questionnaire_denormalizes_centroids(tmp_path):
    d = grid_dataset([(0.0, 0.0), (1.0, 1.0)])
    cm = kmeans(d, 1, seed=0)
    mins = np.zeros(14)
    maxs = np.full(14, 2000.0)
    params = NormalizationParams(mins=mins, maxs=maxs)
    path = tmp_path / "q.csv"
    emit_questionnaire(cm, d, path, norm_params=params)
    row = questionnaire_rows(path)[0]
    assert float(row["dist_stream"]) == pytest.approx(1000.0)  # 0.5 * 2000


def fake_cluster_model(k, grid_ids, assignment, seed=0):
    return ClusterModel(
        k=k,
        centroids=np.zeros((k, 17)),
        grid_ids=np.asarray(grid_ids, dtype=object),
        assignment_idx=np.asarray(assignment, dtype=np.int64),
        inertia=0.0,
        inertia_history=(0.0,),
        seed=seed,
        land_categories=(1,),
    )


def test_ingest_scores_happy_path(tmp_path):
    cm = fake_cluster_model(40, [f"g{i}" for i in range(40)], list(range(40)))
    path = tmp_path / "s.csv"
    write_scores(ScoreSheet(k=40, scores={c: 5 for c in range(40)}), path)
    sheet = ingest_scores(path, cm)
    assert sheet.scores == {c: 5 for c in range(40)}


def test_ingest_scores_missing_cluster(tmp_path):
    cm = fake_cluster_model(40, [f"g{i}" for i in range(40)], list(range(40)))
    path = tmp_path / "s.csv"
    with open(path, "w") as fh:
        fh.write("cluster_id,score\n")
        for c in range(39):
            fh.write(f"{c},5\n")
    with pytest.raises(CompletenessError, match="39"):
        ingest_scores(path, cm)


def test_ingest_scores_out_of_range(tmp_path):
    cm = fake_cluster_model(4, list("abcd"), [0, 1, 2, 3])
    path = tmp_path / "s.csv"
    with open(path, "w") as fh:
        fh.write("cluster_id,score\n0,5\n1,5\n2,5\n3,11\n")
    with pytest.raises(ValidationError, match="11"):
        ingest_scores(path, cm)


def test_ingest_scores_non_integer(tmp_path):
    cm = fake_cluster_model(1, ["a"], [0])
    path = tmp_path / "s.csv"
    with open(path, "w") as fh:
        fh.write("cluster_id,score\n0,7.5\n")
    with pytest.raises(ValidationError, match="7.5"):
        ingest_scores(path, cm)


def sheet_for(k, score):
    return ScoreSheet(k=k, scores={c: score for c in range(k)})


def test_aggregate_is_min_exhaustive():
    cm = fake_cluster_model(1, ["cell"], [0])
    for s1, s2 in itertools.product(range(1, 11), repeat=2):
        out = aggregate((cm, sheet_for(1, s1)), (cm, sheet_for(1, s2)))
        assert out.scores["cell"] == min(s1, s2)


def test_aggregate_commutative_and_bounded():
    rng = np.random.default_rng(0)
    cells = [f"g{i}" for i in range(30)]
    cm1 = fake_cluster_model(3, cells, rng.integers(0, 3, 30))
    cm2 = fake_cluster_model(5, cells, rng.integers(0, 5, 30))
    sh1 = ScoreSheet(k=3, scores={c: int(rng.integers(1, 11)) for c in range(3)})
    sh2 = ScoreSheet(k=5, scores={c: int(rng.integers(1, 11)) for c in range(5)})
    a = aggregate((cm1, sh1), (cm2, sh2))
    b = aggregate((cm2, sh2), (cm1, sh1))
    assert a.scores == b.scores
    for g in cells:
        s1 = sh1.scores[cm1.assignment[g]]
        s2 = sh2.scores[cm2.assignment[g]]
        assert a.scores[g] <= s1 and a.scores[g] <= s2
        assert 1 <= a.scores[g] <= 10


def test_aggregate_cell_mismatch():
    cm1 = fake_cluster_model(1, ["a", "b"], [0, 0])
    cm2 = fake_cluster_model(1, ["a", "c"], [0, 0])
    sheet = sheet_for(1, 5)
    with pytest.raises(CoverageError, match="b"):
        aggregate((cm1, sheet), (cm2, sheet))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=10), min_size=4, max_size=4),
       st.lists(st.integers(min_value=1, max_value=10), min_size=6, max_size=6))
def test_aggregate_min_property(scores1, scores2):
    cells = [f"g{i}" for i in range(24)]
    cm1 = fake_cluster_model(4, cells, [i % 4 for i in range(24)])
    cm2 = fake_cluster_model(6, cells, [i % 6 for i in range(24)])
    sh1 = ScoreSheet(k=4, scores=dict(enumerate(scores1)))
    sh2 = ScoreSheet(k=6, scores=dict(enumerate(scores2)))
    out = aggregate((cm1, sh1), (cm2, sh2))
    for i, g in enumerate(cells):
        assert out.scores[g] == min(scores1[i % 4], scores2[i % 6])


def test_score_sheet_validation():
    with pytest.raises(CompletenessError):
        ScoreSheet(k=3, scores={0: 5, 1: 5})
    with pytest.raises(ValidationError):
        ScoreSheet(k=1, scores={0: 0})


def test_score_disagreement_distribution():
    cells = ["a", "b"]
    cm1 = fake_cluster_model(1, cells, [0, 0])
    cm2 = fake_cluster_model(2, cells, [0, 1])
    sh1 = sheet_for(1, 7)
    sh2 = ScoreSheet(k=2, scores={0: 7, 1: 4})
    dist = score_disagreement((cm1, sh1), (cm2, sh2))
    assert dist == {0: 1, 3: 1}


def test_cluster_model_roundtrip(tmp_path, small_synth):
    d, _ = small_synth
    cm = kmeans(d, 8, seed=5)
    path = tmp_path / "cm.json"
    cm.save(path)
    loaded = ClusterModel.load(path)
    assert loaded.k == cm.k
    assert np.array_equal(loaded.centroids, cm.centroids)
    assert np.array_equal(loaded.assignment_idx, cm.assignment_idx)
    assert loaded.land_categories == cm.land_categories


def test_score_map_roundtrip(tmp_path):
    m = AggregatedScoreMap(scores={"b": 3, "a": 9}, sources=("x", "y"))
    path = tmp_path / "map.csv"
    write_score_map(m, path)
    loaded = read_score_map(path)
    assert loaded.scores == m.scores


def test_simulated_expert_scores(small_synth):
    d, gt = small_synth
    cm = kmeans(d, 10, seed=1)
    sheet = score_clusters_from_values(cm, gt.cell_threat())
    assert set(sheet.scores) == set(range(10))
    assert min(sheet.scores.values()) == 1
    assert max(sheet.scores.values()) == 10
