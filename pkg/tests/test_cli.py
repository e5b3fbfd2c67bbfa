import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from snarecast.cli import main
from snarecast.dataset import FEATURE_NAMES

from conftest import feature_row

TINY = [
    "positives_per_season=8",
    "negatives_per_season=120",
    "unlabeled_cells=400",
    "n_seasons=2",
    "cluster_ks=6,8",
    "n_trees=10",
    "n_members=2",
    "epochs=3",
    "n_repeats=1",
]


def run(args, extra_sets=()):
    sets = []
    for kv in (*TINY, *extra_sets):
        sets += ["--set", kv]
    return main([*sets, *args])


def test_full_pipeline_end_to_end(tmp_path, capsys):
    out = str(tmp_path / "run")
    assert run(["--seed", "7", "--out", out, "generate"]) == 0
    assert (tmp_path / "run" / "dataset.csv").exists()
    assert (tmp_path / "run" / "ground_truth.csv").exists()
    assert (tmp_path / "run" / "generate_config.cfg").exists()

    dataset_kv = f"dataset={out}/dataset.csv"
    assert run(["--seed", "7", "--out", out, "elicit", "--auto-score"],
               [dataset_kv]) == 0
    for k in (6, 8):
        assert (tmp_path / "run" / f"questionnaire_k{k}.csv").exists()
        assert (tmp_path / "run" / f"cluster_k{k}.json").exists()
        assert (tmp_path / "run" / f"scores_k{k}.csv").exists()

    assert run(["--seed", "7", "--out", out, "aggregate"], [dataset_kv]) == 0
    assert (tmp_path / "run" / "score_map.csv").exists()
    captured = capsys.readouterr()
    assert "disagreement" in captured.out
    # row-wise recheck: every aggregated score is the min of its two
    # cluster scores
    from snarecast.elicitation import ClusterModel, ingest_scores, read_score_map

    pairs = []
    for k in (6, 8):
        cm = ClusterModel.load(tmp_path / "run" / f"cluster_k{k}.json")
        pairs.append((cm, ingest_scores(tmp_path / "run" / f"scores_k{k}.csv", cm)))
    score_map = read_score_map(tmp_path / "run" / "score_map.csv")
    for g, s in score_map.scores.items():
        s1 = pairs[0][1].scores[pairs[0][0].assignment[g]]
        s2 = pairs[1][1].scores[pairs[1][0].assignment[g]]
        assert s == min(s1, s2)

    assert run(["--seed", "7", "--out", out, "train"],
               [dataset_kv, "plan=DD,NS,PS"]) == 0
    assert (tmp_path / "run" / "model.json").exists()

    assert run(["--seed", "7", "--out", out, "predict"], [dataset_kv]) == 0
    pred = tmp_path / "run" / "predictions.csv"
    assert pred.exists()
    with open(pred) as fh:
        rows = list(csv.DictReader(fh))
    scores = [float(r["threat_score"]) for r in rows]
    assert scores == sorted(scores, reverse=True)
    assert all(0.0 <= s <= 1.0 for s in scores)

    assert run(["--seed", "7", "--out", out, "audit"], [dataset_kv]) == 0
    assert (tmp_path / "run" / "audit_histograms.csv").exists()
    assert (tmp_path / "run" / "audit_agreement.csv").exists()

    assert run(
        ["--seed", "7", "--out", out, "evaluate"],
        [dataset_kv, "rows=DT with DD:tree:DD;Random:random:none"],
    ) == 0
    assert (tmp_path / "run" / "ablation.csv").exists()
    assert (tmp_path / "run" / "ablation.txt").exists()


def test_generate_bad_config_nonzero_exit(tmp_path, capsys):
    code = run(["--out", str(tmp_path / "x"), "generate"],
               ["positives_per_season=0"])
    assert code == 1
    assert "config error" in capsys.readouterr().err


def test_missing_dataset_file_error(tmp_path, capsys):
    code = run(["--out", str(tmp_path / "x"), "train"],
               ["dataset=/no/such/file.csv"])
    assert code == 1
    assert "file error" in capsys.readouterr().err


def test_predict_missing_artifact_error(tmp_path, capsys):
    code = run(["--out", str(tmp_path / "x"), "predict"],
               ["dataset=whatever.csv"])
    assert code == 1
    assert "file error" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    code = main(["--set", "bogus_key=1", "--out", str(tmp_path / "x"), "generate"])
    assert code == 1
    assert "config error" in capsys.readouterr().err


def test_train_single_class_surfaces_training_error(tmp_path, capsys):
    path = tmp_path / "allneg.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["grid_id", "season", *FEATURE_NAMES, "label"])
        rng = np.random.default_rng(0)
        for i in range(30):
            writer.writerow([f"g{i}", "2015",
                             *[repr(float(v)) for v in feature_row(rng)], 0])
    code = run(["--out", str(tmp_path / "x"), "train"],
               [f"dataset={path}", "plan=none"])
    assert code == 1
    assert "training error" in capsys.readouterr().err


def test_aggregate_incomplete_scores(tmp_path, capsys):
    out = str(tmp_path / "run")
    assert run(["--seed", "1", "--out", out, "generate"]) == 0
    dataset_kv = f"dataset={out}/dataset.csv"
    assert run(["--seed", "1", "--out", out, "elicit", "--auto-score"],
               [dataset_kv]) == 0
    # drop one row from a score sheet
    sheet = tmp_path / "run" / "scores_k6.csv"
    lines = sheet.read_text().splitlines()
    sheet.write_text("\n".join(lines[:-1]) + "\n")
    code = run(["--seed", "1", "--out", out, "aggregate"], [dataset_kv])
    assert code == 1
    assert "completeness error" in capsys.readouterr().err


def test_precedence_cli_over_file_over_default(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = 5\nn_trees = 33\n")
    out = tmp_path / "run"
    code = main(["--config", str(cfg), "--seed", "9", "--out", str(out),
                 "--set", "positives_per_season=4",
                 "--set", "negatives_per_season=40",
                 "--set", "unlabeled_cells=60",
                 "--set", "n_seasons=1",
                 "generate"])
    assert code == 0
    echoed = (out / "generate_config.cfg").read_text()
    values = dict(
        line.split(" = ", 1) for line in echoed.strip().splitlines()
    )
    assert values["seed"] == "9"        # CLI beats file
    assert values["n_trees"] == "33"    # file beats default
    assert values["positives_per_season"] == "4"


SCRIPT = r"""
import sys
from snarecast.cli import main

out = sys.argv[1]
sets = []
for kv in [
    "positives_per_season=6", "negatives_per_season=80",
    "unlabeled_cells=200", "n_seasons=2", "n_trees=8",
    "cluster_ks=4,5", "n_repeats=1",
    f"dataset={out}/dataset.csv",
]:
    sets += ["--set", kv]
rc = 0
rc |= main([*sets, "--seed", "3", "--out", out, "generate"])
rc |= main([*sets, "--seed", "3", "--out", out, "elicit", "--auto-score"])
rc |= main([*sets, "--seed", "3", "--out", out, "aggregate"])
rc |= main([*sets, "--seed", "3", "--out", out, "train"])
rc |= main([*sets, "--seed", "3", "--out", out, "predict"])
sys.exit(rc)
"""


def test_cross_process_determinism(tmp_path):
    """Two runs in separate processes with different hash seeds must write
    byte-identical outputs."""
    script = tmp_path / "runner.py"
    script.write_text(SCRIPT)
    outs = []
    for run_id, hash_seed in (("a", "1"), ("b", "99")):
        out = tmp_path / run_id
        env = dict(os.environ, PYTHONHASHSEED=hash_seed)
        proc = subprocess.run(
            [sys.executable, str(script), str(out)],
            env=env, capture_output=True, text=True, timeout=600,
        )
        assert proc.returncode == 0, proc.stderr
        outs.append(out)
    for name in ("dataset.csv", "ground_truth.csv", "score_map.csv",
                 "questionnaire_k4.csv", "scores_k5.csv", "model.json",
                 "predictions.csv"):
        a = (outs[0] / name).read_bytes()
        b = (outs[1] / name).read_bytes()
        assert a == b, f"{name} differs between runs"
