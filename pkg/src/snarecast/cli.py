"""Pipeline CLI: generate, elicit, aggregate, train, evaluate, predict, audit.

Every subcommand is deterministic given its configuration and seed, writes
its outputs under one name-keyed directory, and echoes the effective
configuration next to them. Errors exit nonzero with their module's error
category in front of the message.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import augmentation, dataset, elicitation, evaluation, models
from .config import RunConfig
from .errors import ConfigError, FileError, SnarecastError
from .models.nets import NetParams
from .models.trees import TreeParams


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snarecast",
        description="Grid-cell poaching threat prediction pipeline",
    )
    parser.add_argument("--config", help="flat key-value config file")
    parser.add_argument("--seed", type=int, help="master random seed")
    parser.add_argument("--out", help="output directory for this run")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config key (repeatable)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", help="write a synthetic dataset plus ground-truth sidecar")
    elicit = sub.add_parser("elicit", help="cluster cells and emit expert questionnaires")
    elicit.add_argument(
        "--auto-score",
        action="store_true",
        help="also fill score sheets from the ground-truth sidecar",
    )
    sub.add_parser("aggregate", help="combine two score sheets into a per-cell score map")
    sub.add_parser("train", help="augment per plan and train a threat model")
    sub.add_parser("evaluate", help="run the cross-validated ablation table")
    sub.add_parser("predict", help="score every cell with a trained model artifact")
    sub.add_parser("audit", help="histograms and range-agreement report")
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg.read_file(args.config)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got '{item}'")
        key, raw = item.split("=", 1)
        cfg.set(key.strip(), raw)
    if args.seed is not None:
        cfg.set_typed("seed", int(args.seed))
    if args.out is not None:
        cfg.set_typed("out", str(args.out))
    if getattr(args, "auto_score", False):
        cfg.set_typed("auto_score", True)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(str(cfg["out"]))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_dataset(cfg: RunConfig) -> dataset.Dataset:
    path = str(cfg["dataset"])
    if not path:
        raise ConfigError("no dataset configured (set dataset=PATH)")
    if not Path(path).exists():
        raise FileError(f"dataset file not found: {path}")
    return dataset.ingest_csv(path)


def _synth_config(cfg: RunConfig) -> dataset.SyntheticConfig:
    return dataset.SyntheticConfig(
        positives_per_season=int(cfg["positives_per_season"]),
        negatives_per_season=int(cfg["negatives_per_season"]),
        unlabeled_cells=int(cfg["unlabeled_cells"]),
        n_seasons=int(cfg["n_seasons"]),
        first_season_year=int(cfg["first_season_year"]),
        land_types=int(cfg["land_types"]),
        threat_center=float(cfg["threat_center"]),
        threat_sharpness=float(cfg["threat_sharpness"]),
        patrol_bias=float(cfg["patrol_bias"]),
    )


def _plan(cfg: RunConfig, spec: str | None = None) -> augmentation.AugmentationPlan:
    return augmentation.AugmentationPlan.from_spec(
        spec if spec is not None else str(cfg["plan"]),
        seed=int(cfg["seed"]),
        ns_fraction=float(cfg["ns_fraction"]),
        ps_threshold=int(cfg["ps_threshold"]),
        smote_k=int(cfg["smote_k"]),
        smote_amount=int(cfg["smote_amount"]) or None,
        psfr_p=float(cfg["psfr_p"]),
        psfr_q=float(cfg["psfr_q"]),
        psfr_top_n=int(cfg["psfr_top_n"]) or None,
    )


def _model_spec(cfg: RunConfig, kind: str | None = None) -> evaluation.ModelSpec:
    return evaluation.ModelSpec(
        kind=kind if kind is not None else str(cfg["model"]),
        tree=TreeParams(
            n_trees=int(cfg["n_trees"]),
            subsample_fraction=float(cfg["subsample_fraction"]),
            min_leaf=float(cfg["min_leaf"]),
            with_replacement=bool(cfg["with_replacement"]),
        ),
        net=NetParams(
            n_members=int(cfg["n_members"]),
            learning_rate=float(cfg["learning_rate"]),
            batch_size=int(cfg["batch_size"]),
            l2=float(cfg["l2"]),
            epochs=int(cfg["epochs"]),
        ),
        threshold=float(cfg["threshold"]),
    )


def _ranges(cfg: RunConfig) -> list[augmentation.FeatureRange]:
    path = str(cfg["ranges"])
    if path:
        return augmentation.read_ranges_csv(path)
    return augmentation.default_ranges()


def _scores(cfg: RunConfig, out: Path) -> elicitation.AggregatedScoreMap | None:
    path = str(cfg["score_map"]) or str(out / "score_map.csv")
    if not Path(path).exists():
        return None
    return elicitation.read_score_map(path)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: RunConfig) -> None:
    out = _out_dir(cfg)
    d, gt = dataset.generate_synthetic(_synth_config(cfg), seed=int(cfg["seed"]))
    dataset.emit_csv(d, out / "dataset.csv")
    dataset.emit_ground_truth_csv(gt, out / "ground_truth.csv")
    print(dataset.format_skew_report(dataset.skew_report(d)))
    print(f"wrote {out / 'dataset.csv'} and {out / 'ground_truth.csv'}")


def cmd_elicit(cfg: RunConfig) -> None:
    out = _out_dir(cfg)
    d = _require_dataset(cfg)
    seed = int(cfg["seed"])
    for k in cfg.int_list("cluster_ks"):
        cm = elicitation.kmeans(
            d, k, seed=seed, max_iter=int(cfg["kmeans_max_iter"]),
            tol=float(cfg["kmeans_tol"]),
        )
        elicitation.emit_questionnaire(cm, d, out / f"questionnaire_k{k}.csv")
        cm.save(out / f"cluster_k{k}.json")
        print(f"k={k}: inertia {cm.inertia:.4f}, wrote questionnaire_k{k}.csv")
        if bool(cfg["auto_score"]):
            gt_path = str(cfg["ground_truth"]) or str(Path(str(cfg["out"])) / "ground_truth.csv")
            if not Path(gt_path).exists():
                raise FileError(f"auto_score needs a ground-truth sidecar: {gt_path}")
            rates = dataset.read_ground_truth_rates(gt_path)
            sheet = elicitation.score_clusters_from_values(cm, rates)
            elicitation.write_scores(sheet, out / f"scores_k{k}.csv")
            print(f"k={k}: auto-filled scores_k{k}.csv")


def cmd_aggregate(cfg: RunConfig) -> None:
    out = _out_dir(cfg)
    ks = cfg.int_list("cluster_ks")
    if len(ks) != 2:
        raise ConfigError(f"aggregation needs exactly 2 cluster resolutions, got {ks}")
    model_paths = cfg.str_list("cluster_models") or [
        str(out / f"cluster_k{k}.json") for k in ks
    ]
    score_paths = cfg.str_list("score_files") or [
        str(out / f"scores_k{k}.csv") for k in ks
    ]
    if len(model_paths) != 2 or len(score_paths) != 2:
        raise ConfigError("need two cluster models and two score files")
    pairs = []
    for mp, sp in zip(model_paths, score_paths):
        cm = elicitation.ClusterModel.load(mp)
        pairs.append((cm, elicitation.ingest_scores(sp, cm)))
    score_map = elicitation.aggregate(pairs[0], pairs[1])
    elicitation.write_score_map(score_map, out / "score_map.csv")
    disagreement = elicitation.score_disagreement(pairs[0], pairs[1])
    total = sum(disagreement.values())
    print("score disagreement |s1-s2| distribution:")
    for delta in sorted(disagreement):
        print(f"  {delta}: {disagreement[delta]} cells ({disagreement[delta] / total:.1%})")
    print(f"wrote {out / 'score_map.csv'}")


def cmd_train(cfg: RunConfig) -> None:
    out = _out_dir(cfg)
    d = _require_dataset(cfg)
    plan = _plan(cfg)
    scores = _scores(cfg, out)
    if plan.needs_scores() and scores is None:
        raise ConfigError("plan includes PS but no score_map file is available")
    ranges = _ranges(cfg) if plan.needs_ranges() else None
    view = augmentation.TrainingView.from_dataset(d)
    view = plan.apply(view, pool=d.unlabeled_pool(), scores=scores, ranges=ranges)
    spec = _model_spec(cfg)
    model = evaluation.train_model(spec, view, seed=int(cfg["seed"]))
    model.save(out / "model.json")
    n_pos, n_neg = view.counts()
    added = view.added_counts()
    print(f"training view: {n_pos} positives / {n_neg} negatives; added {added or 'nothing'}")
    print(f"wrote {out / 'model.json'}")


DEFAULT_ROWS = (
    ("Random decisions", "none", "random"),
    ("DT", "none", "tree"),
    ("DT with DD", "DD", "tree"),
    ("DT with SMOTE", "SMOTE", "tree"),
    ("DT with DD, PS", "DD,PS", "tree"),
    ("DT with DD and NS", "DD,NS", "tree"),
    ("DT with DD, NS, PS", "DD,NS,PS", "tree"),
    ("NN", "none", "net"),
    ("NN with DD", "DD", "net"),
    ("NN with DD, NS", "DD,NS", "net"),
    ("NN with DD, NS, PS", "DD,NS,PS", "net"),
)


def _parse_rows(cfg: RunConfig, have_scores: bool) -> list[evaluation.AblationRow]:
    spec = str(cfg["rows"])
    rows = []
    if spec == "auto":
        for name, plan_spec, kind in DEFAULT_ROWS:
            if "PS" in plan_spec.split(",") and not have_scores:
                continue
            rows.append(
                evaluation.AblationRow(
                    name=name, plan=_plan(cfg, plan_spec), spec=_model_spec(cfg, kind)
                )
            )
        return rows
    # grammar: "name:model:plan;name:model:plan;..."
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        bits = part.split(":")
        if len(bits) != 3:
            raise ConfigError(
                f"row '{part}' must be name:model:plan (e.g. 'DT with DD:tree:DD')"
            )
        name, kind, plan_spec = (b.strip() for b in bits)
        rows.append(
            evaluation.AblationRow(
                name=name, plan=_plan(cfg, plan_spec), spec=_model_spec(cfg, kind)
            )
        )
    if not rows:
        raise ConfigError("no ablation rows configured")
    return rows


def cmd_evaluate(cfg: RunConfig) -> None:
    out = _out_dir(cfg)
    d = _require_dataset(cfg)
    scores = _scores(cfg, out)
    ranges = _ranges(cfg)
    rows = _parse_rows(cfg, have_scores=scores is not None)
    cv = evaluation.CVConfig(
        n_folds=int(cfg["n_folds"]),
        n_repeats=int(cfg["n_repeats"]),
        seed=int(cfg["seed"]),
        resample_pool_per_fold=bool(cfg["resample_pool_per_fold"]),
    )
    table = evaluation.ablation_table(d, rows, cv, scores=scores, ranges=ranges)
    evaluation.write_table_csv(table, out / "ablation.csv")
    text = evaluation.format_table(table)
    (out / "ablation.txt").write_text(text + "\n", encoding="utf-8")
    print(text)


def cmd_predict(cfg: RunConfig) -> None:
    out = _out_dir(cfg)
    artifact = str(cfg["model_artifact"]) or str(out / "model.json")
    if not Path(artifact).exists():
        raise FileError(f"model artifact not found: {artifact}")
    model = models.ThreatModel.load(artifact)
    d = _require_dataset(cfg)
    rows = models.predict_map(model, d)
    models.write_prediction_csv(rows, out / "predictions.csv")
    top = f", top score {rows[0][2]:.4f}" if rows else ""
    print(f"wrote {out / 'predictions.csv'} ({len(rows)} rows{top})")


def cmd_audit(cfg: RunConfig) -> None:
    out = _out_dir(cfg)
    d = _require_dataset(cfg)
    ranges = _ranges(cfg)
    report = augmentation.feature_audit(d, ranges)
    augmentation.write_audit_histograms(report, out / "audit_histograms.csv")
    augmentation.write_audit_agreement(report, out / "audit_agreement.csv")
    for a in report.agreements:
        print(f"{a.feature}: inside {a.inside_rate:.4f} vs outside "
              f"{a.outside_rate:.4f} -> {a.verdict}")


COMMANDS = {
    "generate": cmd_generate,
    "elicit": cmd_elicit,
    "aggregate": cmd_aggregate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "audit": cmd_audit,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        out = _out_dir(cfg)
        cfg.echo(out / f"{args.command}_config.cfg")
        COMMANDS[args.command](cfg)
    except SnarecastError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
