"""Command-line pipeline: gen -> train -> eval -> triage -> serve.

Configuration comes from defaults, then an optional JSON config file, then
flags (later wins). Unknown config keys are rejected. Exit codes: 0 success,
2 usage or config error, 3 no policy satisfies the triage constraints,
1 anything else.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .datagen import (
    SceneConfig,
    augment,
    combo_channels,
    generate_dataset,
    normalize_combo,
    permute_channels,
    read_dataset,
    split,
    standardize,
    write_dataset,
)
from .evaluation import (
    ConfusionCounts,
    EvalReport,
    metrics as compute_metrics,
    roc_auc,
    write_roc_csv,
)
from .jsonutil import dump_canonical, load_json
from .models import CHANNEL_PLANS, ModelSpec, load_model, param_count, save_model
from .service import ReviewState, build_queue_items, make_server
from .training import TrainConfig, bce_value, cross_validate, predict_batched
from .triage import (
    TriagePolicy,
    grid_search,
    score_histogram,
    select_operating_point,
    triage_stats,
    write_histogram_csv,
    write_table_csv,
)


class UsageError(Exception):
    """Bad flags or bad config; exits with status 2."""


class InfeasibleError(Exception):
    """No operating point satisfies the constraints; exits with status 3."""


DEFAULT_CONFIG: dict = {
    "seed": 0,
    "n_samples": 2000,
    "positive_fraction": 0.75,
    "combo": [32, 4],
    "augment": False,
    "permute_channels": False,
    "scene": SceneConfig().to_dict(),
    "model": {
        "model_id": "cnn3",
        "cbam_enabled": True,
        "dropout_rate": 0.25,
        "cbam_reduction": 16,
    },
    "train": TrainConfig().to_dict(),
    "triage": {
        "grid_step": 0.01,
        "min_precision": 0.99,
        "min_inverse_precision": 0.95,
    },
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise UsageError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config key {where} must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if path:
        try:
            user = load_json(path)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}")
        except ValueError as e:
            raise UsageError(f"config file {path} is not valid JSON: {e}")
        if not isinstance(user, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        cfg = _merge(cfg, user)
    return cfg


def _apply_flags(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = dict(cfg)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
        cfg["train"] = dict(cfg["train"], seed=args.seed)
    if getattr(args, "combo", None):
        try:
            cfg["combo"] = [int(d) for d in args.combo.split(",") if d.strip()]
        except ValueError:
            raise UsageError(f"--combo must be comma-separated integers, got {args.combo!r}")
    if getattr(args, "model", None):
        if args.model not in CHANNEL_PLANS:
            raise UsageError(f"--model must be one of {sorted(CHANNEL_PLANS)}, got {args.model!r}")
        cfg["model"] = dict(cfg["model"], model_id=args.model)
    if getattr(args, "cbam", None):
        cfg["model"] = dict(cfg["model"], cbam_enabled=args.cbam == "on")
    return cfg


def _model_spec(cfg: dict, input_channels: int) -> ModelSpec:
    m = cfg["model"]
    try:
        return ModelSpec(
            model_id=m["model_id"],
            input_channels=input_channels,
            cbam_enabled=bool(m["cbam_enabled"]),
            dropout_rate=float(m["dropout_rate"]),
            cbam_reduction=int(m["cbam_reduction"]),
        )
    except ValueError as e:
        raise UsageError(str(e))


def _train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg["train"])
    t.setdefault("seed", cfg["seed"])
    try:
        return TrainConfig.from_dict(t)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(cfg: dict, out_dir: str) -> int:
    try:
        scene = SceneConfig.from_dict(cfg["scene"])
        combo = normalize_combo(cfg["combo"], scene.n_frames)
    except (TypeError, ValueError) as e:
        raise UsageError(str(e))
    samples = generate_dataset(
        int(cfg["n_samples"]), float(cfg["positive_fraction"]), combo, scene, int(cfg["seed"])
    )
    if cfg["augment"]:
        samples = [v for s in samples for v in augment(s)]
    if cfg["permute_channels"]:
        samples = [
            permute_channels(s, np.random.default_rng([int(cfg["seed"]), 6, i]))
            for i, s in enumerate(samples)
        ]
    samples, stats = standardize(samples)
    write_dataset(samples, out_dir, stats)
    n_pos = sum(s.label for s in samples)
    print(f"dataset written to {out_dir}")
    print(f"  samples    {len(samples)}")
    print(f"  positives  {n_pos}")
    print(f"  negatives  {len(samples) - n_pos}")
    print(f"  combo      {','.join(str(d) for d in combo)}  ({combo_channels(combo, scene.n_frames)} channels)")
    print(f"  standardization mean={stats['mean']:.6g} std={stats['std']:.6g}")
    return 0


def cmd_train(cfg: dict, data_dir: str, out_dir: str) -> int:
    samples, _, combo = read_dataset(data_dir)
    spl = split(samples, int(cfg["seed"]))
    pool = spl.train + spl.val
    if not pool or not spl.test:
        raise UsageError("dataset too small to split into train/val/test")
    channels = samples[0].channels.shape[0]
    spec = _model_spec(cfg, channels)
    tcfg = _train_config(cfg)
    os.makedirs(out_dir, exist_ok=True)

    streams = [open(os.path.join(out_dir, f"fold{i}.ndjson"), "w", encoding="utf-8") for i in range(tcfg.k_folds)]
    try:
        cv = cross_validate(pool, spec, tcfg, log_streams=streams)
    finally:
        for fh in streams:
            fh.close()

    for fold in cv.folds:
        save_model(fold.model, os.path.join(out_dir, f"fold{fold.fold}.model"))

    x_pool = np.stack([s.channels for s in pool])
    y_pool = np.array([s.label for s in pool])
    pool_scores = np.mean([predict_batched(m, x_pool) for m in cv.models], axis=0)
    _, train_auc = roc_auc(pool_scores, y_pool)

    report = {
        "model": spec.to_dict(),
        "train_config": tcfg.to_dict(),
        "combo": list(combo),
        "pool_samples": len(pool),
        "test_samples": len(spl.test),
        "test_base_ids": sorted({s.base_id for s in spl.test}),
        "folds": [
            {
                "fold": f.fold,
                "best_epoch": f.history.best_epoch,
                "best_val_loss": f.history.best_val_loss,
                "epochs_run": len(f.history.epochs),
                "stopped_early": f.history.stopped_early,
                "metrics": f.report.metrics.to_dict(),
                "auc": f.report.auc,
                "counts": f.report.counts.to_dict(),
            }
            for f in cv.folds
        ],
        "aggregate": cv.aggregate,
        "train_auc": float(train_auc),
    }
    dump_canonical(report, os.path.join(out_dir, "cv_report.json"))

    def fmt(v):
        return "  undef" if v is None else f"{v:7.4f}"

    print(f"trained {len(cv.folds)} folds of {spec.model_id} "
          f"(cbam={'on' if spec.cbam_enabled else 'off'}, {param_count(cv.models[0])} params)")
    print(f"{'fold':>4} {'epochs':>6} {'val_loss':>9} {'acc':>7} {'prec':>7} {'recall':>7} {'f1':>7} {'auc':>7}")
    for f in cv.folds:
        m = f.report.metrics
        print(
            f"{f.fold:>4} {len(f.history.epochs):>6} {f.history.best_val_loss:>9.4f}"
            f" {fmt(m.accuracy)} {fmt(m.precision)} {fmt(m.recall)} {fmt(m.f1)} {fmt(f.report.auc)}"
        )
    agg = cv.aggregate
    if agg.get("auc"):
        print(f"fold-mean auc {agg['auc']['mean']:.4f} +- {agg['auc']['std']:.4f}; pool auc {train_auc:.4f}")
    print(f"models and cv_report.json written to {out_dir}")
    return 0


def _load_ensemble(models_dir: str):
    names = sorted(n for n in os.listdir(models_dir) if n.endswith(".model"))
    if not names:
        raise UsageError(f"no .model files in {models_dir}")
    return [load_model(os.path.join(models_dir, n)) for n in names]


def cmd_eval(cfg: dict, models_dir: str, data_dir: str, out_dir: str, which: str = "all") -> int:
    models = _load_ensemble(models_dir)
    samples, _, _ = read_dataset(data_dir)
    report_path = os.path.join(models_dir, "cv_report.json")
    train_auc = None
    if os.path.exists(report_path):
        train_report = load_json(report_path)
        train_auc = train_report.get("train_auc")
        if which == "test":
            keep = set(train_report.get("test_base_ids", []))
            samples = [s for s in samples if s.base_id in keep]
    elif which == "test":
        raise UsageError(f"--split test needs {report_path} to know the held-out ids")
    if not samples:
        raise UsageError("no samples selected for evaluation")

    x = np.stack([s.channels for s in samples])
    y = np.array([s.label for s in samples])
    per_model = np.stack([predict_batched(m, x) for m in models])
    votes = ((per_model >= 0.5).sum(axis=0) * 2 >= len(models)).astype(np.int64)
    scores = per_model.mean(axis=0)

    counts = ConfusionCounts(
        tp=int(((votes == 1) & (y == 1)).sum()),
        fp=int(((votes == 1) & (y == 0)).sum()),
        tn=int(((votes == 0) & (y == 0)).sum()),
        fn=int(((votes == 0) & (y == 1)).sum()),
    )
    mets = compute_metrics(counts)
    try:
        roc, auc = roc_auc(scores, y)
    except ValueError:
        roc, auc = [], None
    report = EvalReport(threshold=0.5, n_samples=len(samples), counts=counts, metrics=mets, auc=auc, roc=roc)

    os.makedirs(out_dir, exist_ok=True)
    payload = report.to_dict()
    payload["ensemble_size"] = len(models)
    payload["split"] = which
    payload["loss"] = bce_value(scores, y)
    if train_auc is not None and auc is not None:
        payload["train_auc"] = train_auc
        payload["auc_gap"] = auc - train_auc
    dump_canonical(payload, os.path.join(out_dir, "eval_report.json"))
    write_roc_csv(os.path.join(out_dir, "roc.csv"), roc)
    dump_canonical(
        {
            "ids": [s.sample_id for s in samples],
            "labels": [int(v) for v in y],
            "scores": [float(v) for v in scores],
            "votes": [int(v) for v in votes],
        },
        os.path.join(out_dir, "scores.json"),
    )

    def fmt(v):
        return "undefined" if v is None else f"{v:.4f}"

    print(f"evaluated {len(samples)} samples ({which}) with {len(models)}-model ensemble")
    print(f"  tp {counts.tp}  fp {counts.fp}  tn {counts.tn}  fn {counts.fn}")
    print(f"  accuracy          {fmt(mets.accuracy)}")
    print(f"  precision         {fmt(mets.precision)}")
    print(f"  recall            {fmt(mets.recall)}")
    print(f"  f1                {fmt(mets.f1)}")
    print(f"  inverse precision {fmt(mets.inverse_precision)}")
    print(f"  auc               {fmt(auc)}")
    if train_auc is not None and auc is not None:
        print(f"  auc gap vs train  {auc - train_auc:+.4f}")
    print(f"reports written to {out_dir}")
    return 0


def cmd_triage(cfg: dict, scores_path: str, out_dir: str) -> int:
    data = load_json(scores_path)
    scores = np.asarray(data["scores"], dtype=np.float64)
    labels = np.asarray(data["labels"], dtype=np.int64)
    tri = cfg["triage"]
    step = float(tri["grid_step"])
    min_p = float(tri["min_precision"])
    min_ip = float(tri["min_inverse_precision"])

    table = grid_search(scores, labels, step)
    os.makedirs(out_dir, exist_ok=True)
    write_table_csv(os.path.join(out_dir, "triage_table.csv"), table)
    write_histogram_csv(os.path.join(out_dir, "score_histogram.csv"), score_histogram(scores, labels))

    policy = select_operating_point(table, min_p, min_ip)
    if policy is None:
        print(
            f"no threshold pair on the {step} lattice reaches precision >= {min_p} "
            f"and inverse precision >= {min_ip}",
            file=sys.stderr,
        )
        raise InfeasibleError("no feasible operating point")

    stats = triage_stats(scores, labels, policy)
    dump_canonical(
        {
            "policy": policy.to_dict(),
            "constraints": {"min_precision": min_p, "min_inverse_precision": min_ip, "grid_step": step},
            "stats": stats.to_dict(),
        },
        os.path.join(out_dir, "triage_policy.json"),
    )

    def fmt(v):
        return "undefined" if v is None else f"{v:.4f}"

    print(f"operating point: accept > {policy.positive_threshold:g}, reject < {policy.negative_threshold:g}")
    print(f"  auto accepted   {stats.auto_positive} (precision {fmt(stats.precision)})")
    print(f"  auto rejected   {stats.auto_negative} (inverse precision {fmt(stats.inverse_precision)})")
    print(f"  human review    {stats.human_review} ({100.0 * stats.remaining_ratio:.2f}% of {stats.total})")
    print(f"policy and tables written to {out_dir}")
    return 0


def cmd_serve(
    cfg: dict,
    models_dir: str,
    data_dir: str,
    policy_path: str,
    port: int,
    out_dir: str,
    ui_dir: str | None,
) -> int:
    models = _load_ensemble(models_dir)
    samples, _, _ = read_dataset(data_dir)
    policy_doc = load_json(policy_path)
    policy = TriagePolicy.from_dict(policy_doc["policy"] if "policy" in policy_doc else policy_doc)

    x = np.stack([s.channels for s in samples])
    scores = np.mean([predict_batched(m, x) for m in models], axis=0)
    items = build_queue_items(samples, scores, policy)

    os.makedirs(out_dir, exist_ok=True)
    state = ReviewState(items=items, policy=policy, verdict_path=os.path.join(out_dir, "verdicts.ndjson"))
    server = make_server(state, port=port, ui_dir=ui_dir)
    host, bound_port = server.server_address[0], server.server_address[1]
    stats = state.stats()
    print(f"review service on http://{host}:{bound_port}/ ({stats['human_pending']} pending, "
          f"{stats['auto_positive']} auto-accepted, {stats['auto_negative']} auto-rejected)")
    print(f"verdict log: {os.path.join(out_dir, 'verdicts.ndjson')}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stackvet",
        description="Vet multi-depth shift-and-stack candidates: generate, train, evaluate, triage, review.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON config file (unknown keys rejected)")
        if seed:
            p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("gen", help="generate a synthetic stacked-cutout dataset")
    common(p)
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--combo", help="comma-separated stack depths, e.g. 32,4")
    p.add_argument("--n-samples", type=int, dest="n_samples", help="sample count override")
    p.add_argument("--augment", action="store_true", help="add the six orientation variants")

    p = sub.add_parser("train", help="cross-validate a model on a dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory from gen")
    p.add_argument("--out", required=True, help="output directory for models and reports")
    p.add_argument("--model", help="model id (cnn1..cnn6)")
    p.add_argument("--cbam", choices=["on", "off"], help="toggle attention blocks")

    p = sub.add_parser("eval", help="evaluate a trained ensemble on a dataset")
    common(p)
    p.add_argument("--models", required=True, help="directory holding fold*.model")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory for reports")
    p.add_argument("--split", choices=["all", "test"], default="all",
                   help="evaluate everything or only the held-out test groups")

    p = sub.add_parser("triage", help="pick dual thresholds from scored samples")
    common(p)
    p.add_argument("--scores", required=True, help="scores.json from eval")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--min-precision", type=float, dest="min_precision")
    p.add_argument("--min-inverse-precision", type=float, dest="min_inverse_precision")
    p.add_argument("--grid-step", type=float, dest="grid_step")

    p = sub.add_parser("serve", help="serve the human-review queue over HTTP")
    common(p, seed=False)
    p.add_argument("--models", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--policy", required=True, help="triage_policy.json from triage")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--out", required=True, help="directory for the verdict log")
    p.add_argument("--ui", help="static directory with the review UI")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = load_config(args.config)
    cfg = _apply_flags(cfg, args)

    if args.command == "gen":
        if args.n_samples is not None:
            if args.n_samples < 1:
                raise UsageError(f"--n-samples must be >= 1, got {args.n_samples}")
            cfg["n_samples"] = args.n_samples
        if args.augment:
            cfg["augment"] = True
        return cmd_gen(cfg, args.out)
    if args.command == "train":
        return cmd_train(cfg, args.data, args.out)
    if args.command == "eval":
        return cmd_eval(cfg, args.models, args.data, args.out, args.split)
    if args.command == "triage":
        tri = dict(cfg["triage"])
        if args.min_precision is not None:
            tri["min_precision"] = args.min_precision
        if args.min_inverse_precision is not None:
            tri["min_inverse_precision"] = args.min_inverse_precision
        if args.grid_step is not None:
            tri["grid_step"] = args.grid_step
        cfg["triage"] = tri
        return cmd_triage(cfg, args.scores, args.out)
    if args.command == "serve":
        return cmd_serve(cfg, args.models, args.data, args.policy, args.port, args.out, args.ui)
    raise UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    try:
        return run(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except InfeasibleError:
        return 3
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
