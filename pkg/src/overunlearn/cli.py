"""Command-line interface: train / attack / unlearn / evaluate / run / report.

Stages read and write documented artifacts (checkpoint directories, request
CSVs, report JSON) so that separate invocations compose into the same result
as one `run`. Exit codes: 0 success, 1 configuration/usage error, 2
runtime or numerical error.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, apply_override, config_from_dict, load_config
from .data import Dataset, from_csv, to_csv
from .engine.checkpoint import load_model, save_model
from .pipeline import (
    build_dataset,
    build_unlearn_config,
    craft_attack_request,
    draw_unlearn_set,
    run,
    stage_seed,
    train_model,
)
from .report import canonical_json, load_report, render_figures, write_csv, write_report
from .service import ServerHandle, UnlearnRequest
from .unlearn import finetune_unlearn, gradient_overwrite

OUTPUT_ROOT_ENV = "OVERUNLEARN_OUT"


def _default_out(args, cfg) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / (cfg.name if cfg is not None else "out")


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    return cfg


def _require(path: Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing {what}: {path}")
    return path


def cmd_train(args):
    cfg = _load(args)
    out = _default_out(args, cfg)
    for seed in cfg.seeds:
        model, history, _ = train_model(cfg, seed)
        ckpt = out / f"seed{seed}" / "checkpoint"
        save_model(model, ckpt)
        meta = {"seed": seed, "epochs_run": len(history),
                "history": [[tl, vl] for tl, vl in history]}
        (ckpt.parent / "train_meta.json").write_text(canonical_json(meta) + "\n")
        print(f"trained seed {seed}: {len(history)} epochs -> {ckpt}")
    return 0


def cmd_attack(args):
    cfg = _load(args)
    out = _default_out(args, cfg)
    ckpt_root = _require(args.checkpoint, "checkpoint directory")
    for seed in cfg.seeds:
        model = load_model(_resolve_ckpt(ckpt_root, seed))
        train_pool, test_set = build_dataset(cfg.dataset, seed)
        from .data import SplitSpec, split
        tr, _, _ = split(train_pool, SplitSpec(0.8, 0.2, rng_seed=stage_seed(seed, "split")))
        d_u = draw_unlearn_set(cfg, tr, seed)
        server = ServerHandle(model, test_set, cfg.unlearn.method,
                              build_unlearn_config(cfg, seed))
        oracle = server.oracle()
        request, attack_report = craft_attack_request(cfg, d_u, oracle, seed)
        seed_dir = out / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        req_ds = Dataset(request.features, request.labels, model.class_count,
                         name="request", provenance="derived")
        to_csv(req_ds, seed_dir / "request.csv")
        (seed_dir / "request_meta.json").write_text(canonical_json({
            "requester": request.requester,
            "feature_shape": list(request.features.shape[1:]),
            "count": len(request),
            "oracle_queries": oracle.query_count,
        }) + "\n")
        if attack_report is not None:
            (seed_dir / "attack_report.json").write_text(
                canonical_json(attack_report) + "\n")
        print(f"crafted {cfg.attack.kind} request seed {seed}: "
              f"{len(request)} samples, {oracle.query_count} queries")
    return 0


def cmd_unlearn(args):
    cfg = _load(args)
    out = _default_out(args, cfg)
    ckpt_root = _require(args.checkpoint, "checkpoint directory")
    req_root = _require(args.request, "request directory or CSV")
    for seed in cfg.seeds:
        model = load_model(_resolve_ckpt(ckpt_root, seed))
        req_csv, req_meta = _resolve_request(req_root, seed)
        meta = json.loads(req_meta.read_text()) if req_meta else {}
        ds = from_csv(req_csv, class_count=model.class_count,
                      feature_shape=meta.get("feature_shape"))
        ucfg = build_unlearn_config(cfg, seed)
        if cfg.unlearn.method == "gradient_overwrite":
            new_model = gradient_overwrite(model, ds, ucfg)
        else:
            new_model = finetune_unlearn(model, ds, ucfg)
        ckpt = out / f"seed{seed}" / "unlearned"
        save_model(new_model, ckpt)
        print(f"unlearned seed {seed} ({cfg.unlearn.method}) -> {ckpt}")
    return 0


def cmd_evaluate(args):
    cfg = _load(args)
    ckpt_root = _require(args.checkpoint, "checkpoint directory")
    results = {}
    for seed in cfg.seeds:
        model = load_model(_resolve_ckpt(ckpt_root, seed))
        _, test_set = build_dataset(cfg.dataset, seed)
        server = ServerHandle(model, test_set)
        per_class = server.evaluate("per_class")
        results[str(seed)] = {
            "overall": server.evaluate("overall"),
            "per_class": [None if np.isnan(v) else float(v) for v in per_class],
            "class_a": server.evaluate(cfg.unlearned_class),
            "histogram_class_a": [int(c) for c in
                                  server.test_class_histogram(cfg.unlearned_class)],
        }
        print(f"seed {seed}: overall={results[str(seed)]['overall']:.4f} "
              f"class{cfg.unlearned_class}={results[str(seed)]['class_a']:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "evaluation.json").write_text(canonical_json(results) + "\n")
    return 0


def cmd_run(args):
    cfg = _load(args)
    out = _default_out(args, cfg)
    sweeps = _parse_sweep(args.sweep)
    if not sweeps:
        report = run(cfg)
        write_report(report, out)
        s = report["summary"]
        print(f"run {cfg.name}: median alpha1={s['median_alpha1']:.4f} "
              f"alpha2={s['median_alpha2']:.4f} margin={s['median_margin']:.4f} "
              f"over-unlearning in {s['over_unlearning_seeds']}/{s['seed_count']} seeds")
        print(f"report written to {out}")
        return 0
    key, values = sweeps
    raw = yaml.safe_load(Path(args.config).read_text()) or {}
    raw.setdefault("name", Path(args.config).stem)
    for value in values:
        point = json.loads(json.dumps(raw))  # deep copy
        apply_override(point, key, value)
        point["name"] = f"{raw['name']}__{key.replace('.', '-')}={value}"
        sub_cfg = config_from_dict(point)
        if args.seed is not None:
            sub_cfg.seeds = [args.seed]
        report = run(sub_cfg)
        sub_out = out / f"{key.replace('.', '-')}={value}"
        write_report(report, sub_out)
        print(f"sweep {key}={value}: median margin "
              f"{report['summary']['median_margin']:.4f} -> {sub_out}")
    return 0


def cmd_report(args):
    report = load_report(args.report)
    out = Path(args.out) if args.out else Path(args.report).parent
    out.mkdir(parents=True, exist_ok=True)
    write_csv(report, out / "report.csv")
    figures = render_figures(report, out / "figures")
    print(f"wrote {out / 'report.csv'} and {len(figures)} figures")
    return 0


def _resolve_ckpt(root: Path, seed: int) -> Path:
    root = Path(root)
    for cand in (root / f"seed{seed}" / "checkpoint", root / f"seed{seed}" / "unlearned",
                 root):
        if (cand / "manifest.json").exists():
            return cand
    raise FileNotFoundError(
        f"missing checkpoint manifest under {root} (looked for seed{seed}/checkpoint, "
        f"seed{seed}/unlearned, and {root / 'manifest.json'})")


def _resolve_request(root: Path, seed: int):
    root = Path(root)
    if root.is_file():
        meta = root.with_name("request_meta.json")
        return root, (meta if meta.exists() else None)
    csv_path = root / f"seed{seed}" / "request.csv"
    if not csv_path.exists():
        raise FileNotFoundError(f"missing request CSV: {csv_path}")
    meta = csv_path.with_name("request_meta.json")
    return csv_path, (meta if meta.exists() else None)


def _parse_sweep(sweep):
    if not sweep:
        return None
    if "=" not in sweep:
        raise ConfigError(f"--sweep expects key=v1,v2,..., got {sweep!r}")
    key, _, values = sweep.partition("=")
    parsed = [yaml.safe_load(v) for v in values.split(",") if v != ""]
    if not parsed:
        raise ConfigError(f"--sweep {key}: no values given")
    return key.strip(), parsed


def build_parser():
    parser = argparse.ArgumentParser(
        prog="overunlearn",
        description="Over-unlearning laboratory: train, attack, unlearn, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, request=False):
        p.add_argument("--config", required=True, help="experiment config (YAML)")
        p.add_argument("--seed", type=int, default=None,
                       help="run a single seed instead of the config's list")
        p.add_argument("--out", default=None,
                       help=f"output directory (default: config output_dir, "
                            f"then ${OUTPUT_ROOT_ENV}/<name>, then runs/<name>)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True,
                           help="checkpoint directory (from `train` or `unlearn`)")
        if request:
            p.add_argument("--request", required=True,
                           help="request CSV or the `attack` output directory")

    common(sub.add_parser("train", help="train and checkpoint the served model"))
    common(sub.add_parser("attack", help="craft an unlearning request via the oracle"),
           checkpoint=True)
    common(sub.add_parser("unlearn", help="apply the configured unlearning method"),
           checkpoint=True, request=True)
    common(sub.add_parser("evaluate", help="accuracy report for a checkpoint"),
           checkpoint=True)
    p_run = sub.add_parser("run", help="full pipeline over all seeds")
    common(p_run)
    p_run.add_argument("--sweep", default=None,
                       help="key=v1,v2,... ablation over one config field")
    p_rep = sub.add_parser("report", help="render CSV and figures from a report")
    p_rep.add_argument("--report", required=True, help="path to report.json")
    p_rep.add_argument("--out", default=None)
    return parser


_COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "unlearn": cmd_unlearn,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime / numerical failures
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
