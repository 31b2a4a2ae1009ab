"""Command-line entry points: train, attack, eval, toy, profile.

Every subcommand reads one JSON config (plus dotted --set overrides and a
--seed flag; CCATLAB_SEED is the fallback) and writes its outputs under
the configured directory.  Identical config and seed give identical
output files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import rng as rngmod
from .config import (
    ExperimentConfig,
    build_dataset,
    build_model,
    build_suite,
    load_config,
    split_dataset,
)
from .evaluation import (
    build_eval_records,
    metrics_summary,
    read_records_csv,
    write_records_csv,
)
from .net import load_network, predict, save_network
from .profiles import direction_profile, interpolation_profile, write_profile_csv
from .training import fit, write_train_log
from .twopoint import toy_sweep


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config field by dotted path, e.g. training.lr=0.05",
    )
    parser.add_argument("--seed", type=int, default=None, help="seed (default: CCATLAB_SEED or 0)")
    parser.add_argument("--out", help="output directory (overrides config output_dir)")


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config, args.overrides)
    # Seed priority: --seed flag, then the config file, then CCATLAB_SEED.
    if args.seed is not None:
        cfg.seed = args.seed
    elif cfg.seed is None:
        cfg.seed = rngmod.default_seed()
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg


def _prepare(cfg: ExperimentConfig):
    ds = build_dataset(cfg.dataset, cfg.seed)
    splits = split_dataset(ds, cfg.splits)
    num_classes = int(ds.labels.max()) + 1
    return ds, splits, num_classes


def cmd_train(args) -> int:
    cfg = _resolve(args)
    if args.regime:
        cfg.training.regime = args.regime
    if args.dataset:
        cfg.dataset.name = args.dataset
    ds, splits, num_classes = _prepare(cfg)
    train = splits["train"]
    net = build_model(cfg.model, ds.inputs.shape[1], num_classes, cfg.seed)
    t = cfg.training
    stats = fit(
        net,
        train.inputs,
        train.labels,
        t.regime,
        epochs=t.epochs,
        batch_size=t.batch_size,
        lr=t.lr,
        lr_decay=t.lr_decay,
        seed=cfg.seed,
        epsilon=t.epsilon,
        rho=t.rho,
        log_path=os.path.join(cfg.output_dir, "train_log.csv"),
    )
    model_path = os.path.join(cfg.output_dir, "model.json")
    save_network(net, model_path)
    last = stats[-1]
    print(
        f"trained {t.regime} for {t.epochs} epochs: "
        f"loss {last.mean_loss:.4f}, train accuracy {last.train_accuracy:.3f}"
    )
    print(f"wrote {model_path}")
    return 0


def cmd_attack(args) -> int:
    cfg = _resolve(args)
    ds, splits, _ = _prepare(cfg)
    net = load_network(args.model or os.path.join(cfg.output_dir, "model.json"))
    suite = build_suite(cfg.attacks, cfg.seed, ds.image_shape)

    rte = splits["rte"]
    rte_ids = list(range(len(rte)))
    records = build_eval_records(net, rte.inputs, rte.labels, suite, rte_ids)
    write_records_csv(records, os.path.join(cfg.output_dir, "records_rte.csv"))

    for split_name in ("te", "holdout"):
        part = splits[split_name]
        clean = build_eval_records(net, part.inputs, part.labels, [], list(range(len(part))))
        write_records_csv(clean, os.path.join(cfg.output_dir, f"records_{split_name}.csv"))
    print(f"attacked {len(records)} examples with {len(suite)} attacks")
    print(f"wrote records under {cfg.output_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    rte_path = args.records or os.path.join(cfg.output_dir, "records_rte.csv")
    te_path = args.te_records or os.path.join(cfg.output_dir, "records_te.csv")
    holdout_path = args.holdout or os.path.join(cfg.output_dir, "records_holdout.csv")
    rte_records = read_records_csv(rte_path)
    te_records = read_records_csv(te_path) if os.path.exists(te_path) else rte_records
    holdout = read_records_csv(holdout_path) if os.path.exists(holdout_path) else te_records
    holdout_confs = [r.clean_conf for r in holdout if r.clean_label == r.y]
    targets = args.tpr or cfg.eval.tpr
    result = {}
    for tpr in targets:
        result[format(tpr, "g")] = metrics_summary(rte_records, te_records, holdout_confs, tpr)
    if len(result) == 1:
        result = next(iter(result.values()))
    out_path = os.path.join(cfg.output_dir, "metrics.json")
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(result, f, indent=2, sort_keys=True)
    print(json.dumps(result, indent=2, sort_keys=True))
    print(f"wrote {out_path}")
    return 0


def cmd_toy(args) -> int:
    cfg = _resolve(args)
    rows = toy_sweep(
        args.p0,
        args.lam,
        epsilon=args.epsilon,
        seed=cfg.seed,
        include_trained=not args.no_train,
    )
    out_path = os.path.join(cfg.output_dir, "toy.csv")
    fields = list(rows[0].keys())
    with open(out_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {
                    k: (format(v, ".17g") if isinstance(v, float) else v)
                    for k, v in row.items()
                }
            )
    for row in rows:
        print(
            f"p0={row['p0']:g} lam={row['lam']:g} condition={row['condition']} "
            f"at_closed={row['at_error_closed']:g} ccat_closed={row['ccat_error_closed']:g}"
        )
    print(f"wrote {out_path}")
    return 0


def cmd_profile(args) -> int:
    cfg = _resolve(args)
    ds, splits, _ = _prepare(cfg)
    net = load_network(args.model or os.path.join(cfg.output_dir, "model.json"))
    part = splits["rte"]
    if args.kind == "interpolation":
        x1 = part.inputs[args.example]
        x2 = part.inputs[args.other]
        grid = np.linspace(0.0, 1.0, args.points)
        rows = interpolation_profile(net, x1, x2, grid)
        var = "kappa"
    else:
        x = part.inputs[args.example]
        y = int(part.labels[args.example])
        suite = build_suite(cfg.attacks[:1], cfg.seed, ds.image_shape)
        outcome = suite[0][1](net, x[None, :], np.array([y]), [args.example])[0]
        if not np.any(outcome.delta):
            raise ValueError("attack returned a zero perturbation; no direction to profile")
        epsilon = cfg.attacks[0].epsilon
        grid = np.linspace(0.0, 2.0 * epsilon, args.points)
        rows = direction_profile(net, x, outcome.delta, grid)
        var = "t"
    out_path = os.path.join(cfg.output_dir, "profile.csv")
    write_profile_csv(rows, out_path, var)
    print(f"wrote {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccatlab",
        description="Train, attack, and evaluate confidence-calibrated classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write model.json + train_log.csv")
    _add_common(p_train)
    p_train.add_argument("--regime", help="normal | at50 | at100 | ccat")
    p_train.add_argument("--dataset", help="two_gaussians | two_point | digits | idx")
    p_train.set_defaults(fn=cmd_train)

    p_attack = sub.add_parser("attack", help="run the attack suite over a saved model")
    _add_common(p_attack)
    p_attack.add_argument("--model", help="model.json path (default: output_dir/model.json)")
    p_attack.set_defaults(fn=cmd_attack)

    p_eval = sub.add_parser("eval", help="compute thresholded metrics from records")
    _add_common(p_eval)
    p_eval.add_argument("--records", help="attacked records CSV")
    p_eval.add_argument("--te-records", help="clean records CSV for the test-error split")
    p_eval.add_argument("--holdout", help="clean records CSV for threshold selection")
    p_eval.add_argument("--tpr", type=float, action="append", help="target TPR (repeatable)")
    p_eval.set_defaults(fn=cmd_eval)

    p_toy = sub.add_parser("toy", help="two-point problem sweep (closed form vs numeric vs trained)")
    _add_common(p_toy)
    p_toy.add_argument("--p0", type=float, action="append", default=None)
    p_toy.add_argument("--lambda", dest="lam", type=float, action="append", default=None)
    p_toy.add_argument("--epsilon", type=float, default=0.3)
    p_toy.add_argument("--no-train", action="store_true", help="skip the end-to-end trained column")
    p_toy.set_defaults(fn=cmd_toy)

    p_profile = sub.add_parser("profile", help="emit confidence profile CSVs")
    _add_common(p_profile)
    p_profile.add_argument("--model", help="model.json path")
    p_profile.add_argument("--kind", choices=["direction", "interpolation"], default="direction")
    p_profile.add_argument("--example", type=int, default=0)
    p_profile.add_argument("--other", type=int, default=1, help="second example for interpolation")
    p_profile.add_argument("--points", type=int, default=51)
    p_profile.set_defaults(fn=cmd_profile)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "toy":
        if args.p0 is None:
            args.p0 = [0.1, 0.3, 0.5, 0.7]
        if args.lam is None:
            args.lam = [0.0, 0.2]
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
