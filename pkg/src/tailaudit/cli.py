"""Command-line interface.

Exit codes: 0 success, 2 config error, 3 infeasible constraint,
4 numerical failure, 5 input schema error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis, metrics, synthgen, trainers
from .exceptions import ConfigError, TailAuditError
from .models import ModelParams, predict_proba_batch
from .runner import config as config_mod
from .runner import pipeline


def _load(args, overrides=None):
    if args.config:
        cfg = config_mod.load_config(args.config, strict=not args.lenient, overrides=overrides)
    else:
        cfg = config_mod.parse_config("", overrides=overrides)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seeds([args.seed])
    return cfg


def _out(args, cfg):
    out = Path(args.out if args.out else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def _table(rows, header):
    widths = [max(len(str(h)), *(len(_fmt(r[i])) for r in rows)) for i, h in enumerate(header)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(_fmt(v).ljust(w) for v, w in zip(r, widths)))
    return "\n".join(lines)


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def cmd_generate(args):
    cfg = _load(args)
    out = _out(args, cfg)
    for seed in cfg.seeds:
        train, test = pipeline.generate_data(cfg, seed)
        train.to_csv(out / f"train_seed{seed}.csv")
        test.to_csv(out / f"test_seed{seed}.csv")
        print(f"seed {seed}: train n={len(train)} (rare {train.n_rare}), test n={len(test)} (rare {test.n_rare})")
    return 0


def _train_one(cfg, seed, data_path=None):
    if data_path:
        train = synthgen.read_dataset_csv(data_path)
        _, test = pipeline.generate_data(cfg, seed)
    else:
        train, test = pipeline.generate_data(cfg, seed)
    return pipeline._train(cfg, train, seed), test


def cmd_train(args):
    cfg = _load(args)
    out = _out(args, cfg)
    rows = []
    for seed in cfg.seeds:
        model, test = _train_one(cfg, seed, args.data)
        model.save(out / f"model_seed{seed}.json")
        p = predict_proba_batch(model.params, test.X)
        preds = metrics.PredictionSet(p, test.y, test.group)
        preds.to_csv(out / f"predictions_seed{seed}.csv")
        gp = metrics.group_performance(preds, cfg.audit.metric, cfg.audit.specificity, strict=False)
        gap = None if gp.p_common is None or gp.p_rare is None else gp.p_common - gp.p_rare
        rows.append((seed, model.history[-1].objective, gp.p_common, gp.p_rare, gap))
    print(_table(rows, ["seed", "objective", "p_common", "p_rare", "rcpg"]))
    return 0


def _parse_condition(text):
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"--condition expects id:prevalence:utility, got {text!r}")
    try:
        return parts[0], float(parts[1]), float(parts[2])
    except ValueError:
        raise ConfigError(f"--condition expects numeric prevalence and utility, got {text!r}") from None


def cmd_audit(args):
    cfg = _load(args) if args.config else config_mod.default_config()
    opts = cfg.audit
    options = config_mod.AuditOptions(
        opts.metric, opts.specificity, opts.bins, opts.min_bin_count,
        args.resamples if args.resamples is not None else opts.resamples,
        args.seed if args.seed is not None else 0,
        opts.conditions,
    )
    rarity = [_parse_condition(c) for c in args.condition or ()]
    report = pipeline.audit_predictions(args.predictions, options, rarity)
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "audit.json", report)
    ci = report["rcpg_ci"]
    print(_table(
        [(report["metric_kind"], report["p_common"], report["p_rare"], report["rcpg"], ci["lower"], ci["upper"], report["rcce"])],
        ["metric", "p_common", "p_rare", "rcpg", "ci_low", "ci_high", "rcce"],
    ))
    for r in report["rarity_records"]:
        flag = "FLAGGED" if r["flagged"] else ""
        print(f"rarity {r['condition_id']}: index {r['rarity_index']:.4g} {flag}".rstrip())
    return 0


def cmd_grad(args):
    cfg = _load(args)
    out = _out(args, cfg)
    rows, results = [], {}
    for seed in cfg.seeds:
        train, _ = pipeline.generate_data(cfg, seed)
        if args.model:
            with open(args.model) as fh:
                data = json.load(fh)
            params = ModelParams.from_dict(data.get("params", data))
            label = "model"
        else:
            params = trainers.initial_params(cfg.train_config(seed), train.dim)
            label = "init"
        dec = analysis.decompose_gradients(train, params, cfg.loss)
        results[str(seed)] = {"at": label, **dec.to_dict()}
        rows.append((seed, dec.rare_fraction, dec.norm_common, dec.norm_rare, dec.contribution_ratio, dec.ratio_bound, dec.literal_inequality_holds))
    _write_json(out / "gradient_decomposition.json", results)
    print(_table(rows, ["seed", "pi_hat", "|g_common|", "|g_rare|", "contrib_ratio", "pi/(1-pi)", "literal_ineq"]))
    return 0


def cmd_mi(args):
    cfg = _load(args)
    out = _out(args, cfg)
    rows, results = [], {}
    for seed in cfg.seeds:
        _, test = pipeline.generate_data(cfg, seed)
        entry = {}
        for group in ("common", "rare"):
            est = analysis.estimate_group_mi(test, group, args.bins or cfg.mi_bins, cfg.teacher)
            entry[group] = est.to_dict()
            rows.append((seed, group, est.n, est.mi_nats, est.stderr))
        results[str(seed)] = entry
    _write_json(out / "mutual_information.json", results)
    print(_table(rows, ["seed", "group", "n", "mi_nats", "stderr"]))
    return 0


def cmd_run(args):
    cfg = _load(args)
    report = pipeline.run_experiment(cfg, args.out, jobs=args.jobs)
    rows = [
        (r["seed"], r["audit"]["p_common"], r["audit"]["p_rare"], r["audit"]["rcpg"], r["audit"]["rcce"])
        for r in report["per_seed"]
    ]
    print(_table(rows, ["seed", "p_common", "p_rare", "rcpg", "rcce"]))
    agg = report["aggregate"]
    print(f"median rcpg {_fmt(agg['median_rcpg'])}, median rcce {_fmt(agg['median_rcce'])}; config {report['config_hash'][:12]}")
    return 0


def cmd_sweep(args):
    cfg = _load(args, {"sweep.rare_weights": args.rare_weights} if args.rare_weights else None)
    summary = pipeline.run_sweep(cfg, args.out, jobs=args.jobs)
    rows = [(p["pi"], p["cells"], p["median_rcpg"], p["median_epsilon"]) for p in summary["per_pi"]]
    print(_table(rows, ["pi", "cells", "median_rcpg", "median_epsilon"]))
    for f in summary["failures"]:
        print(f"failed cell pi={f['pi']} seed={f['seed']}: {f['error']}", file=sys.stderr)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="tailaudit", description=__doc__.splitlines()[0])
    parser.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", help="experiment config file (defaults to the reference experiment)")
        p.add_argument("--out", help="output directory (defaults to run.output_dir)")
        p.add_argument("--seed", type=int, help="run only this seed")
        p.add_argument("--lenient", action="store_true", help="ignore unknown config keys")
        return p

    p = common(sub.add_parser("generate", help="write train/test dataset CSVs"))
    p.set_defaults(func=cmd_generate)
    p = common(sub.add_parser("train", help="train per config and write model JSON and predictions"))
    p.add_argument("--data", help="train on this dataset CSV instead of generating one")
    p.set_defaults(func=cmd_train)
    p = common(sub.add_parser("audit", help="audit an external predictions CSV"))
    p.add_argument("--predictions", required=True, help="CSV with header p_hat,y,group")
    p.add_argument("--condition", action="append", help="rarity record id:prevalence:utility (repeatable)")
    p.add_argument("--resamples", type=int, help="bootstrap resamples")
    p.set_defaults(func=cmd_audit)
    p = common(sub.add_parser("grad", help="gradient decomposition at init or at a saved model"))
    p.add_argument("--model", help="model JSON written by 'train'")
    p.set_defaults(func=cmd_grad)
    p = common(sub.add_parser("mi", help="per-group mutual information of teacher score and label"))
    p.add_argument("--bins", type=int)
    p.set_defaults(func=cmd_mi)
    for name, func, help_ in (("run", cmd_run, "full experiment"), ("sweep", cmd_sweep, "rare-weight sweep")):
        p = common(sub.add_parser(name, help=help_))
        p.add_argument("--jobs", type=int, default=None, help="parallel workers (default $TAILAUDIT_JOBS or 1)")
        if name == "sweep":
            p.add_argument("--rare-weights", help="comma separated rare weights (overrides sweep.rare_weights)")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.print_defaults:
        sys.stdout.write(config_mod.DEFAULT_CONFIG_TEXT)
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except TailAuditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
