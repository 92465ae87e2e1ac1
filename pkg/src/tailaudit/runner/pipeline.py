"""End-to-end experiments: generate, train, audit, analyze, persist.

Per-seed streams: seed ``s`` yields three child seeds (training data, test
data, bootstrap) via ``SeedSequence(s).spawn(3)``. The trainer itself uses
``s`` directly. Sweep cells reuse the same per-seed streams across rare
weights, so cells with the same seed are paired draws.
"""

import csv
import datetime as _dt
import json
import os
import statistics
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__, analysis, metrics, synthgen, trainers
from ..models import predict_proba_batch
from ..exceptions import TailAuditError
from .config import AuditOptions

REPORT_NAME = "report.json"
SUMMARY_NAME = "summary.json"


def seed_streams(seed):
    """Integer seeds for (train data, test data, bootstrap) of one run seed."""
    children = np.random.SeedSequence(int(seed)).spawn(3)
    return tuple(int(c.generate_state(1, np.uint64)[0]) for c in children)


def default_jobs():
    raw = os.environ.get("TAILAUDIT_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _with_context(exc, seed, stage):
    """Prefix ``exc``'s message with where it happened; keeps its class."""
    msg = f"seed {seed}, stage {stage}: {exc}"
    exc.args = (msg,)
    exc.seed = seed
    exc.stage = stage
    return exc


def _write_atomic(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _median(values):
    vals = [v for v in values if v is not None]
    return statistics.median(vals) if vals else None


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else ("" if v is None else v) for v in row])


def audit(preds, options, rarity=(), config_hash=None):
    """Model-agnostic audit of a ``PredictionSet``; returns the report dict."""
    gp = metrics.group_performance(preds, options.metric, options.specificity)
    gap = metrics.rcpg(gp)
    ci = metrics.bootstrap_ci(
        preds, metrics.rcpg_metric(options.metric, options.specificity), options.resamples, options.seed
    )
    cal = metrics.rcce(preds, options.bins, options.min_bin_count)
    records = [metrics.rarity_index(prev, util, cid) for cid, prev, util in (*rarity, *options.conditions)]
    report = {
        "metric_kind": options.metric,
        "p_common": gp.p_common,
        "p_rare": gp.p_rare,
        "n_common": gp.n_common,
        "n_rare": gp.n_rare,
        "rcpg": gap,
        "rcpg_ci": ci.to_dict(),
        "rcce": cal.rcce,
        "rcce_excluded_mass": cal.excluded_mass,
        "calibration_bins": cal.bins(),
        "rarity_records": [r.to_dict() for r in records],
        "rarity_caveat": metrics.RARITY_CAVEAT,
        "config_hash": config_hash if config_hash is not None else _options_hash(options),
        "seed": options.seed,
    }
    if options.metric == "sensitivity_at_specificity":
        report["specificity"] = options.specificity
    return report


def _options_hash(options):
    from ..trainers import config_hash

    return config_hash("audit", options.to_dict())


def audit_predictions(preds_path, options=None, rarity=()):
    """Audit an external ``p_hat,y,group`` predictions CSV."""
    options = options or AuditOptions()
    preds = metrics.read_predictions_csv(preds_path)
    return audit(preds, options, rarity)


def _train(cfg, ds, seed):
    tcfg = cfg.train_config(seed)
    if cfg.trainer == "erm":
        return trainers.train_erm(ds, cfg.loss, tcfg)
    if cfg.trainer == "dro":
        return trainers.train_group_dro(ds, cfg.loss, tcfg, cfg.dro)
    return trainers.train_constrained(ds, cfg.loss, tcfg, cfg.constraint)


def generate_data(cfg, seed):
    train_seed, test_seed, _ = seed_streams(seed)
    train = synthgen.sample_mixture(cfg.mixture, cfg.teacher, cfg.n_train, train_seed, cfg.covariates)
    test = synthgen.sample_mixture(cfg.mixture, cfg.teacher, cfg.n_test, test_seed, cfg.covariates)
    return train, test


@dataclass
class SeedResult:
    seed: int
    audit: dict
    gradient_init: dict
    gradient_final: dict
    mutual_information: dict
    model: dict
    convergence_gap: dict = None
    predictions: object = field(default=None, repr=False)

    def to_dict(self):
        d = {
            "seed": self.seed,
            "audit": self.audit,
            "gradient_decomposition": {"init": self.gradient_init, "final": self.gradient_final},
            "mutual_information": self.mutual_information,
            "model": self.model,
        }
        if self.convergence_gap is not None:
            d["convergence_gap"] = self.convergence_gap
        return d


def run_seed(cfg, seed):
    """Full pipeline for one seed; errors carry the seed and stage."""
    stage = "generate"
    try:
        train, test = generate_data(cfg, seed)
        stage = "train"
        model = _train(cfg, train, seed)
        stage = "audit"
        p = predict_proba_batch(model.params, test.X)
        preds = metrics.PredictionSet(p, test.y, test.group)
        _, _, boot_seed = seed_streams(seed)
        options = AuditOptions(**{**_audit_kwargs(cfg.audit), "seed": boot_seed})
        rarity = [("simulated_rare_phenotype", cfg.mixture.rare_weight, cfg.rare_utility)] if cfg.mixture.rare_weight > 0 else []
        report = audit(preds, options, rarity, cfg.config_hash)
        stage = "gradient"
        init = trainers.initial_params(cfg.train_config(seed), train.dim)
        g_init = analysis.decompose_gradients(train, init, cfg.loss).to_dict() if train.n_rare else None
        g_final = analysis.decompose_gradients(train, model.params, cfg.loss).to_dict() if train.n_rare else None
        stage = "mutual_information"
        mi = {}
        for group in ("common", "rare"):
            try:
                mi[group] = analysis.estimate_group_mi(test, group, cfg.mi_bins, cfg.teacher).to_dict()
            except TailAuditError as exc:
                mi[group] = {"error": str(exc)}
        gap = None
        if cfg.convergence_gap:
            stage = "convergence_gap"
            gap = analysis.convergence_gap(
                cfg.mixture, cfg.teacher, cfg.train_config(seed), cfg.loss, cfg.n_train,
                seed_streams(seed)[0], cfg.covariates,
            ).to_dict()
    except TailAuditError as exc:
        raise _with_context(exc, seed, stage)
    return SeedResult(int(seed), report, g_init, g_final, mi, model.to_dict(), gap, preds)


def _audit_kwargs(options):
    return {
        "metric": options.metric,
        "specificity": options.specificity,
        "bins": options.bins,
        "min_bin_count": options.min_bin_count,
        "resamples": options.resamples,
        "conditions": options.conditions,
    }


def _aggregate(results):
    keys = ("p_common", "p_rare", "rcpg", "rcce")
    agg = {f"median_{k}": _median([r.audit[k] for r in results]) for k in keys}
    eps = [r.convergence_gap["epsilon"] for r in results if r.convergence_gap is not None]
    if eps:
        agg["median_epsilon"] = _median(eps)
    return agg


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *it) for it in items]
        return [f.result() for f in futures]


def build_report(cfg, results):
    return {
        "config": cfg.canonical(),
        "config_hash": cfg.config_hash,
        "seeds": list(cfg.seeds),
        "per_seed": [r.to_dict() for r in sorted(results, key=lambda r: r.seed)],
        "aggregate": _aggregate(results),
        "tool_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def run_experiment(cfg, out_dir=None, jobs=None, write=True):
    """Run every seed of ``cfg`` and write ``report.json`` plus CSVs.

    Any existing report in the output directory is removed first, and the
    new one is written only after every seed succeeded, so a failed run
    leaves no report behind.
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    if write:
        out.mkdir(parents=True, exist_ok=True)
        stale = out / REPORT_NAME
        if stale.exists():
            stale.unlink()
    results = _map(run_seed, [(cfg, s) for s in cfg.seeds], jobs)
    results.sort(key=lambda r: r.seed)
    report = build_report(cfg, results)
    if write:
        for r in results:
            r.predictions.to_csv(out / f"predictions_seed{r.seed}.csv")
        _write_csv(
            out / "per_seed.csv",
            ["seed", "p_common", "p_rare", "rcpg", "rcpg_lower", "rcpg_upper", "rcce"],
            [
                (r.seed, r.audit["p_common"], r.audit["p_rare"], r.audit["rcpg"],
                 r.audit["rcpg_ci"]["lower"], r.audit["rcpg_ci"]["upper"], r.audit["rcce"])
                for r in results
            ],
        )
        _write_atomic(out / REPORT_NAME, _dump(report))
    return report


def strip_timestamp(report):
    return {k: v for k, v in report.items() if k != "timestamp"}


def _sweep_cell(cfg, pi, seed, out_dir):
    """One (pi, seed) cell. The gap is computed even when the audit fails,
    so a pi = 0 cell still contributes its epsilon = 0 row."""
    cell_cfg = cfg.with_rare_weight(pi).with_seeds([seed]).replace(sweep_rare_weights=())
    cell = {"pi": pi, "seed": seed, "rcpg": None, "epsilon": None}
    errors = []
    if cfg.train.architecture == "linear":
        try:
            cell["epsilon"] = analysis.convergence_gap(
                cell_cfg.mixture, cfg.teacher, cfg.train_config(seed), cfg.loss, cfg.n_train,
                seed_streams(seed)[0], cfg.covariates,
            ).epsilon
        except TailAuditError as exc:
            errors.append(f"{type(exc).__name__}: {exc}")
    try:
        report = run_experiment(cell_cfg, out_dir, jobs=1)
        cell["rcpg"] = report["per_seed"][0]["audit"]["rcpg"]
        cell["report"] = report
    except TailAuditError as exc:
        errors.append(f"{type(exc).__name__}: {exc}")
    if errors:
        cell["error"] = "; ".join(errors)
    return cell


def run_sweep(cfg, out_dir=None, jobs=None):
    """Run one experiment per (rare weight, seed) cell and collect the curves.

    Writes ``epsilon_vs_pi.csv``, ``rcpg_vs_pi.csv`` and ``summary.json``.
    Failed cells are listed in the summary instead of aborting the sweep.
    """
    if not cfg.sweep_rare_weights:
        raise TailAuditError("sweep.rare_weights is empty")
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    items = [
        (cfg, pi, seed, out / f"pi={pi!r}" / f"seed={seed}")
        for pi in cfg.sweep_rare_weights
        for seed in cfg.seeds
    ]
    cells = _map(_sweep_cell, items, jobs)
    cells.sort(key=lambda c: (-c["pi"], c["seed"]))
    _write_csv(out / "epsilon_vs_pi.csv", ["pi", "seed", "epsilon"], [(c["pi"], c["seed"], c["epsilon"]) for c in cells])
    _write_csv(out / "rcpg_vs_pi.csv", ["pi", "seed", "rcpg"], [(c["pi"], c["seed"], c["rcpg"]) for c in cells])
    per_pi = []
    for pi in sorted(set(cfg.sweep_rare_weights), reverse=True):
        group = [c for c in cells if c["pi"] == pi]
        reports = [c["report"] for c in group if "report" in c]
        per_pi.append({
            "pi": pi,
            "cells": len(reports),
            "median_rcpg": _median([c["rcpg"] for c in group]),
            "median_epsilon": _median([c["epsilon"] for c in group]),
            "aggregate": _aggregate_reports(reports),
        })
    summary = {
        "config": cfg.canonical(),
        "config_hash": cfg.config_hash,
        "per_pi": per_pi,
        "failures": [{"pi": c["pi"], "seed": c["seed"], "error": c["error"]} for c in cells if "error" in c],
        "tool_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    _write_atomic(out / SUMMARY_NAME, _dump(summary))
    return summary


def _aggregate_reports(reports):
    keys = ("p_common", "p_rare", "rcpg", "rcce")
    rows = [r["per_seed"][0]["audit"] for r in reports]
    return {f"median_{k}": _median([row[k] for row in rows]) for k in keys}
