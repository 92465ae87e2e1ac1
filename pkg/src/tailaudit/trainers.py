"""Mini-batch SGD training loops.

Three objectives share one loop:

* ERM: the plain mean loss over each batch.
* group DRO: ``sum_g q_g * L_g`` where the group weights ``q`` follow an
  exponentiated-gradient ascent on the group losses.
* constrained: ``L_common + lambda * L_rare``, with the returned checkpoint
  chosen among epochs whose validation common-group performance clears a
  floor.

All randomness (validation split, initialization, per-epoch shuffles) is
derived from ``TrainConfig.seed`` through ``numpy.random.SeedSequence``.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from .losses import objective_value
from .models import ARCHITECTURES, ModelParams, batch_gradient, predict_proba_batch
from ._validation import (
    COMMON,
    GROUP_NAMES,
    RARE,
    check_int,
    check_nonnegative,
    check_probability,
    check_seed,
    group_code,
)
from .exceptions import (
    DegenerateSplitError,
    EmptySubgroupError,
    InfeasibleConstraintError,
    NumericalFailureError,
    ValidationError,
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    momentum: float = 0.0
    seed: int = 0
    validation_fraction: float = 0.2
    architecture: str = "linear"
    hidden: int = 8

    def __post_init__(self):
        lr = float(self.learning_rate)
        if not math.isfinite(lr) or lr < 0:
            raise ValidationError(f"trainer.learning_rate must be >= 0, got {self.learning_rate!r}")
        object.__setattr__(self, "learning_rate", lr)
        check_int(self.epochs, "trainer.epochs", minimum=1)
        check_int(self.batch_size, "trainer.batch_size", minimum=1)
        object.__setattr__(
            self, "momentum", check_probability(self.momentum, "trainer.momentum", high_open=True)
        )
        check_seed(self.seed, "trainer.seed")
        object.__setattr__(
            self,
            "validation_fraction",
            check_probability(self.validation_fraction, "trainer.validation_fraction", low_open=True, high=0.5),
        )
        if self.architecture not in ARCHITECTURES:
            raise ValidationError(f"trainer.architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        check_int(self.hidden, "trainer.hidden", minimum=1)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class DROConfig:
    group_step_size: float = 0.01
    groups: tuple = ("common", "rare")

    def __post_init__(self):
        # zero is allowed: it freezes q at the uniform weights
        object.__setattr__(self, "group_step_size", check_nonnegative(self.group_step_size, "dro.group_step_size"))
        groups = tuple(GROUP_NAMES[group_code(g)] for g in self.groups)
        if not groups or len(set(groups)) != len(groups):
            raise ValidationError("dro.groups must be a nonempty set of distinct groups")
        object.__setattr__(self, "groups", tuple(sorted(groups, key=GROUP_NAMES.index)))

    def to_dict(self):
        return {"group_step_size": self.group_step_size, "groups": list(self.groups)}


@dataclass(frozen=True)
class ConstraintSpec:
    """Rare-loss multiplier and the floor on validation common-group performance."""

    lam: float = 10.0
    baseline: float = 0.6
    metric: str = "auroc"
    specificity: float = 0.9

    def __post_init__(self):
        lam = float(self.lam)
        if not math.isfinite(lam) or lam < 0:
            raise ValidationError(f"constraint.lambda must be >= 0, got {self.lam!r}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(
            self,
            "baseline",
            check_probability(self.baseline, "constraint.baseline", low_open=True, high_open=True),
        )
        metrics.check_metric_kind(self.metric, self.specificity)

    def to_dict(self):
        return {"lambda": self.lam, "baseline": self.baseline, "metric": self.metric, "specificity": self.specificity}


@dataclass
class EpochRecord:
    epoch: int
    objective: float
    validation: object  # metrics.GroupPerformance
    q: list = None
    p_common: float = None

    def to_dict(self):
        d = {"epoch": self.epoch, "objective": self.objective, "validation": self.validation.to_dict()}
        if self.q is not None:
            d["q"] = self.q
        if self.p_common is not None:
            d["p_common"] = self.p_common
        return d


@dataclass
class TrainedModel:
    params: ModelParams
    history: list
    seed: int
    config_hash: str
    trainer: str = "erm"
    selected_epoch: int = None
    q_trajectory: list = field(default=None, repr=False)

    def to_dict(self):
        d = {
            "trainer": self.trainer,
            "params": self.params.to_dict(),
            "seed": self.seed,
            "config_hash": self.config_hash,
            "history": {
                "epoch": [h.epoch for h in self.history],
                "objective": [h.objective for h in self.history],
                "validation": [h.validation.to_dict() for h in self.history],
            },
        }
        if self.trainer == "dro":
            d["history"]["q"] = [h.q for h in self.history]
            d["q_trajectory"] = self.q_trajectory
        if self.trainer == "constrained":
            d["history"]["p_common"] = [h.p_common for h in self.history]
            d["selected_epoch"] = self.selected_epoch
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")


def config_hash(*parts):
    """SHA-256 over the canonical (sorted-key) JSON of the given dicts."""
    text = json.dumps([p for p in parts], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _streams(seed):
    split, init, shuffle = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(split), np.random.default_rng(init), shuffle


def stratified_split(ds, fraction, rng):
    """Split indices so every (group, label) stratum keeps ~``fraction`` in validation.

    Strata with at least two records contribute at least one record to each
    side. Each record gets one uniform key and the lowest keys of a stratum
    go to validation, so datasets that share records mostly share the split.
    """
    keys = rng.random(len(ds))
    train, val = [], []
    for g in (COMMON, RARE):
        for label in (0, 1):
            idx = np.flatnonzero((ds.group == g) & (ds.y == label))
            if idx.size == 0:
                continue
            idx = idx[np.argsort(keys[idx], kind="stable")]
            k = int(math.floor(fraction * idx.size + 0.5))
            if idx.size >= 2:
                k = min(max(k, 1), idx.size - 1)
            else:
                k = 0
            val.append(idx[:k])
            train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def _init_params(cfg, dim, rng):
    if cfg.architecture == "linear":
        return ModelParams.zeros("linear", dim)
    return ModelParams.random_uniform("mlp1", dim, cfg.hidden, rng, scale=0.1)


def initial_params(cfg, dim):
    """The parameters a run with ``cfg`` starts from."""
    _, init_rng, _ = _streams(cfg.seed)
    return _init_params(cfg, dim, init_rng)


def _check_labels(train):
    for label in (0, 1):
        if np.count_nonzero(train.y == label) < 2:
            raise DegenerateSplitError(f"training split needs >= 2 records with label {label}")


def _validation_performance(params, val, kind="auroc", specificity=0.9):
    if len(val) == 0:
        return metrics.GroupPerformance(kind, None, None, 0, 0)
    p = predict_proba_batch(params, val.X)
    preds = metrics.PredictionSet(p, val.y, val.group)
    return metrics.group_performance(preds, kind, specificity=specificity, strict=False)


def _group_objective(grad, weights):
    """Combine group means with fixed weights; absent groups contribute nothing."""
    total = np.zeros_like(grad.total)
    value = 0.0
    for code, w in weights.items():
        g = grad.rare if code == RARE else grad.common
        if g is None or w == 0:
            continue
        total = total + w * g
        value += w * (grad.loss_rare if code == RARE else grad.loss_common)
    return total, value


def _run_sgd(train, val, loss, cfg, step_direction, epoch_objective, on_epoch=None):
    """Shared mini-batch SGD loop with heavy-ball momentum.

    ``step_direction(grad)`` maps a ``BatchGradient`` to the descent
    direction; ``epoch_objective(params)`` evaluates the training objective
    recorded in the history.
    """
    _, init_rng, shuffle_seq = _streams(cfg.seed)
    params = _init_params(cfg, train.dim, init_rng)
    theta = params.flat.copy()
    velocity = np.zeros_like(theta)
    n = len(train)
    history = []
    epoch_seqs = shuffle_seq.spawn(cfg.epochs)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(epoch_seqs[epoch]).permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = train.subset(order[start : start + cfg.batch_size])
            try:
                grad = batch_gradient(params, batch, loss)
            except NumericalFailureError as exc:
                raise NumericalFailureError(
                    f"epoch {epoch}, batch {b}: {exc}", index=exc.index, epoch=epoch, batch=b
                ) from None
            direction = step_direction(grad)
            velocity = cfg.momentum * velocity - cfg.learning_rate * direction
            theta = theta + velocity
            if not np.all(np.isfinite(theta)):
                raise NumericalFailureError(f"epoch {epoch}, batch {b}: parameters diverged", epoch=epoch, batch=b)
            params = params.with_flat(theta)
        obj = epoch_objective(params)
        if not math.isfinite(obj):
            raise NumericalFailureError(f"epoch {epoch}: non-finite training objective", epoch=epoch)
        record = EpochRecord(epoch, obj, _validation_performance(params, val))
        if on_epoch is not None:
            on_epoch(record, params)
        history.append(record)
    return params, history


def _prepare(ds, cfg):
    split_rng, _, _ = _streams(cfg.seed)
    tr, va = stratified_split(ds, cfg.validation_fraction, split_rng)
    train, val = ds.subset(tr), ds.subset(va)
    _check_labels(train)
    return train, val


def train_erm(ds, loss, cfg):
    """Minimize the frequency-weighted mean loss (empirical risk)."""
    train, val = _prepare(ds, cfg)
    params, history = _run_sgd(
        train,
        val,
        loss,
        cfg,
        step_direction=lambda g: g.total,
        epoch_objective=lambda p: objective_value(train, p, loss).total,
    )
    return TrainedModel(params, history, cfg.seed, config_hash("erm", cfg.to_dict(), loss.to_dict()), "erm")


def train_group_dro(ds, loss, cfg, dro):
    """Group DRO with exponentiated-gradient weights over the configured groups.

    Before each descent step ``q_g <- q_g * exp(eta * L_g)`` is applied with
    the batch group losses and renormalized; a group missing from a batch
    has ``L_g = 0`` for that step.
    """
    codes = [group_code(g) for g in dro.groups]
    present = set(np.unique(ds.group).tolist())
    for code in codes:
        if code not in present:
            raise EmptySubgroupError(f"group {GROUP_NAMES[code]!r} has no records")
    extra = present - set(codes)
    if extra:
        raise ValidationError(
            f"dataset contains groups {[GROUP_NAMES[c] for c in sorted(extra)]} outside dro.groups"
        )
    train, val = _prepare(ds, cfg)
    for code in codes:
        if not np.any(train.group == code):
            raise EmptySubgroupError(f"training split has no {GROUP_NAMES[code]!r} records")

    q = {code: 1.0 / len(codes) for code in codes}
    trajectory = []

    def direction(grad):
        losses_g = {c: (grad.loss_rare if c == RARE else grad.loss_common) for c in codes}
        for c in codes:
            if losses_g[c] is not None:
                q[c] *= math.exp(dro.group_step_size * losses_g[c])
        z = math.fsum(q.values())
        for c in codes:
            q[c] /= z
        trajectory.append([q[c] for c in codes])
        if len(codes) == 1:
            return grad.total
        return _group_objective(grad, q)[0]

    def epoch_objective(params):
        ov = objective_value(train, params, loss)
        return math.fsum(q[c] * (ov.rare if c == RARE else ov.common) for c in codes)

    def on_epoch(record, params):
        record.q = [q[c] for c in codes]

    params, history = _run_sgd(train, val, loss, cfg, direction, epoch_objective, on_epoch)
    model = TrainedModel(
        params,
        history,
        cfg.seed,
        config_hash("dro", cfg.to_dict(), loss.to_dict(), dro.to_dict()),
        "dro",
    )
    model.q_trajectory = trajectory
    return model


def train_constrained(ds, loss, cfg, cs):
    """Descend on ``L_common + lambda * L_rare`` and keep the best feasible epoch.

    An epoch is feasible when its common-group validation performance is at
    least ``cs.baseline``. Among feasible epochs the one with the lowest
    training objective is returned. Raises ``InfeasibleConstraintError``
    when no epoch qualifies.
    """
    for code in (COMMON, RARE):
        if not np.any(ds.group == code):
            raise EmptySubgroupError(f"group {GROUP_NAMES[code]!r} has no records")
    train, val = _prepare(ds, cfg)
    vc = val.group == COMMON
    if not (np.any(val.group == RARE) and np.any(vc)):
        raise DegenerateSplitError("validation split must contain both groups")
    if len(np.unique(val.y[vc])) < 2:
        raise DegenerateSplitError("validation split needs both labels in the common group")
    weights = {COMMON: 1.0, RARE: cs.lam}
    best = {"objective": math.inf, "params": None, "epoch": None}
    best_p = -math.inf

    def epoch_objective(params):
        ov = objective_value(train, params, loss)
        return ov.common + cs.lam * ov.rare

    def on_epoch(record, params):
        nonlocal best_p
        perf = _validation_performance(params, val, cs.metric, cs.specificity)
        record.p_common = perf.p_common
        best_p = max(best_p, perf.p_common)
        if perf.p_common >= cs.baseline and record.objective < best["objective"]:
            best.update(objective=record.objective, params=params, epoch=record.epoch)

    _, history = _run_sgd(
        train, val, loss, cfg, lambda g: _group_objective(g, weights)[0], epoch_objective, on_epoch
    )
    if best["params"] is None:
        raise InfeasibleConstraintError(best_p, cs.baseline)
    return TrainedModel(
        best["params"],
        history,
        cfg.seed,
        config_hash("constrained", cfg.to_dict(), loss.to_dict(), cs.to_dict()),
        "constrained",
        selected_epoch=best["epoch"],
    )


def worst_group_loss(params, ds, loss):
    """Larger of the two group mean losses on ``ds``."""
    ov = objective_value(ds, params, loss)
    return max(v for v in (ov.common, ov.rare) if v is not None)


def validation_split(ds, cfg):
    """The validation subset a trainer with ``cfg`` holds out of ``ds``."""
    split_rng, _, _ = _streams(cfg.seed)
    _, va = stratified_split(ds, cfg.validation_fraction, split_rng)
    return ds.subset(va)


def training_split(ds, cfg):
    split_rng, _, _ = _streams(cfg.seed)
    tr, _ = stratified_split(ds, cfg.validation_fraction, split_rng)
    return ds.subset(tr)
