"""Experiment configuration files.

The format is sectioned ``key = value`` text (read with :mod:`configparser`).
Vectors are comma separated, matrix rows are separated by ``;`` and
covariate distributions are written ``beta(a, b)`` or ``constant(v)``.
Every key has a default (the reference experiment); a file only needs the
keys it changes. Unknown sections or keys are rejected in strict mode.
"""

import configparser
import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np

from .. import losses, metrics, synthgen, trainers
from .._validation import check_int, check_probability, check_seed
from ..exceptions import ConfigError, TailAuditError

DEFAULT_CONFIG_TEXT = """\
# Reference experiment: two clusters with conflicting decision rules.

[mixture]
# weight of the rare component, in [0, 1)
rare_weight = 0.05
common_mean = 0.0, 0.0
common_cov = 1.0, 0.0; 0.0, 1.0
rare_mean = 3.0, 1.5
rare_cov = 0.25, 0.0; 0.0, 0.25

[teacher]
# y = 1 iff weights . x + bias > 0, then flipped with probability label_noise
common_weights = 1.0, 1.0
common_bias = 0.0
rare_weights = -1.0, 1.0
rare_bias = 2.0
label_noise = 0.05

[covariates]
# beta(a, b) or constant(v), per group and covariate
common_mortality_risk = beta(2, 5)
common_discovery_value = beta(1, 1)
common_equity_adjustment = beta(1, 1)
rare_mortality_risk = beta(5, 2)
rare_discovery_value = beta(1, 1)
rare_equity_adjustment = beta(1, 1)

[data]
n_train = 20000
n_test = 20000

[loss]
# cross_entropy | focal | cost_sensitive | clinically_weighted
variant = cross_entropy
# base objective of clinically_weighted (cross_entropy | focal | cost_sensitive)
base = cross_entropy
focal_alpha = 1.0
focal_gamma = 2.0
# rows = true class, columns = predicted class
cost = 0.0, 1.0; 1.0, 0.0

[weights]
# w = baseline + alpha*mortality + beta*discovery + gamma*equity
baseline = 1.0
alpha = 0.0
beta = 0.0
gamma = 0.0

[trainer]
# erm | dro | constrained
kind = erm
learning_rate = 0.05
epochs = 30
batch_size = 64
momentum = 0.0
validation_fraction = 0.2
# linear | mlp1
architecture = linear
hidden = 8

[dro]
group_step_size = 0.01

[constraint]
lambda = 10.0
baseline = 0.6
# auroc | sensitivity_at_specificity
metric = auroc
specificity = 0.9

[audit]
# auroc | sensitivity_at_specificity
metric = auroc
specificity = 0.9
calibration_bins = 15
min_bin_count = 5
bootstrap_resamples = 1000
# clinical utility score of the simulated rare phenotype
rare_utility = 1.0
# extra rarity records: id:prevalence:utility, comma separated
conditions =

[analysis]
convergence_gap = false
mi_bins = 32

[run]
seeds = 0, 1, 2, 3, 4, 5, 6, 7, 8, 9
output_dir = runs/reference

[sweep]
# comma separated rare weights; empty disables the sweep
rare_weights =
"""

_FUNC = re.compile(r"^\s*(beta|constant)\s*\(\s*([^)]*)\)\s*$")


def _defaults():
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None)
    parser.optionxform = str
    parser.read_string(DEFAULT_CONFIG_TEXT)
    return parser


def default_values():
    """``{section: {key: raw string}}`` of every documented key."""
    p = _defaults()
    return {s: dict(p[s]) for s in p.sections()}


def _vector(raw, key):
    try:
        v = [float(t) for t in raw.split(",") if t.strip()]
    except ValueError:
        raise KeyedConfigError(f"{key}: expected comma-separated numbers, got {raw!r}") from None
    if not v:
        raise KeyedConfigError(f"{key}: expected at least one number")
    return np.array(v)


def _matrix(raw, key):
    rows = [r for r in raw.split(";") if r.strip()]
    m = [list(_vector(r, key)) for r in rows]
    if not m or any(len(r) != len(m[0]) for r in m):
        raise KeyedConfigError(f"{key}: rows must have equal length")
    return np.array(m)


def _float(raw, key):
    try:
        return float(raw)
    except ValueError:
        raise KeyedConfigError(f"{key}: expected a number, got {raw!r}") from None


def _int(raw, key):
    try:
        return int(raw)
    except ValueError:
        raise KeyedConfigError(f"{key}: expected an integer, got {raw!r}") from None


def _bool(raw, key):
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise KeyedConfigError(f"{key}: expected true/false, got {raw!r}")


def _distribution(raw, key):
    m = _FUNC.match(raw)
    if not m:
        raise KeyedConfigError(f"{key}: expected beta(a, b) or constant(v), got {raw!r}")
    args = [_float(t, key) for t in m.group(2).split(",") if t.strip()]
    if m.group(1) == "beta":
        if len(args) != 2:
            raise KeyedConfigError(f"{key}: beta takes two parameters")
        return synthgen.CovariateDistribution(args[0], args[1])
    if len(args) != 1:
        raise KeyedConfigError(f"{key}: constant takes one value")
    return synthgen.CovariateDistribution.constant(args[0])


def _conditions(raw, key):
    out = []
    for item in (t.strip() for t in raw.split(",")):
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 3:
            raise KeyedConfigError(f"{key}: expected id:prevalence:utility, got {item!r}")
        out.append((parts[0], _float(parts[1], key), _float(parts[2], key)))
    return tuple(out)


class KeyedConfigError(ConfigError):
    """Config error already carrying its ``section.key`` prefix."""


class _Scope:
    """Prefix validation errors raised inside with the offending ``section.key``."""

    def __init__(self, key):
        self.key = key

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if ev is None or isinstance(ev, KeyedConfigError):
            return False
        if isinstance(ev, (TailAuditError, ValueError)):
            msg = str(ev)
            # section scopes: field validators already name section.key
            if not msg.startswith(self.key + "."):
                msg = f"{self.key}: {msg}"
            raise KeyedConfigError(msg) from None
        return False


@dataclass(frozen=True)
class AuditOptions:
    metric: str = "auroc"
    specificity: float = 0.9
    bins: int = 15
    min_bin_count: int = 5
    resamples: int = 1000
    seed: int = 0
    conditions: tuple = ()

    def __post_init__(self):
        metrics.check_metric_kind(self.metric, self.specificity)
        check_int(self.bins, "audit.calibration_bins", minimum=1)
        check_int(self.min_bin_count, "audit.min_bin_count", minimum=1)
        check_int(self.resamples, "audit.bootstrap_resamples", minimum=100)
        check_seed(self.seed)

    def to_dict(self):
        return {
            "metric": self.metric,
            "specificity": self.specificity,
            "calibration_bins": self.bins,
            "min_bin_count": self.min_bin_count,
            "bootstrap_resamples": self.resamples,
            "seed": self.seed,
            "conditions": [list(c) for c in self.conditions],
        }


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    mixture: synthgen.MixtureSpec
    teacher: synthgen.TeacherSpec
    covariates: synthgen.CovariateSpec
    n_train: int
    n_test: int
    loss: object
    trainer: str
    train: trainers.TrainConfig
    dro: trainers.DROConfig
    constraint: trainers.ConstraintSpec
    audit: AuditOptions
    rare_utility: float
    convergence_gap: bool
    mi_bins: int
    seeds: tuple
    output_dir: str
    sweep_rare_weights: tuple = ()

    def canonical(self):
        """Plain-data view of everything that determines results.

        ``output_dir`` is excluded: moving a run does not change its hash.
        """
        return {
            "mixture": self.mixture.to_dict(),
            "teacher": self.teacher.to_dict(),
            "covariates": self.covariates.to_dict(),
            "data": {"n_train": self.n_train, "n_test": self.n_test},
            "loss": self.loss.to_dict(),
            "trainer": {"kind": self.trainer, **self.train.to_dict()},
            "dro": self.dro.to_dict(),
            "constraint": self.constraint.to_dict(),
            "audit": {**self.audit.to_dict(), "rare_utility": self.rare_utility},
            "analysis": {"convergence_gap": self.convergence_gap, "mi_bins": self.mi_bins},
            "run": {"seeds": list(self.seeds)},
            "sweep": {"rare_weights": list(self.sweep_rare_weights)},
        }

    def canonical_json(self):
        return json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def replace(self, **changes):
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return ExperimentConfig(**fields)

    def with_seeds(self, seeds):
        return self.replace(seeds=tuple(int(s) for s in seeds))

    def with_rare_weight(self, rare_weight):
        return self.replace(mixture=self.mixture.with_rare_weight(rare_weight))

    def train_config(self, seed):
        return trainers.TrainConfig(**{**self.train.to_dict(), "seed": int(seed)})


def _build_loss(s, variant_key="variant"):
    def base_for(variant):
        if variant == "cross_entropy":
            return losses.CrossEntropy()
        if variant == "focal":
            with _Scope("loss.focal_alpha"):
                return losses.Focal(_float(s["loss"]["focal_alpha"], "loss.focal_alpha"), _float(s["loss"]["focal_gamma"], "loss.focal_gamma"))
        if variant == "cost_sensitive":
            with _Scope("loss.cost"):
                return losses.CostSensitive(_matrix(s["loss"]["cost"], "loss.cost"))
        raise ConfigError(f"loss.{variant_key}: unknown loss variant {variant!r}")

    variant = s["loss"]["variant"].strip()
    if variant != "clinically_weighted":
        return base_for(variant)
    variant_key = "base"
    base = base_for(s["loss"]["base"].strip())
    w = {k: _float(s["weights"][k], f"weights.{k}") for k in ("baseline", "alpha", "beta", "gamma")}
    with _Scope("weights"):
        params = losses.WeightParams(**w)
    return losses.ClinicallyWeighted(base, params)


def config_from_values(values):
    """Build and validate an ``ExperimentConfig`` from ``{section: {key: str}}``."""
    s = values
    with _Scope("mixture.common_cov"):
        common = synthgen.GaussianComponent(
            _vector(s["mixture"]["common_mean"], "mixture.common_mean"),
            _matrix(s["mixture"]["common_cov"], "mixture.common_cov"),
        )
    with _Scope("mixture.rare_cov"):
        rare = synthgen.GaussianComponent(
            _vector(s["mixture"]["rare_mean"], "mixture.rare_mean"),
            _matrix(s["mixture"]["rare_cov"], "mixture.rare_cov"),
        )
    rw = _float(s["mixture"]["rare_weight"], "mixture.rare_weight")
    with _Scope("mixture.rare_weight"):
        check_probability(rw, "value", high_open=True)
    with _Scope("mixture"):
        mixture = synthgen.MixtureSpec(rw, common, rare)
    t = s["teacher"]
    with _Scope("teacher.label_noise"):
        noise = _float(t["label_noise"], "teacher.label_noise")
        check_probability(noise, "value", high=0.5, high_open=True)
    with _Scope("teacher"):
        teacher = synthgen.TeacherSpec(
            synthgen.LinearTeacher(_vector(t["common_weights"], "teacher.common_weights"), _float(t["common_bias"], "teacher.common_bias")),
            synthgen.LinearTeacher(_vector(t["rare_weights"], "teacher.rare_weights"), _float(t["rare_bias"], "teacher.rare_bias")),
            noise,
        )
        if teacher.dim != mixture.dim:
            raise ConfigError(f"teacher weights have length {teacher.dim} but mixture dimension is {mixture.dim}")
    dists = {"common": {}, "rare": {}}
    for key, raw in s["covariates"].items():
        group, _, name = key.partition("_")
        with _Scope(f"covariates.{key}"):
            dists[group][name] = _distribution(raw, f"covariates.{key}")
    covariates = synthgen.CovariateSpec(dists)

    n_train = _int(s["data"]["n_train"], "data.n_train")
    n_test = _int(s["data"]["n_test"], "data.n_test")
    with _Scope("data.n_train"):
        check_int(n_train, "value", minimum=10)
    with _Scope("data.n_test"):
        check_int(n_test, "value", minimum=10)

    loss = _build_loss(s)

    tr = s["trainer"]
    kind = tr["kind"].strip()
    if kind not in ("erm", "dro", "constrained"):
        raise ConfigError(f"trainer.kind: must be erm, dro or constrained, got {kind!r}")
    with _Scope("trainer"):
        train = trainers.TrainConfig(
            learning_rate=_float(tr["learning_rate"], "trainer.learning_rate"),
            epochs=_int(tr["epochs"], "trainer.epochs"),
            batch_size=_int(tr["batch_size"], "trainer.batch_size"),
            momentum=_float(tr["momentum"], "trainer.momentum"),
            seed=0,
            validation_fraction=_float(tr["validation_fraction"], "trainer.validation_fraction"),
            architecture=tr["architecture"].strip(),
            hidden=_int(tr["hidden"], "trainer.hidden"),
        )
    with _Scope("dro.group_step_size"):
        dro = trainers.DROConfig(_float(s["dro"]["group_step_size"], "dro.group_step_size"))
    c = s["constraint"]
    with _Scope("constraint"):
        constraint = trainers.ConstraintSpec(
            _float(c["lambda"], "constraint.lambda"),
            _float(c["baseline"], "constraint.baseline"),
            c["metric"].strip(),
            _float(c["specificity"], "constraint.specificity"),
        )
    a = s["audit"]
    with _Scope("audit"):
        audit = AuditOptions(
            a["metric"].strip(),
            _float(a["specificity"], "audit.specificity"),
            _int(a["calibration_bins"], "audit.calibration_bins"),
            _int(a["min_bin_count"], "audit.min_bin_count"),
            _int(a["bootstrap_resamples"], "audit.bootstrap_resamples"),
            0,
            _conditions(a["conditions"], "audit.conditions"),
        )
        for cid, prev, util in audit.conditions:
            metrics.rarity_index(prev, util, cid)
    rare_utility = _float(a["rare_utility"], "audit.rare_utility")
    if not rare_utility > 0:
        raise ConfigError("audit.rare_utility: must be > 0")

    convergence = _bool(s["analysis"]["convergence_gap"], "analysis.convergence_gap")
    mi_bins = _int(s["analysis"]["mi_bins"], "analysis.mi_bins")
    if mi_bins < 2:
        raise ConfigError("analysis.mi_bins: must be >= 2")

    seeds = tuple(int(v) for v in _vector(s["run"]["seeds"], "run.seeds")) if s["run"]["seeds"].strip() else ()
    if not seeds:
        raise ConfigError("run.seeds: at least one seed is required")
    for seed in seeds:
        with _Scope("run.seeds"):
            check_seed(seed)
    sweep_raw = s["sweep"]["rare_weights"].strip()
    sweep = tuple(float(v) for v in _vector(sweep_raw, "sweep.rare_weights")) if sweep_raw else ()
    for v in sweep:
        with _Scope("sweep.rare_weights"):
            check_probability(v, "value", high_open=True)

    return ExperimentConfig(
        mixture=mixture,
        teacher=teacher,
        covariates=covariates,
        n_train=n_train,
        n_test=n_test,
        loss=loss,
        trainer=kind,
        train=train,
        dro=dro,
        constraint=constraint,
        audit=audit,
        rare_utility=rare_utility,
        convergence_gap=convergence,
        mi_bins=mi_bins,
        seeds=seeds,
        output_dir=s["run"]["output_dir"].strip(),
        sweep_rare_weights=sweep,
    )


def parse_config(text, strict=True, overrides=None):
    """Parse config text layered over the defaults.

    ``overrides`` maps ``"section.key"`` to raw string values and is applied
    after the file.
    """
    values = default_values()
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from None
    for section in parser.sections():
        if section not in values:
            if strict:
                raise ConfigError(f"{section}: unknown section")
            continue
        for key, raw in parser[section].items():
            if key not in values[section]:
                if strict:
                    raise ConfigError(f"{section}.{key}: unknown key")
                continue
            values[section][key] = raw
    for dotted, raw in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in values or key not in values[section]:
            raise ConfigError(f"{dotted}: unknown key")
        values[section][key] = str(raw)
    return config_from_values(values)


def load_config(path, strict=True, overrides=None):
    """Read and validate a config file; errors name the offending key."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config(text, strict=strict, overrides=overrides)


def default_config():
    return parse_config("")
