"""Synthetic two-phenotype populations.

Features come from a two-component Gaussian mixture (a dominant "common"
component and a "rare" component with weight ``rare_weight``). Outcomes come
from a per-group linear teacher with symmetric label-flip noise, so the two
groups can disagree about the optimal decision rule.

Random streams
--------------
``sample_mixture`` splits its seed with :class:`numpy.random.SeedSequence`
into one child stream per block of ``BLOCK_SIZE`` records. Each block draws,
in order: group uniforms ``(b,)``, standard normals ``(b, d)``, flip uniforms
``(b,)`` and covariate uniforms ``(b, 3)``. Features, labels and covariates
are obtained from these by transformation (Cholesky factor, teacher sign,
inverse Beta CDF), so two specs that differ only in the rare component share
every common record exactly. The output never depends on how blocks are
scheduled.
"""

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import stats

from ._validation import (
    COMMON,
    GROUP_NAMES,
    RARE,
    check_finite_array,
    check_int,
    check_nonnegative,
    check_probability,
    check_seed,
    encode_groups,
)
from .exceptions import EmptySubgroupError, SchemaError, ValidationError

BLOCK_SIZE = 4096
COVARIATE_NAMES = ("mortality_risk", "discovery_value", "equity_adjustment")


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = check_finite_array(self.mean, "mean", ndim=1)
        cov = check_finite_array(np.atleast_2d(self.covariance), "covariance", ndim=2)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValidationError(
                f"covariance shape {cov.shape} does not match mean length {mean.shape[0]}"
            )
        if not np.array_equal(cov, cov.T):
            raise ValidationError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValidationError("covariance is not positive definite") from None
        mean.flags.writeable = False
        cov.flags.writeable = False
        chol.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def cholesky(self):
        return self._chol

    @classmethod
    def isotropic(cls, mean, variance=1.0):
        mean = np.asarray(mean, dtype=float)
        return cls(mean, float(variance) * np.eye(mean.shape[0]))

    def to_dict(self):
        return {"mean": self.mean.tolist(), "covariance": self.covariance.tolist()}


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Two-component mixture ``(1 - rare_weight) N_common + rare_weight N_rare``."""

    rare_weight: float
    common: GaussianComponent
    rare: GaussianComponent

    def __post_init__(self):
        w = check_probability(self.rare_weight, "mixture.rare_weight", high_open=True)
        object.__setattr__(self, "rare_weight", w)
        if self.common.dim != self.rare.dim:
            raise ValidationError(
                f"component dimensions differ: common {self.common.dim}, rare {self.rare.dim}"
            )

    @property
    def dim(self):
        return self.common.dim

    def with_rare_weight(self, rare_weight):
        return MixtureSpec(rare_weight, self.common, self.rare)

    def component(self, group):
        return self.rare if group == RARE else self.common

    def to_dict(self):
        return {
            "rare_weight": self.rare_weight,
            "common": self.common.to_dict(),
            "rare": self.rare.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class LinearTeacher:
    """Labels ``y = 1`` iff ``weights . x + bias > 0`` (before noise)."""

    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        w = check_finite_array(self.weights, "teacher weights", ndim=1)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        b = float(self.bias)
        if not math.isfinite(b):
            raise ValidationError("teacher bias must be finite")
        object.__setattr__(self, "bias", b)

    def score(self, X):
        return np.asarray(X, dtype=float) @ self.weights + self.bias

    def to_dict(self):
        return {"weights": self.weights.tolist(), "bias": self.bias}


@dataclass(frozen=True, eq=False)
class TeacherSpec:
    common: LinearTeacher
    rare: LinearTeacher
    label_noise: float = 0.0

    def __post_init__(self):
        noise = check_probability(self.label_noise, "teacher.label_noise", high=0.5, high_open=True)
        object.__setattr__(self, "label_noise", noise)
        if self.common.weights.shape != self.rare.weights.shape:
            raise ValidationError("common and rare teacher weights differ in length")

    @property
    def dim(self):
        return self.common.weights.shape[0]

    def for_group(self, group):
        return self.rare if group == RARE else self.common

    def score(self, X, groups):
        """Teacher score of each record under its own group's rule."""
        X = np.asarray(X, dtype=float)
        groups = np.asarray(groups)
        return np.where(groups == RARE, self.rare.score(X), self.common.score(X))

    def to_dict(self):
        return {
            "common": self.common.to_dict(),
            "rare": self.rare.to_dict(),
            "label_noise": self.label_noise,
        }


@dataclass(frozen=True)
class CovariateDistribution:
    """Either ``Beta(a, b)`` or a point mass at ``value``."""

    a: float = 1.0
    b: float = 1.0
    value: float = None

    def __post_init__(self):
        if self.value is not None:
            check_probability(self.value, "covariate constant")
        else:
            if check_nonnegative(self.a, "beta a") <= 0 or check_nonnegative(self.b, "beta b") <= 0:
                raise ValidationError("Beta parameters must be > 0")

    @classmethod
    def constant(cls, value):
        return cls(value=float(value))

    def from_uniform(self, u):
        if self.value is not None:
            return np.full(np.shape(u), self.value)
        if self.a == 1.0 and self.b == 1.0:
            return np.asarray(u, dtype=float).copy()
        return stats.beta.ppf(u, self.a, self.b)

    def mean(self):
        if self.value is not None:
            return self.value
        return self.a / (self.a + self.b)

    def to_dict(self):
        if self.value is not None:
            return {"constant": self.value}
        return {"beta": [self.a, self.b]}


def _default_covariates():
    return {
        "common": {
            "mortality_risk": CovariateDistribution(2.0, 5.0),
            "discovery_value": CovariateDistribution(),
            "equity_adjustment": CovariateDistribution(),
        },
        "rare": {
            "mortality_risk": CovariateDistribution(5.0, 2.0),
            "discovery_value": CovariateDistribution(),
            "equity_adjustment": CovariateDistribution(),
        },
    }


@dataclass(frozen=True)
class CovariateSpec:
    """Per-group, per-covariate distributions for the clinical-utility inputs.

    Defaults: mortality risk ``Beta(2, 5)`` for common and ``Beta(5, 2)`` for
    rare records; discovery value and equity adjustment uniform on [0, 1].
    """

    distributions: dict = field(default_factory=_default_covariates)

    def __post_init__(self):
        merged = _default_covariates()
        for group, entries in self.distributions.items():
            if group not in merged:
                raise ValidationError(f"unknown covariate group {group!r}")
            for name, dist in entries.items():
                if name not in COVARIATE_NAMES:
                    raise ValidationError(f"unknown covariate {name!r}")
                if not isinstance(dist, CovariateDistribution):
                    raise ValidationError(f"covariates.{group}.{name} must be a CovariateDistribution")
                merged[group][name] = dist
        object.__setattr__(self, "distributions", merged)

    def get(self, group, name):
        return self.distributions[GROUP_NAMES[group] if isinstance(group, (int, np.integer)) else group][name]

    def to_dict(self):
        return {
            g: {c: self.distributions[g][c].to_dict() for c in COVARIATE_NAMES}
            for g in GROUP_NAMES
        }


@dataclass(frozen=True)
class SampleCovariates:
    mortality_risk: float = 0.0
    discovery_value: float = 0.0
    equity_adjustment: float = 0.0

    def __post_init__(self):
        for name in COVARIATE_NAMES:
            check_probability(getattr(self, name), name)

    def as_array(self):
        return np.array([self.mortality_risk, self.discovery_value, self.equity_adjustment])


class Dataset:
    """Feature matrix with binary outcomes, group tags and clinical covariates.

    Parameters
    ----------
    X : array of shape (n, d)
    y : array of shape (n,) with values in {0, 1}
    group : array of shape (n,), ``"common"``/``"rare"`` or 0/1
    covariates : array of shape (n, 3), optional
        Columns follow ``COVARIATE_NAMES``; defaults to zeros.
    """

    def __init__(self, X, y, group, covariates=None):
        X = check_finite_array(X, "features", ndim=2)
        n = X.shape[0]
        y = _labels(y, n)
        g = encode_groups(group, n)
        if covariates is None:
            cov = np.zeros((n, 3))
        else:
            cov = check_finite_array(covariates, "covariates", ndim=2)
            if cov.shape != (n, 3):
                raise ValidationError(f"covariates must have shape ({n}, 3), got {cov.shape}")
            if np.any((cov < 0) | (cov > 1)):
                raise ValidationError("covariates must lie in [0, 1]")
        self.X = X
        self.y = y
        self.group = g
        self.covariates = cov

    def __len__(self):
        return self.X.shape[0]

    def __repr__(self):
        return f"Dataset(n={len(self)}, dim={self.dim}, n_rare={self.n_rare})"

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def n_rare(self):
        return int(np.count_nonzero(self.group == RARE))

    @property
    def n_common(self):
        return len(self) - self.n_rare

    @property
    def rare_fraction(self):
        return self.n_rare / len(self) if len(self) else 0.0

    def mask(self, group):
        code = RARE if group in (RARE, "rare") else COMMON
        return self.group == code

    def subset(self, index):
        index = np.asarray(index)
        return Dataset(self.X[index], self.y[index], self.group[index], self.covariates[index])

    def group_subset(self, group):
        return self.subset(np.flatnonzero(self.mask(group)))

    def concat(self, other):
        return Dataset(
            np.vstack([self.X, other.X]),
            np.concatenate([self.y, other.y]),
            np.concatenate([self.group, other.group]),
            np.vstack([self.covariates, other.covariates]),
        )

    def sample_covariates(self, i):
        return SampleCovariates(*self.covariates[i].tolist())

    def equals(self, other):
        return (
            np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.group, other.group)
            and np.array_equal(self.covariates, other.covariates)
        )

    def header(self):
        return [f"x_{j}" for j in range(self.dim)] + ["y", "group", *COVARIATE_NAMES]

    def iter_rows(self):
        for i in range(len(self)):
            yield (
                [repr(float(v)) for v in self.X[i]]
                + [str(int(self.y[i])), GROUP_NAMES[self.group[i]]]
                + [repr(float(v)) for v in self.covariates[i]]
            )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header())
            writer.writerows(self.iter_rows())

    @classmethod
    def from_csv(cls, path):
        return read_dataset_csv(path)


def _labels(y, n):
    a = np.asarray(y)
    if a.shape != (n,):
        raise ValidationError(f"labels must have shape ({n},), got {a.shape}")
    if a.size and not np.all((a == 0) | (a == 1)):
        raise ValidationError("labels must be 0 or 1")
    return a.astype(np.int8)


def read_dataset_csv(path):
    """Read a dataset CSV with header ``x_0..x_{d-1},y,group,<covariates>``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file (missing header)", line=1) from None
        n_feat = len(header) - 5
        expected = [f"x_{j}" for j in range(max(n_feat, 0))] + ["y", "group", *COVARIATE_NAMES]
        if n_feat < 1 or header != expected:
            raise SchemaError(f"header must be {','.join(expected) if n_feat >= 1 else 'x_0,...,y,group,...'}", line=1)
        X, y, g, cov = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                feats = [float(v) for v in row[:n_feat]]
                label = int(row[n_feat])
                covs = [float(v) for v in row[n_feat + 2:]]
            except ValueError as exc:
                raise SchemaError(str(exc), line=lineno) from None
            if label not in (0, 1):
                raise SchemaError(f"label must be 0 or 1, got {row[n_feat]!r}", line=lineno)
            tag = row[n_feat + 1]
            if tag not in GROUP_NAMES:
                raise SchemaError(f"group must be 'common' or 'rare', got {tag!r}", line=lineno)
            if not all(math.isfinite(v) for v in feats):
                raise SchemaError("non-finite feature value", line=lineno)
            if not all(0.0 <= v <= 1.0 for v in covs):
                raise SchemaError("covariates must lie in [0, 1]", line=lineno)
            X.append(feats)
            y.append(label)
            g.append(GROUP_NAMES.index(tag))
            cov.append(covs)
    if not X:
        raise SchemaError("no data rows", line=2)
    return Dataset(np.array(X), np.array(y), np.array(g), np.array(cov))


def _check_compatible(spec, teacher):
    if spec.dim != teacher.dim:
        raise ValidationError(f"mixture dimension {spec.dim} != teacher dimension {teacher.dim}")


def _draw(spec, teacher, covariates, n, seed):
    """Return ``(X, y, group, cov, clean_label)`` arrays for ``n`` records."""
    d = spec.dim
    n_blocks = -(-n // BLOCK_SIZE)
    children = np.random.SeedSequence(seed).spawn(n_blocks)
    X = np.empty((n, d))
    y = np.empty(n, dtype=np.int8)
    clean = np.empty(n, dtype=np.int8)
    group = np.empty(n, dtype=np.int8)
    cov = np.empty((n, 3))
    for k, child in enumerate(children):
        lo = k * BLOCK_SIZE
        hi = min(n, lo + BLOCK_SIZE)
        b = hi - lo
        rng = np.random.Generator(np.random.PCG64(child))
        u_group = rng.random(b)
        z = rng.standard_normal((b, d))
        u_flip = rng.random(b)
        u_cov = rng.random((b, 3))

        g = (u_group < spec.rare_weight).astype(np.int8)
        for code in (COMMON, RARE):
            m = g == code
            if not m.any():
                continue
            comp = spec.component(code)
            X[lo:hi][m] = comp.mean + z[m] @ comp.cholesky.T
            teach = teacher.for_group(code)
            lab = (X[lo:hi][m] @ teach.weights + teach.bias > 0).astype(np.int8)
            clean[lo:hi][m] = lab
            for j, name in enumerate(COVARIATE_NAMES):
                cov[lo:hi, j][m] = covariates.get(code, name).from_uniform(u_cov[m, j])
        flip = u_flip < teacher.label_noise
        y[lo:hi] = np.where(flip, 1 - clean[lo:hi], clean[lo:hi])
        group[lo:hi] = g
    np.clip(cov, 0.0, 1.0, out=cov)
    return X, y, group, cov, clean


def sample_mixture(spec, teacher, n, seed, covariates=None):
    """Draw ``n`` labeled records from the mixture.

    Each record's group is Bernoulli(``spec.rare_weight``), its features come
    from that group's Gaussian, and its label from that group's teacher with
    independent flips at rate ``teacher.label_noise``.
    """
    _check_compatible(spec, teacher)
    n = check_int(n, "n", minimum=1)
    seed = check_seed(seed)
    covariates = covariates if covariates is not None else CovariateSpec()
    X, y, group, cov, _ = _draw(spec, teacher, covariates, n, seed)
    return Dataset(X, y, group, cov)


def oversample_rare(ds, factor, seed):
    """Duplicate rare records (with replacement) to ``round(factor * n_rare)``.

    Common records are kept as-is; the result is shuffled by ``seed``.
    """
    factor = float(factor)
    if not math.isfinite(factor) or factor < 1:
        raise ValidationError(f"factor must be >= 1, got {factor!r}")
    seed = check_seed(seed)
    rare_idx = np.flatnonzero(ds.group == RARE)
    if rare_idx.size == 0:
        raise EmptySubgroupError("cannot oversample: dataset has no rare records")
    target = int(math.floor(factor * rare_idx.size + 0.5))
    rng = np.random.default_rng(seed)
    extra = rng.choice(rare_idx, size=target - rare_idx.size, replace=True)
    index = np.concatenate([np.arange(len(ds)), extra])
    return ds.subset(rng.permutation(index))


@dataclass(frozen=True)
class BayesEstimate:
    accuracy: float
    stderr: float
    n: int


def bayes_reference(spec, teacher, n_mc, seed, covariates=None):
    """Monte-Carlo estimate of the best achievable accuracy in each group.

    Below 50% flip noise the Bayes rule is the noiseless teacher itself, so
    the estimate is the agreement rate between noisy and clean labels.
    Returns ``{"common": BayesEstimate | None, "rare": BayesEstimate | None}``;
    a group with no sampled records maps to ``None``.
    """
    _check_compatible(spec, teacher)
    n_mc = check_int(n_mc, "n_mc", minimum=10_000)
    seed = check_seed(seed)
    covariates = covariates if covariates is not None else CovariateSpec()
    _, y, group, _, clean = _draw(spec, teacher, covariates, n_mc, seed)
    out = {}
    for code, name in enumerate(GROUP_NAMES):
        m = group == code
        k = int(m.sum())
        if k == 0:
            out[name] = None
            continue
        acc = float(np.mean(y[m] == clean[m]))
        out[name] = BayesEstimate(acc, math.sqrt(acc * (1 - acc) / k), k)
    return out


def reference_mixture(rare_weight=0.05):
    """Two clusters in the plane: common N((0,0), I), rare N((3,1.5), 0.25 I)."""
    return MixtureSpec(
        rare_weight,
        GaussianComponent.isotropic([0.0, 0.0], 1.0),
        GaussianComponent.isotropic([3.0, 1.5], 0.25),
    )


def reference_teacher(label_noise=0.05):
    """Conflicting rules: common ``x0 + x1 > 0``; rare ``x0 - x1 < 2``."""
    return TeacherSpec(
        LinearTeacher([1.0, 1.0], 0.0),
        LinearTeacher([-1.0, 1.0], 2.0),
        label_noise,
    )
