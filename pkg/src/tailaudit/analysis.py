"""Diagnostics for how frequency weighting treats the rare group.

``decompose_gradients``
    splits the mean gradient into prevalence-weighted group contributions.
``convergence_gap``
    parameter distance between a model trained on the mixture and one
    trained on a common-only population drawn from the same random stream.
``estimate_group_mi``
    histogram mutual information between the teacher score and the label
    within one group.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .models import batch_gradient
from .synthgen import sample_mixture
from .trainers import config_hash, train_erm
from ._validation import COMMON, GROUP_NAMES, RARE, check_int, group_code
from .exceptions import EmptySubgroupError, ValidationError


@dataclass
class GradientDecomposition:
    rare_fraction: float
    norm_common: float
    norm_rare: float
    norm_total: float
    contribution_common: float
    contribution_rare: float
    ratio_bound: float
    contribution_ratio: float
    identity_holds: bool
    literal_inequality_holds: bool
    triangle_holds: bool
    common_gradient: list = field(repr=False, default=None)
    rare_gradient: list = field(repr=False, default=None)

    def to_dict(self):
        return {
            "rare_fraction": self.rare_fraction,
            "norm_common": self.norm_common,
            "norm_rare": self.norm_rare,
            "norm_total": self.norm_total,
            "contribution_common": self.contribution_common,
            "contribution_rare": self.contribution_rare,
            "ratio_bound": self.ratio_bound,
            "contribution_ratio": _json_float(self.contribution_ratio),
            "identity_holds": self.identity_holds,
            "literal_inequality_holds": self.literal_inequality_holds,
            "triangle_holds": self.triangle_holds,
            "common_gradient": self.common_gradient,
            "rare_gradient": self.rare_gradient,
        }


def _json_float(v):
    return v if math.isfinite(v) else None


def decompose_gradients(ds, params, loss, rtol=1e-12):
    """Prevalence-weighted gradient contributions of the two groups.

    With ``pi`` the rare fraction of ``ds`` the contributions are
    ``(1 - pi) * |E_common grad|`` and ``pi * |E_rare grad|``; their ratio
    equals ``pi / (1 - pi) * |E_rare| / |E_common|`` by construction
    (``identity_holds``). Whether ``|E_rare| <= pi / (1 - pi) * |E_common|``
    holds is data dependent and only reported (``literal_inequality_holds``).
    """
    g = batch_gradient(params, ds, loss)
    if g.common is None or g.rare is None:
        raise EmptySubgroupError(f"gradient decomposition needs both groups; missing {g.missing_groups}")
    pi = g.rare_fraction
    nc = float(np.linalg.norm(g.common))
    nr = float(np.linalg.norm(g.rare))
    nt = float(np.linalg.norm(g.total))
    cc = (1.0 - pi) * nc
    cr = pi * nr
    bound = pi / (1.0 - pi)
    ratio = cr / cc if cc > 0 else (math.inf if cr > 0 else math.nan)
    if nc > 0:
        expected = bound * (nr / nc)
        identity = math.isclose(ratio, expected, rel_tol=rtol, abs_tol=1e-300)
    else:
        identity = cc == 0
    return GradientDecomposition(
        rare_fraction=pi,
        norm_common=nc,
        norm_rare=nr,
        norm_total=nt,
        contribution_common=cc,
        contribution_rare=cr,
        ratio_bound=bound,
        contribution_ratio=ratio,
        identity_holds=bool(identity),
        literal_inequality_holds=bool(nr <= bound * nc),
        triangle_holds=bool(nt <= (cc + cr) * (1 + 1e-12) + 1e-300),
        common_gradient=g.common.tolist(),
        rare_gradient=g.rare.tolist(),
    )


@dataclass
class ConvergenceGap:
    pi: float
    epsilon: float
    seed: int
    config_hash: str
    theta_mixture: list = field(repr=False, default=None)
    theta_common: list = field(repr=False, default=None)

    def to_dict(self):
        return {
            "pi": self.pi,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "theta_mixture": self.theta_mixture,
            "theta_common": self.theta_common,
        }


def convergence_gap(spec, teacher, cfg, loss, n, seed, covariates=None):
    """Distance between mixture-trained and common-only-trained linear models.

    Both training sets have ``n`` records drawn with the same ``seed``; the
    common-only set is the same draw with the rare weight set to zero, so
    the two sets differ exactly in the records the mixture tagged rare.
    """
    if cfg.architecture != "linear":
        raise ValidationError("convergence_gap compares linear models only (architecture mismatch)")
    mixed = sample_mixture(spec, teacher, n, seed, covariates)
    common = sample_mixture(spec.with_rare_weight(0.0), teacher, n, seed, covariates)
    theta_a = train_erm(mixed, loss, cfg).params.flat
    theta_b = train_erm(common, loss, cfg).params.flat
    return ConvergenceGap(
        spec.rare_weight,
        float(np.linalg.norm(theta_a - theta_b)),
        int(seed),
        config_hash("convergence_gap", cfg.to_dict(), loss.to_dict(), spec.to_dict(), teacher.to_dict(), n),
        theta_a.tolist(),
        theta_b.tolist(),
    )


@dataclass
class MIEstimate:
    group: str
    mi_nats: float
    bins: int
    n: int
    stderr: float
    plug_in: float = None

    def to_dict(self):
        return {
            "group": self.group,
            "mi_nats": self.mi_nats,
            "estimator": {"histogram_bins": self.bins, "samples": self.n, "bias_correction": "miller_madow"},
            "stderr": self.stderr,
            "plug_in": self.plug_in,
        }


def _entropy(counts, n):
    c = counts[counts > 0]
    p = c / n
    return -math.fsum((p * np.log(p)).tolist()), c.size


def _mi_histogram(score, y, bins):
    """Miller-Madow corrected plug-in MI (nats) between binned score and label."""
    n = score.size
    edges = np.quantile(score, np.linspace(0.0, 1.0, bins + 1))
    b = np.searchsorted(edges[1:-1], score, side="right")
    joint = np.bincount(b * 2 + y, minlength=2 * bins).astype(float)
    hb, mb = _entropy(joint.reshape(bins, 2).sum(axis=1), n)
    hy, my = _entropy(np.bincount(y, minlength=2).astype(float), n)
    hby, mby = _entropy(joint, n)
    plug_in = hb + hy - hby
    corrected = plug_in + ((mb - 1) + (my - 1) - (mby - 1)) / (2.0 * n)
    return max(corrected, 0.0), plug_in


def estimate_group_mi(ds, group, bins=32, teacher=None, folds=10, min_samples=1000):
    """Mutual information between the (scalar) score and the label within ``group``.

    The score is the group's teacher score when ``teacher`` is given, else
    the single feature of a 1-D dataset. Bins are equal-frequency. The
    standard error is a delete-one-fold jackknife over ``folds`` folds.
    """
    code = group_code(group)
    bins = check_int(bins, "bins", minimum=2)
    m = ds.group == code
    n = int(m.sum())
    if n < min_samples:
        raise EmptySubgroupError(f"{GROUP_NAMES[code]} group has {n} records; need >= {min_samples}")
    X = ds.X[m]
    y = ds.y[m].astype(np.int64)
    if teacher is not None:
        score = teacher.for_group(code).score(X)
    elif ds.dim == 1:
        score = X[:, 0]
    else:
        raise ValidationError("multivariate features need a teacher to reduce them to a scalar score")
    estimate, plug_in = _mi_histogram(score, y, bins)
    fold = np.arange(n) % folds
    loo = np.array([_mi_histogram(score[fold != k], y[fold != k], bins)[0] for k in range(folds)])
    stderr = math.sqrt((folds - 1) / folds * float(np.sum((loo - loo.mean()) ** 2)))
    return MIEstimate(GROUP_NAMES[code], estimate, bins, n, stderr, plug_in)
