"""Per-sample objectives for binary classifiers.

Every loss is a function of the predicted probability ``p = sigmoid(s)`` and
the label, optionally scaled by a per-sample clinical weight. Besides the
value, each loss exposes ``score_gradient``: the derivative with respect to
the logit ``s``, which the model chains into parameter gradients.
"""

from dataclasses import dataclass, field

import numpy as np

from . import models
from ._summation import fmean
from ._validation import RARE, check_nonnegative
from .exceptions import NumericalFailureError, ValidationError

P_CLAMP = models.P_CLAMP


def _unclamped(p_raw):
    return (p_raw >= P_CLAMP) & (p_raw <= 1 - P_CLAMP)


def _pt(p, y):
    return np.where(y == 1, p, 1.0 - p)


@dataclass(frozen=True)
class WeightParams:
    """Coefficients of the clinical weight
    ``w = baseline + alpha*mortality + beta*discovery + gamma*equity``."""

    baseline: float = 1.0
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        total = 0.0
        for name in ("baseline", "alpha", "beta", "gamma"):
            v = check_nonnegative(getattr(self, name), f"weights.{name}")
            object.__setattr__(self, name, v)
            total += v
        if total <= 0:
            raise ValidationError("weights: baseline + alpha + beta + gamma must be > 0")

    def coefficients(self):
        return np.array([self.alpha, self.beta, self.gamma])

    def to_dict(self):
        return {"baseline": self.baseline, "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma}


def clinical_weight(cov, params):
    """Weight of one sample (``SampleCovariates``) or of an ``(n, 3)`` covariate array."""
    if hasattr(cov, "as_array"):
        c = cov.as_array()
        return float(params.baseline + c @ params.coefficients())
    c = np.asarray(cov, dtype=float)
    return params.baseline + c @ params.coefficients()


@dataclass(frozen=True)
class CrossEntropy:
    name = "cross_entropy"

    def values(self, p, y, cov=None):
        return -np.log(_pt(p, y))

    def score_gradient(self, p, y, cov=None):
        return p - y

    def to_dict(self):
        return {"variant": self.name}


@dataclass(frozen=True)
class Focal:
    """``-alpha * (1 - p_t)**gamma * log(p_t)``."""

    alpha: float = 1.0
    gamma: float = 2.0
    name = "focal"

    def __post_init__(self):
        object.__setattr__(self, "alpha", check_nonnegative(self.alpha, "loss.alpha"))
        object.__setattr__(self, "gamma", check_nonnegative(self.gamma, "loss.gamma"))

    def values(self, p, y, cov=None):
        pt = _pt(p, y)
        return -self.alpha * (1.0 - pt) ** self.gamma * np.log(pt)

    def score_gradient(self, p, y, cov=None):
        # d p_t / d s = (2y - 1) p_t (1 - p_t)
        pt = _pt(p, y)
        q = 1.0 - pt
        sign = 2.0 * y - 1.0
        return -self.alpha * sign * (q ** (self.gamma + 1) - self.gamma * pt * q**self.gamma * np.log(pt))

    def to_dict(self):
        return {"variant": self.name, "alpha": self.alpha, "gamma": self.gamma}


@dataclass(frozen=True, eq=False)
class CostSensitive:
    """Cross-entropy weighted by the misclassification cost of the true class.

    ``cost[i][j]`` is the cost of predicting ``j`` when the truth is ``i``;
    a record with label ``y`` gets weight ``cost[y][1 - y]``.
    """

    cost: np.ndarray = field(default_factory=lambda: np.array([[0.0, 1.0], [1.0, 0.0]]))
    name = "cost_sensitive"

    def __post_init__(self):
        c = np.asarray(self.cost, dtype=float)
        if c.shape != (2, 2) or not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValidationError("loss.cost must be a 2x2 matrix of finite nonnegative entries")
        if c[0, 1] <= 0 and c[1, 0] <= 0:
            raise ValidationError("loss.cost needs at least one positive off-diagonal entry")
        c.flags.writeable = False
        object.__setattr__(self, "cost", c)

    def class_weights(self, y):
        return np.where(y == 1, self.cost[1, 0], self.cost[0, 1])

    def values(self, p, y, cov=None):
        return self.class_weights(y) * -np.log(_pt(p, y))

    def score_gradient(self, p, y, cov=None):
        return self.class_weights(y) * (p - y)

    def __eq__(self, other):
        return isinstance(other, CostSensitive) and np.array_equal(self.cost, other.cost)

    def __hash__(self):
        return hash(self.cost.tobytes())

    def to_dict(self):
        return {"variant": self.name, "cost": self.cost.tolist()}


@dataclass(frozen=True)
class ClinicallyWeighted:
    """``w(covariates) * base_loss`` with ``w`` from :func:`clinical_weight`."""

    base: object = field(default_factory=CrossEntropy)
    params: WeightParams = field(default_factory=WeightParams)
    name = "clinically_weighted"

    def __post_init__(self):
        if isinstance(self.base, ClinicallyWeighted) or not hasattr(self.base, "score_gradient"):
            raise ValidationError("clinically weighted base must be cross_entropy, focal or cost_sensitive")

    def _weights(self, cov, n):
        if cov is None:
            raise ValidationError("clinically weighted loss requires covariates")
        w = clinical_weight(cov, self.params)
        return np.broadcast_to(w, (n,)) if np.ndim(w) == 0 else w

    def values(self, p, y, cov=None):
        return self._weights(cov, np.shape(p)[0] if np.ndim(p) else 1) * self.base.values(p, y)

    def score_gradient(self, p, y, cov=None):
        return self._weights(cov, np.shape(p)[0] if np.ndim(p) else 1) * self.base.score_gradient(p, y)

    def to_dict(self):
        return {"variant": self.name, "base": self.base.to_dict(), "weights": self.params.to_dict()}


LOSS_VARIANTS = ("cross_entropy", "focal", "cost_sensitive", "clinically_weighted")


def loss_from_dict(d):
    variant = d.get("variant")
    if variant == "cross_entropy":
        return CrossEntropy()
    if variant == "focal":
        return Focal(d.get("alpha", 1.0), d.get("gamma", 2.0))
    if variant == "cost_sensitive":
        return CostSensitive(np.asarray(d["cost"], dtype=float))
    if variant == "clinically_weighted":
        return ClinicallyWeighted(loss_from_dict(d["base"]), WeightParams(**d.get("weights", {})))
    raise ValidationError(f"loss.variant must be one of {LOSS_VARIANTS}, got {variant!r}")


def per_sample_loss(loss, p, y, cov=None):
    """Loss of a single prediction ``p`` in (0, 1) for label ``y``."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValidationError(f"p must lie in (0, 1), got {p!r}")
    if y not in (0, 1):
        raise ValidationError(f"y must be 0 or 1, got {y!r}")
    cov_arr = None
    if isinstance(loss, ClinicallyWeighted):
        cov_arr = np.atleast_2d(cov.as_array() if hasattr(cov, "as_array") else np.asarray(cov, dtype=float))
    return float(loss.values(np.array([p]), np.array([y]), cov_arr)[0])


def sample_losses(loss, p_raw, y, cov=None):
    """Vectorized loss values; ``p_raw`` is clamped to ``[1e-12, 1 - 1e-12]`` first."""
    p = np.clip(np.asarray(p_raw, dtype=float), P_CLAMP, 1 - P_CLAMP)
    return loss.values(p, np.asarray(y), cov)


def sample_score_gradients(loss, p_raw, y, cov=None):
    """d loss / d logit per sample; zero wherever the probability clamp is active."""
    p_raw = np.asarray(p_raw, dtype=float)
    p = np.clip(p_raw, P_CLAMP, 1 - P_CLAMP)
    g = loss.score_gradient(p, np.asarray(y), cov)
    return np.where(_unclamped(p_raw), g, 0.0)


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    common: float = None
    rare: float = None
    n_common: int = 0
    n_rare: int = 0

    def __float__(self):
        return self.total


def objective_value(ds, params, loss):
    """Mean (weighted) loss over ``ds`` plus the per-group means.

    An empty group's mean is ``None``.
    """
    if len(ds) == 0:
        raise ValidationError("objective_value needs a nonempty dataset")
    p = models.predict_proba_batch(params, ds.X)
    vals = sample_losses(loss, p, ds.y, ds.covariates)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise NumericalFailureError(f"non-finite loss at record {int(bad[0])}", index=int(bad[0]))
    rare = ds.group == RARE
    n_rare = int(rare.sum())
    n_common = len(ds) - n_rare
    return ObjectiveValue(
        fmean(vals),
        fmean(vals[~rare]) if n_common else None,
        fmean(vals[rare]) if n_rare else None,
        n_common,
        n_rare,
    )

