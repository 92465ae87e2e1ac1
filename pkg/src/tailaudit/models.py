"""Logistic classifiers with analytic gradients.

Two architectures are supported:

``linear``
    ``score(x) = w . x + b``; flat layout ``[w_0 .. w_{d-1}, b]``.
``mlp1``
    one tanh hidden layer of width ``h``:
    ``score(x) = v . tanh(W^T x + c) + b``; flat layout is ``W`` (d x h,
    row-major), then ``c`` (h), ``v`` (h), ``b``.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._summation import fmean, fsum_columns
from ._validation import RARE, check_finite_array, check_int
from .exceptions import NumericalFailureError, ValidationError

P_CLAMP = 1e-12
ARCHITECTURES = ("linear", "mlp1")


def n_parameters(architecture, dim, hidden=0):
    if architecture == "linear":
        return dim + 1
    if architecture == "mlp1":
        return dim * hidden + 2 * hidden + 1
    raise ValidationError(f"architecture must be one of {ARCHITECTURES}, got {architecture!r}")


@dataclass(frozen=True, eq=False)
class ModelParams:
    architecture: str
    dim: int
    flat: np.ndarray
    hidden: int = 0

    def __post_init__(self):
        dim = check_int(self.dim, "dim", minimum=1)
        hidden = check_int(self.hidden, "hidden", minimum=0)
        if self.architecture == "mlp1" and hidden < 1:
            raise ValidationError("mlp1 needs hidden width >= 1")
        if self.architecture == "linear":
            hidden = 0
        flat = check_finite_array(self.flat, "parameters", ndim=1).copy()
        expected = n_parameters(self.architecture, dim, hidden)
        if flat.shape[0] != expected:
            raise ValidationError(
                f"{self.architecture} with dim={dim}, hidden={hidden} needs {expected} parameters, "
                f"got {flat.shape[0]}"
            )
        flat.flags.writeable = False
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "hidden", hidden)
        object.__setattr__(self, "flat", flat)

    @classmethod
    def zeros(cls, architecture, dim, hidden=0):
        return cls(architecture, dim, np.zeros(n_parameters(architecture, dim, hidden)), hidden)

    @classmethod
    def random_uniform(cls, architecture, dim, hidden, rng, scale=0.1):
        size = n_parameters(architecture, dim, hidden)
        return cls(architecture, dim, rng.uniform(-scale, scale, size), hidden)

    @classmethod
    def linear(cls, weights, bias=0.0):
        w = np.asarray(weights, dtype=float).ravel()
        return cls("linear", w.shape[0], np.append(w, float(bias)))

    def with_flat(self, flat):
        return ModelParams(self.architecture, self.dim, flat, self.hidden)

    def unpack(self):
        """Return the parameter blocks as arrays (views into ``flat``)."""
        d, h, f = self.dim, self.hidden, self.flat
        if self.architecture == "linear":
            return f[:d], f[d]
        W = f[: d * h].reshape(d, h)
        c = f[d * h : d * h + h]
        v = f[d * h + h : d * h + 2 * h]
        return W, c, v, f[-1]

    def __eq__(self, other):
        return (
            isinstance(other, ModelParams)
            and self.architecture == other.architecture
            and self.dim == other.dim
            and self.hidden == other.hidden
            and np.array_equal(self.flat, other.flat)
        )

    def __hash__(self):
        return hash((self.architecture, self.dim, self.hidden, self.flat.tobytes()))

    def to_dict(self):
        return {
            "architecture": self.architecture,
            "dims": {"input": self.dim, "hidden": self.hidden},
            "parameters": self.flat.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        dims = d["dims"]
        return cls(d["architecture"], dims["input"], np.asarray(d["parameters"], dtype=float), dims.get("hidden", 0))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _check_X(params, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.dim:
        raise ValidationError(f"expected inputs with {params.dim} features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("inputs contain NaN or Inf")
    return X


def decision_scores(params, X):
    X = _check_X(params, X)
    if params.architecture == "linear":
        w, b = params.unpack()
        return X @ w + b
    W, c, v, b = params.unpack()
    return np.tanh(X @ W + c) @ v + b


def predict_proba_batch(params, X):
    """Unclamped ``sigmoid(score)`` for each row of ``X``."""
    return expit(decision_scores(params, X))


def predict_proba(params, x):
    """Probability of the positive class for a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValidationError("predict_proba expects a single feature vector")
    return float(predict_proba_batch(params, x)[0])


def score_jacobian(params, X):
    """Scores ``(n,)`` and their derivatives w.r.t. the flat parameters ``(n, P)``."""
    X = _check_X(params, X)
    n = X.shape[0]
    if params.architecture == "linear":
        w, b = params.unpack()
        return X @ w + b, np.hstack([X, np.ones((n, 1))])
    W, c, v, b = params.unpack()
    a = np.tanh(X @ W + c)
    scores = a @ v + b
    back = (1.0 - a * a) * v  # d score / d pre-activation, (n, h)
    dW = (X[:, :, None] * back[:, None, :]).reshape(n, -1)
    return scores, np.hstack([dW, back, a, np.ones((n, 1))])


@dataclass
class BatchGradient:
    """Mean gradient of a batch plus its group-conditional pieces.

    ``common``/``rare`` (and the matching ``loss_*``) are ``None`` when the
    batch has no records of that group.
    """

    total: np.ndarray
    loss: float
    common: np.ndarray = None
    rare: np.ndarray = None
    loss_common: float = None
    loss_rare: float = None
    n_common: int = 0
    n_rare: int = 0

    @property
    def rare_fraction(self):
        return self.n_rare / (self.n_common + self.n_rare)

    @property
    def missing_groups(self):
        return tuple(name for name, g in (("common", self.common), ("rare", self.rare)) if g is None)


def batch_gradient(params, batch, loss, weight_ctx=None):
    """Gradient of the mean per-sample loss over ``batch`` w.r.t. ``params.flat``.

    ``weight_ctx`` (a ``WeightParams``) wraps ``loss`` in the clinically
    weighted objective. Sums are exactly rounded, so
    ``total == pi_hat * rare + (1 - pi_hat) * common`` up to a few ulps.
    """
    from . import losses

    if len(batch) == 0:
        raise ValidationError("batch_gradient needs a nonempty batch")
    if weight_ctx is not None:
        loss = losses.ClinicallyWeighted(loss, weight_ctx)
    # overflow shows up as non-finite values, reported below with the record
    with np.errstate(over="ignore", invalid="ignore"):
        scores, J = score_jacobian(params, batch.X)
        p = expit(scores)
        vals = losses.sample_losses(loss, p, batch.y, batch.covariates)
        dscore = losses.sample_score_gradients(loss, p, batch.y, batch.covariates)
    bad = np.flatnonzero(~(np.isfinite(scores) & np.isfinite(vals) & np.isfinite(dscore)))
    if bad.size:
        i = int(bad[0])
        raise NumericalFailureError(f"non-finite loss or gradient at record {i}", index=i)
    G = dscore[:, None] * J
    rare = batch.group == RARE
    n_rare = int(rare.sum())
    n_common = len(batch) - n_rare
    out = BatchGradient(fsum_columns(G) / len(batch), fmean(vals), n_common=n_common, n_rare=n_rare)
    if n_common:
        out.common = fsum_columns(G[~rare]) / n_common
        out.loss_common = fmean(vals[~rare])
    if n_rare:
        out.rare = fsum_columns(G[rare]) / n_rare
        out.loss_rare = fmean(vals[rare])
    return out


def finite_difference_gradient(params, batch, loss, step=1e-6):
    """Central-difference gradient of the mean loss; slow, for testing only."""
    from . import losses

    base = params.flat
    grad = np.empty_like(base)
    for k in range(base.shape[0]):
        hi = base.copy()
        lo = base.copy()
        hi[k] += step
        lo[k] -= step
        f_hi = losses.objective_value(batch, params.with_flat(hi), loss).total
        f_lo = losses.objective_value(batch, params.with_flat(lo), loss).total
        grad[k] = (f_hi - f_lo) / (2 * step)
    return grad
