"""scikit-learn compatible wrappers around the trainers.

The estimators accept the usual ``X, y`` plus two optional fit arguments:
``groups`` (``"common"``/``"rare"`` or 0/1 per row, default all common) and
``covariates`` (an ``(n, 3)`` array of mortality risk, discovery value and
equity adjustment, needed by the clinically weighted objective)::

    clf = GroupDROClassifier(group_step_size=0.05).fit(X, y, groups=g)
    clf.predict_proba(X_test)[:, 1]
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import losses, metrics, trainers
from .models import decision_scores, predict_proba_batch
from .synthgen import Dataset
from ._validation import encode_groups
from .exceptions import ValidationError


def _make_loss(est):
    if est.loss == "cross_entropy":
        base = losses.CrossEntropy()
    elif est.loss == "focal":
        base = losses.Focal(est.focal_alpha, est.focal_gamma)
    elif est.loss == "cost_sensitive":
        base = losses.CostSensitive(est.cost if est.cost is not None else [[0.0, 1.0], [1.0, 0.0]])
    else:
        raise ValidationError(f"loss must be cross_entropy, focal or cost_sensitive, got {est.loss!r}")
    if est.clinical_weights is None:
        return base
    return losses.ClinicallyWeighted(base, losses.WeightParams(*est.clinical_weights))


class _RareAwareClassifier(ClassifierMixin, BaseEstimator):
    def __init__(
        self,
        loss="cross_entropy",
        focal_alpha=1.0,
        focal_gamma=2.0,
        cost=None,
        clinical_weights=None,
        learning_rate=0.05,
        epochs=30,
        batch_size=64,
        momentum=0.0,
        validation_fraction=0.2,
        architecture="linear",
        hidden=8,
        random_state=0,
    ):
        self.loss = loss
        self.focal_alpha = focal_alpha
        self.focal_gamma = focal_gamma
        self.cost = cost
        self.clinical_weights = clinical_weights
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.validation_fraction = validation_fraction
        self.architecture = architecture
        self.hidden = hidden
        self.random_state = random_state

    def _train_config(self):
        return trainers.TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            momentum=self.momentum,
            seed=0 if self.random_state is None else int(self.random_state),
            validation_fraction=self.validation_fraction,
            architecture=self.architecture,
            hidden=self.hidden,
        )

    def _dataset(self, X, y, groups, covariates):
        X, y = check_X_y(X, y)
        classes = np.unique(y)
        if classes.shape[0] != 2:
            raise ValueError(f"expected exactly two classes, got {classes.shape[0]}")
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        y01 = (y == classes[1]).astype(np.int8)
        g = np.zeros(X.shape[0], dtype=np.int8) if groups is None else encode_groups(groups, X.shape[0])
        return Dataset(X, y01, g, covariates)

    def _fit_dataset(self, ds, loss, cfg):
        raise NotImplementedError

    def fit(self, X, y, groups=None, covariates=None):
        ds = self._dataset(X, y, groups, covariates)
        self.result_ = self._fit_dataset(ds, _make_loss(self), self._train_config())
        self.params_ = self.result_.params
        self.history_ = self.result_.history
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        return decision_scores(self.params_, X)

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        p = predict_proba_batch(self.params_, X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] >= 0.5).astype(int)]


class ERMClassifier(_RareAwareClassifier):
    """Logistic classifier trained by plain empirical risk minimization."""

    def _fit_dataset(self, ds, loss, cfg):
        return trainers.train_erm(ds, loss, cfg)


class GroupDROClassifier(_RareAwareClassifier):
    """Group-DRO training over the common/rare groups passed to ``fit``."""

    def __init__(
        self,
        group_step_size=0.01,
        loss="cross_entropy",
        focal_alpha=1.0,
        focal_gamma=2.0,
        cost=None,
        clinical_weights=None,
        learning_rate=0.05,
        epochs=30,
        batch_size=64,
        momentum=0.0,
        validation_fraction=0.2,
        architecture="linear",
        hidden=8,
        random_state=0,
    ):
        super().__init__(
            loss, focal_alpha, focal_gamma, cost, clinical_weights, learning_rate, epochs,
            batch_size, momentum, validation_fraction, architecture, hidden, random_state,
        )
        self.group_step_size = group_step_size

    def _fit_dataset(self, ds, loss, cfg):
        present = tuple(n for n, c in (("common", 0), ("rare", 1)) if np.any(ds.group == c))
        return trainers.train_group_dro(ds, loss, cfg, trainers.DROConfig(self.group_step_size, present))

    @property
    def group_weights_(self):
        check_is_fitted(self, "result_")
        return self.result_.history[-1].q


class ConstrainedClassifier(_RareAwareClassifier):
    """Minimize ``L_common + lam * L_rare`` subject to a validation floor on
    common-group performance; ``fit`` raises ``InfeasibleConstraintError``
    when no epoch meets the floor."""

    def __init__(
        self,
        lam=10.0,
        baseline=0.6,
        constraint_metric="auroc",
        specificity=0.9,
        loss="cross_entropy",
        focal_alpha=1.0,
        focal_gamma=2.0,
        cost=None,
        clinical_weights=None,
        learning_rate=0.05,
        epochs=30,
        batch_size=64,
        momentum=0.0,
        validation_fraction=0.2,
        architecture="linear",
        hidden=8,
        random_state=0,
    ):
        super().__init__(
            loss, focal_alpha, focal_gamma, cost, clinical_weights, learning_rate, epochs,
            batch_size, momentum, validation_fraction, architecture, hidden, random_state,
        )
        self.lam = lam
        self.baseline = baseline
        self.constraint_metric = constraint_metric
        self.specificity = specificity

    def _fit_dataset(self, ds, loss, cfg):
        cs = trainers.ConstraintSpec(self.lam, self.baseline, self.constraint_metric, self.specificity)
        return trainers.train_constrained(ds, loss, cfg, cs)


def rare_case_report(estimator, X, y, groups, metric="auroc", specificity=0.9, bins=15, min_bin_count=5):
    """RCPG and RCCE of a fitted binary classifier on labeled, grouped data."""
    p = estimator.predict_proba(X)[:, 1]
    classes = getattr(estimator, "classes_", np.array([0, 1]))
    y01 = (np.asarray(y) == classes[1]).astype(np.int8)
    preds = metrics.PredictionSet(p, y01, groups)
    gp = metrics.group_performance(preds, metric, specificity)
    cal = metrics.rcce(preds, bins, min_bin_count)
    return {"performance": gp, "rcpg": metrics.rcpg(gp), "calibration": cal}
