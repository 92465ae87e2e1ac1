import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from tailaudit import synthgen
from tailaudit.estimators import ConstrainedClassifier, ERMClassifier, GroupDROClassifier, rare_case_report
from tailaudit.exceptions import InfeasibleConstraintError

ESTIMATORS = [ERMClassifier, GroupDROClassifier, ConstrainedClassifier]


@pytest.fixture(scope="module")
def data():
    ds = synthgen.sample_mixture(synthgen.reference_mixture(0.2), synthgen.reference_teacher(), 3000, 5)
    return ds.X, ds.y, ds.group, ds.covariates


@pytest.mark.parametrize("cls", ESTIMATORS)
def test_get_params_round_trip(cls):
    est = cls(epochs=3, learning_rate=0.1)
    params = est.get_params()
    assert params["epochs"] == 3 and params["learning_rate"] == 0.1
    cloned = clone(est)
    assert cloned.get_params() == params
    est.set_params(epochs=4)
    assert est.epochs == 4


@pytest.mark.parametrize("cls", ESTIMATORS)
def test_fit_predict(cls, data):
    X, y, g, _ = data
    est = cls(epochs=3).fit(X, y, groups=g)
    proba = est.predict_proba(X)
    assert proba.shape == (len(y), 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert set(np.unique(est.predict(X))) <= {0, 1}
    assert est.score(X, y) > 0.6


def test_string_labels_are_mapped(data):
    X, y, g, _ = data
    labels = np.where(y == 1, "sick", "well")
    est = ERMClassifier(epochs=2).fit(X, labels)
    assert set(est.predict(X)) <= {"sick", "well"}
    assert list(est.classes_) == ["sick", "well"]


def test_unfitted():
    with pytest.raises(NotFittedError):
        ERMClassifier().predict_proba(np.zeros((1, 2)))


def test_deterministic_given_random_state(data):
    X, y, g, _ = data
    a = ERMClassifier(epochs=2, random_state=3).fit(X, y).decision_function(X)
    b = ERMClassifier(epochs=2, random_state=3).fit(X, y).decision_function(X)
    np.testing.assert_array_equal(a, b)


def test_works_inside_cross_validation(data):
    X, y, _, _ = data
    scores = cross_val_score(ERMClassifier(epochs=2), X, y, cv=3)
    assert scores.shape == (3,)


def test_group_weights_exposed(data):
    X, y, g, _ = data
    est = GroupDROClassifier(group_step_size=0.5, epochs=2).fit(X, y, groups=g)
    assert abs(sum(est.group_weights_) - 1.0) < 1e-12


def test_clinically_weighted_fit_uses_covariates(data):
    X, y, g, cov = data
    est = ERMClassifier(clinical_weights=(1.0, 2.0, 0.0, 0.0), epochs=2).fit(X, y, groups=g, covariates=cov)
    base = ERMClassifier(epochs=2).fit(X, y, groups=g)
    assert not np.array_equal(est.params_.flat, base.params_.flat)


def test_constrained_infeasible(data):
    X, y, g, _ = data
    with pytest.raises(InfeasibleConstraintError):
        ConstrainedClassifier(baseline=0.9999, epochs=2).fit(X, y, groups=g)


def test_rare_case_report(data):
    X, y, g, _ = data
    est = ERMClassifier(epochs=3).fit(X, y, groups=g)
    rep = rare_case_report(est, X, y, g)
    assert rep["rcpg"] == pytest.approx(rep["performance"].p_common - rep["performance"].p_rare)
    assert 0 <= rep["calibration"].rcce <= 1
