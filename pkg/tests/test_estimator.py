"""The scikit-learn style facade."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from anticipation.errors import DimensionError, ParameterError
from anticipation.estimator import RUAnticipator


def _toy(n=36, t=14, d0=6, d1=4, n_classes=3, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, n_classes, size=n)
    p0 = rng.normal(size=(n_classes, d0)) * 2.0
    p1 = rng.normal(size=(n_classes, d1)) * 2.0
    x0 = rng.normal(scale=0.3, size=(n, t, d0)) + p0[y][:, None, :]
    x1 = rng.normal(scale=0.3, size=(n, t, d1)) + p1[y][:, None, :]
    return [x0, x1], y


def _fast(**kw):
    base = dict(hidden=12, scp_epochs=1, branch_epochs=2, joint_epochs=2,
                lr=0.15, dropout=0.0, random_state=0)
    base.update(kw)
    return RUAnticipator(**base)


def test_fit_predict_on_separable_data():
    X, y = _toy()
    est = _fast(fusion="matt", branch_epochs=4, joint_epochs=4).fit(X, y)
    assert est.score(X, y) > 0.8
    pred = est.predict(X)
    assert pred.shape == y.shape
    assert set(pred).issubset(set(est.classes_))


def test_predict_scores_shape_and_horizon():
    X, y = _toy()
    est = _fast(fusion="late").fit(X, y)
    scores = est.predict_scores(X)
    assert scores.shape == (len(y), len(est.classes_))
    s1 = est.predict_scores(X, tau_a=1.0)
    s2 = est.predict_scores(X, tau_a=0.25)
    assert not np.array_equal(s1, s2)
    with pytest.raises(Exception):
        est.predict_scores(X, tau_a=0.33)


def test_classes_preserved_through_label_encoding():
    X, y = _toy()
    labels = np.array(["pick", "pour", "cut"])[y]
    est = _fast(fusion="single:0").fit(X, labels)
    assert sorted(est.classes_) == ["cut", "pick", "pour"]
    assert set(est.predict(X)).issubset(set(est.classes_))


def test_single_3d_array_is_one_modality():
    X, y = _toy()
    est = _fast(fusion="single:0").fit(X[0], y)
    assert est.n_features_in_ == X[0].shape[2]
    assert est.predict(X[0]).shape == y.shape


def test_unfitted_raises():
    X, y = _toy()
    with pytest.raises(NotFittedError):
        RUAnticipator().predict(X)


def test_validation_errors():
    X, y = _toy()
    est = _fast()
    with pytest.raises(DimensionError):
        est.fit([X[0][:, :10, :], X[1]], y)  # step count mismatch vs s_enc+s_ant
    with pytest.raises(DimensionError):
        est.fit([X[0][:10], X[1]], y)  # ragged batch
    with pytest.raises(DimensionError):
        est.fit(X, y[:5])  # y does not match the sample count
    with pytest.raises(ParameterError):
        _fast().fit(X, np.zeros(len(y)))  # single class
    fitted = _fast(fusion="single:0").fit(X[0], y)
    bad = np.zeros((4, 14, X[0].shape[2] + 1))
    with pytest.raises(DimensionError):
        fitted.predict(bad)


def test_clone_and_get_params_roundtrip():
    est = _fast(fusion="matt", hidden=20)
    cloned = clone(est)
    assert cloned.get_params() == est.get_params()
    est2 = RUAnticipator(**est.get_params())
    assert est2.get_params() == est.get_params()


def test_deterministic_given_random_state():
    X, y = _toy()
    a = _fast(fusion="late").fit(X, y).predict_scores(X)
    b = _fast(fusion="late").fit(X, y).predict_scores(X)
    np.testing.assert_array_equal(a, b)


def test_cross_val_score_integration():
    X, y = _toy(n=24)
    est = _fast(fusion="single:0", validation_fraction=0.34)
    scores = cross_val_score(est, X[0], y, cv=2)
    assert scores.shape == (2,)
    assert np.all((0.0 <= scores) & (scores <= 1.0))
