import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cubekit.estimator import CubeNetClassifier
from cubekit.symmetry import generate_group
from cubekit.voxel import rotate_spatial

FAST = dict(channels=(2, 2, 4), epochs=3, batch_size=4, lr=1e-2)


def toy(n=6, size=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(2 * n, size, size, size))
    y = np.array(["bright"] * n + ["dark"] * n)
    X[:n] += 1.5
    X[n:] -= 1.5
    return X, y


def test_get_params_and_clone():
    est = CubeNetClassifier(group="T4", epochs=2)
    params = est.get_params()
    assert params["group"] == "T4" and params["epochs"] == 2
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(lr=0.5)
    assert est.lr == 0.5


def test_fit_predict_and_classes():
    X, y = toy()
    est = CubeNetClassifier(group="V", **FAST).fit(X, y)
    assert list(est.classes_) == ["bright", "dark"]
    assert len(est.loss_curve_) == 3
    assert est.predict(X).shape == (12,)
    assert est.score(X, y) == 1.0
    proba = est.predict_proba(X)
    assert np.allclose(proba.sum(axis=1), 1)
    assert est.transform(X).shape == (12, 2)


def test_accepts_channel_axis_and_rejects_bad_input():
    X, y = toy()
    est = CubeNetClassifier(group="V", **FAST).fit(X[:, None], y)
    assert est.predict(X[:, None]).shape == (12,)
    bad = X.copy()
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        est.predict(bad)
    with pytest.raises(ValueError):
        est.predict(np.zeros((2, 4, 4, 5)))
    with pytest.raises(ValueError):
        CubeNetClassifier(**FAST).fit(X, y[:-1])


def test_not_fitted():
    with pytest.raises(NotFittedError):
        CubeNetClassifier().predict(np.zeros((1, 4, 4, 4)))


def test_fitted_model_is_invariant():
    X, y = toy(seed=1)
    est = CubeNetClassifier(group="S4", **FAST).fit(X, y)
    S4 = generate_group("S4")
    base = est.decision_function(X)
    for m in S4.matrices:
        out = est.decision_function(rotate_spatial(X, m))
        assert np.max(np.abs(out - base) / np.maximum(np.abs(base), 1e-12)) <= 1e-10
    assert np.array_equal(est.predict_rotation_averaged(X), est.predict(X))


def test_fit_is_deterministic():
    X, y = toy(seed=2)
    a = CubeNetClassifier(group="V", **FAST).fit(X, y)
    b = CubeNetClassifier(group="V", **FAST).fit(X, y)
    assert a.loss_curve_ == b.loss_curve_
    assert np.array_equal(a.decision_function(X), b.decision_function(X))


def test_save_load(tmp_path):
    X, y = toy(seed=3)
    est = CubeNetClassifier(group="V", **FAST).fit(X, y)
    est.save(tmp_path / "ckpt")
    back = CubeNetClassifier.load(tmp_path / "ckpt")
    assert back.get_params()["group"] == "V"
    assert np.array_equal(back.decision_function(X), est.decision_function(X))
    assert list(back.classes_) == list(est.classes_)
