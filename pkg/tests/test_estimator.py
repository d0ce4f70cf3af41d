import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import make_target_pools
from protomix.errors import ConfigError, DataError
from protomix.estimator import ProtoMixClassifier

FAST = dict(d_model=8, n_heads=2, d_head=4, d_feed=8, n_encoders=2,
            k_shot=2, m_query=3, augment_to=12, iterations=40, knn_k=3,
            random_state=0)


def patch_data(n_classes=3, noise=0.02, seed=0):
    _, _, labeled, test, _ = make_target_pools(n_classes=n_classes, noise=noise, seed=seed)
    X = np.stack([s.pixels for s in labeled])
    y = np.array([s.label * 10 for s in labeled])  # non-contiguous label values
    X_test = np.stack([s.pixels for s in test])
    y_test = np.array([s.label * 10 for s in test])
    return X, y, X_test, y_test


def test_fit_predict_on_easy_scene():
    X, y, X_test, y_test = patch_data()
    clf = ProtoMixClassifier(**FAST).fit(X, y)
    accuracy = clf.score(X_test, y_test)
    assert accuracy > 0.8
    assert set(np.unique(clf.predict(X_test))) <= set(np.unique(y))


def test_predict_before_fit_raises():
    with pytest.raises(NotFittedError):
        ProtoMixClassifier(**FAST).predict(np.zeros((1, 3, 3, 4)))


def test_transform_returns_embeddings():
    X, y, X_test, _ = patch_data()
    clf = ProtoMixClassifier(**FAST).fit(X, y)
    features = clf.transform(X_test[:7])
    assert features.shape == (7, FAST["d_model"])
    assert np.isfinite(features).all()


def test_get_params_set_params_round_trip():
    clf = ProtoMixClassifier(**FAST)
    params = clf.get_params()
    assert params["d_model"] == 8 and params["mix"] == "transmix"
    clf.set_params(mix="cutmix", knn_k=5)
    assert clf.mix == "cutmix" and clf.knn_k == 5
    cloned = clone(clf)
    assert cloned.get_params() == clf.get_params()


def test_same_random_state_reproduces_predictions():
    X, y, X_test, _ = patch_data()
    a = ProtoMixClassifier(**FAST).fit(X, y).predict(X_test[:20])
    b = ProtoMixClassifier(**FAST).fit(X, y).predict(X_test[:20])
    assert np.array_equal(a, b)


def test_classes_attribute_and_decoding():
    X, y, X_test, _ = patch_data()
    clf = ProtoMixClassifier(**FAST).fit(X, y)
    assert np.array_equal(clf.classes_, [10, 20, 30])
    assert set(clf.predict(X_test[:10])) <= {10, 20, 30}


def test_input_validation():
    X, y, _, _ = patch_data()
    clf = ProtoMixClassifier(**FAST)
    with pytest.raises(DataError):
        clf.fit(X.reshape(X.shape[0], -1), y)  # not 4-d
    with pytest.raises(DataError):
        clf.fit(X[:, :, :2, :], y)  # not square
    with pytest.raises(DataError):
        clf.fit(X, y[:-1])  # label length mismatch
    with pytest.raises(ConfigError):
        ProtoMixClassifier(**{**FAST, "augment_to": 4}).fit(X, y)  # cannot form episodes


def test_predict_rejects_wrong_geometry():
    X, y, X_test, _ = patch_data()
    clf = ProtoMixClassifier(**FAST).fit(X, y)
    with pytest.raises(DataError):
        clf.predict(X_test[:, :, :, :2])  # wrong band count


def test_single_class_rejected():
    X, y, _, _ = patch_data()
    mask = y == 10
    with pytest.raises(ConfigError):
        ProtoMixClassifier(**FAST).fit(X[mask], y[mask])


def test_source_pretraining_path():
    X, y, X_test, y_test = patch_data()
    rng = np.random.default_rng(5)
    source_X = rng.uniform(size=(40, 3, 3, 6)).astype(np.float32)  # different band count
    source_y = np.repeat(np.arange(1, 5), 10)
    clf = ProtoMixClassifier(**{**FAST, "iterations": 30, "source_iterations": 10})
    clf.fit(X, y, source_X=source_X, source_y=source_y)
    assert clf.params_.d_in("source") == 6
    assert clf.params_.d_in("target") == 4
    phases = [e.phase for e in clf.train_log_]
    assert phases[:10] == ["source"] * 10 and phases[10:] == ["target"] * 20
    assert clf.score(X_test, y_test) > 0.5
