import numpy as np
import pytest

from oracles import batch_lda
from remind.baselines import (ExStreamBuffer, ExStreamClassifier, FineTuneClassifier,
                              OfflineClassifier, SLDAClassifier, SLDAState, offline_train,
                              pool_mean, slda_fit_one, slda_predict, slda_scores)


def _three_class(seed=0, n=90):
    rng = np.random.default_rng(seed)
    y = rng.permutation(np.arange(n) % 3)
    X = np.array([[0.0, 0.0], [3.0, 0.5], [0.5, 3.0]])[y] + rng.normal(size=(n, 2))
    return X, y


def test_slda_matches_batch_lda():
    X, y = _three_class()
    st = SLDAState(3, 2, 1e-4)
    for x, label in zip(X, y):
        slda_fit_one(st, x, int(label))
    means, cov, W, b = batch_lda(X, y, 3, 1e-4)
    np.testing.assert_allclose(st.means, means, rtol=0, atol=1e-9)
    assert np.max(np.abs(st.cov - cov)) / np.max(np.abs(cov)) < 1e-6
    np.testing.assert_allclose(st.cov, st.cov.T, atol=1e-9)
    grid = np.random.default_rng(1).uniform(-3, 6, size=(500, 2))
    np.testing.assert_array_equal(slda_scores(st, grid).argmax(1), (grid @ W + b).argmax(1))


def test_slda_means_permutation_invariant():
    X, y = _three_class(2)
    a, b = SLDAState(3, 2), SLDAState(3, 2)
    for i in range(len(y)):
        slda_fit_one(a, X[i], int(y[i]))
    for i in np.random.default_rng(0).permutation(len(y)):
        slda_fit_one(b, X[i], int(y[i]))
    np.testing.assert_allclose(a.means, b.means, atol=1e-9)


def test_slda_single_sample_and_unseen():
    st = SLDAState(3, 2)
    slda_fit_one(st, [1.0, 2.0], 1)
    np.testing.assert_array_equal(st.means[1], [1.0, 2.0])
    assert slda_predict(st, [0.0, 0.0]) == 1
    assert np.isneginf(slda_scores(st, np.zeros((1, 2)))[0, [0, 2]]).all()
    with pytest.raises(ValueError):
        slda_predict(SLDAState(2, 2), [0.0, 0.0])


def test_slda_symmetric_classes_split_at_midpoint():
    rng = np.random.default_rng(0)
    mu = np.array([1.0, -0.5])
    X = np.concatenate([mu + rng.normal(size=(2000, 2)), -mu + rng.normal(size=(2000, 2))])
    y = np.repeat([0, 1], 2000)
    st = SLDAState(2, 2)
    for x, label in zip(X, y):
        slda_fit_one(st, x, int(label))
    # exact symmetry: opposite means, identity covariance
    st.means[1] = -st.means[0]
    st.cov = np.eye(2)
    probe = np.random.default_rng(1).normal(size=(200, 2)) * 3
    pred = slda_scores(st, probe).argmax(1)
    np.testing.assert_array_equal(pred, (probe @ st.means[0] < 0).astype(int))


def test_slda_classifier_pools_space():
    X, y = _three_class(3)
    T = np.broadcast_to(X[:, None, None, :], (len(X), 2, 2, 2)).astype(np.float32)
    clf = SLDAClassifier(num_classes=3).fit(T, y)
    np.testing.assert_allclose(clf.state_.means, batch_lda(X, y, 3, 1e-4)[0], atol=1e-6)
    assert clf.score(T, y) > 0.8


def test_exstream_merge_rule():
    buf = ExStreamBuffer(2)
    a, b, c = np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([10.0, 10.0])
    for v in (a, b, c):
        buf.add(v, 0)
    np.testing.assert_array_equal(buf.vectors[0], [[0.5, 0.0], [10.0, 10.0]])
    np.testing.assert_array_equal(buf.counts[0], [2, 1])


def test_exstream_equal_vectors_merge():
    buf = ExStreamBuffer(1)
    buf.add([2.0, 3.0], 4)
    buf.add([2.0, 3.0], 4)
    np.testing.assert_array_equal(buf.vectors[4], [[2.0, 3.0]])
    assert buf.counts[4].tolist() == [2]


def test_exstream_prototypes_are_weighted_means():
    # with capacity 1 the single prototype is the running mean of the class
    rng = np.random.default_rng(0)
    buf = ExStreamBuffer(1)
    xs = rng.normal(size=(20, 3))
    for x in xs:
        buf.add(x, 0)
    np.testing.assert_allclose(buf.vectors[0][0], xs.mean(0), atol=1e-12)
    assert len(buf) == 1


def test_exstream_classifier_learns():
    X, y = _three_class(4, n=150)
    T = np.broadcast_to(X[:, None, None, :], (len(X), 2, 2, 2)).astype(np.float32)
    clf = ExStreamClassifier(capacity=5, base_epochs=5, lr=0.05).fit(T[:30], y[:30])
    clf.partial_fit(T[30:], y[30:])
    assert max(len(v) for v in clf.buffer_.vectors.values()) <= 5
    assert clf.score(T, y) > 0.8


def test_offline_separable_and_loss_decreases():
    rng = np.random.default_rng(0)
    y = np.arange(40) % 2
    X = (np.where(y[:, None], 1.0, -1.0) + 0.1 * rng.normal(size=(40, 3)))[:, None, None, :]
    head, losses = offline_train(X.astype(np.float32), y, num_classes=2, epochs=20,
                                 batch_size=40, milestones=(), momentum=0.0, rng=0)
    assert np.all(np.diff(losses) <= 1e-12)
    assert np.array_equal(head.forward(X).argmax(1), y)
    assert OfflineClassifier(epochs=5).fit(X, y).score(X, y) == 1.0


def test_finetune_iid_close_to_offline():
    rng = np.random.default_rng(5)
    y = rng.integers(0, 4, 800)
    centres = rng.normal(scale=1.5, size=(4, 6))
    X = (centres[y][:, None, None, :] + rng.normal(size=(800, 2, 2, 6))).astype(np.float32)
    kw = dict(base_epochs=10, base_lr=0.05, base_milestones=())
    ft = FineTuneClassifier(lr_start=0.01, lr_end=0.001, **kw).fit(X[:100], y[:100])
    ft.partial_fit(X[100:600], y[100:600])
    off = OfflineClassifier(epochs=20, lr=0.05, milestones=()).fit(X[:600], y[:600])
    assert ft.score(X[600:], y[600:]) >= off.score(X[600:], y[600:]) - 0.10


def test_pool_mean_shape():
    assert pool_mean(np.ones((2, 3, 3, 4))).shape == (2, 4)
    assert pool_mean(np.ones((3, 3, 4))).shape == (1, 4)


def test_exstream_counts_track_samples_seen():
    rng = np.random.default_rng(8)
    buf = ExStreamBuffer(4)
    y = rng.integers(0, 3, 200)
    for label in y:
        buf.add(rng.normal(size=5), int(label))
    for k in range(3):
        assert len(buf.vectors[k]) <= 4
        assert buf.counts[k].sum() == np.sum(y == k)
        assert buf.counts[k].min() >= 1
