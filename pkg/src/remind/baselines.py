"""Streaming comparison learners over the same feature-tensor stream."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_labels, check_tensor_batch, one_hot
from .head import HeadModel, LRSchedule, SGDConfig, fit_offline, sgd_step, softmax
from .learner import topk_from_scores
from .rng import check_random_state


def pool_mean(X) -> np.ndarray:
    """Spatial average of (n, m, m, d) tensors -> (n, d) float64 vectors."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    return X.mean(axis=(1, 2))


# ---------------------------------------------------------------- SLDA

@dataclass
class SLDAState:
    """Running class means and a tied covariance shared by all classes."""

    num_classes: int
    dim: int
    shrinkage: float = 1e-4
    means: np.ndarray = None
    counts: np.ndarray = None
    cov: np.ndarray = None
    total: int = 0

    def __post_init__(self):
        if self.means is None:
            self.means = np.zeros((self.num_classes, self.dim))
        if self.counts is None:
            self.counts = np.zeros(self.num_classes, dtype=np.int64)
        if self.cov is None:
            self.cov = np.zeros((self.dim, self.dim))


def slda_fit_one(st: SLDAState, x, y: int) -> None:
    """Welford update of class ``y``'s mean and the pooled within-class covariance.

    The covariance increment uses the class mean from before the update, so
    after N samples ``cov`` equals the within-class scatter divided by N.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("SLDA input must be finite")
    n_y = st.counts[y]
    delta = x - st.means[y]
    st.cov = (st.total * st.cov + (n_y / (n_y + 1.0)) * np.outer(delta, delta)) / (st.total + 1.0)
    st.cov = 0.5 * (st.cov + st.cov.T)
    st.means[y] += delta / (n_y + 1.0)
    st.counts[y] += 1
    st.total += 1


def slda_scores(st: SLDAState, X) -> np.ndarray:
    """Linear discriminant scores ``x . w_k + b_k``; unseen classes get -inf."""
    prec = np.linalg.inv((1.0 - st.shrinkage) * st.cov + st.shrinkage * np.eye(st.dim))
    W = prec @ st.means.T
    b = -0.5 * np.einsum("kj,jk->k", st.means, W)
    scores = np.asarray(X, dtype=np.float64) @ W + b
    scores[:, st.counts == 0] = -np.inf
    return scores


def slda_predict(st: SLDAState, x) -> int:
    if not np.any(st.counts):
        raise ValueError("SLDA has not seen any class yet")
    return int(np.argmax(slda_scores(st, np.asarray(x, dtype=np.float64).reshape(1, -1))[0]))


class SLDAClassifier(ClassifierMixin, BaseEstimator):
    """Streaming LDA on spatially pooled features.

    ``fit`` resets the state and streams its input; ``partial_fit`` continues.
    """

    def __init__(self, shrinkage=1e-4, num_classes=None):
        self.shrinkage = shrinkage
        self.num_classes = num_classes

    def fit(self, X, y, **_):
        X = check_tensor_batch(X)
        y = check_labels(y, X.shape[0])
        self.n_classes_ = int(self.num_classes or (y.max() + 1))
        self.classes_ = np.arange(self.n_classes_)
        self.state_ = SLDAState(self.n_classes_, X.shape[3], self.shrinkage)
        return self.partial_fit(X, y)

    def partial_fit(self, X, y, **_):
        check_is_fitted(self, "state_")
        X = check_tensor_batch(X)
        y = check_labels(y, X.shape[0], self.n_classes_)
        for v, label in zip(pool_mean(X), y):
            slda_fit_one(self.state_, v, int(label))
        return self

    def decision_function(self, X):
        check_is_fitted(self, "state_")
        return slda_scores(self.state_, pool_mean(check_tensor_batch(X)))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def predict_topk(self, X, k=5):
        return topk_from_scores(self.decision_function(X), k)


# ---------------------------------------------------------------- ExStream

@dataclass
class ExStreamBuffer:
    """Per-class prototype lists of ``(vector, merge_count)``."""

    capacity: int = 20
    vectors: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("ExStream capacity must be at least 1")

    def add(self, x, y: int) -> None:
        """Store ``x``; on overflow merge the two closest prototypes of class ``y``."""
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        if y in self.vectors:
            self.vectors[y] = np.concatenate([self.vectors[y], x])
            self.counts[y] = np.append(self.counts[y], 1)
        else:
            self.vectors[y] = x.copy()
            self.counts[y] = np.ones(1, dtype=np.int64)
        V, c = self.vectors[y], self.counts[y]
        if V.shape[0] <= self.capacity:
            return
        diff = V[:, None, :] - V[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        d2[np.tril_indices(V.shape[0])] = np.inf
        i, j = np.unravel_index(np.argmin(d2), d2.shape)
        merged = (c[i] * V[i] + c[j] * V[j]) / (c[i] + c[j])
        keep = np.ones(V.shape[0], dtype=bool)
        keep[j] = False
        V[i], c[i] = merged, c[i] + c[j]
        self.vectors[y], self.counts[y] = V[keep], c[keep]

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        labels = sorted(self.vectors)
        X = np.concatenate([self.vectors[k] for k in labels])
        y = np.concatenate([np.full(self.vectors[k].shape[0], k) for k in labels])
        return X, y

    def __len__(self) -> int:
        return sum(v.shape[0] for v in self.vectors.values())


def exstream_fit_one(buf: ExStreamBuffer, head: HeadModel, x, y: int, lr: float,
                     cfg: SGDConfig) -> float:
    """Add ``x`` to the prototype buffer, then one full-buffer SGD step on ``head``."""
    if not np.all(np.isfinite(x)):
        raise ValueError("ExStream input must be finite")
    buf.add(x, y)
    P, labels = buf.arrays()
    return sgd_step(head, P[:, None, None, :], one_hot(labels, head.num_classes), lr, cfg)


class ExStreamClassifier(ClassifierMixin, BaseEstimator):
    """Prototype-buffer streaming learner training a head on pooled features.

    ``fit`` trains the head offline on the prefix and then restarts the stream
    from the prefix's first sample, as SLDA does.
    """

    def __init__(self, capacity=20, hidden=(), activation="relu", lr=0.01, momentum=0.9,
                 weight_decay=1e-4, base_epochs=30, base_batch_size=64, base_lr=0.1,
                 base_milestones=(10, 20), num_classes=None, random_state=0):
        self.capacity = capacity
        self.hidden = hidden
        self.activation = activation
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.base_epochs = base_epochs
        self.base_batch_size = base_batch_size
        self.base_lr = base_lr
        self.base_milestones = base_milestones
        self.num_classes = num_classes
        self.random_state = random_state

    def fit(self, X, y, **_):
        X = check_tensor_batch(X)
        y = check_labels(y, X.shape[0])
        self.n_classes_ = int(self.num_classes or (y.max() + 1))
        self.classes_ = np.arange(self.n_classes_)
        rng = check_random_state(self.random_state)
        self.sgd_ = SGDConfig(self.momentum, self.weight_decay, 0)
        P = pool_mean(X)[:, None, None, :]
        self.head_ = HeadModel(1, X.shape[3], self.n_classes_, self.hidden, "flatten",
                               self.activation, rng)
        fit_offline(self.head_, P, one_hot(y, self.n_classes_), epochs=self.base_epochs,
                    batch_size=self.base_batch_size, lr=self.base_lr,
                    milestones=self.base_milestones, cfg=self.sgd_, rng=rng)
        self.buffer_ = ExStreamBuffer(self.capacity)
        return self.partial_fit(X, y)

    def partial_fit(self, X, y, **_):
        check_is_fitted(self, "head_")
        X = check_tensor_batch(X)
        y = check_labels(y, X.shape[0], self.n_classes_)
        for v, label in zip(pool_mean(X), y):
            exstream_fit_one(self.buffer_, self.head_, v, int(label), self.lr, self.sgd_)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "head_")
        return self.head_.forward(pool_mean(check_tensor_batch(X))[:, None, None, :])

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict_topk(self, X, k=5):
        return topk_from_scores(self.decision_function(X), k)


# ---------------------------------------------------------------- Fine-Tune

def finetune_fit_one(head: HeadModel, x, y: int, lr: float, cfg: SGDConfig) -> float:
    """Single-sample SGD step; no memory of earlier samples."""
    return sgd_step(head, np.asarray(x)[None], one_hot([y], head.num_classes), lr, cfg)


class FineTuneClassifier(ClassifierMixin, BaseEstimator):
    """Fine-tunes the head one sample at a time on raw features.

    Shares base initialization and the per-class learning-rate schedule with
    :class:`~remind.learner.REMINDClassifier`; it is REMIND without replay.
    """

    def __init__(self, hidden=(), pooling="flatten", activation="relu", lr_start=0.1,
                 lr_end=0.001, lr_step=100, samples_per_class=None, momentum=0.9,
                 weight_decay=1e-4, base_epochs=30, base_batch_size=64, base_lr=0.1,
                 base_milestones=(10, 20), num_classes=None, random_state=0):
        self.hidden = hidden
        self.pooling = pooling
        self.activation = activation
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.lr_step = lr_step
        self.samples_per_class = samples_per_class
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.base_epochs = base_epochs
        self.base_batch_size = base_batch_size
        self.base_lr = base_lr
        self.base_milestones = base_milestones
        self.num_classes = num_classes
        self.random_state = random_state

    def fit(self, X, y, **_):
        X = check_tensor_batch(X)
        y = check_labels(y, X.shape[0])
        self.n_classes_ = int(self.num_classes or (y.max() + 1))
        self.classes_ = np.arange(self.n_classes_)
        self.rng_ = check_random_state(self.random_state)
        self.sgd_ = SGDConfig(self.momentum, self.weight_decay, 0)
        self.head_ = HeadModel(X.shape[1], X.shape[3], self.n_classes_, self.hidden,
                               self.pooling, self.activation, self.rng_)
        fit_offline(self.head_, X, one_hot(y, self.n_classes_), epochs=self.base_epochs,
                    batch_size=self.base_batch_size, lr=self.base_lr,
                    milestones=self.base_milestones, cfg=self.sgd_, rng=self.rng_)
        spc = self.samples_per_class
        if isinstance(spc, dict):
            self.schedule_ = LRSchedule(self.lr_start, self.lr_end, self.lr_step, dict(spc),
                                        max(spc.values(), default=self.lr_step))
        else:
            if spc is None:
                counts = np.bincount(y)
                spc = int(counts[counts > 0].mean())
            self.schedule_ = LRSchedule(self.lr_start, self.lr_end, self.lr_step, {}, int(spc))
        return self

    def partial_fit(self, X, y, **_):
        check_is_fitted(self, "head_")
        X = check_tensor_batch(X)
        y = check_labels(y, X.shape[0], self.n_classes_)
        for x, label in zip(X, y):
            label = int(label)
            finetune_fit_one(self.head_, x, label, self.schedule_.lr(label), self.sgd_)
            self.schedule_.observe(label)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "head_")
        return self.head_.forward(check_tensor_batch(X))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict_topk(self, X, k=5):
        return topk_from_scores(self.decision_function(X), k)


# ---------------------------------------------------------------- Offline

def offline_train(X, y, *, num_classes: int, epochs: int = 30, batch_size: int = 64,
                  lr: float = 0.1, milestones=(10, 20), hidden=(), pooling="flatten",
                  activation="relu", momentum: float = 0.9, weight_decay: float = 1e-4,
                  rng=None) -> tuple[HeadModel, list[float]]:
    """Multi-epoch shuffled mini-batch training on raw features.

    Returns the head and its per-epoch training loss.
    """
    X = check_tensor_batch(X)
    y = check_labels(y, X.shape[0], num_classes)
    if X.shape[0] == 0:
        raise ValueError("offline training needs a non-empty dataset")
    rng = check_random_state(rng)
    head = HeadModel(X.shape[1], X.shape[3], num_classes, hidden, pooling, activation, rng)
    losses = fit_offline(head, X, one_hot(y, num_classes), epochs=epochs, batch_size=batch_size,
                         lr=lr, milestones=milestones, cfg=SGDConfig(momentum, weight_decay, 0),
                         rng=rng)
    return head, losses


class OfflineClassifier(ClassifierMixin, BaseEstimator):
    """Non-streaming upper bound: the head trained for many shuffled epochs."""

    def __init__(self, hidden=(), pooling="flatten", activation="relu", epochs=30,
                 batch_size=64, lr=0.1, milestones=(10, 20), momentum=0.9, weight_decay=1e-4,
                 num_classes=None, random_state=0):
        self.hidden = hidden
        self.pooling = pooling
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.milestones = milestones
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.num_classes = num_classes
        self.random_state = random_state

    def fit(self, X, y, **_):
        X = check_tensor_batch(X)
        y = check_labels(y, X.shape[0])
        self.n_classes_ = int(self.num_classes or (y.max() + 1))
        self.classes_ = np.arange(self.n_classes_)
        self.head_, self.loss_curve_ = offline_train(
            X, y, num_classes=self.n_classes_, epochs=self.epochs, batch_size=self.batch_size,
            lr=self.lr, milestones=self.milestones, hidden=self.hidden, pooling=self.pooling,
            activation=self.activation, momentum=self.momentum,
            weight_decay=self.weight_decay, rng=check_random_state(self.random_state))
        return self

    def decision_function(self, X):
        check_is_fitted(self, "head_")
        return self.head_.forward(check_tensor_batch(X))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict_topk(self, X, k=5):
        return topk_from_scores(self.decision_function(X), k)
