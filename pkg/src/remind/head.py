"""The plastic classifier head: pooling, dense layers, softmax.

Gradients are written out by hand; ``tests/test_head.py`` checks them
against central finite differences for every layer type.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import check_random_state

ACTIVATIONS = ("relu", "tanh", "identity")
POOLINGS = ("flatten", "mean")


class NonFiniteError(FloatingPointError):
    """A gradient or parameter became NaN/Inf during training."""


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))


def loss_soft_ce(logits, target) -> float:
    """Cross-entropy ``-sum_k target_k log softmax(logits)_k``.

    For a batch of shape (n, K) the mean over rows is returned.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    per_row = -(target * log_softmax(logits)).sum(axis=-1)
    return float(per_row.mean()) if per_row.ndim else float(per_row)


@dataclass(frozen=True)
class SGDConfig:
    momentum: float = 0.9
    weight_decay: float = 1e-4
    replay_count: int = 50

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.replay_count < 0:
            raise ValueError("replay_count must be non-negative")


@dataclass
class LRSchedule:
    """Per-class step decay from ``lr_start`` to ``lr_end``.

    Every ``step_size`` samples of a class multiply that class's rate by a
    constant factor chosen so the rate reaches ``lr_end`` once the class's
    expected sample count has been seen; it stays there afterwards.
    """

    lr_start: float = 0.1
    lr_end: float = 0.001
    step_size: int = 100
    samples_per_class: dict = field(default_factory=dict)
    default_samples: int = 100
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr_end > self.lr_start:
            raise ValueError("lr_end must not exceed lr_start")
        if self.lr_end <= 0:
            raise ValueError("lr_end must be positive")
        if self.step_size < 1:
            raise ValueError("step_size must be a positive integer")

    def n_steps(self, label: int) -> int:
        total = self.samples_per_class.get(int(label), self.default_samples)
        return max(1, int(total) // self.step_size)

    def lr_at(self, label: int, count: int) -> float:
        steps = self.n_steps(label)
        k = count // self.step_size
        if k >= steps:
            return self.lr_end
        return self.lr_start * (self.lr_end / self.lr_start) ** (k / steps)

    def lr(self, label: int) -> float:
        return self.lr_at(label, self.counts.get(int(label), 0))

    def observe(self, label: int) -> None:
        self.counts[int(label)] = self.counts.get(int(label), 0) + 1

    def reset(self) -> None:
        self.counts.clear()


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a, upstream):
    if name == "relu":
        return upstream * (z > 0)
    if name == "tanh":
        return upstream * (1.0 - a * a)
    return upstream


class HeadModel:
    """Pooled multi-layer perceptron over m x m x d feature tensors.

    Parameters
    ----------
    m, d : int
        Spatial side and channel count of the input tensors.
    num_classes : int
    hidden : sequence of int
        Hidden layer widths; empty gives a linear softmax classifier.
    pooling : {"flatten", "mean"}
        ``flatten`` keeps every spatial location, ``mean`` averages them.
    activation : {"relu", "tanh", "identity"}
    rng : Generator, int or None
        Source for the weight initialisation.
    """

    def __init__(self, m: int, d: int, num_classes: int, hidden=(), pooling="flatten",
                 activation="relu", rng=None):
        if pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.m, self.d, self.num_classes = int(m), int(d), int(num_classes)
        self.hidden = tuple(int(h) for h in hidden)
        self.pooling = pooling
        self.activation = activation
        rng = check_random_state(rng)
        sizes = [self.input_dim, *self.hidden, self.num_classes]
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))
        self.velocity = [np.zeros_like(p) for p in self.params]

    @property
    def input_dim(self) -> int:
        return self.m * self.m * self.d if self.pooling == "flatten" else self.d

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "HeadModel":
        new = object.__new__(HeadModel)
        new.__dict__.update(self.__dict__)
        new.weights = [w.copy() for w in self.weights]
        new.biases = [b.copy() for b in self.biases]
        new.velocity = [v.copy() for v in self.velocity]
        return new

    def zero_(self) -> "HeadModel":
        for p in self.params:
            p[...] = 0.0
        return self

    def pool(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 3:
            X = X[None]
        if X.shape[1:] != (self.m, self.m, self.d):
            raise ValueError(f"expected tensors of shape ({self.m}, {self.m}, {self.d}), "
                             f"got {X.shape[1:]}")
        if self.pooling == "mean":
            return X.mean(axis=(1, 2))
        return X.reshape(X.shape[0], -1)

    def _forward(self, X):
        h = self.pool(X)
        cache = [(h, None, None)]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if i == last else _act(self.activation, z)
            cache.append((h, z, i))
        return h, cache

    def forward(self, X) -> np.ndarray:
        """Logits of shape (n, num_classes); a single tensor gives n = 1."""
        return self._forward(X)[0]

    def loss_and_grads(self, X, Y) -> tuple[float, list[np.ndarray]]:
        """Mean soft cross-entropy over the batch and its parameter gradients."""
        logits, cache = self._forward(X)
        Y = np.asarray(Y, dtype=np.float64)
        logp = log_softmax(logits)
        n = logits.shape[0]
        loss = float(-(Y * logp).sum() / n)
        # d/dlogits of mean CE; soft targets need the row sums, not 1
        upstream = (np.exp(logp) * Y.sum(axis=1, keepdims=True) - Y) / n
        gW = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            h_prev = cache[i][0]
            gW[i] = h_prev.T @ upstream
            gb[i] = upstream.sum(axis=0)
            if i:
                upstream = upstream @ self.weights[i].T
                h, z, _ = cache[i]
                upstream = _act_grad(self.activation, z, h, upstream)
        grads = []
        for w, b in zip(gW, gb):
            grads += [w, b]
        return loss, grads

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.forward(X))

    # -- checkpoint: "RMHD" | u32 version | u32 m | u32 d | u32 K | u32 n_hidden |
    #    u32 pooling | u32 activation | u32[n_hidden] | f64 params | f64 velocity

    def to_bytes(self) -> bytes:
        head = struct.pack("<4sIIIIIII", b"RMHD", 1, self.m, self.d, self.num_classes,
                           len(self.hidden), POOLINGS.index(self.pooling),
                           ACTIVATIONS.index(self.activation))
        head += struct.pack(f"<{len(self.hidden)}I", *self.hidden)
        body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes()
                        for p in self.params + self.velocity)
        return head + body

    @classmethod
    def from_bytes(cls, raw: bytes, offset: int = 0) -> tuple["HeadModel", int]:
        magic, version, m, d, k, nh, pool, act = struct.unpack_from("<4sIIIIIII", raw, offset)
        if magic != b"RMHD" or version != 1:
            raise ValueError("not a version-1 head checkpoint")
        offset += 32
        hidden = struct.unpack_from(f"<{nh}I", raw, offset)
        offset += 4 * nh
        h = cls(m, d, k, hidden, POOLINGS[pool], ACTIVATIONS[act], rng=0)
        for target in (h.params, h.velocity):
            for p in target:
                p[...] = np.frombuffer(raw, dtype="<f8", count=p.size, offset=offset).reshape(p.shape)
                offset += 8 * p.size
        return h, offset


def forward(h: HeadModel, t) -> np.ndarray:
    return h.forward(t)


def sgd_step(h: HeadModel, X, Y, lr: float, cfg: SGDConfig) -> float:
    """One momentum-SGD update on the mean loss of the batch ``(X, Y)``.

    ``v <- momentum * v + g`` then ``w <- w - lr * (v + weight_decay * w)``.
    Returns the pre-update batch loss.
    """
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.shape[0] == 0:
        raise ValueError("sgd_step needs a non-empty batch")
    loss, grads = h.loss_and_grads(X, Y)
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter {i} (loss={loss})")
    for p, v, g in zip(h.params, h.velocity, grads):
        v *= cfg.momentum
        v += g
        p -= lr * (v + cfg.weight_decay * p)
    for i, p in enumerate(h.params):
        if not np.all(np.isfinite(p)):
            raise NonFiniteError(f"parameter {i} became non-finite after an update with lr={lr}")
    return loss


def fit_offline(h: HeadModel, X, Y, *, epochs: int, batch_size: int, lr: float,
                milestones=(), gamma: float = 0.1, cfg: SGDConfig | None = None,
                rng=None) -> list[float]:
    """Shuffled mini-batch training, decaying ``lr`` by ``gamma`` at each
    milestone epoch. Returns the mean training loss of every epoch.
    Momentum buffers are reset before and after.
    """
    cfg = cfg or SGDConfig()
    rng = check_random_state(rng)
    X = np.asarray(X)
    Y = np.asarray(Y, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("offline training needs at least one sample")
    for v in h.velocity:
        v[...] = 0.0
    history = []
    for epoch in range(epochs):
        rate = lr * gamma ** sum(epoch >= ms for ms in milestones)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            total += sgd_step(h, X[idx], Y[idx], rate, cfg) * idx.shape[0]
        history.append(total / n)
    for v in h.velocity:
        v[...] = 0.0
    return history
