"""REMIND: streaming learning with replay of product-quantized tensors.

A frozen extractor is assumed upstream; this module learns the plastic head
``F`` one sample at a time. Each step encodes the incoming tensor, draws
``r`` stored code arrays uniformly from the replay buffer, reconstructs and
augments them, updates ``F`` on the ``r + 1`` examples and finally stores the
new codes (evicting from the largest class when the buffer is full).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_labels, check_tensor_batch, one_hot
from .augment import CropConfig, MixupConfig, crop_batch, mixup_sets, random_resized_crop
from .buffer import ReplayBuffer
from .head import HeadModel, LRSchedule, SGDConfig, fit_offline, sgd_step, softmax
from .quantizer import (Codebook, QuantizedSample, codebook_from_bytes, codebook_to_bytes,
                        decode_batch, encode, encode_batch, sample_bytes, train_pq)
from .rng import check_random_state
from .types import LabeledSample


@dataclass
class REMINDState:
    head: HeadModel
    codebook: Codebook
    buffer: ReplayBuffer
    schedule: LRSchedule
    sgd: SGDConfig
    mixup: MixupConfig = field(default_factory=MixupConfig)
    crop: CropConfig = field(default_factory=CropConfig)
    quantize_current: bool = True
    crop_current: bool = True
    mixup_replaces: bool = True

    @property
    def num_classes(self) -> int:
        return self.head.num_classes


def _replay_batch(state: REMINDState, rng) -> tuple[np.ndarray, np.ndarray]:
    r, K = state.sgd.replay_count, state.num_classes
    cb = state.codebook
    draw_a = state.buffer.sample_uniform(r, rng)
    za = crop_batch(decode_batch(cb, np.stack([q.codes for q in draw_a])), state.crop, rng)
    ya = one_hot([q.label for q in draw_a], K)
    if not state.mixup.enabled:
        return za, ya
    draw_b = state.buffer.sample_uniform(r, rng)
    zb = crop_batch(decode_batch(cb, np.stack([q.codes for q in draw_b])), state.crop, rng)
    yb = one_hot([q.label for q in draw_b], K)
    zc, yc, _ = mixup_sets(za, ya, zb, yb, state.mixup, rng)
    if state.mixup_replaces:
        return zc, yc
    return np.concatenate([za, zc]), np.concatenate([ya, yc])


def remind_fit_one(state: REMINDState, sample: LabeledSample, rng) -> float:
    """One streaming update on ``sample``; returns the batch loss."""
    cb = state.codebook
    q = encode(cb, sample.tensor, sample.label, sample.instance_id, sample.seq_index)
    cur = decode_batch(cb, q.codes[None])[0] if state.quantize_current else \
        np.asarray(sample.tensor, dtype=np.float32)
    if state.crop_current and state.crop.enabled:
        cur = random_resized_crop(cur, state.crop, rng)
    Z, Y = cur[None], one_hot([sample.label], state.num_classes)
    if state.sgd.replay_count > 0 and len(state.buffer):
        zr, yr = _replay_batch(state, rng)
        Z, Y = np.concatenate([zr, Z]), np.concatenate([yr, Y])
    lr = state.schedule.lr(sample.label)
    loss = sgd_step(state.head, Z, Y, lr, state.sgd)
    state.schedule.observe(sample.label)
    state.buffer.insert(q, rng)
    return loss


def base_initialize(X, y, *, num_classes: int, s: int, c: int, kmeans_iter: int,
                    buffer_bytes: int, head_kwargs: dict, offline_kwargs: dict,
                    schedule: LRSchedule, sgd: SGDConfig, rng,
                    instance_ids=None, seq_index=None, **state_kwargs) -> REMINDState:
    """Train the head offline on raw prefix features, fit the quantizer on
    the same tensors and fill the replay buffer with their codes."""
    X = check_tensor_batch(X)
    y = check_labels(y, X.shape[0], num_classes)
    if X.shape[0] == 0:
        raise ValueError("base initialization needs a non-empty prefix")
    n, m, _, d = X.shape
    head = HeadModel(m, d, num_classes, rng=rng, **head_kwargs)
    fit_offline(head, X, one_hot(y, num_classes), cfg=sgd, rng=rng, **offline_kwargs)
    codebook = train_pq(X, s, c, kmeans_iter, rng)
    buffer = ReplayBuffer(buffer_bytes)
    codes = encode_batch(codebook, X)
    inst = np.zeros(n, dtype=np.int64) if instance_ids is None else np.asarray(instance_ids)
    seq = np.arange(n) if seq_index is None else np.asarray(seq_index)
    for i in range(n):
        buffer.insert(QuantizedSample(codes[i], int(y[i]), int(inst[i]), int(seq[i])), rng)
    schedule.reset()
    return REMINDState(head, codebook, buffer, schedule, sgd, **state_kwargs)


def predict_topk(state: REMINDState, X, k: int = 1) -> np.ndarray:
    """Indices of the ``k`` highest-scoring classes per row, best first.

    Inputs are quantized and reconstructed before reaching the head so test
    features match what the head saw during training.
    """
    scores = state.head.forward(decode_batch(state.codebook, encode_batch(state.codebook, X)))
    return topk_from_scores(scores, k)


def topk_from_scores(scores: np.ndarray, k: int) -> np.ndarray:
    k = min(int(k), scores.shape[1])
    if k < 1:
        raise ValueError("k must be at least 1")
    # stable sort keeps the lower class index first among equal scores
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


# ---------------------------------------------------------------- checkpoint
# "RMCK" | u32 version | u32 n_sections, then per section u32 tag | u64 length | bytes.
# Tags: 1 head, 2 schedule, 3 codebook, 4 replay buffer.

_SCHED = struct.Struct("<ddII")


def _schedule_bytes(s: LRSchedule) -> bytes:
    counts = sorted(s.counts.items())
    totals = sorted(s.samples_per_class.items())
    out = _SCHED.pack(s.lr_start, s.lr_end, s.step_size, s.default_samples)
    out += struct.pack("<I", len(counts)) + b"".join(struct.pack("<II", k, v) for k, v in counts)
    out += struct.pack("<I", len(totals)) + b"".join(struct.pack("<II", k, v) for k, v in totals)
    return out


def _schedule_from(raw: bytes) -> LRSchedule:
    a, b, step, default = _SCHED.unpack_from(raw, 0)
    off = _SCHED.size
    maps = []
    for _ in range(2):
        (n,) = struct.unpack_from("<I", raw, off)
        off += 4
        pairs = [struct.unpack_from("<II", raw, off + 8 * i) for i in range(n)]
        off += 8 * n
        maps.append(dict(pairs))
    return LRSchedule(a, b, step, maps[1], default, maps[0])


def save_checkpoint(state: REMINDState | None, path, *, head: HeadModel | None = None,
                    schedule: LRSchedule | None = None) -> None:
    sections = []
    head = state.head if state is not None else head
    schedule = state.schedule if state is not None else schedule
    if head is not None:
        sections.append((1, head.to_bytes()))
    if schedule is not None:
        sections.append((2, _schedule_bytes(schedule)))
    if state is not None:
        sections.append((3, codebook_to_bytes(state.codebook)))
        sections.append((4, state.buffer.to_bytes(state.codebook)))
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", b"RMCK", 1, len(sections)))
        for tag, blob in sections:
            fh.write(struct.pack("<IQ", tag, len(blob)))
            fh.write(blob)


def load_checkpoint(path) -> dict:
    """Read a checkpoint into a dict with any of ``head``, ``schedule``,
    ``codebook`` and ``buffer``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, n = struct.unpack_from("<4sII", raw, 0)
    if magic != b"RMCK" or version != 1:
        raise ValueError("not a version-1 checkpoint")
    off = 12
    blobs = {}
    for _ in range(n):
        tag, length = struct.unpack_from("<IQ", raw, off)
        off += 12
        blobs[tag] = raw[off:off + length]
        off += length
    out = {}
    if 1 in blobs:
        out["head"] = HeadModel.from_bytes(blobs[1])[0]
    if 2 in blobs:
        out["schedule"] = _schedule_from(blobs[2])
    if 3 in blobs:
        out["codebook"] = codebook_from_bytes(blobs[3])
    if 4 in blobs:
        out["buffer"] = ReplayBuffer.from_bytes(blobs[4], out.get("codebook"))
    return out


# ---------------------------------------------------------------- estimator

class REMINDClassifier(ClassifierMixin, BaseEstimator):
    """Streaming classifier with a compressed replay buffer.

    ``fit`` performs base initialization on an offline prefix;
    ``partial_fit`` then streams samples one at a time in the given order.

    Parameters
    ----------
    n_codebooks, codebook_size, kmeans_iter : int
        Product quantizer settings (``s``, ``c``, Lloyd iterations).
    buffer_bytes : int or None
        Replay budget in bytes; ``None`` stores every sample.
    replay_count : int
        Replayed reconstructions per streaming step (``r``).
    mixup, mixup_alpha, mixup_replaces :
        Manifold mixup switch, Beta shape, and whether the mixed set replaces
        the plain replays (otherwise both are used).
    crop, crop_scale, crop_aspect, crop_current :
        Random resized crop switch, ranges, and whether the incoming sample
        is cropped as well.
    quantize_current : bool
        Feed the incoming sample as its reconstruction rather than raw.
    hidden, pooling, activation :
        Head architecture, see :class:`~remind.head.HeadModel`.
    lr_start, lr_end, lr_step, samples_per_class :
        Per-class learning-rate decay.
    momentum, weight_decay :
        SGD settings shared by base initialization and streaming.
    base_epochs, base_batch_size, base_lr, base_milestones :
        Offline training of the head on the prefix.
    num_classes : int or None
        Output size; inferred from ``fit`` labels when ``None``.
    random_state : int or None
    """

    def __init__(self, n_codebooks=32, codebook_size=256, kmeans_iter=25, buffer_bytes=None,
                 replay_count=50, mixup=True, mixup_alpha=0.1, mixup_replaces=True, crop=True,
                 crop_scale=(0.6, 1.0), crop_aspect=(3 / 4, 4 / 3), crop_current=True,
                 quantize_current=True, hidden=(), pooling="flatten", activation="relu",
                 lr_start=0.1, lr_end=0.001, lr_step=100, samples_per_class=None,
                 momentum=0.9, weight_decay=1e-4, base_epochs=30, base_batch_size=64,
                 base_lr=0.1, base_milestones=(10, 20), num_classes=None, random_state=0):
        self.n_codebooks = n_codebooks
        self.codebook_size = codebook_size
        self.kmeans_iter = kmeans_iter
        self.buffer_bytes = buffer_bytes
        self.replay_count = replay_count
        self.mixup = mixup
        self.mixup_alpha = mixup_alpha
        self.mixup_replaces = mixup_replaces
        self.crop = crop
        self.crop_scale = crop_scale
        self.crop_aspect = crop_aspect
        self.crop_current = crop_current
        self.quantize_current = quantize_current
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

    def _schedule(self, y) -> LRSchedule:
        spc = self.samples_per_class
        if isinstance(spc, dict):
            return LRSchedule(self.lr_start, self.lr_end, self.lr_step, dict(spc),
                              max(spc.values(), default=self.lr_step))
        if spc is None:
            counts = np.bincount(y)
            spc = int(counts[counts > 0].mean())
        return LRSchedule(self.lr_start, self.lr_end, self.lr_step, {}, int(spc))

    def fit(self, X, y, instance_ids=None, seq_index=None):
        """Base initialization on the prefix ``(X, y)``."""
        X = check_tensor_batch(X)
        y = check_labels(y, X.shape[0])
        self.n_classes_ = int(self.num_classes or (y.max() + 1))
        self.classes_ = np.arange(self.n_classes_)
        self.rng_ = check_random_state(self.random_state)
        m = X.shape[1]
        budget = self.buffer_bytes
        if budget is None:
            budget = sample_bytes(m, self.n_codebooks, self.codebook_size) * max(1, X.shape[0]) * 1000
        self.state_ = base_initialize(
            X, y, num_classes=self.n_classes_, s=self.n_codebooks, c=self.codebook_size,
            kmeans_iter=self.kmeans_iter, buffer_bytes=budget,
            head_kwargs=dict(hidden=self.hidden, pooling=self.pooling,
                             activation=self.activation),
            offline_kwargs=dict(epochs=self.base_epochs, batch_size=self.base_batch_size,
                                lr=self.base_lr, milestones=self.base_milestones),
            schedule=self._schedule(y),
            sgd=SGDConfig(self.momentum, self.weight_decay, self.replay_count),
            rng=self.rng_, instance_ids=instance_ids, seq_index=seq_index,
            mixup=MixupConfig(self.mixup_alpha, self.mixup),
            crop=CropConfig(*self.crop_scale, *self.crop_aspect, self.crop),
            quantize_current=self.quantize_current, crop_current=self.crop_current,
            mixup_replaces=self.mixup_replaces)
        return self

    def partial_fit(self, X, y, instance_ids=None, seq_index=None):
        """Stream ``(X, y)`` one sample at a time, in order."""
        check_is_fitted(self, "state_")
        X = check_tensor_batch(X)
        y = check_labels(y, X.shape[0], self.n_classes_)
        inst = np.zeros(len(y), dtype=np.int64) if instance_ids is None else instance_ids
        seq = np.full(len(y), 0) if seq_index is None else seq_index
        for i in range(X.shape[0]):
            remind_fit_one(self.state_, LabeledSample(X[i], int(y[i]), int(inst[i]), int(seq[i])),
                           self.rng_)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "state_")
        cb = self.state_.codebook
        return self.state_.head.forward(decode_batch(cb, encode_batch(cb, X)))

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def predict_topk(self, X, k=5):
        return topk_from_scores(self.decision_function(X), k)

    @property
    def buffer_(self) -> ReplayBuffer:
        return self.state_.buffer

    @property
    def codebook_(self) -> Codebook:
        return self.state_.codebook

    def save(self, path) -> None:
        save_checkpoint(self.state_, path)
