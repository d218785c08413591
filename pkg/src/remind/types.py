"""Domain types: labelled feature tensors and datasets of them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LabeledSample:
    """One m x m x d activation map with its class and capture metadata."""

    tensor: np.ndarray
    label: int
    instance_id: int = 0
    seq_index: int = 0

    @property
    def m(self) -> int:
        return self.tensor.shape[0]

    @property
    def d(self) -> int:
        return self.tensor.shape[2]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    """An ordered, immutable collection of labelled feature tensors.

    Tensors are stored stacked as a float32 array of shape (n, m, m, d);
    indexing yields :class:`LabeledSample` views.
    """

    tensors: np.ndarray
    labels: np.ndarray
    num_classes: int
    instance_ids: np.ndarray | None = None
    seq_index: np.ndarray | None = None
    provenance: str = ""
    _validated: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        tensors = np.asarray(self.tensors, dtype=np.float32)
        if tensors.ndim != 4 or tensors.shape[1] != tensors.shape[2]:
            raise ValueError(f"tensors must have shape (n, m, m, d), got {tensors.shape}")
        n = tensors.shape[0]
        if tensors.shape[1] < 1 or tensors.shape[3] < 1:
            raise ValueError("m and d must be at least 1")
        if not np.all(np.isfinite(tensors)):
            raise ValueError("dataset tensors contain non-finite values")
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        inst = (np.zeros(n, dtype=np.int64) if self.instance_ids is None
                else np.asarray(self.instance_ids, dtype=np.int64).reshape(-1))
        seq = (np.arange(n, dtype=np.int64) if self.seq_index is None
               else np.asarray(self.seq_index, dtype=np.int64).reshape(-1))
        if labels.shape[0] != n or inst.shape[0] != n or seq.shape[0] != n:
            raise ValueError("labels, instance_ids and seq_index must have one entry per tensor")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if n and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if n and (inst.min() < 0 or seq.min() < 0):
            raise ValueError("instance_ids and seq_index must be non-negative")
        if np.unique(seq).shape[0] != n:
            raise ValueError("seq_index values must be unique")
        object.__setattr__(self, "tensors", _frozen(tensors))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "instance_ids", _frozen(inst))
        object.__setattr__(self, "seq_index", _frozen(seq))
        object.__setattr__(self, "num_classes", int(self.num_classes))

    @property
    def m(self) -> int:
        return self.tensors.shape[1]

    @property
    def d(self) -> int:
        return self.tensors.shape[3]

    def __len__(self) -> int:
        return self.tensors.shape[0]

    def __getitem__(self, i: int) -> LabeledSample:
        return LabeledSample(self.tensors[i], int(self.labels[i]),
                             int(self.instance_ids[i]), int(self.seq_index[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def samples(self) -> list[LabeledSample]:
        return list(self)

    def subset(self, indices) -> "FeatureDataset":
        """Return the samples at ``indices`` (in that order), keeping metadata."""
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureDataset(self.tensors[idx], self.labels[idx], self.num_classes,
                              self.instance_ids[idx], self.seq_index[idx], self.provenance)

    def equals(self, other: "FeatureDataset") -> bool:
        return (self.num_classes == other.num_classes
                and self.tensors.shape == other.tensors.shape
                and np.array_equal(self.tensors, other.tensors)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.instance_ids, other.instance_ids)
                and np.array_equal(self.seq_index, other.seq_index))
