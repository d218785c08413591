"""Stream orderings: iid, class iid, instance and class instance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import check_random_state
from .types import FeatureDataset

KINDS = ("iid", "class_iid", "instance", "class_instance")


@dataclass(frozen=True)
class OrderingSpec:
    kind: str = "iid"
    num_batches: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"ordering kind must be one of {KINDS}, got {self.kind!r}")
        if self.num_batches < 1:
            raise ValueError("num_batches must be positive")


def _temporal_runs(idx, keys, seq_index, rng):
    # whole instances in shuffled order, each one in capture order
    out = []
    for key in rng.permutation(np.unique(keys[idx])):
        members = idx[keys[idx] == key]
        out.append(members[np.argsort(seq_index[members], kind="stable")])
    return np.concatenate(out) if out else idx[:0]


def order_stream(ds: FeatureDataset, spec: OrderingSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(permutation, boundaries)``.

    ``permutation`` lists every sample index exactly once; batch ``b`` is
    ``permutation[boundaries[b]:boundaries[b + 1]]``.
    """
    n = len(ds)
    if spec.num_batches > n:
        raise ValueError(f"cannot split {n} samples into {spec.num_batches} batches")
    rng = check_random_state(spec.seed)
    labels, inst, seq = ds.labels, ds.instance_ids, ds.seq_index
    # an instance is a (class, instance_id) pair so ids may be reused across classes
    keys = labels.astype(np.int64) * (int(inst.max()) + 1 if n else 1) + inst
    batches: list[np.ndarray] = []

    if spec.kind == "iid":
        batches = np.array_split(rng.permutation(n), spec.num_batches)

    elif spec.kind in ("class_iid", "class_instance"):
        classes = np.unique(labels)
        if classes.shape[0] % spec.num_batches:
            raise ValueError(f"{classes.shape[0]} classes do not divide into "
                             f"{spec.num_batches} batches")
        for group in np.array_split(rng.permutation(classes), spec.num_batches):
            idx = np.flatnonzero(np.isin(labels, group))
            if spec.kind == "class_iid":
                batches.append(rng.permutation(idx))
            else:
                batches.append(_temporal_runs(idx, keys, seq, rng))

    else:  # instance
        uniq = np.unique(keys)
        if uniq.shape[0] < spec.num_batches:
            raise ValueError(f"{uniq.shape[0]} instances cannot fill {spec.num_batches} batches")
        for group in np.array_split(rng.permutation(uniq), spec.num_batches):
            idx = np.flatnonzero(np.isin(keys, group))
            batches.append(_temporal_runs(idx, keys, seq, rng))

    perm = np.concatenate(batches).astype(np.int64)
    bounds = np.concatenate([[0], np.cumsum([len(b) for b in batches])]).astype(np.int64)
    return perm, bounds


def base_init_split(perm: np.ndarray, bounds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split an ordering into the base-initialization batch and the stream."""
    return perm[:bounds[1]], perm[bounds[1]:]


def batches(perm: np.ndarray, bounds: np.ndarray) -> list[np.ndarray]:
    return [perm[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def write_manifest(perm: np.ndarray, bounds: np.ndarray, path, kind: str = "") -> None:
    """One sample index per line, ``# batch k`` before each batch."""
    with open(path, "w", encoding="utf-8") as fh:
        if kind:
            fh.write(f"# ordering {kind}\n")
        for b, chunk in enumerate(batches(perm, bounds)):
            fh.write(f"# batch {b}\n")
            fh.writelines(f"{i}\n" for i in chunk)


def read_manifest(path) -> tuple[np.ndarray, np.ndarray]:
    perm, bounds = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# batch"):
                bounds.append(len(perm))
            elif line and not line.startswith("#"):
                perm.append(int(line))
    bounds.append(len(perm))
    return np.asarray(perm, dtype=np.int64), np.asarray(bounds, dtype=np.int64)
