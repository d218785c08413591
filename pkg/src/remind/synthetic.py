"""Class-conditional synthetic feature tensors for desk-scale experiments.

Each class has a channel profile that survives spatial pooling and a
zero-mean spatial pattern that only a head reading the whole m x m grid can
use. Samples come in temporally correlated runs ("instances"), so instance
orderings are meaningful.
"""
from __future__ import annotations

import numpy as np

from .rng import seeded_rng, split_rng
from .types import FeatureDataset


def make_synthetic(num_classes: int = 10, train_per_class: int = 500,
                   test_per_class: int = 100, m: int = 4, d: int = 64,
                   instances_per_class: int = 10, pooled_scale: float = 0.35,
                   spatial_scale: float = 0.5, instance_scale: float = 0.3,
                   drift_scale: float = 0.4, drift_corr: float = 0.9,
                   noise_scale: float = 1.0, shared_offset: float = 0.0,
                   rectify: bool = False, jitter: float = 0.0, zoom: float = 0.0,
                   seed: int = 0
                   ) -> tuple[FeatureDataset, FeatureDataset]:
    """Return ``(train, test)`` datasets drawn from the same instances.

    ``shared_offset`` adds a class-independent positive mean and ``rectify``
    clips at zero, mimicking post-ReLU activations. ``jitter`` (in cells) and
    ``zoom`` (relative) randomly translate and rescale the spatial pattern of
    every frame, resampled bilinearly with clamped edges. Frames of one instance follow an AR(1) drift with correlation
    ``drift_corr``; ``seq_index`` records capture order and instance ids are
    globally unique.
    """
    root = seeded_rng(seed)
    proto_rng, train_rng, test_rng = split_rng(root, 3)
    profiles = proto_rng.normal(0.0, pooled_scale, size=(num_classes, 1, 1, d))
    patterns = proto_rng.normal(0.0, spatial_scale, size=(num_classes, m, m, d))
    patterns -= patterns.mean(axis=(1, 2), keepdims=True)
    offsets = proto_rng.normal(0.0, instance_scale,
                               size=(num_classes, instances_per_class, 1, 1, d))

    def draw(rng, per_class, provenance):
        tensors, labels, insts = [], [], []
        frames = np.array_split(np.arange(per_class), instances_per_class)
        for k in range(num_classes):
            for i, f in enumerate(frames):
                drift = np.empty((len(f), m, m, d))
                state = rng.normal(0.0, drift_scale, size=(m, m, d))
                for t in range(len(f)):
                    state = drift_corr * state + np.sqrt(1 - drift_corr ** 2) * \
                        rng.normal(0.0, drift_scale, size=(m, m, d))
                    drift[t] = state
                noise = rng.normal(0.0, noise_scale, size=(len(f), m, m, d))
                if jitter or zoom:
                    pat = np.stack([_warp(patterns[k], rng, jitter, zoom) for _ in f])
                else:
                    pat = patterns[k]
                z = shared_offset + profiles[k] + pat + offsets[k, i] + drift + noise
                tensors.append(np.maximum(z, 0.0) if rectify else z)
                labels.append(np.full(len(f), k))
                insts.append(np.full(len(f), k * instances_per_class + i))
        X = np.concatenate(tensors).astype(np.float32)
        return FeatureDataset(X, np.concatenate(labels), num_classes, np.concatenate(insts),
                              np.arange(X.shape[0]), provenance)

    tag = (f"synthetic seed={seed} K={num_classes} m={m} d={d} "
           f"pooled={pooled_scale} spatial={spatial_scale} noise={noise_scale}")
    return draw(train_rng, train_per_class, tag + " split=train"), \
        draw(test_rng, test_per_class, tag + " split=test")


def _warp(pattern: np.ndarray, rng, jitter: float, zoom: float) -> np.ndarray:
    m = pattern.shape[0]
    centre = (m - 1) / 2
    scale = 1.0 + rng.uniform(-zoom, zoom)
    dy, dx = rng.uniform(-jitter, jitter, size=2)
    grid = np.arange(m, dtype=np.float64)
    rows = np.clip(centre + (grid - centre) / scale + dy, 0, m - 1)
    cols = np.clip(centre + (grid - centre) / scale + dx, 0, m - 1)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1, c1 = np.minimum(r0 + 1, m - 1), np.minimum(c0 + 1, m - 1)
    fr, fc = (rows - r0)[:, None, None], (cols - c0)[None, :, None]
    top = pattern[r0][:, c0] * (1 - fc) + pattern[r0][:, c1] * fc
    bot = pattern[r1][:, c0] * (1 - fc) + pattern[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr
