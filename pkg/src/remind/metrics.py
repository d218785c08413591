"""Accuracy metrics over evaluation events."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


def topk_accuracy(ranked, labels, k: int = 1) -> float:
    """Fraction of rows whose label is among the first ``k`` ranked classes."""
    ranked = np.asarray(ranked)
    labels = np.asarray(labels)
    if k < 1:
        raise ValueError("k must be at least 1")
    if labels.shape[0] == 0:
        raise ValueError("empty evaluation set")
    if ranked.ndim == 1:
        ranked = ranked[:, None]
    return float(np.mean(np.any(ranked[:, :k] == labels[:, None], axis=1)))


@dataclass
class EvalTrace:
    """Accuracy of a learner and of the offline normalizer at each event."""

    alpha: list = field(default_factory=list)
    alpha_offline: list = field(default_factory=list)
    events: list = field(default_factory=list)   # dicts: batch, classes_seen, mode
    normalizer: str = "offline"

    def add(self, alpha: float, alpha_offline: float, **descriptor) -> None:
        for v in (alpha, alpha_offline):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"accuracy {v} outside [0, 1]")
        self.alpha.append(float(alpha))
        self.alpha_offline.append(float(alpha_offline))
        self.events.append(descriptor)

    def __len__(self) -> int:
        return len(self.alpha)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["event", "classes_seen", "alpha", "alpha_offline"])
            for t, (a, o, ev) in enumerate(zip(self.alpha, self.alpha_offline, self.events)):
                seen = " ".join(str(c) for c in ev.get("classes_seen", []))
                w.writerow([t, seen, repr(a), repr(o)])


def omega_all(trace: EvalTrace) -> float:
    """Mean over events of streaming accuracy divided by offline accuracy."""
    a = np.asarray(trace.alpha, dtype=np.float64)
    o = np.asarray(trace.alpha_offline, dtype=np.float64)
    if a.shape != o.shape:
        raise ValueError("trace accuracy lists differ in length")
    if a.size == 0:
        raise ValueError("empty trace")
    if np.any(o <= 0):
        raise ValueError("offline accuracy is zero at some event")
    return float(np.mean(a / o))


def mu_all(trace: EvalTrace) -> float:
    """Plain mean accuracy over events."""
    if len(trace.alpha) == 0:
        raise ValueError("empty trace")
    return float(np.mean(np.asarray(trace.alpha, dtype=np.float64)))


def write_summary(path, summary: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
