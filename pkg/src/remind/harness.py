"""Experiment orchestration: config, streaming loop, evaluation, reports.

Config files are flat ``dotted.key = value`` lines; ``#`` starts a comment.
Unknown keys are rejected. Values are parsed according to the type of the
matching :class:`ExperimentConfig` field; tuples are comma separated.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (ExStreamClassifier, FineTuneClassifier, OfflineClassifier,
                        SLDAClassifier, offline_train)
from .io import ingest_features
from .learner import REMINDClassifier, save_checkpoint, topk_from_scores
from .metrics import EvalTrace, mu_all, omega_all, topk_accuracy, write_summary
from .orderings import OrderingSpec, batches, order_stream, write_manifest
from .quantizer import codebook_bytes, reconstruction_mse, sample_bytes
from .rng import RNG_ALGORITHM
from .synthetic import make_synthetic
from .types import FeatureDataset

log = logging.getLogger(__name__)

LEARNERS = ("remind", "finetune", "slda", "exstream", "offline")


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    """Wraps a failure inside a run with the config hash and sample position."""

    def __init__(self, message: str, config_hash: str, seq_index: int | None = None):
        super().__init__(message)
        self.config_hash = config_hash
        self.seq_index = seq_index

    def to_json(self) -> dict:
        return {"error": str(self), "config_hash": self.config_hash, "seq_index": self.seq_index}


@dataclass
class ExperimentConfig:
    # dotted key = field name with "." replaced by "_" (see KEYS below)
    dataset_train: str = "synthetic"
    dataset_test: str = ""
    synthetic_num_classes: int = 10
    synthetic_train_per_class: int = 500
    synthetic_test_per_class: int = 100
    synthetic_m: int = 4
    synthetic_d: int = 64
    synthetic_instances_per_class: int = 10
    synthetic_pooled_scale: float = 0.12
    synthetic_spatial_scale: float = 0.3
    synthetic_noise_scale: float = 1.0
    synthetic_shared_offset: float = 0.5
    synthetic_rectify: bool = True
    synthetic_jitter: float = 0.5
    synthetic_zoom: float = 0.2
    synthetic_seed: int = 0
    learner_name: str = "remind"
    ordering_kind: str = "class_iid"
    ordering_num_batches: int = 5
    quantizer_s: int = 16
    quantizer_c: int = 64
    quantizer_iters: int = 25
    buffer_budget_bytes: int = 640_000
    replay_r: int = 20
    augment_mixup_enabled: bool = True
    augment_mixup_alpha: float = 0.1
    augment_mixup_replaces: bool = True
    augment_crop_enabled: bool = True
    augment_crop_current: bool = True
    augment_crop_scale_min: float = 0.6
    augment_crop_scale_max: float = 1.0
    augment_crop_aspect_min: float = 0.75
    augment_crop_aspect_max: float = 4 / 3
    learner_hidden: tuple = ()
    learner_pooling: str = "flatten"
    learner_activation: str = "relu"
    learner_lr_start: float = 0.1
    learner_lr_end: float = 0.001
    learner_lr_step: int = 100
    learner_momentum: float = 0.9
    learner_weight_decay: float = 1e-4
    learner_quantize_current: bool = True
    base_epochs: int = 20
    base_batch_size: int = 64
    base_lr: float = 0.05
    base_milestones: tuple = (10, 15)
    exstream_capacity: int = 0
    exstream_lr: float = 0.01
    slda_shrinkage: float = 1e-4
    offline_epochs: int = 20
    offline_batch_size: int = 64
    offline_lr: float = 0.05
    offline_milestones: tuple = (10, 15)
    eval_mode: str = "seen"
    eval_topk: int = 1
    seed: int = 0
    output_dir: str = ""

    # -- parsing -----------------------------------------------------------

    @classmethod
    def keys(cls) -> dict[str, str]:
        return {f.name.replace("_", ".", 1) if f.name not in _SPECIAL else _SPECIAL[f.name]:
                f.name for f in dataclasses.fields(cls)}

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            cfg = cfg.with_value(key, value)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def with_value(self, key: str, value) -> "ExperimentConfig":
        """Copy with one dotted key set; string values are parsed."""
        name = _field_for_key(key)
        default = getattr(ExperimentConfig, name, None)
        if isinstance(value, str):
            value = _parse(value, default, key)
        return dataclasses.replace(self, **{name: value})

    def to_text(self, include_output: bool = True) -> str:
        lines = []
        for key, name in sorted(self.keys().items()):
            if name == "output_dir" and not include_output:
                continue
            lines.append(f"{key} = {_format(getattr(self, name))}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text(include_output=False).encode()).hexdigest()[:16]

    def validate(self) -> None:
        if self.learner_name not in LEARNERS:
            raise ConfigError(f"learner.name must be one of {LEARNERS}")
        OrderingSpec(self.ordering_kind, self.ordering_num_batches, self.seed)
        if self.quantizer_s < 1 or self.quantizer_c < 1 or self.quantizer_iters < 0:
            raise ConfigError("quantizer.s and quantizer.c must be positive")
        if self.synthetic_d % self.quantizer_s and self.dataset_train == "synthetic":
            raise ConfigError(f"synthetic.d={self.synthetic_d} not divisible by quantizer.s")
        if self.buffer_budget_bytes < 1:
            raise ConfigError("buffer.budget_bytes must be positive")
        if self.replay_r < 0:
            raise ConfigError("replay.r must be non-negative")
        if self.eval_mode not in ("seen", "all"):
            raise ConfigError("eval.mode must be 'seen' or 'all'")
        if self.eval_topk < 1:
            raise ConfigError("eval.topk must be at least 1")
        if self.dataset_train != "synthetic" and not self.dataset_test:
            raise ConfigError("dataset.test is required with a file-based dataset.train")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        try:
            from .augment import CropConfig, MixupConfig
            from .head import LRSchedule, SGDConfig
            MixupConfig(self.augment_mixup_alpha)
            CropConfig(self.augment_crop_scale_min, self.augment_crop_scale_max,
                       self.augment_crop_aspect_min, self.augment_crop_aspect_max)
            SGDConfig(self.learner_momentum, self.learner_weight_decay, self.replay_r)
            LRSchedule(self.learner_lr_start, self.learner_lr_end, self.learner_lr_step)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_SPECIAL = {
    "dataset_train": "dataset.train", "dataset_test": "dataset.test",
    "augment_mixup_enabled": "augment.mixup.enabled",
    "augment_mixup_alpha": "augment.mixup.alpha",
    "augment_mixup_replaces": "augment.mixup.replaces",
    "augment_crop_enabled": "augment.crop.enabled",
    "augment_crop_current": "augment.crop.current",
    "augment_crop_scale_min": "augment.crop.scale_min",
    "augment_crop_scale_max": "augment.crop.scale_max",
    "augment_crop_aspect_min": "augment.crop.aspect_min",
    "augment_crop_aspect_max": "augment.crop.aspect_max",
    "buffer_budget_bytes": "buffer.budget_bytes",
    "ordering_num_batches": "ordering.num_batches",
    "synthetic_num_classes": "synthetic.num_classes",
    "synthetic_train_per_class": "synthetic.train_per_class",
    "synthetic_test_per_class": "synthetic.test_per_class",
    "synthetic_instances_per_class": "synthetic.instances_per_class",
    "synthetic_pooled_scale": "synthetic.pooled_scale",
    "synthetic_spatial_scale": "synthetic.spatial_scale",
    "synthetic_noise_scale": "synthetic.noise_scale",
    "synthetic_shared_offset": "synthetic.shared_offset",
    "learner_lr_start": "learner.lr_start", "learner_lr_end": "learner.lr_end",
    "learner_lr_step": "learner.lr_step", "learner_weight_decay": "learner.weight_decay",
    "learner_quantize_current": "learner.quantize_current",
    "base_batch_size": "base.batch_size", "offline_batch_size": "offline.batch_size",
    "output_dir": "output.dir", "seed": "seed",
}


def _field_for_key(key: str) -> str:
    name = ExperimentConfig.keys().get(key)
    if name is None:
        raise ConfigError(f"unknown config key {key!r}")
    return name


def _parse(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(value.replace("_", ""))
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(int(v) for v in value.split(",") if v.strip())
        return value
    except ValueError as exc:
        raise ConfigError(f"bad value {value!r} for {key}") from exc


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------- running

@dataclass
class ReportBundle:
    config: ExperimentConfig
    trace: EvalTrace
    summary: dict
    timing: dict
    paths: dict = field(default_factory=dict)
    learner: object = None

    @property
    def omega_all(self) -> float:
        return self.summary["omega_all"]


_DATA_CACHE: dict = {}
_OFFLINE_CACHE: dict = {}


def load_datasets(cfg: ExperimentConfig) -> tuple[FeatureDataset, FeatureDataset]:
    if cfg.dataset_train == "synthetic":
        key = tuple(getattr(cfg, f.name) for f in dataclasses.fields(cfg)
                    if f.name.startswith("synthetic_"))
        if key not in _DATA_CACHE:
            _DATA_CACHE[key] = make_synthetic(
                num_classes=cfg.synthetic_num_classes,
                train_per_class=cfg.synthetic_train_per_class,
                test_per_class=cfg.synthetic_test_per_class, m=cfg.synthetic_m,
                d=cfg.synthetic_d, instances_per_class=cfg.synthetic_instances_per_class,
                pooled_scale=cfg.synthetic_pooled_scale,
                spatial_scale=cfg.synthetic_spatial_scale,
                noise_scale=cfg.synthetic_noise_scale,
                shared_offset=cfg.synthetic_shared_offset, rectify=cfg.synthetic_rectify,
                jitter=cfg.synthetic_jitter, zoom=cfg.synthetic_zoom,
                seed=cfg.synthetic_seed)
        return _DATA_CACHE[key]
    train, test = ingest_features(cfg.dataset_train), ingest_features(cfg.dataset_test)
    if (train.m, train.d) != (test.m, test.d):
        raise ConfigError("train and test feature files disagree on m or d")
    if train.d % cfg.quantizer_s:
        raise ConfigError(f"d={train.d} not divisible by quantizer.s={cfg.quantizer_s}")
    return train, test


def build_learner(cfg: ExperimentConfig, num_classes: int, samples_per_class: dict, d: int):
    head = dict(hidden=cfg.learner_hidden, activation=cfg.learner_activation)
    base = dict(base_epochs=cfg.base_epochs, base_batch_size=cfg.base_batch_size,
                base_lr=cfg.base_lr, base_milestones=cfg.base_milestones,
                momentum=cfg.learner_momentum, weight_decay=cfg.learner_weight_decay,
                num_classes=num_classes, random_state=cfg.seed)
    sched = dict(lr_start=cfg.learner_lr_start, lr_end=cfg.learner_lr_end,
                 lr_step=cfg.learner_lr_step, samples_per_class=samples_per_class)
    if cfg.learner_name == "remind":
        return REMINDClassifier(
            n_codebooks=cfg.quantizer_s, codebook_size=cfg.quantizer_c,
            kmeans_iter=cfg.quantizer_iters, buffer_bytes=cfg.buffer_budget_bytes,
            replay_count=cfg.replay_r, mixup=cfg.augment_mixup_enabled,
            mixup_alpha=cfg.augment_mixup_alpha, mixup_replaces=cfg.augment_mixup_replaces,
            crop=cfg.augment_crop_enabled,
            crop_scale=(cfg.augment_crop_scale_min, cfg.augment_crop_scale_max),
            crop_aspect=(cfg.augment_crop_aspect_min, cfg.augment_crop_aspect_max),
            crop_current=cfg.augment_crop_current,
            quantize_current=cfg.learner_quantize_current, pooling=cfg.learner_pooling,
            **head, **sched, **base)
    if cfg.learner_name == "finetune":
        return FineTuneClassifier(pooling=cfg.learner_pooling, **head, **sched, **base)
    if cfg.learner_name == "slda":
        return SLDAClassifier(cfg.slda_shrinkage, num_classes)
    if cfg.learner_name == "exstream":
        cap = cfg.exstream_capacity or max(1, cfg.buffer_budget_bytes // (num_classes * d * 4))
        return ExStreamClassifier(capacity=cap, lr=cfg.exstream_lr, **head, **base)
    return None  # offline: retrained per event below


def _eval_indices(test: FeatureDataset, seen: set, mode: str) -> np.ndarray:
    if mode == "all":
        return np.arange(len(test))
    return np.flatnonzero(np.isin(test.labels, sorted(seen)))


def _offline_accuracy(cfg, train, test, idx_train, idx_eval, event) -> float:
    key = (id(train), id(test), cfg.seed, cfg.ordering_kind, cfg.ordering_num_batches,
           cfg.offline_epochs, cfg.offline_batch_size, cfg.offline_lr, cfg.offline_milestones,
           cfg.learner_hidden, cfg.learner_pooling, cfg.learner_activation,
           cfg.learner_momentum, cfg.learner_weight_decay, cfg.eval_mode, cfg.eval_topk, event)
    if key not in _OFFLINE_CACHE:
        head, _ = offline_train(
            train.tensors[idx_train], train.labels[idx_train], num_classes=train.num_classes,
            epochs=cfg.offline_epochs, batch_size=cfg.offline_batch_size, lr=cfg.offline_lr,
            milestones=cfg.offline_milestones, hidden=cfg.learner_hidden,
            pooling=cfg.learner_pooling, activation=cfg.learner_activation,
            momentum=cfg.learner_momentum, weight_decay=cfg.learner_weight_decay,
            rng=cfg.seed + event)
        ranked = topk_from_scores(head.forward(test.tensors[idx_eval]), cfg.eval_topk)
        _OFFLINE_CACHE[key] = topk_accuracy(ranked, test.labels[idx_eval], cfg.eval_topk)
    return _OFFLINE_CACHE[key]


def _learner_memory(cfg, learner) -> int:
    if isinstance(learner, REMINDClassifier):
        return learner.buffer_.bytes_used + codebook_bytes(learner.codebook_)
    if isinstance(learner, ExStreamClassifier):
        return sum(v.nbytes // 2 for v in learner.buffer_.vectors.values())  # stored as f32
    if isinstance(learner, SLDAClassifier):
        st = learner.state_
        return 4 * (st.means.size + st.cov.size)
    return 0


def run_experiment(cfg: ExperimentConfig, *, write: bool = True) -> ReportBundle:
    """Ingest, order, base-initialize, stream, evaluate and report one run."""
    cfg.validate()
    chash = cfg.config_hash()
    t0 = time.perf_counter()
    train, test = load_datasets(cfg)
    spec = OrderingSpec(cfg.ordering_kind, cfg.ordering_num_batches, cfg.seed)
    try:
        perm, bounds = order_stream(train, spec)
    except ValueError as exc:
        raise ExperimentError(f"ordering failed: {exc}", chash) from exc
    parts = batches(perm, bounds)
    spc = {int(k): int(v) for k, v in enumerate(np.bincount(train.labels[perm[bounds[1]:]],
                                                            minlength=train.num_classes)) if v}
    learner = build_learner(cfg, train.num_classes, spc, train.d)
    trace = EvalTrace(normalizer=f"offline head trained on raw features, {cfg.offline_epochs} "
                                 f"epochs, on all training data seen so far")
    seen_classes: set = set()
    seen_samples: set = set()
    seq = None
    try:
        for event, idx in enumerate(parts):
            if learner is not None:
                if event == 0:
                    learner.fit(train.tensors[idx], train.labels[idx],
                                instance_ids=train.instance_ids[idx],
                                seq_index=train.seq_index[idx])
                    seen_samples.update(int(s) for s in train.seq_index[idx])
                else:
                    for i in idx:
                        seq = int(train.seq_index[i])
                        if seq in seen_samples:
                            raise ExperimentError("stream revisited a sample", chash, seq)
                        seen_samples.add(seq)
                        learner.partial_fit(train.tensors[i:i + 1], train.labels[i:i + 1],
                                            instance_ids=train.instance_ids[i:i + 1],
                                            seq_index=train.seq_index[i:i + 1])
                    seq = None
            seen_classes.update(int(c) for c in np.unique(train.labels[idx]))
            idx_train = np.concatenate(parts[:event + 1])
            idx_eval = _eval_indices(test, seen_classes, cfg.eval_mode)
            alpha_off = _offline_accuracy(cfg, train, test, idx_train, idx_eval, event)
            if learner is None:
                alpha = alpha_off
            else:
                ranked = learner.predict_topk(test.tensors[idx_eval], cfg.eval_topk)
                alpha = topk_accuracy(ranked, test.labels[idx_eval], cfg.eval_topk)
            trace.add(alpha, alpha_off, batch=event, classes_seen=sorted(seen_classes),
                      mode=cfg.eval_mode)
            log.info("event %d: alpha=%.4f offline=%.4f", event, alpha, alpha_off)
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError(f"{type(exc).__name__}: {exc}", chash, seq) from exc

    summary = {
        "config_hash": chash,
        "seed": cfg.seed,
        "rng": RNG_ALGORITHM,
        "learner": cfg.learner_name,
        "ordering": cfg.ordering_kind,
        "eval_mode": cfg.eval_mode,
        "eval_topk": cfg.eval_topk,
        "num_events": len(trace),
        "omega_all": omega_all(trace),
        "mu_all": mu_all(trace),
        "alpha": trace.alpha,
        "alpha_offline": trace.alpha_offline,
        "normalizer": trace.normalizer,
        "learner_memory_bytes": _learner_memory(cfg, learner),
        "dataset": train.provenance,
    }
    if isinstance(learner, REMINDClassifier):
        buf = learner.buffer_
        summary.update({
            "buffer_budget_bytes": buf.budget_bytes,
            "peak_buffer_bytes": buf.peak_bytes,
            "buffer_entries": len(buf),
            "sample_bytes": sample_bytes(train.m, cfg.quantizer_s, cfg.quantizer_c),
            "codebook_bytes": codebook_bytes(learner.codebook_),
            "reconstruction_mse": reconstruction_mse(learner.codebook_, test.tensors),
            "evictions": len(buf.eviction_log),
            "tied_evictions": sum(len(e.tied) > 1 for e in buf.eviction_log),
        })
    timing = {"wall_clock_s": time.perf_counter() - t0}
    bundle = ReportBundle(cfg, trace, summary, timing, learner=learner)
    if write and cfg.output_dir:
        bundle.paths = _emit(cfg, bundle, perm, bounds, learner)
    return bundle


def _emit(cfg, bundle, perm, bounds, learner) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in (("trace", "trace.csv"), ("summary", "summary.json"),
                                     ("timing", "timing.json"), ("manifest", "ordering.txt"),
                                     ("config", "config.txt"))}
    bundle.trace.to_csv(paths["trace"])
    write_summary(paths["summary"], bundle.summary)
    write_summary(paths["timing"], bundle.timing)
    write_manifest(perm, bounds, paths["manifest"], cfg.ordering_kind)
    paths["config"].write_text(cfg.to_text(), encoding="utf-8")
    if isinstance(learner, REMINDClassifier):
        paths["checkpoint"] = out / "checkpoint.bin"
        learner.save(paths["checkpoint"])
        if learner.buffer_.eviction_log:
            paths["evictions"] = out / "evictions.csv"
            with open(paths["evictions"], "w", encoding="utf-8") as fh:
                fh.write("label,seq_index,class_size,tied_classes\n")
                for e in learner.buffer_.eviction_log:
                    fh.write(f"{e.label},{e.seq_index},{e.class_size},"
                             f"{' '.join(map(str, e.tied))}\n")
    elif isinstance(learner, (FineTuneClassifier,)):
        paths["checkpoint"] = out / "checkpoint.bin"
        save_checkpoint(None, paths["checkpoint"], head=learner.head_, schedule=learner.schedule_)
    elif isinstance(learner, ExStreamClassifier):
        paths["checkpoint"] = out / "checkpoint.bin"
        save_checkpoint(None, paths["checkpoint"], head=learner.head_)
    return paths


SWEEP_COLUMNS = ("value", "omega_all", "mu_all", "reconstruction_mse", "learner_memory_bytes")


def run_sweep(cfg: ExperimentConfig, axis: str, values, *, write: bool = True
              ) -> list[ReportBundle]:
    """Run one experiment per value of the dotted config key ``axis``."""
    _field_for_key(axis)
    out = []
    for v in values:
        sub = cfg.with_value(axis, str(v))
        if cfg.output_dir:
            sub = dataclasses.replace(sub, output_dir=os.path.join(cfg.output_dir, f"{axis}={v}"))
        out.append(run_experiment(sub, write=write))
    if write and cfg.output_dir:
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(cfg.output_dir) / "sweep.csv", "w", encoding="utf-8") as fh:
            fh.write("axis," + ",".join(SWEEP_COLUMNS) + "\n")
            for v, b in zip(values, out):
                row = [str(v)] + [repr(b.summary.get(c, "")) for c in SWEEP_COLUMNS[1:]]
                fh.write(f"{axis}," + ",".join(row) + "\n")
    return out
