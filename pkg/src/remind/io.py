"""Binary feature-file format.

Layout (little-endian)::

    header  "RMND" | u32 version=1 | u32 n | u32 num_classes | u32 m | u32 d
    record  u32 label | u32 instance_id | u32 seq_index | f32[m*m*d]

Tensor values are row-major over the spatial grid with channels innermost.
A one-line text sidecar at ``<path>.meta`` carries the provenance string.
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .types import FeatureDataset

MAGIC = b"RMND"
VERSION = 1
HEADER = struct.Struct("<4sIIIII")
HEADER_BYTES = HEADER.size  # 24
RECORD_PREFIX_BYTES = 12


class FeatureFormatError(ValueError):
    """Raised when a feature file violates the format; ``offset`` locates the first bad byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def record_dtype(m: int, d: int) -> np.dtype:
    return np.dtype([("label", "<u4"), ("instance_id", "<u4"), ("seq_index", "<u4"),
                     ("values", "<f4", (m * m * d,))])


def record_bytes(m: int, d: int) -> int:
    return RECORD_PREFIX_BYTES + 4 * m * m * d


def _read_provenance(path) -> str:
    meta = os.fspath(path) + ".meta"
    if os.path.exists(meta):
        with open(meta, encoding="utf-8") as fh:
            return fh.readline().rstrip("\n")
    return ""


def ingest_features(path) -> FeatureDataset:
    """Read a feature file into a :class:`FeatureDataset`.

    Sample order equals record order. Any violation (bad header, truncated or
    oversized payload, out-of-range label, duplicate seq_index, non-finite
    value) raises :class:`FeatureFormatError` carrying the byte offset of the
    first offending byte; nothing is silently truncated.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_BYTES:
        raise FeatureFormatError(f"file shorter than the {HEADER_BYTES}-byte header", len(raw))
    magic, version, n, num_classes, m, d = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FeatureFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FeatureFormatError(f"unsupported version {version}", 4)
    if num_classes < 1:
        raise FeatureFormatError("num_classes must be positive", 12)
    if m < 1:
        raise FeatureFormatError("m must be positive", 16)
    if d < 1:
        raise FeatureFormatError("d must be positive", 20)

    rec = record_bytes(m, d)
    expected = HEADER_BYTES + n * rec
    if len(raw) < expected:
        raise FeatureFormatError(
            f"payload truncated: header declares {n} records of {rec} bytes", len(raw))
    if len(raw) > expected:
        raise FeatureFormatError("trailing bytes after the declared records", expected)

    recs = np.frombuffer(raw, dtype=record_dtype(m, d), count=n, offset=HEADER_BYTES)
    values = recs["values"]
    bad = ~np.isfinite(values)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise FeatureFormatError(
            f"non-finite value in record {i}",
            HEADER_BYTES + int(i) * rec + RECORD_PREFIX_BYTES + 4 * int(j))
    labels = recs["label"].astype(np.int64)
    over = np.flatnonzero(labels >= num_classes)
    if over.size:
        raise FeatureFormatError(
            f"label {labels[over[0]]} >= num_classes {num_classes}",
            HEADER_BYTES + int(over[0]) * rec)
    seq = recs["seq_index"].astype(np.int64)
    _, first = np.unique(seq, return_index=True)
    if first.shape[0] != n:
        dup = np.setdiff1d(np.arange(n), first)[0]
        raise FeatureFormatError("duplicate seq_index", HEADER_BYTES + int(dup) * rec + 8)

    tensors = values.reshape(n, m, m, d).copy()
    return FeatureDataset(tensors, labels, num_classes,
                          recs["instance_id"].astype(np.int64), seq,
                          _read_provenance(path))


def export_features(dataset: FeatureDataset, path) -> None:
    """Write ``dataset`` in the binary format plus its ``.meta`` sidecar."""
    n, m, d = len(dataset), dataset.m, dataset.d
    recs = np.zeros(n, dtype=record_dtype(m, d))
    recs["label"] = dataset.labels
    recs["instance_id"] = dataset.instance_ids
    recs["seq_index"] = dataset.seq_index
    recs["values"] = dataset.tensors.reshape(n, m * m * d)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, n, dataset.num_classes, m, d))
        fh.write(recs.tobytes())
    with open(os.fspath(path) + ".meta", "w", encoding="utf-8") as fh:
        fh.write(dataset.provenance.replace("\n", " ") + "\n")
