"""Byte-budgeted replay buffer of quantized samples."""
from __future__ import annotations

import hashlib
import struct
from typing import NamedTuple

import numpy as np

from .quantizer import Codebook, QuantizedSample, codebook_to_bytes


class EvictionEvent(NamedTuple):
    label: int
    seq_index: int
    class_size: int       # members of the evicted class at draw time
    tied: tuple           # classes sharing the maximal count


class ReplayBuffer:
    """Stores :class:`QuantizedSample` objects under a byte budget.

    When an insert pushes ``bytes_used`` over ``budget_bytes`` the buffer
    picks a class with the most stored examples (counted before the new
    sample is added; ties broken uniformly at random) and removes a uniformly
    random member of that class. The incoming sample is itself a candidate
    when its class is the one picked.
    """

    def __init__(self, budget_bytes: int, record_evictions: bool = True):
        if int(budget_bytes) <= 0:
            raise ValueError("budget_bytes must be positive")
        self.budget_bytes = int(budget_bytes)
        self.record_evictions = record_evictions
        self.eviction_log: list[EvictionEvent] = []
        self.bytes_used = 0
        self.peak_bytes = 0
        self._items: dict[int, QuantizedSample] = {}
        self._keys: list[int] = []
        self._key_pos: dict[int, int] = {}
        self._class_keys: dict[int, list[int]] = {}
        self._class_pos: dict[int, int] = {}
        self._next_key = 0

    def __len__(self) -> int:
        return len(self._keys)

    @property
    def per_class_count(self) -> dict[int, int]:
        return {c: len(k) for c, k in sorted(self._class_keys.items()) if k}

    def entries(self) -> list[QuantizedSample]:
        return [self._items[k] for k in self._keys]

    def class_members(self, label: int) -> list[QuantizedSample]:
        return [self._items[k] for k in self._class_keys.get(label, [])]

    # -- internal bookkeeping --------------------------------------------

    def _add(self, q: QuantizedSample) -> int:
        key = self._next_key
        self._next_key += 1
        self._items[key] = q
        self._key_pos[key] = len(self._keys)
        self._keys.append(key)
        members = self._class_keys.setdefault(q.label, [])
        self._class_pos[key] = len(members)
        members.append(key)
        self.bytes_used += q.nbytes
        return key

    def _remove(self, key: int) -> QuantizedSample:
        q = self._items.pop(key)
        for seq, pos in ((self._keys, self._key_pos),
                         (self._class_keys[q.label], self._class_pos)):
            i = pos.pop(key)
            last = seq.pop()
            if last != key:
                seq[i] = last
                pos[last] = i
        self.bytes_used -= q.nbytes
        return q

    # -- public operations -----------------------------------------------

    def insert(self, q: QuantizedSample, rng: np.random.Generator) -> list[QuantizedSample]:
        """Store ``q``, evicting until the budget holds; returns evicted samples."""
        if q.nbytes > self.budget_bytes:
            raise ValueError(f"sample of {q.nbytes} bytes exceeds the {self.budget_bytes}-byte budget")
        self._add(q)
        self.peak_bytes = max(self.peak_bytes, min(self.bytes_used, self.budget_bytes))
        evicted = []
        first = True
        while self.bytes_used > self.budget_bytes:
            counts = {c: len(k) for c, k in self._class_keys.items() if k}
            if first:
                counts[q.label] -= 1
                first = False
            top = max(counts.values())
            tied = sorted(c for c, n in counts.items() if n == top)
            victim_class = tied[rng.integers(len(tied))] if len(tied) > 1 else tied[0]
            members = self._class_keys[victim_class]
            out = self._remove(members[rng.integers(len(members))])
            if self.record_evictions:
                self.eviction_log.append(
                    EvictionEvent(out.label, out.seq_index, len(members) + 1, tuple(tied)))
            evicted.append(out)
        return evicted

    def sample_uniform(self, r: int, rng: np.random.Generator) -> list[QuantizedSample]:
        """Draw ``r`` entries uniformly; without replacement when ``r <= len``."""
        n = len(self._keys)
        if n == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        if r < 0:
            raise ValueError("r must be non-negative")
        idx = rng.choice(n, size=r, replace=r > n)
        return [self._items[self._keys[i]] for i in idx]

    def capacity_report(self) -> dict:
        return {
            "bytes_used": self.bytes_used,
            "budget_bytes": self.budget_bytes,
            "entries": len(self),
            "per_class_count": self.per_class_count,
        }

    # -- snapshot ----------------------------------------------------------
    # "RMBF" | u32 version | 32-byte sha256 of the codebook blob | u64 budget |
    # u32 count | u32 m | u32 s | u32 code_width, then per entry
    # u32 label | u32 instance_id | u32 seq_index | u32 class_position | codes

    _HEAD = struct.Struct("<4sI32sQIIII")

    def to_bytes(self, codebook: Codebook) -> bytes:
        digest = hashlib.sha256(codebook_to_bytes(codebook)).digest()
        entries = self.entries()
        m = entries[0].codes.shape[0] if entries else 0
        width = np.dtype(codebook.code_dtype).itemsize
        parts = [self._HEAD.pack(b"RMBF", 1, digest, self.budget_bytes, len(entries),
                                 m, codebook.s, width)]
        for key in self._keys:
            q = self._items[key]
            parts.append(struct.pack("<IIII", q.label, q.instance_id, q.seq_index,
                                     self._class_pos[key]))
            parts.append(np.ascontiguousarray(q.codes, dtype=f"<u{width}").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw: bytes, codebook: Codebook | None = None) -> "ReplayBuffer":
        magic, version, digest, budget, count, m, s, width = cls._HEAD.unpack_from(raw, 0)
        if magic != b"RMBF" or version != 1:
            raise ValueError("not a version-1 replay buffer snapshot")
        if codebook is not None and hashlib.sha256(codebook_to_bytes(codebook)).digest() != digest:
            raise ValueError("snapshot was written against a different codebook")
        buf = cls(budget)
        off = cls._HEAD.size
        ncode = m * m * s
        placed: dict[int, list[tuple[int, int]]] = {}
        for _ in range(count):
            label, inst, seq, cpos = struct.unpack_from("<IIII", raw, off)
            off += 16
            codes = np.frombuffer(raw, dtype=f"<u{width}", count=ncode, offset=off)
            off += ncode * width
            key = buf._add(QuantizedSample(codes.reshape(m, m, s).astype(f"u{width}"),
                                           label, inst, seq))
            placed.setdefault(label, []).append((cpos, key))
        if off != len(raw):
            raise ValueError("trailing bytes in replay buffer snapshot")
        for label, pairs in placed.items():
            ordered = [k for _, k in sorted(pairs)]
            buf._class_keys[label] = ordered
            for i, k in enumerate(ordered):
                buf._class_pos[k] = i
        buf.peak_bytes = buf.bytes_used
        return buf

    @staticmethod
    def codebook_digest(codebook: Codebook) -> str:
        return hashlib.sha256(codebook_to_bytes(codebook)).hexdigest()
