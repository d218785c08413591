import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from remind.buffer import ReplayBuffer
from remind.quantizer import Codebook, QuantizedSample


def q(label, seq=0, nbytes=4):
    return QuantizedSample(np.zeros((1, 1, nbytes), np.uint8), label, 0, seq)


def labels_of(buf):
    return sorted(e.label for e in buf.entries())


def test_unique_largest_class_is_evicted(rng):
    buf = ReplayBuffer(8)
    buf.insert(q(0, 0), rng)
    buf.insert(q(0, 1), rng)
    out = buf.insert(q(1, 2), rng)
    assert [e.label for e in out] == [0]
    assert labels_of(buf) == [0, 1]


def test_counts_taken_before_insert(rng):
    buf = ReplayBuffer(12)
    for i, lab in enumerate([0, 0, 1]):
        buf.insert(q(lab, i), rng)
    out = buf.insert(q(1, 3), rng)
    assert [e.label for e in out] == [0]
    assert labels_of(buf) == [0, 1, 1]


def test_within_class_uniform_monte_carlo():
    rng = np.random.default_rng(0)
    hits = {0: 0, 1: 0}
    for _ in range(10_000):
        buf = ReplayBuffer(8)
        buf.insert(q(0, 0), rng)
        buf.insert(q(0, 1), rng)
        hits[buf.insert(q(1, 2), rng)[0].seq_index] += 1
    assert abs(hits[0] - 5000) <= 300 and abs(hits[1] - 5000) <= 300


def test_new_sample_eligible_when_its_class_is_picked(rng):
    seen = set()
    for t in range(200):
        buf = ReplayBuffer(8)
        buf.insert(q(0, 0), rng)
        buf.insert(q(1, 1), rng)
        out = buf.insert(q(1, 2), rng)
        seen.add((out[0].label, out[0].seq_index))
    # classes 0 and 1 tie at one member before the insert
    assert (1, 2) in seen and (0, 0) in seen and (1, 1) in seen


def test_sampling(rng):
    buf = ReplayBuffer(100)
    for i in range(5):
        buf.insert(q(i % 2, i), rng)
    assert sorted(e.seq_index for e in buf.sample_uniform(5, rng)) == list(range(5))
    assert len(buf.sample_uniform(9, rng)) == 9
    one = ReplayBuffer(10)
    one.insert(q(3, 7), rng)
    assert one.sample_uniform(1, rng)[0].seq_index == 7
    with pytest.raises(ValueError):
        ReplayBuffer(10).sample_uniform(1, rng)


def test_bytes_accounting(rng):
    buf = ReplayBuffer(1000)
    assert buf.bytes_used == 0
    for i in range(7):
        buf.insert(q(0, i, nbytes=9), rng)
    assert buf.bytes_used == 63
    assert buf.capacity_report()["entries"] == 7
    with pytest.raises(ValueError):
        buf.insert(q(0, 99, nbytes=2000), rng)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), cap=st.integers(1, 12),
       stream=st.lists(st.integers(0, 4), min_size=1, max_size=120))
def test_invariants(seed, cap, stream):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(cap * 4)
    for i, lab in enumerate(stream):
        before = buf.per_class_count
        before_max = max(before.values()) if before else 0
        out = buf.insert(q(lab, i), rng)
        assert buf.bytes_used <= buf.budget_bytes
        assert sum(buf.per_class_count.values()) == len(buf)
        for e in out:
            assert before.get(e.label, 0) == before_max
    assert len(buf) == min(cap, len(stream))


def test_snapshot_round_trip(rng):
    cb = Codebook(np.zeros((4, 3, 2), np.float32))
    buf = ReplayBuffer(40)
    for i in range(15):
        buf.insert(QuantizedSample(rng.integers(0, 3, (1, 1, 4)).astype(np.uint8), i % 3, i, i), rng)
    raw = buf.to_bytes(cb)
    back = ReplayBuffer.from_bytes(raw, cb)
    assert back.to_bytes(cb) == raw
    assert back.per_class_count == buf.per_class_count
    # identical future behaviour under the same RNG state
    a = buf.insert(q(0, 100), np.random.default_rng(1))
    b = back.insert(q(0, 100), np.random.default_rng(1))
    assert [e.seq_index for e in a] == [e.seq_index for e in b]
    with pytest.raises(ValueError):
        ReplayBuffer.from_bytes(raw, Codebook(np.ones((4, 3, 2), np.float32)))
