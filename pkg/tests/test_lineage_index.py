import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoke.lineage import (
    DEFAULT_CAPACITY,
    MISS,
    PartitionError,
    RidArray,
    next_capacity,
    partition_index,
    rid_array_new,
    rid_index_new,
)
from smoke.relstore import Relation, Schema


def simulate_growth(start_cap: int, appends: int):
    """Independent model of the growth policy: one event per capacity bump."""
    cap, size, events, trace = start_cap, 0, 0, [start_cap]
    for _ in range(appends):
        size += 1
        while size > cap:
            cap = next_capacity(cap)
            events += 1
            trace.append(cap)
    return events, trace


def test_default_capacity_and_trace():
    arr = rid_array_new()
    assert arr.capacity == DEFAULT_CAPACITY == 10
    for i in range(16):
        arr.append(i)
    # 10 -> 15 -> 22: two growth events for 16 appends
    assert arr.counter.events == 2
    assert arr.capacity == 22


def test_growth_sequence_prefix():
    caps = [10]
    for _ in range(5):
        caps.append(next_capacity(caps[-1]))
    assert caps[:4] == [10, 15, 22, 33]


def test_zero_hint_grows_to_default():
    arr = rid_array_new(0)
    assert arr.capacity == 0
    arr.append(1)
    assert arr.capacity == 10
    assert arr.counter.events == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=3000), st.sampled_from([0, 3, 10, 64]))
def test_growth_matches_simulation(appends, hint):
    arr = RidArray(capacity_hint=hint)
    for i in range(appends):
        arr.append(i % 1000)
    events, trace = simulate_growth(hint, appends)
    assert arr.counter.events == events
    assert arr.capacity == trace[-1]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=500), min_size=0, max_size=60))
def test_bulk_extend_equals_scalar_appends(chunks):
    a = RidArray()
    b = RidArray()
    pos = 0
    for c in chunks:
        vals = np.arange(pos, pos + c, dtype=np.uint32)
        pos += c
        a.extend(vals)
        for v in vals:
            b.append(v)
    assert a.to_list() == b.to_list()
    assert a.counter.events == b.counter.events
    assert a.capacity == b.capacity


def test_rid_index_hints():
    idx = rid_index_new(3, [2, 1, 0])
    idx.append(0, 5)
    idx.append(0, 6)
    idx.append(1, 7)
    assert idx.counter.events == 0
    assert idx.buckets_as_lists() == [[5, 6], [7], []]
    empty = rid_index_new(0)
    assert len(empty) == 0


def test_rid_index_exact_prealloc_no_growth():
    rng = np.random.default_rng(0)
    gids = rng.integers(0, 50, 5000)
    counts = np.bincount(gids, minlength=50)
    idx = rid_index_new(50, counts)
    for i, g in enumerate(gids):
        idx.append(int(g), i)
    assert idx.counter.events == 0


def _base(values_by_col):
    cols = {}
    schema = []
    for name, vals in values_by_col.items():
        arr = np.asarray(vals, dtype=object if isinstance(vals[0], str) else np.int64)
        cols[name] = arr
        schema.append((name, "text" if isinstance(vals[0], str) else "int64"))
    return Relation(Schema(tuple(schema)), cols, "base")


def test_partition_basic():
    base = _base({"k": ["a", "b", "a"]})
    idx = rid_index_new(1)
    for r in (0, 1, 2):
        idx.append(0, r)
    p = partition_index(idx, base, "k", ["a", "b"])
    assert p.get(0, ("a",)).tolist() == [0, 2]
    assert p.get(0, ("b",)).tolist() == [1]
    assert sorted(p.get_all(0).tolist()) == [0, 1, 2]


def test_partition_empty_index():
    base = _base({"k": ["a"]})
    p = partition_index(rid_index_new(0), base, "k", ["a"])
    assert len(p) == 0
    assert p.flatten().buckets_as_lists() == []


def test_partition_value_outside_domain_fatal():
    base = _base({"k": ["a", "z"]})
    idx = rid_index_new(1)
    idx.append(0, 1)
    with pytest.raises(PartitionError):
        partition_index(idx, base, "k", ["a", "b"])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=4), min_size=0, max_size=40),
       st.integers(min_value=1, max_value=4))
def test_partition_flatten_is_multiset_identity(keys, buckets):
    if not keys:
        keys = [0]
    base = _base({"k": keys})
    idx = rid_index_new(buckets)
    rng = np.random.default_rng(7)
    for r in range(len(keys)):
        idx.append(int(rng.integers(0, buckets)), r)
    p = partition_index(idx, base, "k", [0, 1, 2, 3, 4])
    flat = p.flatten()
    for b in range(buckets):
        assert sorted(flat.get(b).tolist()) == sorted(idx.get(b).tolist())


def test_miss_sentinel_is_all_ones():
    assert int(MISS) == 0xFFFFFFFF
    arr = RidArray.full_miss(4)
    assert arr.buckets_as_lists() == [[], [], [], []]
    assert arr.gather(np.array([0, 1, 2, 3])).tolist() == []


def test_dump_shape():
    from smoke.lineage import LineageBundle

    b = LineageBundle()
    pair = b.pair("r")
    bw = rid_index_new(2)
    bw.append(0, 1)
    bw.append(1, 0)
    pair.backward = bw
    fw = RidArray.preallocated(np.array([1, 0], dtype=np.uint32))
    pair.forward = fw
    assert b.dump("r") == {"backward": [[1], [0]], "forward": [[1], [0]]}
