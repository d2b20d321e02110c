"""Write-optimized lineage containers.

Two materialized shapes cover all operators: RidArray for 1-to-1 edges and
RidIndex (an inverted index of RidArrays) for 1-to-N edges.  Arrays start at
10 slots and grow 1.5x on overflow (10, 15, 22, 33, ...); every reallocation
bumps a shared growth counter because resizing dominates capture cost and
several benchmarks assert on the counter directly.

A few operators never materialize anything: identity/offset maps (scans, bag
union), cross-product arithmetic, run-length forward maps for nested loops,
and the "whole relation" dependency of set/bag difference.  They share the
RidMap protocol with the materialized shapes.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence

import numpy as np

RID_DTYPE = np.uint32
MISS = np.uint32(0xFFFFFFFF)  # all-ones sentinel in forward rid arrays; never dereferenced

DEFAULT_CAPACITY = 10
GROWTH_NUM, GROWTH_DEN = 3, 2  # 1.5x, integer arithmetic: 10 -> 15 -> 22 -> 33 -> ...


def next_capacity(cap: int) -> int:
    return max(DEFAULT_CAPACITY, (cap * GROWTH_NUM) // GROWTH_DEN)


class GrowthCounter:
    """One increment per array reallocation; shared across an index's arrays."""

    __slots__ = ("events",)

    def __init__(self) -> None:
        self.events = 0

    def __repr__(self) -> str:
        return f"GrowthCounter({self.events})"


_EMPTY = np.empty(0, dtype=RID_DTYPE)


class RidArray:
    """Append-only rid array with the 10/1.5x growth policy.

    1-to-1 backward maps store one source rid per output; 1-to-1 forward maps
    may hold MISS for inputs that produced no output.
    """

    __slots__ = ("_buf", "_len", "counter")

    def __init__(self, capacity_hint: Optional[int] = None, counter: Optional[GrowthCounter] = None):
        cap = DEFAULT_CAPACITY if capacity_hint is None else int(capacity_hint)
        self._buf = np.empty(cap, dtype=RID_DTYPE)
        self._len = 0
        self.counter = counter if counter is not None else GrowthCounter()

    @property
    def capacity(self) -> int:
        return len(self._buf)

    def __len__(self) -> int:
        return self._len

    def _grow_once(self) -> None:
        cap = next_capacity(len(self._buf))
        new = np.empty(cap, dtype=RID_DTYPE)
        new[: self._len] = self._buf[: self._len]
        self._buf = new
        self.counter.events += 1

    def append(self, rid: int) -> None:
        if self._len + 1 > len(self._buf):
            self._grow_once()
        self._buf[self._len] = rid
        self._len += 1

    def extend(self, rids: np.ndarray) -> None:
        """Bulk append with the same reallocation pattern as element-at-a-time
        appends: each growth step copies the elements present at that point,
        so both the event count and the copy traffic stay faithful."""
        k = len(rids)
        pos = 0
        while pos < k:
            space = len(self._buf) - self._len
            if space == 0:
                self._grow_once()
                continue
            take = min(space, k - pos)
            self._buf[self._len : self._len + take] = rids[pos : pos + take]
            self._len += take
            pos += take

    def set_at(self, pos, rids) -> None:
        """Positional write inside the preallocated region (forward arrays)."""
        self._buf[pos] = rids
        if np.isscalar(pos):
            self._len = max(self._len, int(pos) + 1)

    def fill_length(self, n: int) -> None:
        self._len = n

    def view(self) -> np.ndarray:
        return self._buf[: self._len]

    def to_list(self) -> List[int]:
        return self.view().tolist()

    @property
    def nbytes(self) -> int:
        return self._buf.nbytes

    @staticmethod
    def preallocated(values: np.ndarray, counter: Optional[GrowthCounter] = None) -> "RidArray":
        """Exact-capacity array holding `values`; no growth events."""
        arr = RidArray(capacity_hint=len(values), counter=counter)
        arr._buf[:] = values
        arr._len = len(values)
        return arr

    @staticmethod
    def over(values: np.ndarray, counter: Optional[GrowthCounter] = None) -> "RidArray":
        """Exact-size array adopting `values` without copying (used by bulk
        index construction where the buffer is already materialized and the
        container is immutable afterwards)."""
        arr = RidArray.__new__(RidArray)
        arr._buf = np.ascontiguousarray(values, dtype=RID_DTYPE)
        arr._len = len(values)
        arr.counter = counter if counter is not None else GrowthCounter()
        return arr

    @staticmethod
    def full_miss(n: int, counter: Optional[GrowthCounter] = None) -> "RidArray":
        arr = RidArray(capacity_hint=n, counter=counter)
        arr._buf[:] = MISS
        arr._len = n
        return arr

    # RidMap protocol (backward direction: one source rid per target slot)
    def get(self, i: int) -> np.ndarray:
        v = self._buf[i]
        if v == MISS:
            return _EMPTY
        return self._buf[i : i + 1]

    def gather(self, targets: np.ndarray) -> np.ndarray:
        """Ordered multiset of mapped rids for the given slots (MISS dropped)."""
        vals = self.view()[np.asarray(targets, dtype=np.int64)]
        return vals[vals != MISS]

    def buckets_as_lists(self) -> List[List[int]]:
        return [[] if v == MISS else [int(v)] for v in self.view()]

    def __repr__(self) -> str:
        return f"RidArray(len={self._len}, cap={self.capacity})"


class RidIndex:
    """Inverted index: bucket i holds the rids related to source/target i."""

    __slots__ = ("buckets", "counter")

    def __init__(self, n_buckets: int, per_bucket_hints: Optional[Sequence[int]] = None,
                 counter: Optional[GrowthCounter] = None):
        if per_bucket_hints is not None and len(per_bucket_hints) != n_buckets:
            raise ValueError(f"hints length {len(per_bucket_hints)} != n_buckets {n_buckets}")
        self.counter = counter if counter is not None else GrowthCounter()
        if per_bucket_hints is None:
            self.buckets = [RidArray(counter=self.counter) for _ in range(n_buckets)]
        else:
            self.buckets = [RidArray(capacity_hint=int(h), counter=self.counter) for h in per_bucket_hints]

    def __len__(self) -> int:
        return len(self.buckets)

    def append(self, bucket: int, rid: int) -> None:
        self.buckets[bucket].append(rid)

    def extend(self, bucket: int, rids: np.ndarray) -> None:
        self.buckets[bucket].extend(rids)

    def get(self, i: int) -> np.ndarray:
        return self.buckets[i].view()

    def gather(self, targets: np.ndarray) -> np.ndarray:
        views = [self.buckets[int(t)].view() for t in np.asarray(targets)]
        if not views:
            return _EMPTY
        return np.concatenate(views) if len(views) > 1 else views[0].copy()

    def buckets_as_lists(self) -> List[List[int]]:
        return [b.to_list() for b in self.buckets]

    @property
    def nbytes(self) -> int:
        return sum(b.nbytes for b in self.buckets)

    @staticmethod
    def from_grouped(n_buckets: int, gids: np.ndarray, rids: np.ndarray,
                     exact: bool, counter: Optional[GrowthCounter] = None,
                     hints: Optional[np.ndarray] = None) -> "RidIndex":
        """Build an index whose bucket g receives rids[i] for every gids[i] == g,
        preserving input order within buckets.

        exact=True preallocates each bucket to its final size (known
        cardinalities: zero growth events).  exact=False reproduces the
        append-during-execution path: each bucket starts at the default
        capacity (or the per-bucket hint, when given) and pays the
        reallocation chain for whatever the hint did not cover.
        """
        counter = counter if counter is not None else GrowthCounter()
        order = np.argsort(gids, kind="stable")
        sorted_rids = np.asarray(rids, dtype=RID_DTYPE)[order]
        counts = np.bincount(gids, minlength=n_buckets) if len(gids) else np.zeros(n_buckets, dtype=np.int64)
        offsets = np.concatenate(([0], np.cumsum(counts)))
        idx = RidIndex.__new__(RidIndex)
        idx.counter = counter
        # buckets that never saw an edge stay a shared null entry, like the
        # unset pointers of the real index (never appended to afterwards)
        empty = RidArray.over(_EMPTY, counter=counter)
        buckets = []
        for g in range(n_buckets):
            if counts[g] == 0:
                buckets.append(empty)
                continue
            chunk = sorted_rids[offsets[g] : offsets[g + 1]]
            if exact:
                buckets.append(RidArray.over(chunk, counter=counter))
            else:
                arr = RidArray(capacity_hint=None if hints is None else int(hints[g]), counter=counter)
                arr.extend(chunk)
                buckets.append(arr)
        idx.buckets = buckets
        return idx

    def __repr__(self) -> str:
        return f"RidIndex({len(self.buckets)} buckets, growth={self.counter.events})"


class PartitionedRidIndex:
    """RidIndex whose buckets are split by a discrete partition key, enabling
    data skipping: a parameterized consumer reads only the matching partition."""

    __slots__ = ("buckets", "key_attrs", "key_domain", "counter")

    def __init__(self, buckets: List[Dict[tuple, RidArray]], key_attrs: Sequence[str],
                 key_domain: Sequence[tuple], counter: Optional[GrowthCounter] = None):
        self.buckets = buckets
        self.key_attrs = tuple(key_attrs)
        self.key_domain = [tuple(k) if isinstance(k, (tuple, list)) else (k,) for k in key_domain]
        self.counter = counter if counter is not None else GrowthCounter()

    def __len__(self) -> int:
        return len(self.buckets)

    def get(self, i: int, key: tuple) -> np.ndarray:
        part = self.buckets[i].get(tuple(key))
        return part.view() if part is not None else _EMPTY

    def get_all(self, i: int) -> np.ndarray:
        parts = [a.view() for a in self.buckets[i].values()]
        if not parts:
            return _EMPTY
        return np.concatenate(parts) if len(parts) > 1 else parts[0].copy()

    def flatten(self) -> RidIndex:
        """Unpartitioned equivalent; bucket-wise multiset equality with the
        original index (partition order, not emission order)."""
        idx = RidIndex(0)
        idx.buckets = [RidArray.preallocated(self.get_all(i), counter=idx.counter) for i in range(len(self.buckets))]
        return idx

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for b in self.buckets for a in b.values())


class PartitionError(Exception):
    pass


def partition_index(idx: RidIndex, base, key_attrs, key_domain) -> PartitionedRidIndex:
    """Split every bucket of `idx` by the (composite) key of the base rows it
    holds, preserving relative order within each partition.  A base value
    outside `key_domain` is fatal; continuous attributes must be discretized
    by the caller first.
    """
    if isinstance(key_attrs, str):
        key_attrs = (key_attrs,)
    domain = [tuple(k) if isinstance(k, (tuple, list)) else (k,) for k in key_domain]
    domain_pos = {k: p for p, k in enumerate(domain)}
    cols = [base.column(a) for a in key_attrs]
    buckets: List[Dict[tuple, RidArray]] = []
    counter = GrowthCounter()
    for i in range(len(idx.buckets)):
        rids = idx.get(i)
        parts: Dict[tuple, RidArray] = {}
        if len(rids):
            keys = list(zip(*(c[rids.astype(np.int64)] for c in cols)))
            codes = np.empty(len(rids), dtype=np.int64)
            for j, k in enumerate(keys):
                k = tuple(x.item() if hasattr(x, "item") else x for x in k)
                if k not in domain_pos:
                    raise PartitionError(f"value {k!r} of {key_attrs} outside declared domain")
                codes[j] = domain_pos[k]
            order = np.argsort(codes, kind="stable")
            counts = np.bincount(codes, minlength=len(domain))
            offsets = np.concatenate(([0], np.cumsum(counts)))
            sorted_rids = rids[order]
            for p, k in enumerate(domain):
                chunk = sorted_rids[offsets[p] : offsets[p + 1]]
                if len(chunk):
                    parts[k] = RidArray.preallocated(chunk, counter=counter)
        buckets.append(parts)
    return PartitionedRidIndex(buckets, key_attrs, domain, counter)


class IdentityMap:
    """Scan lineage: rid r maps to rid r. Never materialized."""

    __slots__ = ("n",)

    def __init__(self, n: int):
        self.n = n

    def get(self, i: int) -> np.ndarray:
        return np.asarray([i], dtype=RID_DTYPE)

    def gather(self, targets: np.ndarray) -> np.ndarray:
        return np.asarray(targets, dtype=RID_DTYPE)

    def buckets_as_lists(self) -> List[List[int]]:
        return [[i] for i in range(self.n)]

    nbytes = 0


class ShiftedIdentityMap:
    """Bag-union lineage: a window [offset, offset+count) of one side maps
    1-to-1 onto [0, count) of the other; answered arithmetically."""

    __slots__ = ("offset", "count", "n_slots", "invert")

    def __init__(self, offset: int, count: int, n_slots: int, invert: bool):
        # invert=False: slot o in [offset, offset+count) -> o - offset (backward)
        # invert=True:  slot r in [0, count)             -> r + offset (forward)
        self.offset = offset
        self.count = count
        self.n_slots = n_slots
        self.invert = invert

    def get(self, i: int) -> np.ndarray:
        if self.invert:
            if 0 <= i < self.count:
                return np.asarray([i + self.offset], dtype=RID_DTYPE)
            return _EMPTY
        if self.offset <= i < self.offset + self.count:
            return np.asarray([i - self.offset], dtype=RID_DTYPE)
        return _EMPTY

    def gather(self, targets: np.ndarray) -> np.ndarray:
        t = np.asarray(targets, dtype=np.int64)
        if self.invert:
            t = t[(t >= 0) & (t < self.count)]
            return (t + self.offset).astype(RID_DTYPE)
        t = t[(t >= self.offset) & (t < self.offset + self.count)]
        return (t - self.offset).astype(RID_DTYPE)

    def buckets_as_lists(self) -> List[List[int]]:
        return [self.get(i).tolist() for i in range(self.n_slots)]

    nbytes = 0


class CrossBackwardMap:
    """Cross-product backward lineage, i-major emission: output o maps to
    A-rid o // |B| (outer side) or B-rid o % |B| (inner side)."""

    __slots__ = ("n_a", "n_b", "outer")

    def __init__(self, n_a: int, n_b: int, outer: bool):
        self.n_a, self.n_b, self.outer = n_a, n_b, outer

    def get(self, o: int) -> np.ndarray:
        v = o // self.n_b if self.outer else o % self.n_b
        return np.asarray([v], dtype=RID_DTYPE)

    def gather(self, targets: np.ndarray) -> np.ndarray:
        t = np.asarray(targets, dtype=np.int64)
        return (t // self.n_b if self.outer else t % self.n_b).astype(RID_DTYPE)

    def buckets_as_lists(self) -> List[List[int]]:
        return [self.get(o).tolist() for o in range(self.n_a * self.n_b)]

    nbytes = 0


class CrossForwardMap:
    """Cross-product forward lineage: A-rid a covers outputs [a*|B|, (a+1)*|B|);
    B-rid b covers {b, b+|B|, ..., b+(|A|-1)*|B|}."""

    __slots__ = ("n_a", "n_b", "outer")

    def __init__(self, n_a: int, n_b: int, outer: bool):
        self.n_a, self.n_b, self.outer = n_a, n_b, outer

    def get(self, r: int) -> np.ndarray:
        if self.outer:
            return np.arange(r * self.n_b, (r + 1) * self.n_b, dtype=RID_DTYPE)
        return (r + np.arange(self.n_a, dtype=np.int64) * self.n_b).astype(RID_DTYPE)

    def gather(self, targets: np.ndarray) -> np.ndarray:
        parts = [self.get(int(t)) for t in np.asarray(targets)]
        if not parts:
            return _EMPTY
        return np.concatenate(parts) if len(parts) > 1 else parts[0]

    def buckets_as_lists(self) -> List[List[int]]:
        n = self.n_a if self.outer else self.n_b
        return [self.get(r).tolist() for r in range(n)]

    nbytes = 0


class RunLengthForwardMap:
    """Nested-loop forward lineage for the outer relation: outputs of row i are
    contiguous, so bucket i is stored as (first output rid, run length)."""

    __slots__ = ("starts", "lengths")

    def __init__(self, starts: np.ndarray, lengths: np.ndarray):
        self.starts = np.asarray(starts, dtype=np.int64)
        self.lengths = np.asarray(lengths, dtype=np.int64)

    def get(self, i: int) -> np.ndarray:
        s, l = self.starts[i], self.lengths[i]
        return np.arange(s, s + l, dtype=RID_DTYPE)

    def gather(self, targets: np.ndarray) -> np.ndarray:
        parts = [self.get(int(t)) for t in np.asarray(targets)]
        if not parts:
            return _EMPTY
        return np.concatenate(parts) if len(parts) > 1 else parts[0]

    def buckets_as_lists(self) -> List[List[int]]:
        return [self.get(i).tolist() for i in range(len(self.starts))]

    @property
    def nbytes(self) -> int:
        return self.starts.nbytes + self.lengths.nbytes


class WholeRelationMap:
    """Set/bag difference dependency on the inner relation: every output
    depends on all of it, answered by scanning on demand."""

    __slots__ = ("n_source", "n_slots")

    def __init__(self, n_source: int, n_slots: int):
        self.n_source = n_source  # size of the relation every slot depends on
        self.n_slots = n_slots

    def get(self, i: int) -> np.ndarray:
        return np.arange(self.n_source, dtype=RID_DTYPE)

    def gather(self, targets: np.ndarray) -> np.ndarray:
        t = np.asarray(targets)
        if len(t) == 0:
            return _EMPTY
        return np.tile(np.arange(self.n_source, dtype=RID_DTYPE), len(t))

    def buckets_as_lists(self) -> List[List[int]]:
        full = list(range(self.n_source))
        return [list(full) for _ in range(self.n_slots)]

    nbytes = 0


class LineagePair:
    """backward: output rid -> base rid(s); forward: base rid -> output rid(s).
    Either side may be pruned (None)."""

    __slots__ = ("backward", "forward", "partitioned_backward", "pushdown")

    def __init__(self, backward=None, forward=None):
        self.backward = backward
        self.forward = forward
        self.partitioned_backward: Optional[PartitionedRidIndex] = None
        self.pushdown = None  # per-(group, extra key) aggregate state, see workload module


class LineageBundle:
    """Per-base-relation lineage of one query result."""

    def __init__(self) -> None:
        self.pairs: Dict[str, LineagePair] = {}
        self._finalizer = None  # deferred capture hook; idempotent

    def pair(self, base: str) -> LineagePair:
        if base not in self.pairs:
            self.pairs[base] = LineagePair()
        return self.pairs[base]

    def relations(self) -> List[str]:
        return list(self.pairs.keys())

    @property
    def pending(self) -> bool:
        return self._finalizer is not None

    def set_finalizer(self, fn) -> None:
        self._finalizer = fn

    def finalize(self) -> None:
        """Run any deferred capture; second call is a no-op."""
        if self._finalizer is not None:
            fn, self._finalizer = self._finalizer, None
            fn()

    @property
    def nbytes(self) -> int:
        total = 0
        for p in self.pairs.values():
            for side in (p.backward, p.forward):
                if side is not None:
                    total += side.nbytes
            if p.partitioned_backward is not None:
                total += p.partitioned_backward.nbytes
        return total

    def dump(self, base: str) -> dict:
        """Debug/oracle JSON shape: {"backward": [[rids]...], "forward": [[rids]...]}."""
        self.finalize()
        p = self.pairs[base]
        return {
            "backward": p.backward.buckets_as_lists() if p.backward is not None else None,
            "forward": p.forward.buckets_as_lists() if p.forward is not None else None,
        }


def rid_array_new(capacity_hint: Optional[int] = None) -> RidArray:
    return RidArray(capacity_hint=capacity_hint)


def rid_index_new(n_buckets: int, per_bucket_hints: Optional[Sequence[int]] = None) -> RidIndex:
    return RidIndex(n_buckets, per_bucket_hints)
