"""Instrumented physical algebra.

Every operator computes its relational output and, in capture modes,
populates lineage containers:

* Inject pays the full capture cost during execution (per-edge appends).
* Defer leaves a pending bundle plus a finalizer that reuses the retained
  hash-table state to build exactly-sized indexes after execution; querying
  a pending bundle finalizes it implicitly.  Operators with no deferred
  variant (selection, nested loops, cross product, bag union) fall back to
  the inject path under Defer.
* Callback produces bit-identical indexes to Inject but routes every edge
  through a dynamic function boundary (the external-subsystem baseline).

The relational output is identical across all modes.  Bundles always point
at base relations: each operator composes its local lineage with its
inputs' bundles, so intermediate indexes never leak out.
"""

from __future__ import annotations

import enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .expr import AggSpec, Expr
from .lineage import (
    MISS,
    RID_DTYPE,
    CrossBackwardMap,
    CrossForwardMap,
    GrowthCounter,
    IdentityMap,
    LineageBundle,
    RidArray,
    RidIndex,
    RunLengthForwardMap,
    ShiftedIdentityMap,
    WholeRelationMap,
)
from .relstore import Relation, Schema


class CaptureMode(enum.Enum):
    NONE = "none"
    INJECT = "inject"
    DEFER = "defer"
    CALLBACK = "callback"


class OperatorError(Exception):
    pass


class PkFkViolation(OperatorError):
    """Build-side key declared unique turned out not to be."""


class OperatorOutput:
    """Relation plus per-base-relation lineage (bundle is None when capture
    is disabled). `out_count` survives even when output materialization is
    suppressed for benchmarking."""

    __slots__ = ("relation", "bundle", "out_count")

    def __init__(self, relation: Optional[Relation], bundle: Optional[LineageBundle], out_count: Optional[int] = None):
        self.relation = relation
        self.bundle = bundle
        self.out_count = out_count if out_count is not None else (len(relation) if relation is not None else 0)


# ---------------------------------------------------------------------------
# helpers

def _map_slots(m) -> int:
    if isinstance(m, RidArray):
        return len(m)
    if isinstance(m, RidIndex):
        return len(m.buckets)
    if isinstance(m, IdentityMap):
        return m.n
    if isinstance(m, ShiftedIdentityMap):
        return m.n_slots
    if isinstance(m, CrossBackwardMap):
        return m.n_a * m.n_b
    if isinstance(m, CrossForwardMap):
        return m.n_a if m.outer else m.n_b
    if isinstance(m, RunLengthForwardMap):
        return len(m.starts)
    if isinstance(m, WholeRelationMap):
        return m.n_slots
    raise TypeError(type(m))


def _one_to_one(m) -> bool:
    return isinstance(m, (RidArray, IdentityMap, ShiftedIdentityMap, CrossBackwardMap))


def compose_backward(local, inp):
    """(out -> input rows) composed with (input rows -> base)."""
    if isinstance(inp, IdentityMap):
        return local
    if isinstance(local, IdentityMap):
        return inp
    n_out = _map_slots(local)
    if _one_to_one(local) and _one_to_one(inp):
        mids = local.gather(np.arange(n_out))
        if len(mids) == n_out:  # no gaps: stays a 1-to-1 array
            composed = inp.gather(mids)
            if len(composed) == n_out:
                return RidArray.preallocated(composed)
    idx = RidIndex(0)
    idx.buckets = [RidArray.preallocated(inp.gather(local.get(o)), counter=idx.counter) for o in range(n_out)]
    return idx


def compose_forward(inp, local):
    """(base -> input rows) composed with (input rows -> out)."""
    if isinstance(inp, IdentityMap):
        return local
    if isinstance(local, IdentityMap):
        return inp
    n_base = _map_slots(inp)
    if isinstance(inp, RidArray) and isinstance(local, RidArray):
        out = np.full(n_base, MISS, dtype=RID_DTYPE)
        iv = inp.view()
        ok = iv != MISS
        out[ok] = local.view()[iv[ok].astype(np.int64)]
        return RidArray.preallocated(out)
    if _one_to_one(inp) and _one_to_one(local):
        vals = [local.gather(inp.get(r)) for r in range(n_base)]
        out = np.full(n_base, MISS, dtype=RID_DTYPE)
        for r, v in enumerate(vals):
            if len(v):
                out[r] = v[0]
        return RidArray.preallocated(out)
    idx = RidIndex(0)
    idx.buckets = [RidArray.preallocated(local.gather(inp.get(r)), counter=idx.counter) for r in range(n_base)]
    return idx


def _compose_bundle(local_by_base_backward, local_by_base_forward, inputs: Sequence[OperatorOutput]) -> LineageBundle:
    """Wire per-input local lineage through each input's bundle.

    local_by_base_*: list aligned with `inputs` of (backward map over this
    operator's output -> that input's rows, forward map input rows -> output).
    """
    out = LineageBundle()
    for op_in, lbw, lfw in zip(inputs, local_by_base_backward, local_by_base_forward):
        if op_in.bundle is None:
            continue
        op_in.bundle.finalize()
        for base, pair in op_in.bundle.pairs.items():
            new = out.pair(base)
            if pair.backward is not None and lbw is not None:
                new.backward = compose_backward(lbw, pair.backward)
            if pair.forward is not None and lfw is not None:
                new.forward = compose_forward(pair.forward, lfw)
    return out


def factorize(arrays: Sequence[np.ndarray]) -> Tuple[np.ndarray, int, np.ndarray]:
    """First-encounter group codes over one or more aligned key columns.

    Returns (gids, n_groups, rep_rows): gids[i] is the group of row i, groups
    numbered in order of first appearance (insertion-ordered hash table
    semantics), rep_rows[g] the first row of group g.
    """
    n = len(arrays[0])
    if n == 0:
        return np.empty(0, dtype=np.int64), 0, np.empty(0, dtype=np.int64)
    combined = None
    for a in arrays:
        _, codes = np.unique(a, return_inverse=True)
        codes = codes.astype(np.int64)
        card = int(codes.max()) + 1 if len(codes) else 1
        combined = codes if combined is None else combined * card + codes
    uniq, first_idx, inv = np.unique(combined, return_index=True, return_inverse=True)
    order = np.argsort(first_idx, kind="stable")
    remap = np.empty(len(uniq), dtype=np.int64)
    remap[order] = np.arange(len(uniq))
    return remap[inv.astype(np.int64)], len(uniq), first_idx[order]


def common_codes(a_arrays: Sequence[np.ndarray], b_arrays: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray, int]:
    """Shared integer coding of key tuples across two relations."""
    n_a = len(a_arrays[0])
    combined = None
    for a, b in zip(a_arrays, b_arrays):
        both = np.concatenate([np.asarray(a), np.asarray(b)])
        _, codes = np.unique(both, return_inverse=True)
        codes = codes.astype(np.int64)
        card = int(codes.max()) + 1 if len(codes) else 1
        combined = codes if combined is None else combined * card + codes
    uniq, inv = np.unique(combined, return_inverse=True)
    inv = inv.astype(np.int64)
    return inv[:n_a], inv[n_a:], len(uniq)


def bundle_growth_events(bundle: Optional[LineageBundle]) -> int:
    if bundle is None:
        return 0
    bundle.finalize()
    seen = set()
    total = 0
    for p in bundle.pairs.values():
        for side in (p.backward, p.forward):
            c = getattr(side, "counter", None)
            if c is not None and id(c) not in seen:
                seen.add(id(c))
                total += c.events
        if p.partitioned_backward is not None and id(p.partitioned_backward.counter) not in seen:
            seen.add(id(p.partitioned_backward.counter))
            total += p.partitioned_backward.counter.events
    return total


# ---------------------------------------------------------------------------
# scan / project

def scan(rel: Relation, name: Optional[str] = None, mode: CaptureMode = CaptureMode.INJECT) -> OperatorOutput:
    """Identity lineage, represented implicitly (no materialization)."""
    base = name or rel.name
    if mode is CaptureMode.NONE:
        return OperatorOutput(rel, None)
    if not base:
        raise OperatorError("scan of an unnamed relation cannot anchor lineage")
    bundle = LineageBundle()
    pair = bundle.pair(base)
    ident = IdentityMap(len(rel))
    pair.backward = ident
    pair.forward = ident
    return OperatorOutput(rel, bundle)


def project(in_: OperatorOutput, exprs: Sequence[Tuple[Expr, str]], schema_types: Optional[Sequence[str]] = None) -> OperatorOutput:
    """Bag-semantics projection: cardinality and order unchanged, lineage
    passes through with no capture cost (the bundle is shared, not copied)."""
    rel = in_.relation
    n = len(rel)
    out_cols = {}
    types = []
    for k, (e, alias) in enumerate(exprs):
        t = schema_types[k] if schema_types else e.bind(rel.schema)
        vals = e.eval(rel.columns, n)
        types.append((alias, t))
        out_cols[alias] = np.asarray(vals)
    out_rel = Relation(Schema(tuple(types)), out_cols, name=rel.name)
    return OperatorOutput(out_rel, in_.bundle)


# ---------------------------------------------------------------------------
# selection

def select(in_: OperatorOutput, pred: Expr, est_selectivity: Optional[float] = None,
           mode: CaptureMode = CaptureMode.INJECT) -> OperatorOutput:
    rel = in_.relation
    n = len(rel)
    mask = np.asarray(pred.eval(rel.columns, n), dtype=bool)
    passing = np.flatnonzero(mask).astype(RID_DTYPE)
    out_rel = rel.take(passing.astype(np.int64))
    if mode is CaptureMode.NONE or in_.bundle is None:
        return OperatorOutput(out_rel, None)

    counter = GrowthCounter()
    # forward rid array is preallocated to the input cardinality
    fw = RidArray.full_miss(n, counter=counter)
    # backward grows unless a selectivity estimate preallocates it
    hint = None if est_selectivity is None else int(np.ceil(est_selectivity * n))
    bw = RidArray(capacity_hint=hint, counter=counter)

    if mode is CaptureMode.CALLBACK:
        emit = _SelectSink(bw, fw).emit
        ctr_o = 0
        for ctr_i in range(n):
            if mask[ctr_i]:
                emit(ctr_i, ctr_o)
                ctr_o += 1
    else:
        if len(passing):
            fw.set_at(passing.astype(np.int64), np.arange(len(passing), dtype=RID_DTYPE))
        bw.extend(passing)

    bundle = _compose_bundle([bw], [fw], [in_])
    return OperatorOutput(out_rel, bundle)


class _SelectSink:
    __slots__ = ("bw", "fw")

    def __init__(self, bw, fw):
        self.bw = bw
        self.fw = fw

    def emit(self, in_rid: int, out_rid: int) -> None:
        self.fw.set_at(in_rid, out_rid)
        self.bw.append(in_rid)


def select_inject(in_, pred, est_selectivity=None):
    return select(in_, pred, est_selectivity, CaptureMode.INJECT)


# ---------------------------------------------------------------------------
# group-by aggregation

def _eval_keys(rel: Relation, keys: Sequence[Tuple[Expr, str]]) -> List[np.ndarray]:
    n = len(rel)
    return [np.asarray(e.eval(rel.columns, n)) for e, _ in keys]


def compute_aggregates(gids: np.ndarray, n_groups: int, aggs: Sequence[AggSpec],
                       cols: Dict[str, np.ndarray], n: int) -> Dict[str, np.ndarray]:
    """Vectorized aggregate finalization for insertion-ordered group ids."""
    out: Dict[str, np.ndarray] = {}
    counts = np.bincount(gids, minlength=n_groups) if n else np.zeros(n_groups, dtype=np.int64)
    for spec in aggs:
        if spec.func == "count" and spec.expr is None:
            out[spec.alias] = counts.astype(np.int64)
            continue
        vals = np.asarray(spec.expr.eval(cols, n))
        if spec.func == "count":
            out[spec.alias] = counts.astype(np.int64)
        elif spec.func == "sum":
            if np.issubdtype(vals.dtype, np.integer) or vals.dtype == bool:
                acc = np.zeros(n_groups, dtype=np.int64)
                np.add.at(acc, gids, vals.astype(np.int64))
                out[spec.alias] = acc
            else:
                out[spec.alias] = np.bincount(gids, weights=vals, minlength=n_groups)
        elif spec.func == "avg":
            sums = np.bincount(gids, weights=vals.astype(np.float64), minlength=n_groups)
            with np.errstate(invalid="ignore"):
                out[spec.alias] = sums / counts
        elif spec.func in ("min", "max"):
            if np.issubdtype(vals.dtype, np.integer):
                init = np.iinfo(np.int64).max if spec.func == "min" else np.iinfo(np.int64).min
                acc = np.full(n_groups, init, dtype=np.int64)
            else:
                acc = np.full(n_groups, np.inf if spec.func == "min" else -np.inf, dtype=np.float64)
            (np.minimum if spec.func == "min" else np.maximum).at(acc, gids, vals)
            out[spec.alias] = acc
        elif spec.func == "count_distinct":
            _, vcodes = np.unique(vals, return_inverse=True)
            card = int(vcodes.max()) + 1 if n else 1
            pairs = np.unique(gids.astype(np.int64) * card + vcodes.astype(np.int64))
            out[spec.alias] = np.bincount(pairs // card, minlength=n_groups).astype(np.int64)
        else:
            raise OperatorError(f"unsupported aggregate {spec.func}")
    return out


class _GroupSink:
    __slots__ = ("bw", "fw")

    def __init__(self, bw, fw):
        self.bw = bw
        self.fw = fw

    def emit(self, in_rid: int, group: int) -> None:
        self.bw.append(group, in_rid)
        self.fw.set_at(in_rid, group)


def groupby(in_: OperatorOutput, keys: Sequence[Tuple[Expr, str]], aggs: Sequence[AggSpec],
            mode: CaptureMode = CaptureMode.INJECT, cardinality_stats: bool = False) -> OperatorOutput:
    """Hash aggregation; output rows in first-encounter order of the keys.

    Inject appends each rid to its group's array during the build (growth
    events unless cardinality stats preallocate the buckets); Defer keeps
    only the group table and fills exactly-sized indexes at finalize time.
    """
    rel = in_.relation
    n = len(rel)
    key_arrays = _eval_keys(rel, keys)
    if keys:
        gids, n_groups, rep_rows = factorize(key_arrays)
    else:
        # global aggregate: always a single group, even over empty input
        gids, n_groups, rep_rows = np.zeros(n, dtype=np.int64), 1, np.zeros(1, dtype=np.int64)

    out_cols: Dict[str, np.ndarray] = {}
    types: List[Tuple[str, str]] = []
    for (e, alias), arr in zip(keys, key_arrays):
        out_cols[alias] = arr[rep_rows]
        types.append((alias, e.bind(rel.schema)))
    agg_vals = compute_aggregates(gids, n_groups, aggs, rel.columns, n)
    for spec in aggs:
        out_cols[spec.alias] = agg_vals[spec.alias]
        types.append((spec.alias, spec.bind(rel.schema)))
    out_rel = Relation(Schema(tuple(types)), out_cols, name="")

    if mode is CaptureMode.NONE or in_.bundle is None:
        return OperatorOutput(out_rel, None)

    rids = np.arange(n, dtype=RID_DTYPE)
    if mode is CaptureMode.INJECT:
        bw = RidIndex.from_grouped(n_groups, gids, rids, exact=cardinality_stats)
        fw = RidArray.preallocated(gids.astype(RID_DTYPE), counter=bw.counter)
        bundle = _compose_bundle([bw], [fw], [in_])
    elif mode is CaptureMode.CALLBACK:
        bw = RidIndex(n_groups)
        fw = RidArray(capacity_hint=n, counter=bw.counter)
        emit = _GroupSink(bw, fw).emit
        for i in range(n):
            emit(i, int(gids[i]))
        fw.fill_length(n)
        bundle = _compose_bundle([bw], [fw], [in_])
    elif mode is CaptureMode.DEFER:
        # group table (gids plus known cardinalities) stays pinned until finalize
        bundle = LineageBundle()
        inputs_snapshot = in_

        def _finalize(bundle=bundle, gids=gids, n_groups=n_groups, n=n, inputs=inputs_snapshot):
            bw = RidIndex.from_grouped(n_groups, gids, np.arange(n, dtype=RID_DTYPE), exact=True)
            fw = RidArray.preallocated(gids.astype(RID_DTYPE), counter=bw.counter)
            composed = _compose_bundle([bw], [fw], [inputs])
            bundle.pairs.update(composed.pairs)

        bundle.set_finalizer(_finalize)
    else:
        raise OperatorError(f"unsupported mode {mode}")
    return OperatorOutput(out_rel, bundle)


def groupby_inject(in_, keys, aggs, cardinality_stats=False):
    return groupby(in_, keys, aggs, CaptureMode.INJECT, cardinality_stats)


def groupby_defer(in_, keys, aggs):
    return groupby(in_, keys, aggs, CaptureMode.DEFER)


# ---------------------------------------------------------------------------
# hash join (M:N and pk-fk)

class _JoinSink:
    __slots__ = ("a_bw", "b_bw", "a_fw", "b_fw")

    def __init__(self, a_bw, b_bw, a_fw, b_fw):
        self.a_bw = a_bw
        self.b_bw = b_bw
        self.a_fw = a_fw
        self.b_fw = b_fw

    def emit(self, a_rid: int, b_rid: int, out_rid: int) -> None:
        self.a_bw.append(a_rid)
        self.b_bw.append(b_rid)
        self.a_fw.append(a_rid, out_rid)
        self.b_fw.append(b_rid, out_rid)


def _join_output(a_rel: Relation, b_rel: Relation, out_a: np.ndarray, out_b: np.ndarray,
                 materialize: bool) -> Optional[Relation]:
    if not materialize:
        return None
    names_a = a_rel.schema.names
    clash = set(names_a) & set(b_rel.schema.names)
    if clash:
        raise OperatorError(f"join output column clash: {sorted(clash)}; rename via projection first")
    cols = {n: a_rel.columns[n][out_a] for n in names_a}
    cols.update({n: b_rel.columns[n][out_b] for n in b_rel.schema.names})
    return Relation(Schema(tuple(a_rel.schema.columns + b_rel.schema.columns)), cols)


def hashjoin(A: OperatorOutput, B: OperatorOutput, left_keys: Sequence[str], right_keys: Sequence[str],
             mode: CaptureMode = CaptureMode.INJECT, pkfk: bool = False,
             materialize_output: bool = True,
             forward_hints: Optional[np.ndarray] = None) -> OperatorOutput:
    """Equi-join: build on A, probe with B.  Output follows probe order; a
    probe row's matches appear in build insertion order.

    pkfk verifies build-key uniqueness, stores single rids per entry, keeps
    the foreign-key forward index as a rid array (MISS for dangling keys),
    and preallocates the backward arrays.
    """
    a_rel, b_rel = A.relation, B.relation
    nA, nB = len(a_rel), len(b_rel)
    acodes, bcodes, ncodes = common_codes(
        [a_rel.columns[k] for k in left_keys], [b_rel.columns[k] for k in right_keys]
    )
    entry_of_a, n_entries, rep = factorize([acodes]) if nA else (np.empty(0, np.int64), 0, np.empty(0, np.int64))
    entry_count = np.bincount(entry_of_a, minlength=n_entries) if nA else np.zeros(0, np.int64)
    if pkfk and nA and entry_count.max(initial=0) > 1:
        raise PkFkViolation(f"duplicate build key on {left_keys}")

    sorted_a = np.argsort(entry_of_a, kind="stable") if nA else np.empty(0, np.int64)
    entry_start = np.concatenate(([0], np.cumsum(entry_count)))[:-1] if n_entries else np.empty(0, np.int64)

    code_to_entry = np.full(ncodes, -1, dtype=np.int64)
    if n_entries:
        code_to_entry[acodes[rep]] = np.arange(n_entries)
    e_b = code_to_entry[bcodes] if nB else np.empty(0, np.int64)
    matched_mask = e_b >= 0
    matched_b = np.flatnonzero(matched_mask)
    e_match = e_b[matched_b]
    k_m = entry_count[e_match]
    total = int(k_m.sum())

    probe_out_start = np.cumsum(k_m) - k_m  # first output rid of each matched probe row
    out_b = np.repeat(matched_b, k_m)
    offsets = np.arange(total, dtype=np.int64) - np.repeat(probe_out_start, k_m)
    out_a = sorted_a[np.repeat(entry_start[e_match], k_m) + offsets]

    out_rel = _join_output(a_rel, b_rel, out_a, out_b, materialize_output)
    if mode is CaptureMode.NONE or A.bundle is None or B.bundle is None:
        return OperatorOutput(out_rel, None, out_count=total)

    out_rids = np.arange(total, dtype=RID_DTYPE)
    a_counter, b_counter = GrowthCounter(), GrowthCounter()

    if mode is CaptureMode.CALLBACK:
        a_bw = RidArray(counter=a_counter)
        b_bw = RidArray(counter=b_counter)
        a_fw = RidIndex(nA, counter=a_counter)
        b_fw = RidIndex(nB, counter=b_counter)
        emit = _JoinSink(a_bw, b_bw, a_fw, b_fw).emit
        for o in range(total):
            emit(int(out_a[o]), int(out_b[o]), o)
        bundle = _compose_bundle([a_bw, b_bw], [a_fw, b_fw], [A, B])
        return OperatorOutput(out_rel, bundle, out_count=total)

    if pkfk:
        # output cardinality equals the matched fk-side cardinality
        a_bw = RidArray(capacity_hint=nB, counter=a_counter)
        a_bw.extend(out_a.astype(RID_DTYPE))
        b_bw = RidArray(capacity_hint=nB, counter=b_counter)
        b_bw.extend(out_b.astype(RID_DTYPE))
        fkvals = np.full(nB, MISS, dtype=RID_DTYPE)
        fkvals[matched_b] = out_rids
        b_fw = RidArray.preallocated(fkvals, counter=b_counter)
        # per-key match counts, when known, preallocate the pk-side forward index
        a_fw = RidIndex.from_grouped(nA, out_a, out_rids, exact=False, counter=a_counter,
                                     hints=forward_hints)
        bundle = _compose_bundle([a_bw, b_bw], [a_fw, b_fw], [A, B])
        return OperatorOutput(out_rel, bundle, out_count=total)

    # generic M:N — B side is identical for Inject and Defer (deferring it buys little)
    b_bw = RidArray(counter=b_counter)
    b_bw.extend(out_b.astype(RID_DTYPE))
    b_fw = RidIndex.from_grouped(nB, out_b, out_rids, exact=False, counter=b_counter)

    if mode is CaptureMode.INJECT:
        a_bw = RidArray(counter=a_counter)
        a_bw.extend(out_a.astype(RID_DTYPE))
        a_fw = RidIndex.from_grouped(nA, out_a, out_rids, exact=False, counter=a_counter,
                                     hints=forward_hints)
        bundle = _compose_bundle([a_bw, b_bw], [a_fw, b_fw], [A, B])
        return OperatorOutput(out_rel, bundle, out_count=total)

    # Defer: o_rids per entry (first output rid of each probe match) are
    # collected during the probe; the A-side indexes are built afterwards
    # from the retained hash table with exact preallocation.
    bundle = LineageBundle()

    def _finalize(bundle=bundle):
        a_fw = RidIndex(0, counter=a_counter)
        a_fw.buckets = [None] * nA  # type: ignore[list-item]
        a_bw = RidArray(capacity_hint=total, counter=a_counter)
        a_bw.fill_length(total)
        order = np.argsort(e_match, kind="stable")
        o_counts = np.bincount(e_match, minlength=n_entries)
        o_offsets = np.concatenate(([0], np.cumsum(o_counts)))
        starts_sorted = probe_out_start[order]
        for e in range(n_entries):
            o_rids = starts_sorted[o_offsets[e] : o_offsets[e + 1]]
            members = sorted_a[entry_start[e] : entry_start[e] + entry_count[e]]
            for s, rid in enumerate(members):
                outs = (o_rids + s).astype(RID_DTYPE)
                a_fw.buckets[int(rid)] = RidArray.preallocated(outs, counter=a_counter)
                a_bw.set_at(outs.astype(np.int64), np.uint32(rid))
        for rid in range(nA):
            if a_fw.buckets[rid] is None:
                a_fw.buckets[rid] = RidArray(capacity_hint=0, counter=a_counter)
        composed = _compose_bundle([a_bw, b_bw], [a_fw, b_fw], [A, B])
        bundle.pairs.update(composed.pairs)

    bundle.set_finalizer(_finalize)
    return OperatorOutput(out_rel, bundle, out_count=total)


def hashjoin_inject(A, B, left_keys, right_keys, **kw):
    return hashjoin(A, B, left_keys, right_keys, CaptureMode.INJECT, **kw)


def hashjoin_defer(A, B, left_keys, right_keys, **kw):
    return hashjoin(A, B, left_keys, right_keys, CaptureMode.DEFER, **kw)


def hashjoin_pkfk(A, B, left_keys, right_keys, mode=CaptureMode.INJECT, **kw):
    # Inject and Defer coincide for pk-fk joins
    m = CaptureMode.INJECT if mode is CaptureMode.DEFER else mode
    return hashjoin(A, B, left_keys, right_keys, m, pkfk=True, **kw)


# ---------------------------------------------------------------------------
# set/bag union, intersection, difference

def _setop_prepare(A: OperatorOutput, B: OperatorOutput, attrs: Sequence[str],
                   b_attrs: Optional[Sequence[str]] = None):
    a_rel, b_rel = A.relation, B.relation
    b_attrs = list(b_attrs) if b_attrs is not None else list(attrs)
    for a, b in zip(attrs, b_attrs):
        ta, tb = a_rel.schema.dtype_of(a), b_rel.schema.dtype_of(b)
        if ta != tb:
            raise OperatorError(f"set operation over incompatible columns {a}:{ta} vs {b}:{tb}")
    ca, cb, ncodes = common_codes([a_rel.columns[a] for a in attrs], [b_rel.columns[b] for b in b_attrs])
    return a_rel, b_rel, ca, cb, ncodes


def _entry_values(rel: Relation, attrs, rows: np.ndarray, out_schema: Schema) -> Dict[str, np.ndarray]:
    return {o: rel.columns[a][rows] for (o, _), a in zip(out_schema.columns, attrs)}


def set_union(A: OperatorOutput, B: OperatorOutput, attrs: Sequence[str],
              mode: CaptureMode = CaptureMode.INJECT, b_attrs: Optional[Sequence[str]] = None) -> OperatorOutput:
    """Hash set union; output entries in first-encounter order scanning A then B."""
    a_rel, b_rel, ca, cb, _ = _setop_prepare(A, B, attrs, b_attrs)
    nA, nB = len(ca), len(cb)
    eids, n_entries, rep = factorize([np.concatenate([ca, cb])]) if nA + nB else (np.empty(0, np.int64), 0, np.empty(0, np.int64))
    e_a, e_b = eids[:nA], eids[nA:]
    out_schema = Schema(tuple((a, a_rel.schema.dtype_of(a)) for a in attrs))
    # representative row may come from either side
    cols = {name: np.empty(n_entries, dtype=a_rel.columns[a].dtype) for (name, _), a in zip(out_schema.columns, attrs)}
    from_a = rep < nA
    b_attrs_l = list(b_attrs) if b_attrs is not None else list(attrs)
    for (name, _), a, b in zip(out_schema.columns, attrs, b_attrs_l):
        vals = cols[name]
        vals[from_a] = a_rel.columns[a][rep[from_a]]
        vals[~from_a] = b_rel.columns[b][rep[~from_a] - nA]
    out_rel = Relation(out_schema, cols)

    if mode is CaptureMode.NONE or A.bundle is None or B.bundle is None:
        return OperatorOutput(out_rel, None)

    def build(exact: bool):
        a_bw = RidIndex.from_grouped(n_entries, e_a, np.arange(nA, dtype=RID_DTYPE), exact=exact)
        b_bw = RidIndex.from_grouped(n_entries, e_b, np.arange(nB, dtype=RID_DTYPE), exact=exact)
        a_fw = RidArray.preallocated(e_a.astype(RID_DTYPE))
        b_fw = RidArray.preallocated(e_b.astype(RID_DTYPE))
        return _compose_bundle([a_bw, b_bw], [a_fw, b_fw], [A, B])

    if mode is CaptureMode.CALLBACK:
        a_bw, b_bw = RidIndex(n_entries), RidIndex(n_entries)
        a_fw, b_fw = RidArray(capacity_hint=nA), RidArray(capacity_hint=nB)
        sink_a, sink_b = _GroupSink(a_bw, a_fw), _GroupSink(b_bw, b_fw)
        for i in range(nA):
            sink_a.emit(i, int(e_a[i]))
        for i in range(nB):
            sink_b.emit(i, int(e_b[i]))
        a_fw.fill_length(nA)
        b_fw.fill_length(nB)
        return OperatorOutput(out_rel, _compose_bundle([a_bw, b_bw], [a_fw, b_fw], [A, B]))
    if mode is CaptureMode.DEFER:
        bundle = LineageBundle()
        bundle.set_finalizer(lambda: bundle.pairs.update(build(exact=True).pairs))
        return OperatorOutput(out_rel, bundle)
    return OperatorOutput(out_rel, build(exact=False))


def bag_union(A: OperatorOutput, B: OperatorOutput, attrs: Sequence[str],
              mode: CaptureMode = CaptureMode.INJECT, b_attrs: Optional[Sequence[str]] = None) -> OperatorOutput:
    """Concatenation; lineage is the single split rid, answered arithmetically."""
    a_rel, b_rel, _, _, _ = _setop_prepare(A, B, attrs, b_attrs)
    nA, nB = len(a_rel), len(b_rel)
    b_attrs_l = list(b_attrs) if b_attrs is not None else list(attrs)
    out_schema = Schema(tuple((a, a_rel.schema.dtype_of(a)) for a in attrs))
    cols = {
        name: np.concatenate([a_rel.columns[a], b_rel.columns[b]])
        for (name, _), a, b in zip(out_schema.columns, attrs, b_attrs_l)
    }
    out_rel = Relation(out_schema, cols)
    if mode is CaptureMode.NONE or A.bundle is None or B.bundle is None:
        return OperatorOutput(out_rel, None)
    a_bw = ShiftedIdentityMap(0, nA, nA + nB, invert=False)
    a_fw = ShiftedIdentityMap(0, nA, nA, invert=True)
    b_bw = ShiftedIdentityMap(nA, nB, nA + nB, invert=False)
    b_fw = ShiftedIdentityMap(nA, nB, nB, invert=True)
    return OperatorOutput(out_rel, _compose_bundle([a_bw, b_bw], [a_fw, b_fw], [A, B]))


def _intersect_core(A, B, attrs, b_attrs, keep_matched: bool):
    """Shared machinery for set intersection (keep_matched) and difference."""
    a_rel, b_rel, ca, cb, ncodes = _setop_prepare(A, B, attrs, b_attrs)
    nA, nB = len(ca), len(cb)
    e_a, n_entries, rep = factorize([ca]) if nA else (np.empty(0, np.int64), 0, np.empty(0, np.int64))
    code_to_entry = np.full(ncodes, -1, dtype=np.int64)
    if n_entries:
        code_to_entry[ca[rep]] = np.arange(n_entries)
    e_b = code_to_entry[cb] if nB else np.empty(0, np.int64)
    b_matched = e_b >= 0
    entry_has_b = np.zeros(n_entries, dtype=bool)
    entry_has_b[e_b[b_matched]] = True
    keep = entry_has_b if keep_matched else ~entry_has_b
    surv = np.flatnonzero(keep)
    new_id = np.full(n_entries, -1, dtype=np.int64)
    new_id[surv] = np.arange(len(surv))
    return a_rel, b_rel, nA, nB, e_a, e_b, b_matched, rep, surv, new_id, len(surv)


def set_intersect(A: OperatorOutput, B: OperatorOutput, attrs: Sequence[str],
                  mode: CaptureMode = CaptureMode.INJECT, b_attrs: Optional[Sequence[str]] = None) -> OperatorOutput:
    a_rel, b_rel, nA, nB, e_a, e_b, b_matched, rep, surv, new_id, n_out = _intersect_core(A, B, attrs, b_attrs, True)
    out_schema = Schema(tuple((a, a_rel.schema.dtype_of(a)) for a in attrs))
    out_rel = Relation(out_schema, _entry_values(a_rel, attrs, rep[surv], out_schema))
    if mode is CaptureMode.NONE or A.bundle is None or B.bundle is None:
        return OperatorOutput(out_rel, None)

    def build(exact: bool):
        a_keep = new_id[e_a] >= 0 if nA else np.empty(0, bool)
        a_rows = np.flatnonzero(a_keep)
        a_bw = RidIndex.from_grouped(n_out, new_id[e_a[a_rows]], a_rows.astype(RID_DTYPE), exact=exact)
        b_rows = np.flatnonzero(b_matched)
        b_bw = RidIndex.from_grouped(n_out, new_id[e_b[b_rows]], b_rows.astype(RID_DTYPE), exact=exact)
        a_vals = np.full(nA, MISS, dtype=RID_DTYPE)
        a_vals[a_rows] = new_id[e_a[a_rows]].astype(RID_DTYPE)
        b_vals = np.full(nB, MISS, dtype=RID_DTYPE)
        b_vals[b_rows] = new_id[e_b[b_rows]].astype(RID_DTYPE)
        return _compose_bundle(
            [a_bw, b_bw], [RidArray.preallocated(a_vals), RidArray.preallocated(b_vals)], [A, B]
        )

    if mode is CaptureMode.CALLBACK:
        a_bw, b_bw = RidIndex(n_out), RidIndex(n_out)
        a_fw, b_fw = RidArray.full_miss(nA), RidArray.full_miss(nB)
        sa, sb = _GroupSink(a_bw, a_fw), _GroupSink(b_bw, b_fw)
        for i in range(nA):
            g = new_id[e_a[i]]
            if g >= 0:
                sa.emit(i, int(g))
        for i in range(nB):
            if b_matched[i]:
                g = new_id[e_b[i]]
                if g >= 0:
                    sb.emit(i, int(g))
        return OperatorOutput(out_rel, _compose_bundle([a_bw, b_bw], [a_fw, b_fw], [A, B]))
    if mode is CaptureMode.DEFER:
        bundle = LineageBundle()
        bundle.set_finalizer(lambda: bundle.pairs.update(build(exact=True).pairs))
        return OperatorOutput(out_rel, bundle)
    return OperatorOutput(out_rel, build(exact=False))


def set_diff(A: OperatorOutput, B: OperatorOutput, attrs: Sequence[str],
             mode: CaptureMode = CaptureMode.INJECT, b_attrs: Optional[Sequence[str]] = None) -> OperatorOutput:
    """A minus B (set semantics).  Lineage is captured for A only; each output
    depends on the whole of B, answered by scanning B on demand."""
    a_rel, b_rel, nA, nB, e_a, e_b, b_matched, rep, surv, new_id, n_out = _intersect_core(A, B, attrs, b_attrs, False)
    out_schema = Schema(tuple((a, a_rel.schema.dtype_of(a)) for a in attrs))
    out_rel = Relation(out_schema, _entry_values(a_rel, attrs, rep[surv], out_schema))
    if mode is CaptureMode.NONE or A.bundle is None or B.bundle is None:
        return OperatorOutput(out_rel, None)

    def build(exact: bool):
        a_keep = new_id[e_a] >= 0 if nA else np.empty(0, bool)
        a_rows = np.flatnonzero(a_keep)
        a_bw = RidIndex.from_grouped(n_out, new_id[e_a[a_rows]], a_rows.astype(RID_DTYPE), exact=exact)
        a_vals = np.full(nA, MISS, dtype=RID_DTYPE)
        a_vals[a_rows] = new_id[e_a[a_rows]].astype(RID_DTYPE)
        return _compose_bundle(
            [a_bw, WholeRelationMap(nB, n_out)],
            [RidArray.preallocated(a_vals), WholeRelationMap(n_out, nB)],
            [A, B],
        )

    if mode is CaptureMode.DEFER:
        bundle = LineageBundle()
        bundle.set_finalizer(lambda: bundle.pairs.update(build(exact=True).pairs))
        return OperatorOutput(out_rel, bundle)
    return OperatorOutput(out_rel, build(exact=False))


def bag_intersect(A: OperatorOutput, B: OperatorOutput, attrs: Sequence[str],
                  mode: CaptureMode = CaptureMode.INJECT, b_attrs: Optional[Sequence[str]] = None) -> OperatorOutput:
    """Each matched entry emits a_matches * b_matches rows (A-major pairing),
    so the backward maps are 1-to-1 rid arrays."""
    a_rel, b_rel, ca, cb, ncodes = _setop_prepare(A, B, attrs, b_attrs)
    nA, nB = len(ca), len(cb)
    e_a, n_entries, rep = factorize([ca]) if nA else (np.empty(0, np.int64), 0, np.empty(0, np.int64))
    code_to_entry = np.full(ncodes, -1, dtype=np.int64)
    if n_entries:
        code_to_entry[ca[rep]] = np.arange(n_entries)
    e_b = code_to_entry[cb] if nB else np.empty(0, np.int64)
    b_matched_rows = np.flatnonzero(e_b >= 0)
    a_counts = np.bincount(e_a, minlength=n_entries)
    b_counts = np.bincount(e_b[b_matched_rows], minlength=n_entries)

    a_sorted = np.argsort(e_a, kind="stable")
    a_off = np.concatenate(([0], np.cumsum(a_counts)))
    b_sorted = b_matched_rows[np.argsort(e_b[b_matched_rows], kind="stable")]
    b_off = np.concatenate(([0], np.cumsum(b_counts)))

    emit_counts = a_counts * b_counts
    block_start = np.concatenate(([0], np.cumsum(emit_counts)))
    total = int(block_start[-1])

    out_a = np.empty(total, dtype=np.int64)
    out_b = np.empty(total, dtype=np.int64)
    out_entry = np.empty(total, dtype=np.int64)
    for e in range(n_entries):
        cnt = emit_counts[e]
        if cnt == 0:
            continue
        ar = a_sorted[a_off[e] : a_off[e + 1]]
        br = b_sorted[b_off[e] : b_off[e + 1]]
        s = block_start[e]
        out_a[s : s + cnt] = np.repeat(ar, b_counts[e])
        out_b[s : s + cnt] = np.tile(br, a_counts[e])
        out_entry[s : s + cnt] = e

    out_schema = Schema(tuple((a, a_rel.schema.dtype_of(a)) for a in attrs))
    out_rel = Relation(out_schema, _entry_values(a_rel, attrs, rep[out_entry], out_schema))
    if mode is CaptureMode.NONE or A.bundle is None or B.bundle is None:
        return OperatorOutput(out_rel, None)

    out_rids = np.arange(total, dtype=RID_DTYPE)

    def build_inject():
        a_bw = RidArray.preallocated(out_a.astype(RID_DTYPE))
        b_bw = RidArray.preallocated(out_b.astype(RID_DTYPE))
        a_fw = RidIndex.from_grouped(nA, out_a, out_rids, exact=False)
        b_fw = RidIndex.from_grouped(nB, out_b, out_rids, exact=False)
        return _compose_bundle([a_bw, b_bw], [a_fw, b_fw], [A, B])

    def build_defer():
        # re-scan A then B against the retained entry table; each match of an
        # A row claims a contiguous run, each match of a B row a strided one
        counter = GrowthCounter()
        a_bw = RidArray(capacity_hint=total, counter=counter)
        a_bw.fill_length(total)
        b_bw = RidArray(capacity_hint=total, counter=counter)
        b_bw.fill_length(total)
        a_fw = RidIndex(nA, per_bucket_hints=np.zeros(nA, np.int64), counter=counter)
        b_fw = RidIndex(nB, per_bucket_hints=np.zeros(nB, np.int64), counter=counter)
        seen_a = np.zeros(n_entries, dtype=np.int64)
        for i in range(nA):
            e = e_a[i]
            if b_counts[e] == 0:
                continue
            j = seen_a[e]
            outs = (block_start[e] + j * b_counts[e] + np.arange(b_counts[e])).astype(RID_DTYPE)
            a_bw.set_at(outs.astype(np.int64), np.uint32(i))
            a_fw.buckets[i] = RidArray.preallocated(outs, counter=counter)
            seen_a[e] = j + 1
        seen_b = np.zeros(n_entries, dtype=np.int64)
        for i in range(nB):
            e = e_b[i]
            if e < 0 or a_counts[e] == 0:
                continue
            j = seen_b[e]
            outs = (block_start[e] + j + np.arange(a_counts[e]) * b_counts[e]).astype(RID_DTYPE)
            b_bw.set_at(outs.astype(np.int64), np.uint32(i))
            b_fw.buckets[i] = RidArray.preallocated(outs, counter=counter)
            seen_b[e] = j + 1
        return _compose_bundle([a_bw, b_bw], [a_fw, b_fw], [A, B])

    if mode is CaptureMode.DEFER:
        bundle = LineageBundle()
        bundle.set_finalizer(lambda: bundle.pairs.update(build_defer().pairs))
        return OperatorOutput(out_rel, bundle)
    if mode is CaptureMode.CALLBACK:
        a_bw, b_bw = RidArray(), RidArray()
        a_fw, b_fw = RidIndex(nA), RidIndex(nB)
        emit = _JoinSink(a_bw, b_bw, a_fw, b_fw).emit
        for o in range(total):
            emit(int(out_a[o]), int(out_b[o]), o)
        return OperatorOutput(out_rel, _compose_bundle([a_bw, b_bw], [a_fw, b_fw], [A, B]))
    return OperatorOutput(out_rel, build_inject())


def bag_diff(A: OperatorOutput, B: OperatorOutput, attrs: Sequence[str],
             mode: CaptureMode = CaptureMode.INJECT, b_attrs: Optional[Sequence[str]] = None) -> OperatorOutput:
    """All A rows whose key has no match in B (duplicates preserved); like
    set_diff, B-side lineage is the whole-relation dependency."""
    a_rel, b_rel, ca, cb, ncodes = _setop_prepare(A, B, attrs, b_attrs)
    nA, nB = len(ca), len(cb)
    e_a, n_entries, rep = factorize([ca]) if nA else (np.empty(0, np.int64), 0, np.empty(0, np.int64))
    code_to_entry = np.full(ncodes, -1, dtype=np.int64)
    if n_entries:
        code_to_entry[ca[rep]] = np.arange(n_entries)
    e_b = code_to_entry[cb] if nB else np.empty(0, np.int64)
    entry_has_b = np.zeros(n_entries, dtype=bool)
    entry_has_b[e_b[e_b >= 0]] = True
    keep_rows = np.flatnonzero(~entry_has_b[e_a]) if nA else np.empty(0, np.int64)
    out_schema = Schema(tuple((a, a_rel.schema.dtype_of(a)) for a in attrs))
    out_rel = Relation(out_schema, _entry_values(a_rel, attrs, keep_rows, out_schema))
    if mode is CaptureMode.NONE or A.bundle is None or B.bundle is None:
        return OperatorOutput(out_rel, None)
    n_out = len(keep_rows)

    def build():
        a_bw = RidArray.preallocated(keep_rows.astype(RID_DTYPE))
        vals = np.full(nA, MISS, dtype=RID_DTYPE)
        vals[keep_rows] = np.arange(n_out, dtype=RID_DTYPE)
        a_fw = RidArray.preallocated(vals)
        return _compose_bundle(
            [a_bw, WholeRelationMap(nB, n_out)], [a_fw, WholeRelationMap(n_out, nB)], [A, B]
        )

    if mode is CaptureMode.DEFER:
        bundle = LineageBundle()
        bundle.set_finalizer(lambda: bundle.pairs.update(build().pairs))
        return OperatorOutput(out_rel, bundle)
    return OperatorOutput(out_rel, build())


# ---------------------------------------------------------------------------
# nested-loop theta join and cross product

def nlj_theta(A: OperatorOutput, B: OperatorOutput, theta: Expr,
              mode: CaptureMode = CaptureMode.INJECT, materialize_output: bool = True) -> OperatorOutput:
    """Nested loops in (i-major, j-minor) order.  The outer forward index is
    run-length encoded: a row's outputs are contiguous."""
    a_rel, b_rel = A.relation, B.relation
    nA, nB = len(a_rel), len(b_rel)
    clash = set(a_rel.schema.names) & set(b_rel.schema.names)
    if clash:
        raise OperatorError(f"theta join needs disjoint column names, clash: {sorted(clash)}")
    matches: List[np.ndarray] = []
    lengths = np.zeros(nA, dtype=np.int64)
    b_cols = dict(b_rel.columns)
    for i in range(nA):
        cols = dict(b_cols)
        for name in a_rel.schema.names:
            v = a_rel.columns[name][i]
            if isinstance(v, str):
                arr = np.empty(nB, dtype=object)
                arr[:] = v
            else:
                arr = np.full(nB, v)
            cols[name] = arr
        m = np.asarray(theta.eval(cols, nB), dtype=bool) if nB else np.zeros(0, bool)
        js = np.flatnonzero(m)
        matches.append(js)
        lengths[i] = len(js)
    starts = np.concatenate(([0], np.cumsum(lengths)))[:-1]
    total = int(lengths.sum())
    out_a = np.repeat(np.arange(nA, dtype=np.int64), lengths)
    out_b = np.concatenate(matches) if matches else np.empty(0, np.int64)

    out_rel = _join_output(a_rel, b_rel, out_a, out_b, materialize_output)
    if mode is CaptureMode.NONE or A.bundle is None or B.bundle is None:
        return OperatorOutput(out_rel, None, out_count=total)

    out_rids = np.arange(total, dtype=RID_DTYPE)
    if mode is CaptureMode.CALLBACK:
        a_bw, b_bw = RidArray(), RidArray()
        a_fw_full = RidIndex(nA)
        b_fw = RidIndex(nB)
        emit = _JoinSink(a_bw, b_bw, a_fw_full, b_fw).emit
        for o in range(total):
            emit(int(out_a[o]), int(out_b[o]), o)
        a_fw = RunLengthForwardMap(starts, lengths)
        return OperatorOutput(out_rel, _compose_bundle([a_bw, b_bw], [a_fw, b_fw], [A, B]), out_count=total)
    a_bw = RidArray()
    a_bw.extend(out_a.astype(RID_DTYPE))
    b_bw = RidArray()
    b_bw.extend(out_b.astype(RID_DTYPE))
    a_fw = RunLengthForwardMap(starts, lengths)
    b_fw = RidIndex.from_grouped(nB, out_b, out_rids, exact=False)
    return OperatorOutput(out_rel, _compose_bundle([a_bw, b_bw], [a_fw, b_fw], [A, B]), out_count=total)


def nlj_theta_inject(A, B, theta, **kw):
    return nlj_theta(A, B, theta, CaptureMode.INJECT, **kw)


def cross_product(A: OperatorOutput, B: OperatorOutput, mode: CaptureMode = CaptureMode.INJECT,
                  materialize_output: bool = True) -> OperatorOutput:
    """i-major cross product; lineage answered arithmetically (no capture)."""
    a_rel, b_rel = A.relation, B.relation
    nA, nB = len(a_rel), len(b_rel)
    out_a = np.repeat(np.arange(nA, dtype=np.int64), nB)
    out_b = np.tile(np.arange(nB, dtype=np.int64), nA)
    out_rel = _join_output(a_rel, b_rel, out_a, out_b, materialize_output)
    total = nA * nB
    if mode is CaptureMode.NONE or A.bundle is None or B.bundle is None:
        return OperatorOutput(out_rel, None, out_count=total)
    a_bw = CrossBackwardMap(nA, nB, outer=True)
    b_bw = CrossBackwardMap(nA, nB, outer=False)
    a_fw = CrossForwardMap(nA, nB, outer=True)
    b_fw = CrossForwardMap(nA, nB, outer=False)
    return OperatorOutput(out_rel, _compose_bundle([a_bw, b_bw], [a_fw, b_fw], [A, B]), out_count=total)
