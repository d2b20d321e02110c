"""Lineage queries and lineage-consuming queries.

backward/forward answer rid-set queries from captured indexes; consuming
queries run SQL whose FROM clause references those rid sets through the
backward()/forward() table functions.  The Lazy rewrite answers the same
questions with selection scans over base relations (no capture), and the
which/why derivations read positionally aligned backward buckets.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .expr import And, Cmp, Col, Expr, Lit
from .operators import CaptureMode
from .planner.logical import (
    BoundBlock,
    LineageScanNode,
    LogicalPlan,
    PlanError,
    ScanNode,
    SelectBlock,
    SelectItem,
)
from .planner.parser import parse_sql
from .planner.physical import QueryResult
from .planner.session import NoIndexError, Session


@dataclass
class RidSet:
    """Ordered rid multiset over a named relation (base or result handle)."""

    relation: str
    rids: np.ndarray

    def __post_init__(self):
        self.rids = np.asarray(self.rids, dtype=np.int64)

    def as_set(self) -> set:
        return set(self.rids.tolist())

    def __len__(self) -> int:
        return len(self.rids)


def backward(session: Session, handle: str, out, base: str, lazy_fallback: bool = False) -> RidSet:
    """Base rids contributing to the given output rids (deduplicated,
    first-occurrence order).  Finalizes a pending Defer bundle implicitly.
    Without an index this raises NoIndexError, or answers through the lazy
    selection-scan rewrite when lazy_fallback is set."""
    out_rids = out.rids if isinstance(out, RidSet) else np.asarray(out, dtype=np.int64)
    try:
        return RidSet(base, session.backward_rids(handle, out_rids, base))
    except NoIndexError:
        if not lazy_fallback:
            raise
        parts = [lazy_backward_rids(session, handle, int(o), base) for o in out_rids]
        merged = np.concatenate(parts) if parts else np.empty(0, np.int64)
        from .planner.session import _stable_unique

        return RidSet(base, _stable_unique(merged.astype(np.uint32)))


def forward(session: Session, handle: str, in_, base: Optional[str] = None) -> RidSet:
    """Output rids depending on the given base rids; filtered-out inputs
    (MISS entries) contribute nothing."""
    if isinstance(in_, RidSet):
        base = base or in_.relation
        in_rids = in_.rids
    else:
        in_rids = np.asarray(in_, dtype=np.int64)
    return RidSet(f"@{handle}", session.forward_rids(handle, in_rids, base))


def run_consuming(session: Session, text: str, params: Optional[dict] = None,
                  mode: CaptureMode = CaptureMode.INJECT, workload=None,
                  handle: Optional[str] = None) -> QueryResult:
    """Execute a lineage-consuming query; the result gets its own handle so
    consuming queries chain.  If the referenced handle was captured with
    data-skipping partitions or pushed-down group-by state matching this
    query, the optimized answer path is used instead of a scan."""
    lp = parse_sql(text)
    fetched = _try_pushdown_fetch(session, lp, params)
    if fetched is not None:
        return session.register(fetched, handle)
    rewritten = _try_partition_rewrite(session, lp, params)
    if rewritten is not None:
        from .planner.physical import lower

        pp = lower(rewritten, session.catalog, mode, workload, session=session)
        pp.text = text
        return session.execute_plan(pp, params, handle=handle)
    return session.sql(text, mode=mode, workload=workload, params=params, handle=handle)


# ---------------------------------------------------------------------------
# lazy rewrite

def lazy_rewrite(session: Session, handle: str, out_keys: Dict[str, object]) -> SelectBlock:
    """Rewrite a backward lineage query on a group-by result as a selection
    scan over the base relations: the base query's own selections plus one
    equality per group-by key."""
    res = session.result(handle)
    blk = res.bound
    if not isinstance(blk, BoundBlock) or not blk.grouped:
        raise PlanError("lazy rewrite needs a group-by base query")
    if isinstance(blk.source, LineageScanNode):
        raise PlanError("lazy rewrite of chained consuming queries needs the expanded base text")
    key_by_alias = {alias: e for e, alias in blk.keys}
    equalities: List[Expr] = []
    for alias, value in out_keys.items():
        if alias not in key_by_alias:
            raise PlanError(f"{alias!r} is not a group-by key of {handle!r}")
        if hasattr(value, "item"):
            value = value.item()
        equalities.append(Cmp("=", copy.deepcopy(key_by_alias[alias]), Lit(value)))
    where_parts: List[Expr] = []
    for f in blk.filters.values():
        if f is not None:
            where_parts.append(copy.deepcopy(f))
    if blk.post_join_filter is not None:
        where_parts.append(copy.deepcopy(blk.post_join_filter))
    where_parts.extend(equalities)
    where = where_parts[0] if len(where_parts) == 1 else And(where_parts)
    joins = [(j.right, Cmp("=", Col(j.left_key), Col(j.right_key)) if j.left_key else copy.deepcopy(j.theta), j.cross)
             for j in blk.joins]
    return SelectBlock(
        items=[SelectItem(None, "*")],
        source=blk.source,
        joins=joins,
        where=where,
        group_by=[],
        having=None,
    )


def lazy_backward_rids(session: Session, handle: str, out_rid: int, base: str) -> np.ndarray:
    """Answer one backward query with the Lazy selection scan (no indexes)."""
    res = session.result(handle)
    out_keys = {}
    blk = res.bound
    for _, alias in blk.keys:
        if alias in res.output.schema:
            out_keys[alias] = res.output.columns[alias][out_rid]
    block = lazy_rewrite(session, handle, out_keys)
    return execute_lazy_block(session, block, base)


def execute_lazy_block(session: Session, block: SelectBlock, base: str) -> np.ndarray:
    """Run a rewritten selection-scan block and return the base's rid set."""
    from .planner.physical import ExecStats, bind

    stats = ExecStats()
    bound = bind(block, session.catalog, session)
    batch = session.executor._source_batch(bound.source, bound, None, stats)
    for j in bound.joins:
        probe = session.executor._source_batch(j.right, bound, None, stats)
        batch = session.executor._join(batch, probe, j)
    if bound.post_join_filter is not None:
        mask = np.asarray(bound.post_join_filter.eval(batch.cols, batch.n), dtype=bool)
        batch = batch.take(np.flatnonzero(mask))
    if base not in batch.rids:
        raise PlanError(f"relation {base!r} not part of the lazy plan")
    from .planner.session import _stable_unique

    return _stable_unique(batch.rids[base].astype(np.uint32))


# ---------------------------------------------------------------------------
# which / why provenance

def derive_provenance(session: Session, handle: str, out_rid: int, kind: str):
    """which: set union of the per-relation backward buckets, tagged by
    relation.  why: witnesses formed positionwise across the (emission-
    aligned) buckets, so a base rid can appear in several witnesses."""
    if kind not in ("which", "why"):
        raise ValueError("kind must be 'which' or 'why'")
    res = session.result(handle)
    if res.bundle is None:
        raise NoIndexError(f"no lineage captured for {handle!r}")
    res.bundle.finalize()
    rels = [r for r in res.bundle.pairs if not r.startswith("@")]
    buckets: Dict[str, list] = {}
    for rel in rels:
        pair = res.bundle.pairs[rel]
        if pair.backward is None:
            raise NoIndexError(f"backward lineage missing for {rel!r}")
        buckets[rel] = pair.backward.get(int(out_rid)).tolist()
    if kind == "which":
        return {(rel, rid) for rel in rels for rid in buckets[rel]}
    lengths = {len(buckets[rel]) for rel in rels}
    if len(lengths) > 1:
        raise PlanError(f"backward buckets are not positionally aligned: {lengths}")
    width = lengths.pop() if lengths else 0
    return [tuple((rel, buckets[rel][p]) for rel in rels) for p in range(width)]


# ---------------------------------------------------------------------------
# consuming-query optimizations

def _root_block(lp: LogicalPlan) -> Optional[SelectBlock]:
    return lp.root if isinstance(lp.root, SelectBlock) else None


def _backward_source(block: SelectBlock):
    from .planner.logical import LineageScanNode

    src = block.source
    if isinstance(src, LineageScanNode) and src.direction == "backward" and not block.joins:
        return src
    return None


def _resolve_ridset(src, params) -> Optional[np.ndarray]:
    from .expr import Param

    arg = src.ridset
    if isinstance(arg, Param):
        if not params or arg.name not in params:
            return None
        arg = params[arg.name]
    if isinstance(arg, RidSet):
        return arg.rids
    if isinstance(arg, (list, tuple, np.ndarray)):
        return np.asarray(arg, dtype=np.int64)
    if isinstance(arg, (int, np.integer)):
        return np.asarray([int(arg)], dtype=np.int64)
    return None


def _try_pushdown_fetch(session: Session, lp: LogicalPlan, params) -> Optional[QueryResult]:
    """Group-by push-down: a consuming aggregation whose keys and aggregates
    were maintained during capture is answered by fetching the materialized
    state, with no base-table access."""
    from .planner.parser import AggRef
    from .planner.physical import ExecStats
    from .relstore import Relation, Schema

    block = _root_block(lp)
    if block is None or not block.group_by:
        return None
    src = _backward_source(block)
    if src is None or block.where is not None or block.having is not None:
        return None
    try:
        pair = session._pair(src.handle, src.base)
    except (NoIndexError, PlanError):
        return None
    state = pair.pushdown
    if state is None:
        return None
    out_rids = _resolve_ridset(src, params)
    if out_rids is None:
        return None

    base_res = session.result(src.handle)
    if not isinstance(base_res.bound, BoundBlock):
        return None
    handle_keys = {str(e): alias for e, alias in base_res.bound.keys}
    handle_keys.update({alias: alias for _, alias in base_res.bound.keys})
    extra_attrs = list(state.keys_)
    for g in block.group_by:
        if str(g) not in extra_attrs and str(g) not in handle_keys:
            return None

    plan_cols: List[Tuple[str, callable]] = []
    types: List[Tuple[str, str]] = []
    for idx, item in enumerate(block.items):
        e = item.expr
        if isinstance(e, AggRef):
            matched = state.match(e.func, str(e.expr) if e.expr is not None else None)
            if matched is None:
                return None
            alias = item.alias or f"agg{idx}"
            plan_cols.append((alias, lambda r, m=matched: r["aggs"][m]))
            types.append((alias, "int64" if e.func in ("count", "count_distinct") else "float64"))
        elif e is not None and str(e) in extra_attrs:
            pos = extra_attrs.index(str(e))
            alias = item.alias or str(e)
            plan_cols.append((alias, lambda r, p=pos: r["extra"][p]))
            types.append((alias, state.type_of(str(e))))
        elif e is not None and str(e) in handle_keys:
            key_alias = handle_keys[str(e)]
            col = base_res.output.columns[key_alias]
            alias = item.alias or key_alias
            plan_cols.append((alias, lambda r, c=col: c[r["group_rid"]]))
            types.append((alias, base_res.output.schema.dtype_of(key_alias)))
        else:
            return None

    rows = state.fetch(out_rids)
    arrays = {}
    for (alias, getter), (_, t) in zip(plan_cols, types):
        vals = [getter(r) for r in rows]
        if t == "text":
            arr = np.empty(len(vals), dtype=object)
            arr[:] = vals
        else:
            arr = np.asarray(vals, dtype=np.int64 if t in ("int64", "date") else np.float64)
        arrays[alias] = arr
    out = Relation(Schema(tuple(types)), arrays)
    stats = ExecStats()
    stats.out_rows = len(out)
    return QueryResult(out, None, stats, bound=None)


def _try_partition_rewrite(session: Session, lp: LogicalPlan, params) -> Optional[LogicalPlan]:
    """Data skipping: when the consuming query filters on exactly the
    partition attributes with equality literals, read only the matching
    partition and drop those predicates."""
    from .planner.logical import RowsScanNode

    block = _root_block(lp)
    if block is None:
        return None
    src = _backward_source(block)
    if src is None or block.where is None or block.joins:
        return None
    try:
        pair = session._pair(src.handle, src.base)
    except (NoIndexError, PlanError):
        return None
    pidx = pair.partitioned_backward
    if pidx is None:
        return None
    values: Dict[str, object] = {}
    rest: List[Expr] = []
    for c in _conjuncts(block.where):
        if isinstance(c, Cmp) and c.op == "=" and isinstance(c.left, Col) and isinstance(c.right, Lit) \
                and c.left.name in pidx.key_attrs:
            values[c.left.name] = c.right.value
        else:
            rest.append(c)
    if set(values) != set(pidx.key_attrs):
        return None
    out_rids = _resolve_ridset(src, params)
    if out_rids is None:
        return None
    key = tuple(values[a] for a in pidx.key_attrs)
    if key not in {tuple(k) for k in pidx.key_domain}:
        rid_vals = np.empty(0, dtype=np.uint32)
    else:
        chunks = [pidx.get(int(o), key) for o in out_rids]
        rid_vals = np.concatenate(chunks) if chunks else np.empty(0, np.uint32)
    from .planner.session import _stable_unique

    rids = _stable_unique(rid_vals)
    where = None
    if rest:
        where = rest[0] if len(rest) == 1 else And(rest)
    new_block = SelectBlock(
        items=block.items,
        source=RowsScanNode(src.base, rids),
        joins=[],
        where=where,
        group_by=block.group_by,
        having=block.having,
    )
    return LogicalPlan(new_block)


def _conjuncts(e: Expr) -> List[Expr]:
    if isinstance(e, And):
        out = []
        for p in e.parts:
            out.extend(_conjuncts(p))
        return out
    return [e]
