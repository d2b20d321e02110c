"""Lowering and execution of bound plans.

Pipelines carry, alongside the value columns, one rid column per base
relation touched so far.  Selections and projections just filter or extend
those columns; only pipeline breakers (hash-table builds, the final
aggregation) and the plan root turn rid columns into lineage indexes, so a
plan materializes far fewer indexes than one per operator.  Hash tables
embed the build side's rid columns, which is how lineage propagates across
cascading joins.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..expr import AggSpec, And, Cmp, Col, Expr, Param
from ..lineage import MISS, RID_DTYPE, LineageBundle, RidArray, RidIndex, partition_index
from ..operators import (
    CaptureMode,
    OperatorOutput,
    PkFkViolation,
    bag_diff,
    bag_intersect,
    bag_union,
    common_codes,
    compute_aggregates,
    factorize,
    set_diff,
    set_intersect,
    set_union,
)
from ..relstore import Relation, Schema
from .logical import (
    BoundBlock,
    BoundJoin,
    BoundSetOp,
    Catalog,
    LineageScanNode,
    LogicalPlan,
    PlanError,
    RowsScanNode,
    ScanNode,
    SelectBlock,
    SetOpNode,
)
from .parser import AggRef


@dataclass
class BaseCaptureConfig:
    backward: bool = True
    forward: bool = True
    static_pred: Optional[Expr] = None
    partition_attrs: Optional[Tuple[str, ...]] = None
    partition_domain: Optional[List[tuple]] = None
    pushdown_keys: Optional[List[str]] = None
    pushdown_aggs: Optional[List[AggSpec]] = None


@dataclass
class CapturePlan:
    """Which lineage to materialize at the root, per base relation.  When a
    workload is declared, relations it never references are dropped; with no
    workload everything is captured."""

    workload_given: bool = False
    per_base: Dict[str, BaseCaptureConfig] = field(default_factory=dict)

    def config_for(self, base: str) -> Optional[BaseCaptureConfig]:
        if not self.workload_given:
            return BaseCaptureConfig()
        return self.per_base.get(base)


@dataclass
class PhysicalPlan:
    root: object  # BoundBlock | BoundSetOp
    mode: CaptureMode
    capture: CapturePlan
    pipelines: List[str]
    text: str = ""

    def materialization_points(self, naive: bool = False) -> int:
        return _count_points(self.root, naive)

    def print_plan(self) -> str:
        lines = [f"PhysicalPlan mode={self.mode.value}"]
        lines += [f"P{i + 1}: {p}" for i, p in enumerate(self.pipelines)]
        return "\n".join(lines)


def _count_points(node, naive: bool) -> int:
    if isinstance(node, BoundSetOp):
        return _count_points(node.left, naive) + _count_points(node.right, naive) + 1
    blk: BoundBlock = node
    if naive:
        pts = sum(1 for f in blk.filters.values() if f is not None)
        pts += len(blk.joins)
        if blk.post_join_filter is not None:
            pts += 1
        if blk.grouped:
            pts += 1
            if blk.having is not None:
                pts += 1
        return max(pts, 1)
    # reduced: one per hash-build breaker, one for the root emission
    # (aggregation or the flat pipeline end), one more if a HAVING selection
    # runs over the aggregation output
    pts = sum(1 for j in blk.joins if not j.cross and j.theta is None)
    pts += 1
    if blk.grouped and blk.having is not None:
        pts += 1
    return pts


# ---------------------------------------------------------------------------
# binding

def _flatten_conjuncts(e: Optional[Expr]) -> List[Expr]:
    if e is None:
        return []
    if isinstance(e, And):
        out: List[Expr] = []
        for p in e.parts:
            out.extend(_flatten_conjuncts(p))
        return out
    return [e]


def bind_block(block: SelectBlock, catalog: Catalog, session=None) -> BoundBlock:
    schemas: Dict[str, Schema] = {}
    src_schema, src_name = catalog.schema_of_source(block.source, session)
    schemas[src_name] = src_schema
    probe_names: List[str] = []
    for item, cond, cross in block.joins:
        s, n = catalog.schema_of_source(item, session)
        if n in schemas:
            raise PlanError(f"relation {n!r} appears twice; self-joins need distinct names")
        schemas[n] = s
        probe_names.append(n)

    scope: Dict[str, str] = {}
    ambiguous: set = set()
    for rel, sch in schemas.items():
        for cname in sch.names:
            if cname in scope:
                ambiguous.add(cname)
            scope[cname] = rel
    if ambiguous:
        raise PlanError(f"duplicate column names across relations: {sorted(ambiguous)}")

    combined = Schema(tuple(c for rel in [src_name] + probe_names for c in schemas[rel].columns))

    def rels_of(e: Expr) -> set:
        rels = set()
        for c in e.columns():
            if c not in scope:
                raise PlanError(f"unknown column {c!r}")
            rels.add(scope[c])
        return rels

    filters: Dict[str, Optional[Expr]] = {rel: None for rel in schemas}
    residual: List[Expr] = []
    for conj in _flatten_conjuncts(block.where):
        rels = rels_of(conj)
        conj.bind(combined)
        if len(rels) == 1:
            rel = rels.pop()
            filters[rel] = conj if filters[rel] is None else And([filters[rel], conj])
        else:
            residual.append(conj)
    post = None if not residual else (residual[0] if len(residual) == 1 else And(residual))

    joins: List[BoundJoin] = []
    seen = {src_name}
    for (item, cond, cross), rel in zip(block.joins, probe_names):
        if cross:
            joins.append(BoundJoin(item, None, None, None, True))
            seen.add(rel)
            continue
        conjs = _flatten_conjuncts(cond)
        eq = conjs[0] if len(conjs) == 1 else None
        if (
            isinstance(eq, Cmp)
            and eq.op == "="
            and isinstance(eq.left, Col)
            and isinstance(eq.right, Col)
        ):
            la, ra = eq.left.name, eq.right.name
            if scope.get(la) == rel and scope.get(ra) in seen:
                la, ra = ra, la
            if scope.get(ra) != rel or scope.get(la) not in seen:
                raise PlanError(f"join condition {eq} does not link {rel!r} to the tables before it")
            pkfk = catalog.primary_keys.get(scope[la]) == la
            joins.append(BoundJoin(item, la, ra, None, False, pkfk))
        else:
            cond.bind(combined)
            joins.append(BoundJoin(item, None, None, cond, False))
        seen.add(rel)

    grouped = bool(block.group_by) or any(isinstance(i.expr, AggRef) for i in block.items) or block.having is not None

    keys: List[Tuple[Expr, str]] = []
    aggs: List[AggSpec] = []
    having = None
    project: Optional[List[Tuple[Expr, str]]] = None
    out_cols: List[Tuple[str, str]] = []

    if grouped:
        key_reprs: Dict[str, int] = {}
        for i, g in enumerate(block.group_by):
            g.bind(combined)
            key_reprs[str(g)] = i
            keys.append((g, f"k{i}"))
        for idx, item in enumerate(block.items):
            e = item.expr
            if e is None:
                raise PlanError("SELECT * is not valid with aggregation")
            if isinstance(e, AggRef):
                spec = AggSpec(e.func, e.expr, item.alias or f"agg{idx}")
                out_cols.append((spec.alias, spec.bind(combined)))
                aggs.append(spec)
            else:
                r = str(e)
                if r not in key_reprs:
                    raise PlanError(f"non-aggregate select item {r} must appear in GROUP BY")
                pos = key_reprs[r]
                alias = item.alias or (e.name if isinstance(e, Col) else f"k{pos}")
                keys[pos] = (keys[pos][0], alias)
                out_cols.append((alias, e.bind(combined)))
        if block.having is not None:
            having = _rewrite_having(block.having, combined, aggs)
        schema = Schema(tuple(out_cols)) if out_cols else Schema(
            tuple((a, e.bind(combined)) for e, a in keys)
        )
    else:
        project = []
        if len(block.items) == 1 and block.items[0].expr is None:
            for n, t in combined.columns:
                project.append((Col(n), n))
                out_cols.append((n, t))
        else:
            for idx, item in enumerate(block.items):
                e = item.expr
                if e is None:
                    raise PlanError("* must be the only select item")
                t = e.bind(combined)
                alias = item.alias or (e.name if isinstance(e, Col) else f"col{idx}")
                project.append((e, alias))
                out_cols.append((alias, t))
        schema = Schema(tuple(out_cols))

    return BoundBlock(
        source=block.source,
        joins=joins,
        filters=filters,
        post_join_filter=post,
        keys=keys,
        aggs=aggs,
        having=having,
        project=project,
        schema=schema,
        grouped=grouped,
        base_tables=[r for r in schemas if not r.startswith("@")],
    )


def _rewrite_having(pred: Expr, schema: Schema, aggs: List[AggSpec]) -> Expr:
    """Replace aggregate calls in HAVING with references to (hidden, if not
    selected) aggregation output columns."""

    def walk(e: Expr) -> Expr:
        if isinstance(e, AggRef):
            for spec in aggs:
                if spec.func == e.func and str(spec.expr) == str(e.expr):
                    return Col(spec.alias)
            spec = AggSpec(e.func, e.expr, f"_h{len(aggs)}")
            spec.bind(schema)
            aggs.append(spec)
            return Col(spec.alias)
        if isinstance(e, And):
            return And([walk(p) for p in e.parts])
        if isinstance(e, Cmp):
            return Cmp(e.op, walk(e.left), walk(e.right))
        return e

    return walk(pred)


def bind(node, catalog: Catalog, session=None):
    if isinstance(node, SetOpNode):
        left = bind(node.left, catalog, session)
        right = bind(node.right, catalog, session)
        if len(left.schema.columns) != len(right.schema.columns):
            raise PlanError("set operation arity mismatch")
        for (ln, lt), (rn, rt) in zip(left.schema.columns, right.schema.columns):
            if lt != rt:
                raise PlanError(f"set operation type mismatch: {ln}:{lt} vs {rn}:{rt}")
        bases = sorted(set(left.base_tables) | set(right.base_tables))
        return BoundSetOp(node.kind, node.all, left, right,
                          list(left.schema.names), list(right.schema.names), left.schema, bases)
    return bind_block(node, catalog, session)


def lower(lp: LogicalPlan, catalog: Catalog, mode: CaptureMode = CaptureMode.INJECT,
          workload=None, session=None) -> PhysicalPlan:
    bound = bind(lp.root, catalog, session)
    pp = PhysicalPlan(bound, mode, CapturePlan(), pipelines=_describe_pipelines(bound))
    if workload is not None:
        from ..workload import apply_workload

        apply_workload(pp, workload)
    return pp


def _src_name(src) -> str:
    if isinstance(src, ScanNode):
        return src.table
    if isinstance(src, RowsScanNode):
        return src.base
    if isinstance(src, LineageScanNode):
        return src.base if src.direction == "backward" else f"@{src.handle}"
    return str(src)


def _describe_pipelines(node) -> List[str]:
    if isinstance(node, BoundSetOp):
        out = _describe_pipelines(node.left) + _describe_pipelines(node.right)
        out.append(f"SetOp {node.kind}{' all' if node.all else ''} *breaker*")
        return out
    blk: BoundBlock = node
    names = [_src_name(blk.source)] + [_src_name(j.right) for j in blk.joins]
    pipes: List[str] = []

    def scan_steps(name: str) -> List[str]:
        steps = [f"Scan {name}"]
        f = blk.filters.get(name)
        if f is not None:
            steps.append(f"Filter {f}")
        return steps

    build_of = names[0]
    acc = scan_steps(names[0])
    for i, j in enumerate(blk.joins):
        kind = "cross" if j.cross else ("theta" if j.theta is not None else ("pkfk" if j.pkfk else "hash"))
        if kind in ("hash", "pkfk"):
            acc.append(f"BuildHT[{kind}] {build_of}.{j.left_key} *breaker*")
            pipes.append(" | ".join(acc))
            acc = scan_steps(names[i + 1])
            acc.append(f"Probe {j.right_key}")
        else:
            acc += scan_steps(names[i + 1])[:1]
            acc.append(f"{'Cross' if j.cross else 'NLJoin'} {names[i + 1]}")
        build_of = f"P{len(pipes)}" if pipes else names[0]
    if blk.post_join_filter is not None:
        acc.append(f"Filter {blk.post_join_filter}")
    if blk.grouped:
        acc.append(f"GroupAgg [{', '.join(a for _, a in blk.keys)}] *breaker*")
        pipes.append(" | ".join(acc))
        tail = ["AggScan"]
        if blk.having is not None:
            tail.append(f"Filter {blk.having}")
        tail.append("Output")
        pipes.append(" | ".join(tail))
    else:
        acc.append("Output")
        pipes.append(" | ".join(acc))
    return pipes


# ---------------------------------------------------------------------------
# execution

@dataclass
class ExecStats:
    base_scans: int = 0
    index_scans: int = 0
    rows_scanned: int = 0
    capture_ms: float = 0.0
    execute_ms: float = 0.0
    finalize_ms: float = 0.0
    growth_events: int = 0
    index_bytes: int = 0
    materialization_points: int = 0
    out_rows: int = 0
    operator_ms: Dict[str, float] = field(default_factory=dict)

    def timed(self, label: str):
        return _OpTimer(self, label)


class _OpTimer:
    __slots__ = ("stats", "label", "t0")

    def __init__(self, stats: "ExecStats", label: str):
        self.stats = stats
        self.label = label

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        ms = (time.perf_counter() - self.t0) * 1e3
        self.stats.operator_ms[self.label] = self.stats.operator_ms.get(self.label, 0.0) + ms
        return False


class QueryResult:
    def __init__(self, output: Relation, bundle: Optional[LineageBundle], stats: ExecStats,
                 bound=None, handle: str = ""):
        self.output = output
        self.bundle = bundle
        self.stats = stats
        self.bound = bound
        self.handle = handle
        self.sql_text = ""

    @property
    def bundles(self) -> Dict[str, object]:
        return self.bundle.pairs if self.bundle is not None else {}


class _Batch:
    """Value columns plus one rid column per base relation; `unique` marks
    bases whose rid column still holds each base rid at most once."""

    __slots__ = ("cols", "rids", "unique", "n")

    def __init__(self, cols: Dict[str, np.ndarray], rids: Dict[str, np.ndarray], unique: Dict[str, bool]):
        self.cols = cols
        self.rids = rids
        self.unique = unique
        self.n = len(next(iter(cols.values()))) if cols else 0

    def take(self, idx: np.ndarray) -> "_Batch":
        return _Batch(
            {k: v[idx] for k, v in self.cols.items()},
            {k: v[idx] for k, v in self.rids.items()},
            dict(self.unique),
        )


class Executor:
    def __init__(self, catalog: Catalog, session=None):
        self.catalog = catalog
        self.session = session

    def execute(self, pp: PhysicalPlan, params: Optional[dict] = None) -> QueryResult:
        stats = ExecStats()
        t0 = time.perf_counter()
        if isinstance(pp.root, BoundSetOp):
            out = self._exec_setop(pp.root, pp, params, stats)
            result = QueryResult(out.relation, out.bundle, stats, bound=pp.root)
        else:
            result = self._exec_block(pp.root, pp, params, stats)
        stats.execute_ms = (time.perf_counter() - t0) * 1e3
        stats.materialization_points = pp.materialization_points()
        if result.bundle is not None and not result.bundle.pending:
            from ..operators import bundle_growth_events

            stats.growth_events = bundle_growth_events(result.bundle)
            stats.index_bytes = result.bundle.nbytes
        stats.out_rows = len(result.output) if result.output is not None else 0
        return result

    # -- set operations reuse the standalone operator implementations
    def _exec_setop(self, node: BoundSetOp, pp: PhysicalPlan, params, stats) -> OperatorOutput:
        left = self._as_opout(node.left, pp, params, stats)
        right = self._as_opout(node.right, pp, params, stats)
        fn = {
            ("union", False): set_union,
            ("union", True): bag_union,
            ("intersect", False): set_intersect,
            ("intersect", True): bag_intersect,
            ("except", False): set_diff,
            ("except", True): bag_diff,
        }[(node.kind, node.all)]
        return fn(left, right, node.attrs, mode=pp.mode, b_attrs=node.b_attrs)

    def _as_opout(self, node, pp: PhysicalPlan, params, stats) -> OperatorOutput:
        if isinstance(node, BoundSetOp):
            return self._exec_setop(node, pp, params, stats)
        res = self._exec_block(node, pp, params, stats)
        if res.bundle is not None:
            res.bundle.finalize()
        return OperatorOutput(res.output, res.bundle)

    # -- SPJA block
    def _exec_block(self, blk: BoundBlock, pp: PhysicalPlan, params, stats) -> QueryResult:
        with stats.timed(f"scan:{_src_name(blk.source)}"):
            batch = self._source_batch(blk.source, blk, params, stats)
        for j in blk.joins:
            name = _src_name(j.right)
            with stats.timed(f"scan:{name}"):
                probe = self._source_batch(j.right, blk, params, stats)
            with stats.timed(f"join:{name}"):
                batch = self._join(batch, probe, j)
        if blk.post_join_filter is not None:
            with stats.timed("filter:residual"):
                mask = np.asarray(blk.post_join_filter.eval(batch.cols, batch.n), dtype=bool)
                batch = batch.take(np.flatnonzero(mask))
        if blk.grouped:
            return self._exec_groupby(blk, batch, pp, stats)

        with stats.timed("project"):
            out_cols = {alias: np.asarray(e.eval(batch.cols, batch.n)) for e, alias in blk.project}
            out_rel = Relation(blk.schema, out_cols)
        bundle = None
        if pp.mode is not CaptureMode.NONE:
            t0 = time.perf_counter()
            with stats.timed("capture"):
                bundle = self._materialize_flat(batch, pp)
            stats.capture_ms += (time.perf_counter() - t0) * 1e3
        return QueryResult(out_rel, bundle, stats, bound=blk)

    def _source_batch(self, src, blk: BoundBlock, params, stats) -> _Batch:
        if isinstance(src, ScanNode):
            rel = self.catalog.get(src.table)
            stats.base_scans += 1
            stats.rows_scanned += len(rel)
            batch = _Batch(dict(rel.columns), {src.table: np.arange(len(rel), dtype=np.int64)},
                           {src.table: True})
        elif isinstance(src, RowsScanNode):
            rel = self.catalog.get(src.base)
            idx = np.asarray(src.rids, dtype=np.int64)
            stats.index_scans += 1
            stats.rows_scanned += len(idx)
            batch = _Batch({n: c[idx] for n, c in rel.columns.items()}, {src.base: idx}, {src.base: True})
        elif isinstance(src, LineageScanNode):
            batch = self._lineage_scan(src, params, stats)
        else:
            raise PlanError(f"unsupported source {src!r}")
        f = blk.filters.get(_src_name(src))
        if f is not None:
            mask = np.asarray(f.eval(batch.cols, batch.n), dtype=bool)
            batch = batch.take(np.flatnonzero(mask))
        return batch

    def _lineage_scan(self, src: LineageScanNode, params, stats) -> _Batch:
        if self.session is None:
            raise PlanError("lineage table functions need a session")
        rids_arg = src.ridset
        if isinstance(rids_arg, Param):
            if not params or rids_arg.name not in params:
                raise PlanError(f"missing rid-set parameter ${rids_arg.name}")
            rids_arg = params[rids_arg.name]
        rid_values, named_base = _ridset_values(rids_arg)
        base = src.base or named_base
        if src.direction == "backward":
            if base is None:
                raise PlanError("backward(...) needs a base relation")
            rids = self.session.backward_rids(src.handle, rid_values, base)
            rel = self.catalog.get(base)
            stats.index_scans += 1
            stats.rows_scanned += len(rids)
            idx = rids.astype(np.int64)
            return _Batch({n: c[idx] for n, c in rel.columns.items()}, {base: idx}, {base: True})
        out_rids = self.session.forward_rids(src.handle, rid_values, base)
        rel = self.session.results[src.handle].output
        stats.index_scans += 1
        stats.rows_scanned += len(out_rids)
        idx = out_rids.astype(np.int64)
        return _Batch({n: c[idx] for n, c in rel.columns.items()},
                      {f"@{src.handle}": idx}, {f"@{src.handle}": True})

    def _join(self, build: _Batch, probe: _Batch, j: BoundJoin) -> _Batch:
        if j.cross:
            ia = np.repeat(np.arange(build.n, dtype=np.int64), probe.n)
            ib = np.tile(np.arange(probe.n, dtype=np.int64), build.n)
            return self._merge(build, probe, ia, ib, dup_probe=True)
        if j.theta is not None:
            ia_parts, ib_parts = [], []
            for i in range(build.n):
                cols = dict(probe.cols)
                for name, col in build.cols.items():
                    v = col[i]
                    if isinstance(v, str):
                        arr = np.empty(probe.n, dtype=object)
                        arr[:] = v
                    else:
                        arr = np.full(probe.n, v)
                    cols[name] = arr
                hits = np.flatnonzero(np.asarray(j.theta.eval(cols, probe.n), dtype=bool))
                ia_parts.append(np.full(len(hits), i, dtype=np.int64))
                ib_parts.append(hits)
            ia = np.concatenate(ia_parts) if ia_parts else np.empty(0, np.int64)
            ib = np.concatenate(ib_parts) if ib_parts else np.empty(0, np.int64)
            return self._merge(build, probe, ia, ib, dup_probe=True)

        acodes, bcodes, ncodes = common_codes([build.cols[j.left_key]], [probe.cols[j.right_key]])
        if build.n:
            e_a, n_entries, rep = factorize([acodes])
        else:
            e_a, n_entries, rep = np.empty(0, np.int64), 0, np.empty(0, np.int64)
        counts = np.bincount(e_a, minlength=n_entries)
        if j.pkfk and build.n and counts.max(initial=0) > 1:
            raise PkFkViolation(f"build key {j.left_key!r} is not unique")
        sorted_a = np.argsort(e_a, kind="stable")
        starts = np.concatenate(([0], np.cumsum(counts)))[:-1] if n_entries else np.empty(0, np.int64)
        code_to_entry = np.full(ncodes, -1, dtype=np.int64)
        if n_entries:
            code_to_entry[acodes[rep]] = np.arange(n_entries)
        e_b = code_to_entry[bcodes] if probe.n else np.empty(0, np.int64)
        matched = np.flatnonzero(e_b >= 0)
        k = counts[e_b[matched]]
        total = int(k.sum())
        ib = np.repeat(matched, k)
        off = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(k) - k, k)
        ia = sorted_a[np.repeat(starts[e_b[matched]], k) + off]
        return self._merge(build, probe, ia, ib, dup_probe=not j.pkfk)

    @staticmethod
    def _merge(build: _Batch, probe: _Batch, ia: np.ndarray, ib: np.ndarray, dup_probe: bool) -> _Batch:
        cols = {n: c[ia] for n, c in build.cols.items()}
        for n, c in probe.cols.items():
            if n in cols:
                raise PlanError(f"duplicate column {n!r} across join sides")
            cols[n] = c[ib]
        rids = {b: r[ia] for b, r in build.rids.items()}
        rids.update({b: r[ib] for b, r in probe.rids.items()})
        # a build row can match many probe rows in any hash join; probe rows
        # stay unique only for pk-fk joins
        unique = {b: False for b in build.rids}
        unique.update({b: (probe.unique[b] and not dup_probe) for b in probe.rids})
        return _Batch(cols, rids, unique)

    # -- root materialization

    def _n_base(self, base: str) -> int:
        if base.startswith("@"):
            return len(self.session.results[base[1:]].output)
        return len(self.catalog.get(base))

    def _static_mask(self, cfg: BaseCaptureConfig, base: str) -> Optional[np.ndarray]:
        if cfg.static_pred is None or base.startswith("@"):
            return None
        rel = self.catalog.get(base)
        return np.asarray(cfg.static_pred.eval(rel.columns, len(rel)), dtype=bool)

    def _base_rel(self, base: str) -> Relation:
        if base.startswith("@"):
            return self.session.results[base[1:]].output
        return self.catalog.get(base)

    def _materialize_flat(self, batch: _Batch, pp: PhysicalPlan) -> LineageBundle:
        """1-to-1 root (selection/projection pipeline)."""
        bundle = LineageBundle()
        n_out = batch.n
        for base, rid_col in batch.rids.items():
            cfg = pp.capture.config_for(base)
            if cfg is None:
                continue
            pair = bundle.pair(base)
            if cfg.backward:
                vals = rid_col.astype(RID_DTYPE)
                keep = self._static_mask(cfg, base)
                if keep is not None:
                    vals = vals.copy()
                    vals[~keep[rid_col]] = MISS
                if cfg.partition_attrs:
                    idx = RidIndex(0)
                    idx.buckets = [
                        RidArray.preallocated(vals[o : o + 1][vals[o : o + 1] != MISS], counter=idx.counter)
                        for o in range(n_out)
                    ]
                    pair.partitioned_backward = partition_index(
                        idx, self._base_rel(base), cfg.partition_attrs, cfg.partition_domain
                    )
                else:
                    pair.backward = RidArray.preallocated(vals)
            if cfg.forward:
                n_base = self._n_base(base)
                if batch.unique.get(base, False):
                    vals = np.full(n_base, MISS, dtype=RID_DTYPE)
                    vals[rid_col] = np.arange(n_out, dtype=RID_DTYPE)
                    pair.forward = RidArray.preallocated(vals)
                else:
                    pair.forward = RidIndex.from_grouped(
                        n_base, rid_col, np.arange(n_out, dtype=RID_DTYPE), exact=True
                    )
        return bundle

    def _exec_groupby(self, blk: BoundBlock, batch: _Batch, pp: PhysicalPlan, stats) -> QueryResult:
        mode = pp.mode
        n = batch.n
        with stats.timed("groupby"):
            key_arrays = [np.asarray(e.eval(batch.cols, n)) for e, _ in blk.keys]
            if blk.keys:
                gids, n_groups, rep = factorize(key_arrays)
            else:
                gids, n_groups, rep = np.zeros(n, dtype=np.int64), 1, np.zeros(1, dtype=np.int64)

            all_cols: Dict[str, np.ndarray] = {}
            for (e, alias), arr in zip(blk.keys, key_arrays):
                all_cols[alias] = arr[rep]
            all_cols.update(compute_aggregates(gids, n_groups, blk.aggs, batch.cols, n))

        if blk.having is not None:
            mask = np.asarray(blk.having.eval(all_cols, n_groups), dtype=bool)
            surviving = np.flatnonzero(mask)
        else:
            surviving = None

        visible = list(blk.schema.names)
        out_cols = {a: (all_cols[a] if surviving is None else all_cols[a][surviving]) for a in visible}
        out_rel = Relation(blk.schema, out_cols)

        if mode is CaptureMode.NONE:
            return QueryResult(out_rel, None, stats, bound=blk)

        def eff_view():
            if surviving is None:
                return gids, np.arange(n, dtype=np.int64), n_groups
            new_id = np.full(n_groups, -1, dtype=np.int64)
            new_id[surviving] = np.arange(len(surviving))
            row_mask = new_id[gids] >= 0 if n else np.zeros(0, bool)
            rows = np.flatnonzero(row_mask)
            return new_id[gids[rows]], rows, len(surviving)

        def build_indexes(exact: bool) -> LineageBundle:
            bundle = LineageBundle()
            eff_gids, eff_rows, eff_groups = eff_view()
            for base, rid_col in batch.rids.items():
                cfg = pp.capture.config_for(base)
                if cfg is None:
                    continue
                pair = bundle.pair(base)
                base_rids = rid_col[eff_rows]
                keep = self._static_mask(cfg, base)
                if cfg.backward:
                    if keep is not None:
                        sel = keep[base_rids]
                        bw_g, bw_r = eff_gids[sel], base_rids[sel]
                    else:
                        bw_g, bw_r = eff_gids, base_rids
                    if cfg.partition_attrs:
                        plain = RidIndex.from_grouped(eff_groups, bw_g, bw_r.astype(RID_DTYPE), exact=True)
                        pair.partitioned_backward = partition_index(
                            plain, self._base_rel(base), cfg.partition_attrs, cfg.partition_domain
                        )
                    else:
                        pair.backward = RidIndex.from_grouped(
                            eff_groups, bw_g, bw_r.astype(RID_DTYPE), exact=exact
                        )
                if cfg.forward:
                    n_base = self._n_base(base)
                    if batch.unique.get(base, False):
                        # each base row feeds at most one group: rid array
                        vals = np.full(n_base, MISS, dtype=RID_DTYPE)
                        vals[base_rids] = eff_gids.astype(RID_DTYPE)
                        pair.forward = RidArray.preallocated(vals)
                    else:
                        pair.forward = RidIndex.from_grouped(
                            n_base, base_rids, eff_gids.astype(RID_DTYPE), exact=exact
                        )
                if cfg.pushdown_keys:
                    from ..workload import build_pushdown_state

                    pair.pushdown = build_pushdown_state(cfg, self._base_rel(base), base_rids, eff_gids, eff_groups)
            return bundle

        if mode is CaptureMode.DEFER:
            bundle = LineageBundle()

            def _finalize(bundle=bundle):
                t0 = time.perf_counter()
                bundle.pairs.update(build_indexes(exact=True).pairs)
                stats.finalize_ms += (time.perf_counter() - t0) * 1e3
                from ..operators import bundle_growth_events

                stats.growth_events = bundle_growth_events(bundle)
                stats.index_bytes = bundle.nbytes

            bundle.set_finalizer(_finalize)
            return QueryResult(out_rel, bundle, stats, bound=blk)

        t0 = time.perf_counter()
        with stats.timed("capture"):
            if mode is CaptureMode.CALLBACK:
                bundle = self._callback_groupby(batch, eff_view(), pp)
            else:
                bundle = build_indexes(exact=False)
        stats.capture_ms += (time.perf_counter() - t0) * 1e3
        return QueryResult(out_rel, bundle, stats, bound=blk)

    def _callback_groupby(self, batch: _Batch, eff, pp: PhysicalPlan) -> LineageBundle:
        """Same index shapes as Inject, one dynamic call per lineage edge."""
        eff_gids, eff_rows, eff_groups = eff
        bundle = LineageBundle()
        for base, rid_col in batch.rids.items():
            cfg = pp.capture.config_for(base)
            if cfg is None:
                continue
            pair = bundle.pair(base)
            keep = self._static_mask(cfg, base)
            bw = RidIndex(eff_groups) if cfg.backward and not cfg.partition_attrs else None
            fw = None
            if cfg.forward:
                n_base = self._n_base(base)
                fw = RidArray.full_miss(n_base) if batch.unique.get(base, False) else RidIndex(n_base)
            emit = _CallbackEdgeSink(bw, fw, keep).emit
            base_rids = rid_col[eff_rows]
            for pos in range(len(eff_rows)):
                emit(int(eff_gids[pos]), int(base_rids[pos]))
            pair.backward = bw
            pair.forward = fw
            if cfg.partition_attrs:
                plain = RidIndex.from_grouped(eff_groups, eff_gids, base_rids.astype(RID_DTYPE), exact=True)
                pair.partitioned_backward = partition_index(
                    plain, self._base_rel(base), cfg.partition_attrs, cfg.partition_domain
                )
        return bundle


class _CallbackEdgeSink:
    __slots__ = ("bw", "fw", "keep")

    def __init__(self, bw, fw, keep):
        self.bw = bw
        self.fw = fw
        self.keep = keep

    def emit(self, group: int, base_rid: int) -> None:
        if self.bw is not None and (self.keep is None or self.keep[base_rid]):
            self.bw.append(group, base_rid)
        if self.fw is not None:
            if isinstance(self.fw, RidArray):
                self.fw.set_at(base_rid, group)
            else:
                self.fw.append(base_rid, group)


def _ridset_values(arg) -> Tuple[np.ndarray, Optional[str]]:
    from ..lineage_query import RidSet

    if isinstance(arg, RidSet):
        return arg.rids, arg.relation
    if isinstance(arg, (list, tuple)):
        return np.asarray(arg, dtype=np.int64), None
    if isinstance(arg, np.ndarray):
        return arg.astype(np.int64), None
    if isinstance(arg, (int, np.integer)):
        return np.asarray([int(arg)], dtype=np.int64), None
    raise PlanError(f"cannot interpret rid set {arg!r}")
