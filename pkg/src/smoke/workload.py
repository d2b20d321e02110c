"""Workload-aware capture optimizations.

A WorkloadSpec declares the lineage-consuming query templates expected
after a base query.  At lowering time it drives:

* prune            — capture nothing for unreferenced relations/directions
* pushdown_selection — test a static predicate before writing backward rids
* enable_data_skipping — partition backward rid arrays by parameter attrs
* pushdown_groupby — maintain per-(group, extra-key) aggregate state so a
  matching consuming aggregation is answered with zero base-table scans

Every optimization leaves the base query's output untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .expr import AggSpec, Expr
from .relstore import Relation

DISTRIBUTIVE_AGGS = ("count", "sum", "avg", "min", "max")


class WorkloadError(Exception):
    pass


@dataclass
class Template:
    direction: str  # backward | forward
    base_relation: str
    static_predicate: Optional[Expr] = None
    param_attrs: Optional[Tuple[str, ...]] = None
    param_domain: Optional[List[tuple]] = None
    extra_groupby_keys: Optional[List[str]] = None
    extra_groupby_aggs: Optional[List[AggSpec]] = None


@dataclass
class WorkloadSpec:
    templates: List[Template] = field(default_factory=list)

    @staticmethod
    def from_json(doc) -> "WorkloadSpec":
        """Accepts the documented JSON shape (see README): a dict with a
        "templates" list; predicates and aggregates are SQL strings."""
        from .planner.parser import AggRef, _Parser, parse_predicate

        if isinstance(doc, str):
            doc = json.loads(doc)
        spec = WorkloadSpec()
        for t in doc.get("templates", []):
            direction = t.get("direction", "backward")
            if direction not in ("backward", "forward"):
                raise WorkloadError(f"bad direction {direction!r}")
            tpl = Template(direction=direction, base_relation=t["base_relation"])
            if t.get("static_predicate"):
                tpl.static_predicate = parse_predicate(t["static_predicate"])
            if t.get("param_predicates"):
                attrs, domain_cols = [], []
                for p in t["param_predicates"]:
                    attrs.append(p["attr"])
                    domain_cols.append([tuple([v]) if not isinstance(v, (list, tuple)) else tuple(v)
                                        for v in p["domain"]])
                tpl.param_attrs = tuple(attrs)
                if len(attrs) == 1:
                    tpl.param_domain = domain_cols[0]
                else:
                    # composite key: cross product of the per-attr domains
                    dom = [()]
                    for col in domain_cols:
                        dom = [d + v for d in dom for v in col]
                    tpl.param_domain = dom
            if t.get("extra_groupby"):
                eg = t["extra_groupby"]
                tpl.extra_groupby_keys = list(eg["keys"])
                specs = []
                for i, s in enumerate(eg["aggs"]):
                    p = _Parser(s)
                    ref = p.parse_expr()
                    if not isinstance(ref, AggRef):
                        raise WorkloadError(f"bad aggregate {s!r}")
                    specs.append(AggSpec(ref.func, ref.expr, f"p{i}"))
                tpl.extra_groupby_aggs = specs
            spec.templates.append(tpl)
        return spec


def apply_workload(pp, w: WorkloadSpec) -> None:
    prune(pp, w)
    pushdown_selection(pp, w)
    enable_data_skipping(pp, w)
    pushdown_groupby(pp, w)


def prune(pp, w: WorkloadSpec):
    """Capture only relations/directions some template references; an empty
    workload disables capture entirely."""
    from .planner.physical import BaseCaptureConfig

    pp.capture.workload_given = True
    per_base = pp.capture.per_base
    for t in w.templates:
        cfg = per_base.setdefault(t.base_relation, BaseCaptureConfig(backward=False, forward=False))
        if t.direction == "backward":
            cfg.backward = True
        else:
            cfg.forward = True
    return pp


def pushdown_selection(pp, w: WorkloadSpec):
    for t in w.templates:
        if t.static_predicate is None:
            continue
        cfg = pp.capture.per_base.get(t.base_relation)
        if cfg is None or not cfg.backward:
            continue
        cfg.static_pred = t.static_predicate
    return pp


def enable_data_skipping(pp, w: WorkloadSpec):
    for t in w.templates:
        if not t.param_attrs:
            continue
        cfg = pp.capture.per_base.get(t.base_relation)
        if cfg is None or not cfg.backward:
            continue
        cfg.partition_attrs = t.param_attrs
        cfg.partition_domain = t.param_domain
    return pp


def pushdown_groupby(pp, w: WorkloadSpec):
    for t in w.templates:
        if not t.extra_groupby_keys:
            continue
        for spec in t.extra_groupby_aggs or []:
            if spec.func not in DISTRIBUTIVE_AGGS:
                raise WorkloadError(f"{spec.func} is not algebraic/distributive; cannot push down")
        cfg = pp.capture.per_base.get(t.base_relation)
        if cfg is None:
            continue
        cfg.pushdown_keys = list(t.extra_groupby_keys)
        cfg.pushdown_aggs = list(t.extra_groupby_aggs or [])
    return pp


class PushdownState:
    """Per-(output group, extra-key) aggregate table materialized during
    capture.  AVG is carried as a (sum, count) pair and finalized on fetch."""

    def __init__(self, keys: List[str], aggs: List[AggSpec], key_types: Dict[str, str]):
        self.keys_ = list(keys)
        self.aggs = list(aggs)
        self.key_types = key_types
        self.group_of_row: np.ndarray = np.empty(0, np.int64)
        self.extra_rows: List[tuple] = []
        self.agg_values: Dict[str, np.ndarray] = {}
        self._by_group: Dict[int, List[int]] = {}

    def match(self, func: str, expr_repr: Optional[str]) -> Optional[str]:
        for s in self.aggs:
            if s.func == func and (str(s.expr) if s.expr is not None else None) == expr_repr:
                return s.alias
        return None

    def type_of(self, attr_repr: str) -> str:
        return self.key_types.get(attr_repr, "float64")

    def fetch(self, group_rids: Sequence[int]) -> List[dict]:
        rows = []
        for g in group_rids:
            for pos in self._by_group.get(int(g), []):
                rows.append({
                    "group_rid": int(g),
                    "extra": self.extra_rows[pos],
                    "aggs": {a: self.agg_values[a][pos] for a in self.agg_values},
                })
        return rows

    @property
    def nbytes(self) -> int:
        return sum(v.nbytes for v in self.agg_values.values()) + 16 * len(self.extra_rows)


def build_pushdown_state(cfg, base_rel: Relation, base_rids: np.ndarray, gids: np.ndarray,
                         n_groups: int) -> PushdownState:
    """Aggregate the captured rows once more, keyed by (group, extra attrs).
    Piggy-backs on the base query's scan: values come from the already-
    gathered base rows, not a fresh table scan."""
    from .operators import compute_aggregates, factorize

    keys = cfg.pushdown_keys
    aggs = cfg.pushdown_aggs
    idx = base_rids.astype(np.int64)
    key_cols = [base_rel.columns[k][idx] for k in keys]
    n = len(idx)
    if n:
        ecodes, n_extra, erep = factorize(key_cols)
    else:
        ecodes, n_extra, erep = np.zeros(0, np.int64), 0, np.zeros(0, np.int64)
    combined = gids * max(n_extra, 1) + ecodes
    if n:
        ccodes, n_comb, crep = factorize([combined])
    else:
        ccodes, n_comb, crep = np.zeros(0, np.int64), 0, np.zeros(0, np.int64)
    row_cols = {name: base_rel.columns[name][idx] for name in base_rel.schema.names}
    agg_vals = compute_aggregates(ccodes, n_comb, aggs, row_cols, n)
    state = PushdownState(keys, aggs, {k: base_rel.schema.dtype_of(k) for k in keys})
    state.group_of_row = gids[crep] if n else np.empty(0, np.int64)
    state.extra_rows = [tuple(col[crep[i]] for col in key_cols) for i in range(n_comb)]
    state.agg_values = agg_vals
    for pos, g in enumerate(state.group_of_row.tolist()):
        state._by_group.setdefault(g, []).append(pos)
    return state
