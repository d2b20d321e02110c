"""Logical plan nodes and binding against a catalog.

The parser produces SelectBlock/SetOpNode trees; `bind` validates names and
types, routes WHERE conjuncts to the relations they touch, classifies joins
(hash equi-join, pk-fk, nested-loop theta, cross), and normalizes the select
list of grouped queries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from ..expr import AggSpec, Expr
from ..relstore import Relation, Schema


class PlanError(Exception):
    pass


@dataclass
class ScanNode:
    table: str


@dataclass
class LineageScanNode:
    direction: str  # backward | forward
    handle: str
    ridset: object  # Param or list of rids
    base: Optional[str]


@dataclass
class RowsScanNode:
    """Pre-resolved rid subset of a base relation (data-skipping reads)."""

    base: str
    rids: object  # np.ndarray


@dataclass
class SelectItem:
    expr: Optional[Expr]  # None for '*'
    alias: Optional[str]


@dataclass
class SelectBlock:
    items: List[SelectItem]
    source: object  # ScanNode | LineageScanNode
    joins: List[Tuple[object, Optional[Expr], bool]]  # (item, on, is_cross)
    where: Optional[Expr]
    group_by: List[Expr]
    having: Optional[Expr]


@dataclass
class SetOpNode:
    kind: str  # union | intersect | except
    all: bool
    left: object
    right: object


@dataclass
class LogicalPlan:
    root: object

    def __str__(self) -> str:
        return plan_text(self.root)


def plan_text(node, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(node, SetOpNode):
        name = {"union": "Union", "intersect": "Intersect", "except": "Except"}[node.kind]
        head = f"{pad}{name}{' All' if node.all else ''}\n"
        return head + plan_text(node.left, indent + 1) + plan_text(node.right, indent + 1)
    if isinstance(node, SelectBlock):
        lines = []
        if node.group_by or _items_have_aggs(node.items) or node.having:
            keys = ", ".join(str(e) for e in node.group_by)
            lines.append(f"{pad}GroupBy [{keys}]")
            if node.having is not None:
                lines.append(f"{pad}  Having {node.having}")
        else:
            cols = "*" if node.items[0].expr is None else ", ".join(str(i.expr) for i in node.items)
            lines.append(f"{pad}Project [{cols}]")
        if node.where is not None:
            lines.append(f"{pad}  Select {node.where}")
        src = node.source
        lines.append(f"{pad}  {_source_text(src)}")
        for item, cond, cross in node.joins:
            tag = "CrossJoin" if cross else f"Join on {cond}"
            lines.append(f"{pad}  {tag} {_source_text(item)}")
        return "\n".join(lines) + "\n"
    return f"{pad}{node}\n"


def _source_text(src) -> str:
    if isinstance(src, ScanNode):
        return f"Scan {src.table}"
    if isinstance(src, LineageScanNode):
        base = f", {src.base}" if src.base else ""
        return f"LineageScan {src.direction}({src.handle}{base})"
    return str(src)


def _items_have_aggs(items: List[SelectItem]) -> bool:
    from .parser import AggRef

    def has(e) -> bool:
        if isinstance(e, AggRef):
            return True
        for attr in ("left", "right", "inner", "item", "arg"):
            sub = getattr(e, attr, None)
            if sub is not None and isinstance(sub, Expr) and has(sub):
                return True
        if hasattr(e, "parts"):
            return any(has(p) for p in e.parts)
        return False

    return any(i.expr is not None and has(i.expr) for i in items)


# ---------------------------------------------------------------------------
# bound form

@dataclass
class BoundJoin:
    right: object  # bound source
    left_key: Optional[str]
    right_key: Optional[str]
    theta: Optional[Expr]
    cross: bool
    pkfk: bool = False


@dataclass
class BoundBlock:
    source: object
    joins: List[BoundJoin]
    filters: Dict[str, Expr]  # relation name -> conjunction applied at its scan
    post_join_filter: Optional[Expr]
    keys: List[Tuple[Expr, str]]
    aggs: List[AggSpec]
    having: Optional[Expr]
    project: Optional[List[Tuple[Expr, str]]]  # ungrouped projection
    schema: Schema
    grouped: bool
    base_tables: List[str]


@dataclass
class BoundSetOp:
    kind: str
    all: bool
    left: object
    right: object
    attrs: List[str]
    b_attrs: List[str]
    schema: Schema
    base_tables: List[str]


class Catalog:
    """Named relations plus key metadata used for pk-fk join detection."""

    def __init__(self) -> None:
        self.relations: Dict[str, Relation] = {}
        self.primary_keys: Dict[str, str] = {}

    def add(self, rel: Relation, name: Optional[str] = None, primary_key: Optional[str] = None) -> None:
        name = name or rel.name
        if not name:
            raise PlanError("relation needs a name to enter the catalog")
        rel.name = name
        self.relations[name] = rel
        if primary_key is not None:
            self.primary_keys[name] = primary_key

    def get(self, name: str) -> Relation:
        if name not in self.relations:
            raise PlanError(f"unknown relation {name!r}")
        return self.relations[name]

    def schema_of_source(self, src, session=None) -> Tuple[Schema, str]:
        if isinstance(src, ScanNode):
            return self.get(src.table).schema, src.table
        if isinstance(src, RowsScanNode):
            return self.get(src.base).schema, src.base
        if isinstance(src, LineageScanNode):
            if src.direction == "backward":
                if src.base is None:
                    raise PlanError("backward(...) needs a base relation name")
                return self.get(src.base).schema, src.base
            if session is None or src.handle not in session.results:
                raise PlanError(f"unknown result handle {src.handle!r}")
            out_rel = session.results[src.handle].output
            return out_rel.schema, f"@{src.handle}"
        raise PlanError(f"unsupported FROM item {src!r}")
