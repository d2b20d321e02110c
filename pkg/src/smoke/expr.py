"""Scalar expression and predicate trees, evaluated vectorized over columns.

Expressions are bound against a schema before evaluation; binding resolves
column types, rejects mismatches, and rewrites date-string literals compared
against date columns into day numbers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .relstore import Schema, date_to_days


class ExprError(Exception):
    pass


_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")

Columns = Dict[str, np.ndarray]


class Expr:
    def eval(self, cols: Columns, n: int) -> np.ndarray:
        raise NotImplementedError

    def bind(self, schema: Schema) -> str:
        """Type-check against a schema; returns the result dtype."""
        raise NotImplementedError

    def columns(self) -> List[str]:
        out: List[str] = []
        self._collect(out)
        return out

    def _collect(self, out: List[str]) -> None:
        pass


@dataclass
class Col(Expr):
    name: str

    def eval(self, cols, n):
        return cols[self.name]

    def bind(self, schema):
        if self.name not in schema:
            raise ExprError(f"unknown column {self.name!r}")
        return schema.dtype_of(self.name)

    def _collect(self, out):
        out.append(self.name)

    def __str__(self):
        return self.name


@dataclass
class Lit(Expr):
    value: object

    def eval(self, cols, n):
        if isinstance(self.value, str):
            arr = np.empty(n, dtype=object)
            arr[:] = self.value
            return arr
        return np.full(n, self.value)

    def bind(self, schema):
        if isinstance(self.value, bool):
            return "bool"
        if isinstance(self.value, int):
            return "int64"
        if isinstance(self.value, float):
            return "float64"
        if isinstance(self.value, str):
            return "text"
        raise ExprError(f"unsupported literal {self.value!r}")

    def __str__(self):
        return repr(self.value)


@dataclass
class Param(Expr):
    """Named placeholder ($name), bound at execution time."""

    name: str

    def eval(self, cols, n):
        raise ExprError(f"unbound parameter ${self.name}")

    def bind(self, schema):
        raise ExprError(f"parameter ${self.name} not substituted before binding")

    def __str__(self):
        return f"${self.name}"


_ARITH = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.true_divide,
}


@dataclass
class Arith(Expr):
    op: str
    left: Expr
    right: Expr

    def eval(self, cols, n):
        return _ARITH[self.op](self.left.eval(cols, n), self.right.eval(cols, n))

    def bind(self, schema):
        lt, rt = self.left.bind(schema), self.right.bind(schema)
        numeric = {"int64", "float64", "date", "bool"}
        if lt not in numeric or rt not in numeric:
            raise ExprError(f"arithmetic {self.op} over non-numeric types {lt}/{rt}")
        if self.op == "/":
            return "float64"
        return "float64" if "float64" in (lt, rt) else "int64"

    def _collect(self, out):
        self.left._collect(out)
        self.right._collect(out)

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


_CMP = {
    "=": np.equal,
    "<>": np.not_equal,
    "!=": np.not_equal,
    "<": np.less,
    "<=": np.less_equal,
    ">": np.greater,
    ">=": np.greater_equal,
}


@dataclass
class Cmp(Expr):
    op: str
    left: Expr
    right: Expr

    def eval(self, cols, n):
        return np.asarray(_CMP[self.op](self.left.eval(cols, n), self.right.eval(cols, n)), dtype=bool)

    def bind(self, schema):
        lt = self.left.bind(schema)
        # date columns compare against 'YYYY-MM-DD' literals as day numbers
        if lt == "date" and isinstance(self.right, Lit) and isinstance(self.right.value, str):
            if not _DATE_RE.match(self.right.value):
                raise ExprError(f"cannot compare date column with {self.right.value!r}")
            self.right = Lit(date_to_days(self.right.value))
        rt = self.right.bind(schema)
        if lt == "date" and isinstance(self.left, Lit) and isinstance(self.left.value, str):
            raise ExprError("date literal must be on the right-hand side")
        groups = ({"int64", "float64", "date", "bool"}, {"text"})
        for g in groups:
            if lt in g and rt in g:
                return "bool"
        raise ExprError(f"cannot compare {lt} with {rt}")

    def _collect(self, out):
        self.left._collect(out)
        self.right._collect(out)

    def __str__(self):
        return f"{self.left} {self.op} {self.right}"


@dataclass
class And(Expr):
    parts: List[Expr]

    def eval(self, cols, n):
        out = self.parts[0].eval(cols, n)
        for p in self.parts[1:]:
            out = out & p.eval(cols, n)
        return out

    def bind(self, schema):
        for p in self.parts:
            if p.bind(schema) != "bool":
                raise ExprError("AND over non-boolean operand")
        return "bool"

    def _collect(self, out):
        for p in self.parts:
            p._collect(out)

    def __str__(self):
        return " and ".join(str(p) for p in self.parts)


@dataclass
class Or(Expr):
    parts: List[Expr]

    def eval(self, cols, n):
        out = self.parts[0].eval(cols, n)
        for p in self.parts[1:]:
            out = out | p.eval(cols, n)
        return out

    def bind(self, schema):
        for p in self.parts:
            if p.bind(schema) != "bool":
                raise ExprError("OR over non-boolean operand")
        return "bool"

    def _collect(self, out):
        for p in self.parts:
            p._collect(out)

    def __str__(self):
        return "(" + " or ".join(str(p) for p in self.parts) + ")"


@dataclass
class Not(Expr):
    inner: Expr

    def eval(self, cols, n):
        return ~self.inner.eval(cols, n)

    def bind(self, schema):
        if self.inner.bind(schema) != "bool":
            raise ExprError("NOT over non-boolean operand")
        return "bool"

    def _collect(self, out):
        self.inner._collect(out)

    def __str__(self):
        return f"not ({self.inner})"


@dataclass
class InList(Expr):
    item: Expr
    values: List[object]

    def eval(self, cols, n):
        v = self.item.eval(cols, n)
        return np.isin(v, np.asarray(self.values, dtype=object if isinstance(self.values[0], str) else None))

    def bind(self, schema):
        t = self.item.bind(schema)
        want_str = t == "text"
        for x in self.values:
            if want_str != isinstance(x, str):
                raise ExprError(f"IN list value {x!r} incompatible with {t}")
        if t == "date":
            self.values = [date_to_days(x) if isinstance(x, str) else x for x in self.values]
        return "bool"

    def _collect(self, out):
        self.item._collect(out)

    def __str__(self):
        return f"{self.item} in ({', '.join(map(repr, self.values))})"


@dataclass
class Case(Expr):
    whens: List[Tuple[Expr, Expr]]
    otherwise: Expr

    def eval(self, cols, n):
        vals = [np.asarray(v.eval(cols, n)) for _, v in self.whens]
        other = np.asarray(self.otherwise.eval(cols, n))
        if other.dtype == object or any(v.dtype == object for v in vals):
            out = other.astype(object).copy()
        else:
            out = other.astype(np.result_type(other.dtype, *[v.dtype for v in vals])).copy()
        # later WHENs must not override earlier ones
        taken = np.zeros(n, dtype=bool)
        for (cond, _), v in zip(self.whens, vals):
            m = np.asarray(cond.eval(cols, n), dtype=bool) & ~taken
            out[m] = v[m]
            taken |= m
        return out

    def bind(self, schema):
        ts = set()
        for cond, val in self.whens:
            if cond.bind(schema) != "bool":
                raise ExprError("CASE condition must be boolean")
            ts.add(val.bind(schema))
        ts.add(self.otherwise.bind(schema))
        if ts <= {"int64", "float64", "bool"}:
            return "float64" if "float64" in ts else "int64"
        if ts == {"text"}:
            return "text"
        raise ExprError(f"CASE branches have incompatible types {ts}")

    def _collect(self, out):
        for cond, val in self.whens:
            cond._collect(out)
            val._collect(out)
        self.otherwise._collect(out)

    def __str__(self):
        ws = " ".join(f"when {c} then {v}" for c, v in self.whens)
        return f"case {ws} else {self.otherwise} end"


def _extract_year(days: np.ndarray) -> np.ndarray:
    d = days.astype("datetime64[D]")
    return d.astype("datetime64[Y]").astype(np.int64) + 1970


def _extract_month(days: np.ndarray) -> np.ndarray:
    d = days.astype("datetime64[D]")
    return d.astype("datetime64[M]").astype(np.int64) % 12 + 1


_FUNCS = {
    "sqrt": (np.sqrt, "float64"),
    "abs": (np.abs, None),
    "year": (_extract_year, "int64"),
    "month": (_extract_month, "int64"),
}


@dataclass
class Func(Expr):
    name: str
    arg: Expr

    def eval(self, cols, n):
        fn, _ = _FUNCS[self.name]
        return fn(np.asarray(self.arg.eval(cols, n)))

    def bind(self, schema):
        if self.name not in _FUNCS:
            raise ExprError(f"unknown function {self.name!r}")
        t = self.arg.bind(schema)
        if self.name in ("year", "month") and t != "date":
            raise ExprError(f"extract({self.name}) needs a date argument, got {t}")
        if self.name in ("sqrt", "abs") and t not in ("int64", "float64"):
            raise ExprError(f"{self.name} needs a numeric argument, got {t}")
        out = _FUNCS[self.name][1]
        return out if out is not None else t

    def _collect(self, out):
        self.arg._collect(out)

    def __str__(self):
        if self.name in ("year", "month"):
            return f"extract({self.name} from {self.arg})"
        return f"{self.name}({self.arg})"


AGG_FUNCS = ("count", "sum", "avg", "min", "max", "count_distinct")


@dataclass
class AggSpec:
    """One aggregate in a group-by: func over expr (expr None for count(*))."""

    func: str
    expr: Optional[Expr]
    alias: str

    def __post_init__(self):
        if self.func not in AGG_FUNCS:
            raise ExprError(f"unsupported aggregate {self.func!r}")
        if self.func != "count" and self.expr is None:
            raise ExprError(f"{self.func} needs an argument")

    def bind(self, schema: Schema) -> str:
        if self.expr is None:
            return "int64"
        t = self.expr.bind(schema)
        if self.func in ("count", "count_distinct"):
            return "int64"
        if self.func in ("sum", "min", "max"):
            if t not in ("int64", "float64", "date"):
                raise ExprError(f"{self.func} over non-numeric type {t}")
            return t if self.func != "sum" else ("int64" if t == "int64" else "float64")
        if self.func == "avg":
            if t not in ("int64", "float64"):
                raise ExprError(f"avg over non-numeric type {t}")
            return "float64"
        raise AssertionError

    def __str__(self):
        if self.func == "count" and self.expr is None:
            return "count(*)"
        if self.func == "count_distinct":
            return f"count(distinct {self.expr})"
        return f"{self.func}({self.expr})"


def substitute_params(e: Expr, params: Dict[str, object]) -> Expr:
    """Replace Param nodes with literals; returns a new tree where needed."""
    if isinstance(e, Param):
        if e.name not in params:
            raise ExprError(f"missing value for parameter ${e.name}")
        return Lit(params[e.name])
    if isinstance(e, Arith):
        return Arith(e.op, substitute_params(e.left, params), substitute_params(e.right, params))
    if isinstance(e, Cmp):
        return Cmp(e.op, substitute_params(e.left, params), substitute_params(e.right, params))
    if isinstance(e, And):
        return And([substitute_params(p, params) for p in e.parts])
    if isinstance(e, Or):
        return Or([substitute_params(p, params) for p in e.parts])
    if isinstance(e, Not):
        return Not(substitute_params(e.inner, params))
    if isinstance(e, InList):
        return InList(substitute_params(e.item, params), list(e.values))
    if isinstance(e, Case):
        return Case(
            [(substitute_params(c, params), substitute_params(v, params)) for c, v in e.whens],
            substitute_params(e.otherwise, params),
        )
    if isinstance(e, Func):
        return Func(e.name, substitute_params(e.arg, params))
    return e
