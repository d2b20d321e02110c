"""SQL-subset parser.

Grammar (case-insensitive keywords):

    query       := block ((UNION | INTERSECT | EXCEPT) [ALL] block)*
    block       := SELECT items FROM from_item (JOIN from_item ON pred)*
                   [WHERE pred] [GROUP BY expr_list] [HAVING pred]
    items       := '*' | expr [AS ident] (',' expr [AS ident])*
    from_item   := ident
                 | BACKWARD '(' ident ',' ridset [',' ident] ')'
                 | FORWARD  '(' ident ',' ridset [',' ident] ')'
    ridset      := '$' ident | '[' int (',' int)* ']'
    pred        := or-combination of comparisons; comparisons support
                   =, <>, !=, <, <=, >, >=, IN (...), BETWEEN x AND y
    expr        := arithmetic over columns/literals, sqrt(x), abs(x),
                   extract(year|month from x), CASE WHEN ... END,
                   count(*), count(distinct x), sum/avg/min/max(x)

ORDER BY is rejected (hash-based execution has no sort).  Errors carry the
offending token position.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List, Optional, Tuple

from ..expr import And, Arith, Case, Cmp, Col, Expr, Func, InList, Lit, Not, Or, Param
from .logical import LineageScanNode, LogicalPlan, ScanNode, SelectBlock, SelectItem, SetOpNode


class ParseError(Exception):
    def __init__(self, msg: str, pos: int = -1):
        super().__init__(f"{msg} (at position {pos})" if pos >= 0 else msg)
        self.pos = pos


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>\d+\.\d*(e[+-]?\d+)?|\.\d+|\d+(e[+-]?\d+)?)
  | (?P<str>'(?:[^'])*')
  | (?P<param>\$[A-Za-z_][A-Za-z_0-9]*)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|<>|!=|=|<|>|\+|-|\*|/|\(|\)|,|\.|\[|\])
    """,
    re.VERBOSE | re.IGNORECASE,
)

KEYWORDS = {
    "select", "from", "where", "group", "by", "having", "join", "on", "as",
    "and", "or", "not", "in", "between", "union", "intersect", "except", "all",
    "distinct", "case", "when", "then", "else", "end", "extract", "year",
    "month", "backward", "forward", "cross", "order", "count", "sum", "avg",
    "min", "max", "true", "false",
}


@dataclass
class Token:
    kind: str  # num | str | ident | kw | op | param
    text: str
    pos: int


def tokenize(text: str) -> List[Token]:
    out: List[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        pos = m.end()
        if m.lastgroup == "ws":
            continue
        kind = m.lastgroup
        tok = m.group()
        if kind == "ident" and tok.lower() in KEYWORDS:
            out.append(Token("kw", tok.lower(), m.start()))
        else:
            out.append(Token(kind, tok, m.start()))
    out.append(Token("eof", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    # -- token helpers
    def peek(self) -> Token:
        return self.toks[self.i]

    def next(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def accept(self, kind: str, text: Optional[str] = None) -> Optional[Token]:
        t = self.peek()
        if t.kind == kind and (text is None or t.text == text):
            return self.next()
        return None

    def expect(self, kind: str, text: Optional[str] = None) -> Token:
        t = self.accept(kind, text)
        if t is None:
            got = self.peek()
            want = text or kind
            raise ParseError(f"expected {want!r}, got {got.text!r}", got.pos)
        return t

    # -- entry
    def parse_query(self) -> LogicalPlan:
        left = self.parse_block()
        while True:
            t = self.peek()
            if t.kind == "kw" and t.text in ("union", "intersect", "except"):
                self.next()
                all_ = self.accept("kw", "all") is not None
                right = self.parse_block()
                left = SetOpNode(t.text, all_, left, right)
            else:
                break
        self.expect("eof")
        return LogicalPlan(left)

    def parse_block(self) -> SelectBlock:
        self.expect("kw", "select")
        items = self.parse_select_items()
        self.expect("kw", "from")
        source = self.parse_from_item()
        joins: List[Tuple[object, Optional[Expr], bool]] = []
        while True:
            if self.accept("kw", "join"):
                item = self.parse_from_item()
                self.expect("kw", "on")
                cond = self.parse_pred()
                joins.append((item, cond, False))
            elif self.peek().kind == "kw" and self.peek().text == "cross":
                self.next()
                self.expect("kw", "join")
                item = self.parse_from_item()
                joins.append((item, None, True))
            else:
                break
        where = None
        if self.accept("kw", "where"):
            where = self.parse_pred()
        group_by: List[Expr] = []
        if self.accept("kw", "group"):
            self.expect("kw", "by")
            group_by.append(self.parse_expr())
            while self.accept("op", ","):
                group_by.append(self.parse_expr())
        having = None
        if self.accept("kw", "having"):
            having = self.parse_pred()
        t = self.peek()
        if t.kind == "kw" and t.text == "order":
            raise ParseError("ORDER BY is not supported (hash-based execution)", t.pos)
        return SelectBlock(items, source, joins, where, group_by, having)

    def parse_select_items(self) -> List[SelectItem]:
        if self.accept("op", "*"):
            return [SelectItem(None, "*")]
        items = [self.parse_select_item()]
        while self.accept("op", ","):
            items.append(self.parse_select_item())
        return items

    def parse_select_item(self) -> SelectItem:
        e = self.parse_expr()
        alias = None
        if self.accept("kw", "as"):
            alias = self.expect("ident").text
        elif self.peek().kind == "ident":
            alias = self.next().text
        return SelectItem(e, alias)

    def parse_from_item(self):
        t = self.peek()
        if t.kind == "kw" and t.text in ("backward", "forward"):
            self.next()
            self.expect("op", "(")
            handle = self.expect("ident").text
            self.expect("op", ",")
            ridset = self.parse_ridset()
            base = None
            if self.accept("op", ","):
                base = self.expect("ident").text
            self.expect("op", ")")
            return LineageScanNode(t.text, handle, ridset, base)
        name = self.expect("ident").text
        return ScanNode(name)

    def parse_ridset(self):
        t = self.peek()
        if t.kind == "param":
            self.next()
            return Param(t.text[1:])
        if self.accept("op", "["):
            vals = [int(self.expect("num").text)]
            while self.accept("op", ","):
                vals.append(int(self.expect("num").text))
            self.expect("op", "]")
            return vals
        raise ParseError("expected $param or [rid, ...]", t.pos)

    # -- predicates
    def parse_pred(self) -> Expr:
        parts = [self.parse_and()]
        while self.accept("kw", "or"):
            parts.append(self.parse_and())
        return parts[0] if len(parts) == 1 else Or(parts)

    def parse_and(self) -> Expr:
        parts = [self.parse_not()]
        while self.accept("kw", "and"):
            parts.append(self.parse_not())
        return parts[0] if len(parts) == 1 else And(parts)

    def parse_not(self) -> Expr:
        if self.accept("kw", "not"):
            return Not(self.parse_not())
        return self.parse_cmp()

    def parse_cmp(self) -> Expr:
        left = self.parse_expr()
        t = self.peek()
        if t.kind == "op" and t.text in ("=", "<>", "!=", "<", "<=", ">", ">="):
            self.next()
            right = self.parse_expr()
            return Cmp(t.text, left, right)
        if t.kind == "kw" and t.text == "in":
            self.next()
            self.expect("op", "(")
            vals = [self._literal_value()]
            while self.accept("op", ","):
                vals.append(self._literal_value())
            self.expect("op", ")")
            return InList(left, vals)
        if t.kind == "kw" and t.text == "between":
            self.next()
            lo = self.parse_expr()
            self.expect("kw", "and")
            hi = self.parse_expr()
            return And([Cmp(">=", left, lo), Cmp("<=", left, hi)])
        # plain (possibly parenthesized) expression; bind() rejects
        # non-boolean predicates later
        return left

    def _literal_value(self):
        t = self.next()
        if t.kind == "num":
            return float(t.text) if ("." in t.text or "e" in t.text.lower()) else int(t.text)
        if t.kind == "str":
            return t.text[1:-1]
        raise ParseError(f"expected literal, got {t.text!r}", t.pos)

    # -- scalar expressions
    def parse_expr(self) -> Expr:
        left = self.parse_term()
        while True:
            t = self.peek()
            if t.kind == "op" and t.text in ("+", "-"):
                self.next()
                left = Arith(t.text, left, self.parse_term())
            else:
                return left

    def parse_term(self) -> Expr:
        left = self.parse_factor()
        while True:
            t = self.peek()
            if t.kind == "op" and t.text in ("*", "/"):
                self.next()
                left = Arith(t.text, left, self.parse_factor())
            else:
                return left

    def parse_factor(self) -> Expr:
        t = self.peek()
        if t.kind == "op" and t.text == "(":
            self.next()
            e = self.parse_pred()
            self.expect("op", ")")
            return e
        if t.kind == "op" and t.text == "-":
            self.next()
            return Arith("-", Lit(0), self.parse_factor())
        if t.kind == "num":
            self.next()
            txt = t.text
            return Lit(float(txt) if ("." in txt or "e" in txt.lower()) else int(txt))
        if t.kind == "str":
            self.next()
            return Lit(t.text[1:-1])
        if t.kind == "param":
            self.next()
            return Param(t.text[1:])
        if t.kind == "kw":
            return self._keyword_factor(t)
        if t.kind == "ident":
            self.next()
            name = t.text
            if self.accept("op", "."):
                name = self.expect("ident").text  # qualifier dropped; names are unique
            if self.peek().kind == "op" and self.peek().text == "(":
                self.next()
                arg = self.parse_expr()
                self.expect("op", ")")
                return Func(name.lower(), arg)
            return Col(name)
        raise ParseError(f"unexpected token {t.text!r}", t.pos)

    def _keyword_factor(self, t: Token) -> Expr:
        if t.text in ("count", "sum", "avg", "min", "max"):
            return self.parse_aggregate()
        if t.text == "true":
            self.next()
            return Lit(True)
        if t.text == "false":
            self.next()
            return Lit(False)
        if t.text == "extract":
            self.next()
            self.expect("op", "(")
            part = self.peek()
            if not (part.kind == "kw" and part.text in ("year", "month")):
                raise ParseError("extract supports YEAR and MONTH", part.pos)
            self.next()
            self.expect("kw", "from")
            arg = self.parse_expr()
            self.expect("op", ")")
            return Func(part.text, arg)
        if t.text == "case":
            self.next()
            whens = []
            while self.accept("kw", "when"):
                cond = self.parse_pred()
                self.expect("kw", "then")
                whens.append((cond, self.parse_expr()))
            self.expect("kw", "else")
            otherwise = self.parse_expr()
            self.expect("kw", "end")
            return Case(whens, otherwise)
        raise ParseError(f"unexpected keyword {t.text!r}", t.pos)

    def parse_aggregate(self) -> "AggRef":
        t = self.next()
        self.expect("op", "(")
        func = t.text
        expr = None
        if func == "count":
            if self.accept("op", "*"):
                pass
            elif self.accept("kw", "distinct"):
                func = "count_distinct"
                expr = self.parse_expr()
            else:
                expr = self.parse_expr()
        else:
            expr = self.parse_expr()
        self.expect("op", ")")
        return AggRef(func, expr)


@dataclass
class AggRef(Expr):
    """Aggregate call site inside a select list or HAVING; replaced by a
    column reference over the aggregation output during planning."""

    func: str
    expr: Optional[Expr]

    def bind(self, schema):
        raise ParseError("aggregate used outside a grouped query")

    def __str__(self):
        if self.func == "count" and self.expr is None:
            return "count(*)"
        if self.func == "count_distinct":
            return f"count(distinct {self.expr})"
        return f"{self.func}({self.expr})"


def parse_sql(text: str) -> LogicalPlan:
    return _Parser(text).parse_query()


def parse_predicate(text: str) -> Expr:
    """Standalone boolean expression (workload specs, theta joins)."""
    p = _Parser(text)
    e = p.parse_pred()
    p.expect("eof")
    return e
