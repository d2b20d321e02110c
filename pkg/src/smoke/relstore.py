"""In-memory relation storage: typed columnar tables addressed by dense rids.

Relations are immutable after construction.  Rids are dense 0-based row
indexes (32-bit), and every lineage structure in this package ultimately
points into a Relation through them.
"""

from __future__ import annotations

import csv
import datetime
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

VALID_TYPES = ("int64", "float64", "text", "date", "bool")

EPOCH = datetime.date(1970, 1, 1)

MAX_ROWS = 2**32 - 1  # rids are 32-bit; the top value is reserved as a sentinel


class RelStoreError(Exception):
    pass


class LoadError(RelStoreError):
    """CSV/tbl ingestion failure; message carries line and column context."""


def date_to_days(text: str) -> int:
    """Parse 'YYYY-MM-DD' into days since 1970-01-01."""
    try:
        d = datetime.date.fromisoformat(text)
    except ValueError as e:
        raise LoadError(f"bad date literal {text!r}: {e}") from None
    return (d - EPOCH).days


def days_to_date(days: int) -> str:
    return (EPOCH + datetime.timedelta(days=int(days))).isoformat()


_NUMPY_DTYPES = {
    "int64": np.int64,
    "float64": np.float64,
    "date": np.int64,
    "bool": np.bool_,
    "text": np.object_,
}

_PARSERS = {
    "int64": int,
    "float64": float,
    "date": date_to_days,
    "text": str,
    "bool": lambda s: {"true": True, "false": False, "1": True, "0": False}[s.lower()],
}


@dataclass(frozen=True)
class Schema:
    """Ordered (name, type) column list. Names unique, at least one column."""

    columns: Tuple[Tuple[str, str], ...]

    def __post_init__(self):
        if not self.columns:
            raise RelStoreError("schema needs at least one column")
        names = [c[0] for c in self.columns]
        if len(set(names)) != len(names):
            raise RelStoreError(f"duplicate column names in schema: {names}")
        for name, dtype in self.columns:
            if dtype not in VALID_TYPES:
                raise RelStoreError(f"column {name!r} has unknown type {dtype!r}")

    @staticmethod
    def of(*cols: Tuple[str, str]) -> "Schema":
        return Schema(tuple(cols))

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(c[0] for c in self.columns)

    def dtype_of(self, name: str) -> str:
        for n, t in self.columns:
            if n == name:
                return t
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(n == name for n, _ in self.columns)


class Relation:
    """Dense columnar table. rid r addresses row r for 0 <= r < row_count."""

    def __init__(self, schema: Schema, columns: Dict[str, np.ndarray], name: str = ""):
        self.schema = schema
        self.name = name
        lengths = {len(columns[n]) for n in schema.names}
        if len(lengths) > 1:
            raise RelStoreError(f"ragged columns: {sorted(lengths)}")
        self.row_count = lengths.pop() if lengths else 0
        if self.row_count > MAX_ROWS:
            raise RelStoreError(f"relation exceeds 32-bit rid space: {self.row_count} rows")
        self.columns = {n: np.asarray(columns[n], dtype=_NUMPY_DTYPES[schema.dtype_of(n)]) for n in schema.names}
        for arr in self.columns.values():
            arr.setflags(write=False)

    @staticmethod
    def empty(schema: Schema, name: str = "") -> "Relation":
        return Relation(schema, {n: np.empty(0, dtype=_NUMPY_DTYPES[t]) for n, t in schema.columns}, name)

    @staticmethod
    def from_rows(schema: Schema, rows: Sequence[Sequence], name: str = "") -> "Relation":
        cols: Dict[str, list] = {n: [] for n in schema.names}
        for row in rows:
            for (n, _), v in zip(schema.columns, row):
                cols[n].append(v)
        return Relation(schema, {n: np.asarray(v, dtype=_NUMPY_DTYPES[schema.dtype_of(n)]) for n, v in cols.items()}, name)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def row(self, rid: int) -> tuple:
        if not 0 <= rid < self.row_count:
            raise IndexError(f"rid {rid} out of range [0, {self.row_count})")
        return tuple(self.columns[n][rid] for n in self.schema.names)

    def take(self, rids: np.ndarray, name: str = "") -> "Relation":
        """Row subset in the given rid order (rids may repeat)."""
        idx = np.asarray(rids, dtype=np.int64)
        return Relation(self.schema, {n: c[idx] for n, c in self.columns.items()}, name or self.name)

    def rows(self) -> Iterable[tuple]:
        for r in range(self.row_count):
            yield self.row(r)

    def __len__(self) -> int:
        return self.row_count

    def __repr__(self) -> str:
        return f"Relation({self.name or '?'}: {self.row_count} rows, {[n for n in self.schema.names]})"


def load_csv(path: str, schema: Schema, delimiter: str = ",", name: str = "",
             header: bool = False) -> Relation:
    """Load a delimited file under an explicit schema.

    Rows keep file order (rid = 0-based data line index, header excluded
    when header=True).  A trailing separator per line (TPC-H .tbl style) is
    accepted.  Any parse or type failure is fatal and reports the 1-based
    line number and column name; empty cells in non-text columns are
    rejected rather than coerced.
    """
    parsers = [(n, t, _PARSERS[t]) for n, t in schema.columns]
    cols: List[list] = [[] for _ in schema.columns]
    ncols = len(schema.columns)
    with open(path, newline="") as f:
        reader = csv.reader(f, delimiter=delimiter)
        for lineno, fields in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not fields:
                continue
            if len(fields) == ncols + 1 and fields[-1] == "":
                fields = fields[:-1]  # trailing delimiter
            if len(fields) != ncols:
                raise LoadError(f"{path}:{lineno}: expected {ncols} fields, got {len(fields)}")
            for i, (cname, ctype, parse) in enumerate(parsers):
                raw = fields[i]
                if raw == "" and ctype != "text":
                    raise LoadError(f"{path}:{lineno}: empty value in column {cname!r}")
                try:
                    cols[i].append(parse(raw))
                except (ValueError, KeyError, LoadError) as e:
                    raise LoadError(f"{path}:{lineno}: column {cname!r}: cannot parse {raw!r} as {ctype}: {e}") from None
    arrays = {
        cname: np.asarray(cols[i], dtype=_NUMPY_DTYPES[ctype]) if cols[i] else np.empty(0, dtype=_NUMPY_DTYPES[ctype])
        for i, (cname, ctype, _) in enumerate(parsers)
    }
    return Relation(schema, arrays, name=name)


ZIPF_SCHEMA = Schema.of(("id", "int64"), ("z", "int64"), ("v", "float64"))


def zipf_weights(g: int, theta: float) -> np.ndarray:
    w = np.arange(1, g + 1, dtype=np.float64) ** (-float(theta))
    return w / w.sum()


def gen_zipf(n: int, g: int, theta: float, seed: int = 0, name: str = "zipf") -> Relation:
    """Synthetic zipf(id, z, v): z in [1, g] with P(z=k) ~ k^-theta, v uniform [0, 100]."""
    if n < 0 or g < 1:
        raise RelStoreError(f"gen_zipf: need n >= 0 and g >= 1, got n={n}, g={g}")
    rng = np.random.default_rng(seed)
    if n == 0:
        return Relation.empty(ZIPF_SCHEMA, name)
    z = rng.choice(g, size=n, p=zipf_weights(g, theta)).astype(np.int64) + 1
    v = rng.uniform(0.0, 100.0, size=n)
    return Relation(ZIPF_SCHEMA, {"id": np.arange(n, dtype=np.int64), "z": z, "v": v}, name)


FLIGHTS_SCHEMA = Schema.of(
    ("latlon_bin", "int64"), ("day_bin", "int64"), ("delay_bin", "int64"), ("carrier", "int64")
)

# Declared bin domains; lat/lon is sparse with ~8100 occupied bins.
FLIGHTS_DOMAINS = {"latlon_bin": 65536, "day_bin": 7762, "delay_bin": 8, "carrier": 29}
FLIGHTS_ACTIVE_LATLON = 8100


def gen_flights(n: int, seed: int = 0, name: str = "flights") -> Relation:
    """Synthetic flight records with the crossfilter-benchmark bin geometry."""
    if n < 0:
        raise RelStoreError("gen_flights: n must be >= 0")
    rng = np.random.default_rng(seed)
    if n == 0:
        return Relation.empty(FLIGHTS_SCHEMA, name)
    active = rng.choice(FLIGHTS_DOMAINS["latlon_bin"], size=FLIGHTS_ACTIVE_LATLON, replace=False)
    latlon = active[rng.integers(0, FLIGHTS_ACTIVE_LATLON, size=n)].astype(np.int64)
    day = rng.integers(0, FLIGHTS_DOMAINS["day_bin"], size=n).astype(np.int64)
    # delays skew toward "on time"; carriers are mildly skewed
    delay_p = zipf_weights(FLIGHTS_DOMAINS["delay_bin"], 1.2)
    delay = rng.choice(FLIGHTS_DOMAINS["delay_bin"], size=n, p=delay_p).astype(np.int64)
    carrier_p = zipf_weights(FLIGHTS_DOMAINS["carrier"], 0.6)
    carrier = rng.choice(FLIGHTS_DOMAINS["carrier"], size=n, p=carrier_p).astype(np.int64)
    return Relation(
        FLIGHTS_SCHEMA,
        {"latlon_bin": latlon, "day_bin": day, "delay_bin": delay, "carrier": carrier},
        name,
    )


def write_csv(rel: Relation, path: str, delimiter: str = ",") -> None:
    """Inverse of load_csv (dates rendered back to ISO)."""
    dtypes = [t for _, t in rel.schema.columns]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, delimiter=delimiter)
        for row in rel.rows():
            out = []
            for v, t in zip(row, dtypes):
                if t == "date":
                    out.append(days_to_date(int(v)))
                elif t == "bool":
                    out.append("1" if v else "0")
                else:
                    out.append(v)
            writer.writerow(out)
