"""TPC-H subset: schemas, a synthetic .tbl generator, loaders, the four
benchmark queries (Q1/Q3/Q10/Q12, ORDER BY dropped), and a per-row replay
checker that re-runs a query over backward-traced base subsets.

The generator produces schema- and domain-faithful data with referential
integrity at the requested scale factor; it is not the official dbgen byte
stream, so results are cross-checked semantically (replay, and against
sqlite in the tests), never against published answer sets.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..operators import CaptureMode
from ..planner.session import Session
from ..relstore import Relation, Schema, date_to_days, days_to_date, load_csv
from .report import BenchReport, BenchRow, time_run

NATION_SCHEMA = Schema.of(
    ("n_nationkey", "int64"), ("n_name", "text"), ("n_regionkey", "int64"), ("n_comment", "text")
)
CUSTOMER_SCHEMA = Schema.of(
    ("c_custkey", "int64"), ("c_name", "text"), ("c_address", "text"), ("c_nationkey", "int64"),
    ("c_phone", "text"), ("c_acctbal", "float64"), ("c_mktsegment", "text"), ("c_comment", "text"),
)
ORDERS_SCHEMA = Schema.of(
    ("o_orderkey", "int64"), ("o_custkey", "int64"), ("o_orderstatus", "text"), ("o_totalprice", "float64"),
    ("o_orderdate", "date"), ("o_orderpriority", "text"), ("o_clerk", "text"), ("o_shippriority", "int64"),
    ("o_comment", "text"),
)
LINEITEM_SCHEMA = Schema.of(
    ("l_orderkey", "int64"), ("l_partkey", "int64"), ("l_suppkey", "int64"), ("l_linenumber", "int64"),
    ("l_quantity", "float64"), ("l_extendedprice", "float64"), ("l_discount", "float64"), ("l_tax", "float64"),
    ("l_returnflag", "text"), ("l_linestatus", "text"), ("l_shipdate", "date"), ("l_commitdate", "date"),
    ("l_receiptdate", "date"), ("l_shipinstruct", "text"), ("l_shipmode", "text"), ("l_comment", "text"),
)

SCHEMAS = {
    "nation": NATION_SCHEMA,
    "customer": CUSTOMER_SCHEMA,
    "orders": ORDERS_SCHEMA,
    "lineitem": LINEITEM_SCHEMA,
}

PRIMARY_KEYS = {"nation": "n_nationkey", "customer": "c_custkey", "orders": "o_orderkey"}

NATIONS = [
    "ALGERIA", "ARGENTINA", "BRAZIL", "CANADA", "EGYPT", "ETHIOPIA", "FRANCE", "GERMANY", "INDIA",
    "INDONESIA", "IRAN", "IRAQ", "JAPAN", "JORDAN", "KENYA", "MOROCCO", "MOZAMBIQUE", "PERU",
    "CHINA", "ROMANIA", "SAUDI ARABIA", "VIETNAM", "RUSSIA", "UNITED KINGDOM", "UNITED STATES",
]
SEGMENTS = ["AUTOMOBILE", "BUILDING", "FURNITURE", "MACHINERY", "HOUSEHOLD"]
PRIORITIES = ["1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW"]
SHIPMODES = ["REG AIR", "AIR", "RAIL", "SHIP", "TRUCK", "MAIL", "FOB"]
SHIPINSTRUCTS = ["DELIVER IN PERSON", "COLLECT COD", "NONE", "TAKE BACK RETURN"]

START_DATE = date_to_days("1992-01-01")
END_DATE = date_to_days("1998-08-02")
CURRENT_DATE = date_to_days("1995-06-17")


def generate(sf: float, seed: int = 7) -> Dict[str, Relation]:
    """Synthetic four-table instance at scale factor `sf`."""
    rng = np.random.default_rng(seed)
    n_cust = max(1, int(150_000 * sf))
    n_ord = max(1, int(1_500_000 * sf))

    nation = Relation(NATION_SCHEMA, {
        "n_nationkey": np.arange(25, dtype=np.int64),
        "n_name": np.asarray(NATIONS, dtype=object),
        "n_regionkey": np.arange(25, dtype=np.int64) % 5,
        "n_comment": np.asarray([f"nation comment {i}" for i in range(25)], dtype=object),
    }, "nation")

    ckey = np.arange(1, n_cust + 1, dtype=np.int64)
    customer = Relation(CUSTOMER_SCHEMA, {
        "c_custkey": ckey,
        "c_name": np.asarray([f"Customer#{k:09d}" for k in ckey], dtype=object),
        "c_address": np.asarray([f"addr{k}" for k in ckey], dtype=object),
        "c_nationkey": rng.integers(0, 25, n_cust),
        "c_phone": np.asarray([f"{10 + k % 25}-{k % 1000:03d}-{k % 10000:04d}" for k in ckey], dtype=object),
        "c_acctbal": np.round(rng.uniform(-999.99, 9999.99, n_cust), 2),
        "c_mktsegment": np.asarray(SEGMENTS, dtype=object)[rng.integers(0, len(SEGMENTS), n_cust)],
        "c_comment": np.asarray([f"customer comment {k}" for k in ckey], dtype=object),
    }, "customer")

    okey = np.arange(1, n_ord + 1, dtype=np.int64)
    o_custkey = ckey[rng.integers(0, n_cust, n_ord)]
    o_orderdate = rng.integers(START_DATE, END_DATE + 1, n_ord)
    orders = Relation(ORDERS_SCHEMA, {
        "o_orderkey": okey,
        "o_custkey": o_custkey,
        "o_orderstatus": np.asarray(["O", "F", "P"], dtype=object)[rng.integers(0, 3, n_ord)],
        "o_totalprice": np.round(rng.uniform(850.0, 560000.0, n_ord), 2),
        "o_orderdate": o_orderdate,
        "o_orderpriority": np.asarray(PRIORITIES, dtype=object)[rng.integers(0, len(PRIORITIES), n_ord)],
        "o_clerk": np.asarray([f"Clerk#{k % 1000:09d}" for k in okey], dtype=object),
        "o_shippriority": np.zeros(n_ord, dtype=np.int64),
        "o_comment": np.asarray([f"order comment {k}" for k in okey], dtype=object),
    }, "orders")

    per_order = rng.integers(1, 8, n_ord)
    n_li = int(per_order.sum())
    li_order_idx = np.repeat(np.arange(n_ord), per_order)
    l_orderkey = okey[li_order_idx]
    l_linenumber = (np.arange(n_li, dtype=np.int64)
                    - np.repeat(np.cumsum(per_order) - per_order, per_order) + 1)
    odate = o_orderdate[li_order_idx]
    l_shipdate = odate + rng.integers(1, 122, n_li)
    l_commitdate = odate + rng.integers(30, 91, n_li)
    l_receiptdate = l_shipdate + rng.integers(1, 31, n_li)
    l_quantity = rng.integers(1, 51, n_li).astype(np.float64)
    l_extendedprice = np.round(l_quantity * rng.uniform(900.0, 100000.0, n_li) / 50.0, 2)
    l_discount = np.round(rng.integers(0, 11, n_li) / 100.0, 2)
    l_tax = np.round(rng.integers(0, 9, n_li) / 100.0, 2)
    returned = l_receiptdate <= CURRENT_DATE
    flag_pick = rng.integers(0, 2, n_li)
    l_returnflag = np.where(returned, np.where(flag_pick == 0, "R", "A"), "N").astype(object)
    l_linestatus = np.where(l_shipdate > CURRENT_DATE, "O", "F").astype(object)
    lineitem = Relation(LINEITEM_SCHEMA, {
        "l_orderkey": l_orderkey,
        "l_partkey": rng.integers(1, max(2, int(200_000 * sf)) + 1, n_li),
        "l_suppkey": rng.integers(1, max(2, int(10_000 * sf)) + 1, n_li),
        "l_linenumber": l_linenumber,
        "l_quantity": l_quantity,
        "l_extendedprice": l_extendedprice,
        "l_discount": l_discount,
        "l_tax": l_tax,
        "l_returnflag": l_returnflag,
        "l_linestatus": l_linestatus,
        "l_shipdate": l_shipdate,
        "l_commitdate": l_commitdate,
        "l_receiptdate": l_receiptdate,
        "l_shipinstruct": np.asarray(SHIPINSTRUCTS, dtype=object)[rng.integers(0, 4, n_li)],
        "l_shipmode": np.asarray(SHIPMODES, dtype=object)[rng.integers(0, 7, n_li)],
        "l_comment": np.asarray([f"li{i}" for i in range(n_li)], dtype=object),
    }, "lineitem")

    return {"nation": nation, "customer": customer, "orders": orders, "lineitem": lineitem}


def write_tbl(tables: Dict[str, Relation], outdir) -> None:
    """Pipe-delimited .tbl files with the customary trailing separator."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, rel in tables.items():
        dtypes = [t for _, t in rel.schema.columns]
        with open(out / f"{name}.tbl", "w") as f:
            for row in rel.rows():
                parts = []
                for v, t in zip(row, dtypes):
                    if t == "date":
                        parts.append(days_to_date(int(v)))
                    elif t == "float64":
                        parts.append(f"{v:.2f}")
                    else:
                        parts.append(str(v))
                f.write("|".join(parts) + "|\n")


def load_dir(data_dir) -> Dict[str, Relation]:
    data_dir = Path(data_dir)
    tables = {}
    for name, schema in SCHEMAS.items():
        path = data_dir / f"{name}.tbl"
        if not path.exists():
            raise FileNotFoundError(f"missing table file {path}")
        tables[name] = load_csv(str(path), schema, delimiter="|", name=name)
    return tables


def make_session(tables: Dict[str, Relation]) -> Session:
    s = Session()
    for name, rel in tables.items():
        s.add_relation(rel, name, primary_key=PRIMARY_KEYS.get(name))
    return s


Q1 = """
SELECT l_returnflag, l_linestatus,
       sum(l_quantity) AS sum_qty,
       sum(l_extendedprice) AS sum_base_price,
       sum(l_extendedprice * (1 - l_discount)) AS sum_disc_price,
       sum(l_extendedprice * (1 - l_discount) * (1 + l_tax)) AS sum_charge,
       avg(l_quantity) AS avg_qty,
       avg(l_extendedprice) AS avg_price,
       avg(l_discount) AS avg_disc,
       count(*) AS count_order
FROM lineitem
WHERE l_shipdate < '1998-12-01'
GROUP BY l_returnflag, l_linestatus
"""

Q3 = """
SELECT l_orderkey,
       sum(l_extendedprice * (1 - l_discount)) AS revenue,
       o_orderdate, o_shippriority
FROM customer
JOIN orders ON c_custkey = o_custkey
JOIN lineitem ON o_orderkey = l_orderkey
WHERE c_mktsegment = 'BUILDING'
  AND o_orderdate < '1995-03-15'
  AND l_shipdate > '1995-03-15'
GROUP BY l_orderkey, o_orderdate, o_shippriority
"""

Q10 = """
SELECT c_custkey, c_name,
       sum(l_extendedprice * (1 - l_discount)) AS revenue,
       c_acctbal, n_name, c_address, c_phone, c_comment
FROM nation
JOIN customer ON n_nationkey = c_nationkey
JOIN orders ON c_custkey = o_custkey
JOIN lineitem ON o_orderkey = l_orderkey
WHERE o_orderdate >= '1993-10-01'
  AND o_orderdate < '1994-01-01'
  AND l_returnflag = 'R'
GROUP BY c_custkey, c_name, c_acctbal, c_phone, n_name, c_address, c_comment
"""

Q12 = """
SELECT l_shipmode,
       sum(CASE WHEN o_orderpriority = '1-URGENT' OR o_orderpriority = '2-HIGH'
                THEN 1 ELSE 0 END) AS high_line_count,
       sum(CASE WHEN o_orderpriority <> '1-URGENT' AND o_orderpriority <> '2-HIGH'
                THEN 1 ELSE 0 END) AS low_line_count
FROM orders
JOIN lineitem ON o_orderkey = l_orderkey
WHERE l_shipmode IN ('MAIL', 'SHIP')
  AND l_commitdate < l_receiptdate
  AND l_shipdate < l_commitdate
  AND l_receiptdate >= '1994-01-01'
  AND l_receiptdate < '1995-01-01'
GROUP BY l_shipmode
"""

QUERIES = {"q1": Q1, "q3": Q3, "q10": Q10, "q12": Q12}


def replay_row(session: Session, handle: str, out_rid: int, rel_tol: float = 1e-9) -> List[str]:
    """Re-run the query over the backward-traced base subsets and check the
    chosen output row's aggregates; returns a list of mismatch descriptions
    (empty when the row replays exactly)."""
    res = session.result(handle)
    blk = res.bound
    sub = Session()
    for base in res.bundle.relations():
        rids = session.backward_rids(handle, np.asarray([out_rid]), base)
        rel = session.catalog.get(base)
        sub.add_relation(rel.take(rids.astype(np.int64)), base,
                         primary_key=PRIMARY_KEYS.get(base))
    for base in session.catalog.relations:
        if base not in sub.catalog.relations:
            sub.add_relation(session.catalog.get(base), base, primary_key=PRIMARY_KEYS.get(base))
    replay = sub.sql(res.sql_text, mode=CaptureMode.NONE)

    key_aliases = [a for _, a in blk.keys if a in res.output.schema]
    agg_aliases = [s.alias for s in blk.aggs if s.alias in res.output.schema]
    want_keys = {a: res.output.columns[a][out_rid] for a in key_aliases}
    mask = np.ones(len(replay.output), dtype=bool)
    for a, v in want_keys.items():
        mask &= replay.output.columns[a] == v
    hits = np.flatnonzero(mask)
    problems: List[str] = []
    if len(hits) != 1:
        return [f"row {out_rid}: replay produced {len(hits)} candidate groups"]
    hit = int(hits[0])
    for a in agg_aliases:
        got = replay.output.columns[a][hit]
        want = res.output.columns[a][out_rid]
        if isinstance(want, (np.integer, int)):
            ok = int(got) == int(want)
        else:
            denom = max(abs(float(want)), 1e-30)
            ok = abs(float(got) - float(want)) / denom <= rel_tol
        if not ok:
            problems.append(f"row {out_rid} agg {a}: got {got!r}, want {want!r}")
    return problems


def bench_tpch(query: str, data_dir, modes: Sequence[str], runs: int = 15, warmups: int = 3,
               tables: Optional[Dict[str, Relation]] = None) -> BenchReport:
    query = query.lower()
    if query not in QUERIES:
        raise ValueError(f"unknown query {query!r}; choose from {sorted(QUERIES)}")
    tables = tables if tables is not None else load_dir(data_dir)
    session = make_session(tables)
    text = QUERIES[query]
    report = BenchReport()
    for mode_name in modes:
        mode = CaptureMode(mode_name)

        def run_once():
            res = session.sql(text, mode=mode)
            if res.bundle is not None:
                res.bundle.finalize()
            return res

        mean_ms, res, _ = time_run(run_once, runs=runs, warmups=warmups)
        report.add(BenchRow(
            name=f"tpch_{query}",
            params={"query": query, "rows": {k: len(v) for k, v in tables.items()}},
            mode=mode_name,
            latency_ms=mean_ms,
            growth_events=res.stats.growth_events,
            index_bytes=res.stats.index_bytes,
            extra={
                "out_rows": res.stats.out_rows,
                "capture_ms": res.stats.capture_ms,
                "finalize_ms": res.stats.finalize_ms,
            },
        ))
    report.fill_overheads()
    return report
