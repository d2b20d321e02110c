import numpy as np
import pytest

from smoke import run_consuming
from smoke.planner.session import Session
from smoke.relstore import Relation, Schema
from smoke.workload import WorkloadError, WorkloadSpec


def flights_like(n=2000, seed=3):
    rng = np.random.default_rng(seed)
    mode_vals = ["MAIL", "SHIP", "AIR"]
    instr_vals = ["NONE", "COD"]
    mode_col = np.empty(n, dtype=object)
    mode_col[:] = [mode_vals[i] for i in rng.integers(0, 3, n)]
    instr_col = np.empty(n, dtype=object)
    instr_col[:] = [instr_vals[i] for i in rng.integers(0, 2, n)]
    return Relation(
        Schema.of(("g", "int64"), ("tax", "int64"), ("qty", "float64"),
                  ("mode_c", "text"), ("instr", "text")),
        {
            "g": rng.integers(0, 4, n),
            "tax": rng.integers(0, 3, n),
            "qty": np.round(rng.uniform(1, 50, n), 2),
            "mode_c": mode_col,
            "instr": instr_col,
        },
        "t",
    )


BASE_SQL = "SELECT g, count(*) AS c, sum(qty) AS sq FROM t GROUP BY g"


def fresh_session():
    s = Session()
    s.add_relation(flights_like(), "t")
    return s


def test_empty_workload_disables_capture():
    s = fresh_session()
    w = WorkloadSpec.from_json({"templates": []})
    res = s.sql(BASE_SQL, workload=w)
    assert res.bundle.pairs == {}


def test_prune_keeps_surviving_indexes_byte_identical():
    s = fresh_session()
    full = s.sql(BASE_SQL, handle="full")
    w = WorkloadSpec.from_json({"templates": [{"direction": "backward", "base_relation": "t"}]})
    pruned = s.sql(BASE_SQL, workload=w, handle="pruned")
    assert pruned.bundle.pairs["t"].forward is None
    assert pruned.bundle.pairs["t"].backward.buckets_as_lists() == \
        full.bundle.pairs["t"].backward.buckets_as_lists()
    assert pruned.bundle.nbytes < full.bundle.nbytes
    assert pruned.stats.growth_events <= full.stats.growth_events


def test_prune_leaves_output_identical():
    s = fresh_session()
    full = s.sql(BASE_SQL)
    w = WorkloadSpec.from_json({"templates": []})
    off = s.sql(BASE_SQL, workload=w)
    for col in full.output.schema.names:
        assert np.array_equal(full.output.columns[col], off.output.columns[col])


def test_pushdown_selection_always_true_false():
    s = fresh_session()
    plain = s.sql(BASE_SQL)
    wt = WorkloadSpec.from_json({"templates": [
        {"direction": "backward", "base_relation": "t", "static_predicate": "qty >= 0"}
    ]})
    wf = WorkloadSpec.from_json({"templates": [
        {"direction": "backward", "base_relation": "t", "static_predicate": "qty < 0"}
    ]})
    same = s.sql(BASE_SQL, workload=wt)
    empty = s.sql(BASE_SQL, workload=wf)
    assert same.bundle.pairs["t"].backward.buckets_as_lists() == \
        plain.bundle.pairs["t"].backward.buckets_as_lists()
    assert all(b == [] for b in empty.bundle.pairs["t"].backward.buckets_as_lists())


def test_pushdown_selection_filter_during_equals_filter_after():
    s = fresh_session()
    plain = s.sql(BASE_SQL)
    w = WorkloadSpec.from_json({"templates": [
        {"direction": "backward", "base_relation": "t", "static_predicate": "mode_c = 'MAIL'"}
    ]})
    pushed = s.sql(BASE_SQL, workload=w)
    mask = s.relation("t").columns["mode_c"] == "MAIL"
    for o, bucket in enumerate(plain.bundle.pairs["t"].backward.buckets_as_lists()):
        want = [r for r in bucket if mask[r]]
        assert pushed.bundle.pairs["t"].backward.get(o).tolist() == want


DOMAIN = {
    "templates": [{
        "direction": "backward",
        "base_relation": "t",
        "param_predicates": [
            {"attr": "mode_c", "domain": ["MAIL", "SHIP", "AIR"]},
            {"attr": "instr", "domain": ["NONE", "COD"]},
        ],
    }]
}


def test_data_skipping_partitions_match_filtering():
    s = fresh_session()
    w = WorkloadSpec.from_json(DOMAIN)
    res = s.sql(BASE_SQL, workload=w, handle="h")
    plain = s.sql(BASE_SQL, handle="plain")
    pidx = res.bundle.pairs["t"].partitioned_backward
    assert pidx is not None
    t = s.relation("t")
    for o in range(len(res.output)):
        whole = plain.bundle.pairs["t"].backward.get(o).tolist()
        for m in ("MAIL", "SHIP", "AIR"):
            for i in ("NONE", "COD"):
                part = pidx.get(o, (m, i)).tolist()
                want = [r for r in whole if t.columns["mode_c"][r] == m and t.columns["instr"][r] == i]
                assert part == want
        flat = sorted(pidx.get_all(o).tolist())
        assert flat == sorted(whole)


def test_data_skipping_consuming_query_reads_partition():
    s = fresh_session()
    w = WorkloadSpec.from_json(DOMAIN)
    res = s.sql(BASE_SQL, workload=w, handle="h")
    before = None
    cq = ("SELECT tax, count(*) AS c FROM backward(h, $o, t) "
          "WHERE mode_c = 'MAIL' AND instr = 'COD' GROUP BY tax")
    skip = run_consuming(s, cq, params={"o": [0]})
    assert skip.stats.base_scans == 0  # only the rid partition was read
    # unoptimized route: plain capture, filter in the consuming query
    plain = s.sql(BASE_SQL, handle="p2")
    unopt = run_consuming(s, cq.replace("(h,", "(p2,"), params={"o": [0]})
    a = sorted(zip(skip.output.columns["tax"].tolist(), skip.output.columns["c"].tolist()))
    b = sorted(zip(unopt.output.columns["tax"].tolist(), unopt.output.columns["c"].tolist()))
    assert a == b


def test_single_partition_domain_degenerates():
    s = fresh_session()
    w = WorkloadSpec.from_json({"templates": [{
        "direction": "backward", "base_relation": "t",
        "param_predicates": [{"attr": "mode_c", "domain": ["MAIL", "SHIP", "AIR"]}],
    }]})
    res = s.sql(BASE_SQL, workload=w, handle="h1")
    plain = s.sql(BASE_SQL)
    pidx = res.bundle.pairs["t"].partitioned_backward
    for o in range(len(res.output)):
        assert sorted(pidx.get_all(o).tolist()) == sorted(plain.bundle.pairs["t"].backward.get(o).tolist())


PUSHDOWN = {
    "templates": [{
        "direction": "backward",
        "base_relation": "t",
        "extra_groupby": {"keys": ["tax"], "aggs": ["count(*)", "sum(qty)", "avg(qty)"]},
    }]
}


def test_groupby_pushdown_fetch_matches_recompute_with_zero_scans():
    s = fresh_session()
    w = WorkloadSpec.from_json(PUSHDOWN)
    res = s.sql(BASE_SQL, workload=w, handle="h")
    assert res.bundle.pairs["t"].pushdown is not None
    for o in range(len(res.output)):
        cq = f"SELECT tax, count(*) AS c, sum(qty) AS sq FROM backward(h, $o, t) GROUP BY tax"
        fetched = run_consuming(s, cq, params={"o": [o]})
        assert fetched.stats.base_scans == 0 and fetched.stats.index_scans == 0
        # recompute from scratch
        plain = s.sql(BASE_SQL, handle=f"pp{o}")
        slow = run_consuming(s, cq.replace("(h,", f"(pp{o},"), params={"o": [o]})
        a = sorted(zip(fetched.output.columns["tax"].tolist(),
                       fetched.output.columns["c"].tolist(),
                       np.round(fetched.output.columns["sq"], 6).tolist()))
        b = sorted(zip(slow.output.columns["tax"].tolist(),
                       slow.output.columns["c"].tolist(),
                       np.round(slow.output.columns["sq"], 6).tolist()))
        assert a == b


def test_pushdown_constant_extra_key_is_whole_group():
    s = Session()
    rel = flights_like()
    const = Relation(rel.schema, {**{c: rel.columns[c] for c in rel.schema.names},
                                  "tax": np.zeros(len(rel), dtype=np.int64)}, "t")
    s.add_relation(const, "t")
    w = WorkloadSpec.from_json(PUSHDOWN)
    res = s.sql(BASE_SQL, workload=w, handle="h")
    for o in range(len(res.output)):
        fetched = run_consuming(s, "SELECT tax, count(*) AS c FROM backward(h, $o, t) GROUP BY tax",
                                params={"o": [o]})
        assert len(fetched.output) == 1
        assert int(fetched.output.columns["c"][0]) == int(res.output.columns["c"][o])


def test_pushdown_rejects_non_distributive():
    with pytest.raises(WorkloadError):
        spec = WorkloadSpec.from_json({"templates": [{
            "direction": "backward", "base_relation": "t",
            "extra_groupby": {"keys": ["tax"], "aggs": ["count(distinct g)"]},
        }]})
        s = fresh_session()
        s.sql(BASE_SQL, workload=spec)


def test_pushdown_random_partitions_equal_brute_force():
    rng = np.random.default_rng(9)
    for trial in range(5):
        s = Session()
        rel = flights_like(seed=trial + 100)
        s.add_relation(rel, "t")
        w = WorkloadSpec.from_json(PUSHDOWN)
        res = s.sql(BASE_SQL, workload=w, handle="h")
        state = res.bundle.pairs["t"].pushdown
        g_col, tax_col, q_col = rel.columns["g"], rel.columns["tax"], rel.columns["qty"]
        for o in range(len(res.output)):
            gval = res.output.columns["g"][o]
            for row in state.fetch([o]):
                tax = row["extra"][0]
                mask = (g_col == gval) & (tax_col == tax)
                assert row["aggs"]["p0"] == mask.sum()
                assert abs(row["aggs"]["p1"] - q_col[mask].sum()) < 1e-9
                assert abs(row["aggs"]["p2"] - q_col[mask].mean()) < 1e-9
