import numpy as np
import pytest

from smoke import backward, derive_provenance, forward, lazy_backward_rids, run_consuming
from smoke.lineage_query import execute_lazy_block, lazy_rewrite
from smoke.planner.logical import PlanError
from smoke.planner.session import NoIndexError, Session
from smoke.relstore import Relation, Schema, gen_zipf
from smoke.workload import WorkloadSpec


def rel_of(name, **cols):
    schema, arrays = [], {}
    for cname, vals in cols.items():
        if vals and isinstance(vals[0], str):
            arr = np.empty(len(vals), dtype=object)
            arr[:] = vals
            schema.append((cname, "text"))
        else:
            arr = np.asarray(vals, dtype=np.int64)
            schema.append((cname, "int64"))
        arrays[cname] = arr
    return Relation(Schema(tuple(schema)), arrays, name)


@pytest.fixture
def s():
    sess = Session()
    sess.add_relation(gen_zipf(300, 6, 1.0, seed=21), "zipf")
    return sess


def test_backward_of_selection_is_full_passing_set(s):
    res = s.sql("SELECT id, z FROM zipf WHERE v < 40")
    all_out = np.arange(len(res.output))
    got = backward(s, res.handle, all_out, "zipf")
    brute = np.flatnonzero(s.relation("zipf").columns["v"] < 40)
    assert got.rids.tolist() == brute.tolist()


def test_backward_of_group_example():
    sess = Session()
    sess.add_relation(rel_of("t", z=[1, 1, 2]), "t")
    res = sess.sql("SELECT z, count(*) AS c FROM t GROUP BY z")
    assert backward(sess, res.handle, [0], "t").rids.tolist() == [0, 1]


def test_forward_filtered_out_row_empty(s):
    res = s.sql("SELECT id FROM zipf WHERE v < 40")
    dropped = int(np.flatnonzero(s.relation("zipf").columns["v"] >= 40)[0])
    assert len(forward(s, res.handle, [dropped], "zipf")) == 0


def test_forward_identity_through_project(s):
    res = s.sql("SELECT id, v * v AS vv FROM zipf")
    got = forward(s, res.handle, [3, 7], "zipf")
    assert got.rids.tolist() == [3, 7]


def test_round_trip_forward_backward(s):
    res = s.sql("SELECT z, count(*) AS c FROM zipf GROUP BY z")
    for o in range(len(res.output)):
        bw = backward(s, res.handle, [o], "zipf")
        fw = forward(s, res.handle, bw, "zipf")
        assert o in fw.rids.tolist()


def test_invalid_rid_and_noindex(s):
    res = s.sql("SELECT z, count(*) AS c FROM zipf GROUP BY z")
    with pytest.raises(PlanError):
        backward(s, res.handle, [10**6], "zipf")
    with pytest.raises(NoIndexError):
        backward(s, res.handle, [0], "unknown_base")
    w = WorkloadSpec.from_json({"templates": [{"direction": "backward", "base_relation": "zipf"}]})
    pruned = s.sql("SELECT z, count(*) AS c FROM zipf GROUP BY z", workload=w)
    with pytest.raises(NoIndexError):
        forward(s, pruned.handle, [0], "zipf")


def test_backward_lazy_fallback_without_index(s):
    from smoke.operators import CaptureMode

    res = s.sql("SELECT z, count(*) AS c FROM zipf GROUP BY z", mode=CaptureMode.NONE, handle="nocap")
    with pytest.raises(NoIndexError):
        backward(s, "nocap", [0], "zipf")
    got = backward(s, "nocap", [0], "zipf", lazy_fallback=True)
    z0 = int(res.output.columns["z"][0])
    brute = np.flatnonzero(s.relation("zipf").columns["z"] == z0)
    assert got.rids.tolist() == brute.tolist()


def test_consuming_query_equals_backward_plus_fetch(s):
    res = s.sql("SELECT z, count(*) AS c FROM zipf GROUP BY z")
    out = run_consuming(s, "SELECT * FROM backward(" + res.handle + ", $o, zipf)",
                        params={"o": [0]})
    bw = backward(s, res.handle, [0], "zipf")
    want = s.relation("zipf").take(bw.rids)
    assert len(out.output) == len(want)
    assert np.array_equal(out.output.columns["id"], want.columns["id"])


def test_forward_table_function(s):
    res = s.sql("SELECT z, count(*) AS c FROM zipf WHERE v < 40 GROUP BY z", handle="fw")
    some_rows = [0, 1, 2, 3, 4]
    out = run_consuming(s, "SELECT * FROM forward(fw, $r, zipf)", params={"r": some_rows})
    want = forward(s, "fw", some_rows, "zipf")
    assert len(out.output) == len(want)
    assert out.output.schema.names == res.output.schema.names


def test_consuming_chain_has_own_handle(s):
    res = s.sql("SELECT z, count(*) AS c FROM zipf GROUP BY z", handle="base")
    c1 = run_consuming(s, "SELECT z, count(*) AS c2 FROM backward(base, $o, zipf) GROUP BY z",
                       params={"o": [0]}, handle="c1")
    assert c1.handle == "c1" and "c1" in s.results
    # chain once more, through c1's own lineage
    c2 = run_consuming(s, "SELECT count(*) AS c3 FROM backward(c1, $o, zipf) GROUP BY z",
                       params={"o": [0]})
    assert int(c2.output.columns["c3"][0]) == int(c1.output.columns["c2"][0])


def test_linked_brushing_composition():
    # two views over a shared base; brush in V1, highlight in V2
    sess = Session()
    sess.add_relation(rel_of("x", g=[1, 1, 2, 2, 3], h=[10, 20, 10, 20, 10]), "x")
    v1 = sess.sql("SELECT g, count(*) AS c FROM x GROUP BY g", handle="v1")
    v2 = sess.sql("SELECT h, count(*) AS c FROM x GROUP BY h", handle="v2")
    picked = backward(sess, "v1", [0], "x")          # rows 0, 1
    lit = forward(sess, "v2", picked, "x")           # h groups of rows 0, 1
    assert picked.rids.tolist() == [0, 1]
    assert lit.rids.tolist() == [0, 1]  # h=10 and h=20 both touched


def test_lazy_rewrite_single_group(s):
    res = s.sql("SELECT z, count(*) AS c FROM zipf GROUP BY z", handle="g")
    z0 = int(res.output.columns["z"][0])
    blk = lazy_rewrite(s, "g", {"z": z0})
    rids = execute_lazy_block(s, blk, "zipf")
    brute = np.flatnonzero(s.relation("zipf").columns["z"] == z0)
    assert rids.tolist() == brute.tolist()


def test_lazy_includes_base_selections(s):
    res = s.sql("SELECT z, count(*) AS c FROM zipf WHERE v < 50 GROUP BY z", handle="gsel")
    z0 = int(res.output.columns["z"][0])
    rids = lazy_backward_rids(s, "gsel", 0, "zipf")
    zc = s.relation("zipf").columns
    brute = np.flatnonzero((zc["z"] == z0) & (zc["v"] < 50))
    assert rids.tolist() == brute.tolist()


def test_lazy_eager_equivalence_randomized():
    rng = np.random.default_rng(5)
    for trial in range(10):
        sess = Session()
        sess.add_relation(gen_zipf(500, 8, 1.0, seed=trial), "zipf")
        cut = float(rng.uniform(10, 90))
        res = sess.sql(f"SELECT z, count(*) AS c FROM zipf WHERE v < {cut} GROUP BY z", handle="g")
        for o in range(len(res.output)):
            eager = backward(sess, "g", [o], "zipf").rids.tolist()
            lazy = lazy_backward_rids(sess, "g", o, "zipf").tolist()
            assert eager == lazy


def test_provenance_single_relation(s):
    res = s.sql("SELECT z, count(*) AS c FROM zipf GROUP BY z")
    which = derive_provenance(s, res.handle, 0, "which")
    bucket = res.bundle.pairs["zipf"].backward.get(0).tolist()
    assert which == {("zipf", r) for r in bucket}
    why = derive_provenance(s, res.handle, 0, "why")
    assert [w[0][1] for w in why] == bucket


def test_provenance_join_witnesses_match_nested_loop():
    rng = np.random.default_rng(17)
    for trial in range(10):
        a = rel_of("A", ka=list(range(1, 6)), ga=rng.integers(0, 2, 5).tolist())
        b = rel_of("B", kb=rng.integers(1, 6, 8).tolist(), gb=rng.integers(0, 2, 8).tolist())
        sess = Session()
        sess.add_relation(a, "A", primary_key="ka")
        sess.add_relation(b, "B")
        res = sess.sql("SELECT ga, gb, count(*) AS c FROM A JOIN B ON ka = kb GROUP BY ga, gb")
        # nested-loop derivation of witnesses per group
        rows = []
        for j in range(8):
            for i in range(5):
                if a.columns["ka"][i] == b.columns["kb"][j]:
                    rows.append((i, j))
        for o in range(len(res.output)):
            key = (res.output.columns["ga"][o], res.output.columns["gb"][o])
            want = [(("A", i), ("B", j)) for (i, j) in rows
                    if (a.columns["ga"][i], b.columns["gb"][j]) == key]
            got = derive_provenance(sess, res.handle, o, "why")
            assert got == want
