import numpy as np
import pytest

import lineage_oracle as oracle
from corpus import OPS, run_corpus
from smoke.expr import AggSpec, Arith, Cmp, Col, Lit
from smoke.operators import (
    CaptureMode,
    PkFkViolation,
    bag_intersect,
    bag_union,
    bundle_growth_events,
    cross_product,
    groupby,
    hashjoin,
    hashjoin_defer,
    hashjoin_inject,
    hashjoin_pkfk,
    nlj_theta,
    project,
    scan,
    select,
    set_diff,
    set_union,
)
from smoke.relstore import Relation, Schema, gen_zipf


def rel_of(name, **cols):
    schema = []
    arrays = {}
    for cname, vals in cols.items():
        if vals and isinstance(vals[0], str):
            arr = np.empty(len(vals), dtype=object)
            arr[:] = vals
            schema.append((cname, "text"))
        elif vals and isinstance(vals[0], float):
            arr = np.asarray(vals, dtype=np.float64)
            schema.append((cname, "float64"))
        else:
            arr = np.asarray(vals, dtype=np.int64)
            schema.append((cname, "int64"))
        arrays[cname] = arr
    return Relation(Schema(tuple(schema)), arrays, name)


# ---------------------------------------------------------------- scan/project

def test_scan_identity():
    r = gen_zipf(5, 2, 1.0, seed=0)
    out = scan(r)
    assert out.bundle.dump("zipf") == {
        "backward": [[i] for i in range(5)],
        "forward": [[i] for i in range(5)],
    }


def test_project_passthrough_no_capture():
    r = gen_zipf(3, 2, 1.0, seed=0)
    s = scan(r)
    p = project(s, [(Col("id"), "id")])
    assert p.bundle is s.bundle  # shared, not copied
    p2 = project(s, [(Arith("*", Col("v"), Col("v")), "vv")])
    assert np.allclose(p2.relation.columns["vv"], r.columns["v"] ** 2)


def test_project_over_selection_composes():
    r = gen_zipf(20, 3, 1.0, seed=1)
    sel = select(scan(r), Cmp("<", Col("v"), Lit(50.0)))
    p = project(sel, [(Col("z"), "z")])
    assert p.bundle.dump("zipf") == sel.bundle.dump("zipf")


# ---------------------------------------------------------------- selection

def test_select_always_true_false():
    r = gen_zipf(6, 2, 1.0, seed=0)
    t = select(scan(r), Cmp("<", Col("v"), Lit(1000.0)))
    assert t.bundle.dump("zipf")["backward"] == [[i] for i in range(6)]
    assert t.bundle.dump("zipf")["forward"] == [[i] for i in range(6)]
    f = select(scan(r), Cmp("<", Col("v"), Lit(-1.0)))
    assert len(f.relation) == 0
    assert f.bundle.dump("zipf")["forward"] == [[] for _ in range(6)]


def test_select_estimate_controls_growth():
    r = gen_zipf(100_000, 5, 1.0, seed=2)
    pred = Cmp("<", Col("v"), Lit(50.0))
    over = select(scan(r), pred, est_selectivity=0.6)
    under = select(scan(r), pred, est_selectivity=0.4)
    assert bundle_growth_events(over.bundle) == 0
    assert bundle_growth_events(under.bundle) > 0
    # same lineage either way, and same as brute force
    brute = [i for i in range(len(r)) if r.columns["v"][i] < 50.0]
    assert over.bundle.dump("zipf")["backward"] == [[i] for i in brute]
    assert over.bundle.dump("zipf") == under.bundle.dump("zipf")


# ---------------------------------------------------------------- groupby

def test_groupby_hand_example():
    r = rel_of("t", z=[1, 1, 2])
    out = groupby(scan(r), [(Col("z"), "z")], [AggSpec("count", None, "c")])
    assert list(out.relation.rows()) == [(1, 2), (2, 1)]
    assert out.bundle.dump("t") == {"backward": [[0, 1], [2]], "forward": [[0], [0], [1]]}


def test_groupby_empty_input():
    r = rel_of("t", z=[])
    out = groupby(scan(r), [(Col("z"), "z")], [AggSpec("count", None, "c")])
    assert len(out.relation) == 0
    assert out.bundle.dump("t") == {"backward": [], "forward": []}


def test_groupby_defer_identical_and_idempotent():
    r = gen_zipf(500, 10, 1.0, seed=3)
    keys = [(Col("z"), "z")]
    aggs = [AggSpec("count", None, "c"), AggSpec("sum", Col("v"), "s"),
            AggSpec("min", Col("v"), "mn"), AggSpec("max", Col("v"), "mx"),
            AggSpec("avg", Col("v"), "av")]
    inj = groupby(scan(r), keys, aggs, CaptureMode.INJECT)
    dfr = groupby(scan(r), keys, aggs, CaptureMode.DEFER)
    assert dfr.bundle.pending
    dfr.bundle.finalize()
    dfr.bundle.finalize()  # no-op
    assert not dfr.bundle.pending
    assert inj.bundle.dump("zipf") == dfr.bundle.dump("zipf")
    assert bundle_growth_events(dfr.bundle) == 0
    # output invariance across modes
    for mode in (CaptureMode.DEFER, CaptureMode.CALLBACK, CaptureMode.NONE):
        out = groupby(scan(r, mode=mode), keys, aggs, mode)
        for col in inj.relation.schema.names:
            assert np.array_equal(out.relation.columns[col], inj.relation.columns[col])


def test_groupby_bucket_sizes_match_brute_force():
    r = gen_zipf(100_000, 40, 1.0, seed=4)
    out = groupby(scan(r), [(Col("z"), "z")],
                  [AggSpec("count", None, "c"), AggSpec("sum", Col("v"), "s"),
                   AggSpec("sum", Arith("*", Col("v"), Col("v")), "s2"),
                   AggSpec("min", Col("v"), "mn"), AggSpec("max", Col("v"), "mx"),
                   AggSpec("count_distinct", Col("id"), "cd")])
    got = {}
    for o in range(len(out.relation)):
        got[int(out.relation.columns["z"][o])] = len(out.bundle.pairs["zipf"].backward.get(o))
    want = {}
    for z in r.columns["z"]:
        want[int(z)] = want.get(int(z), 0) + 1
    assert got == want


def test_groupby_cardinality_stats_zero_growth():
    r = gen_zipf(50_000, 100, 1.0, seed=5)
    keys = [(Col("z"), "z")]
    aggs = [AggSpec("count", None, "c")]
    with_stats = groupby(scan(r), keys, aggs, cardinality_stats=True)
    without = groupby(scan(r), keys, aggs, cardinality_stats=False)
    assert bundle_growth_events(with_stats.bundle) == 0
    assert bundle_growth_events(without.bundle) > 0
    assert with_stats.bundle.dump("zipf") == without.bundle.dump("zipf")


# ---------------------------------------------------------------- joins

def test_hashjoin_spec_example():
    A = rel_of("A", za=[1, 2])
    B = rel_of("B", zb=[1, 1, 2])
    out = hashjoin_inject(scan(A), scan(B), ["za"], ["zb"])
    assert len(out.relation) == 3
    assert out.bundle.dump("A") == {"backward": [[0], [0], [1]], "forward": [[0, 1], [2]]}
    assert out.bundle.dump("B") == {"backward": [[0], [1], [2]], "forward": [[0], [1], [2]]}


def test_hashjoin_disjoint_keys():
    A = rel_of("A", za=[1, 2])
    B = rel_of("B", zb=[3, 4])
    out = hashjoin_inject(scan(A), scan(B), ["za"], ["zb"])
    assert len(out.relation) == 0
    assert out.bundle.dump("A")["forward"] == [[], []]
    assert out.bundle.dump("B")["forward"] == [[], []]


def test_hashjoin_defer_equivalence_and_empty_probe():
    A = rel_of("A", za=[1, 2])
    B = rel_of("B", zb=[1, 1, 2])
    inj = hashjoin_inject(scan(A), scan(B), ["za"], ["zb"])
    dfr = hashjoin_defer(scan(A), scan(B), ["za"], ["zb"])
    dfr.bundle.finalize()
    assert inj.bundle.dump("A") == dfr.bundle.dump("A")
    assert inj.bundle.dump("B") == dfr.bundle.dump("B")
    empty = hashjoin_defer(scan(A), scan(rel_of("B", zb=[])), ["za"], ["zb"])
    empty.bundle.finalize()
    assert empty.bundle.dump("A")["forward"] == [[], []]


def test_mn_defer_zero_forward_growth():
    left = gen_zipf(500, 8, 1.0, seed=6, name="L")
    right = rel_of("R", z2=np.random.default_rng(0).integers(1, 9, 5000).tolist())
    dfr = hashjoin(scan(left), scan(right), ["z"], ["z2"], CaptureMode.DEFER,
                   materialize_output=False)
    dfr.bundle.finalize()
    a_pair = dfr.bundle.pairs["L"]
    assert a_pair.forward.counter.events == 0
    inj = hashjoin(scan(left), scan(right), ["z"], ["z2"], CaptureMode.INJECT,
                   materialize_output=False)
    assert inj.bundle.pairs["L"].forward.counter.events > 0
    assert inj.bundle.dump("L") == dfr.bundle.dump("L")


def test_pkfk_spec_example():
    gids = rel_of("gids", gid=[1, 2, 3])
    zipf = rel_of("zipf", z=[2, 2, 1])
    out = hashjoin_pkfk(scan(gids), scan(zipf), ["gid"], ["z"])
    assert out.bundle.dump("zipf")["forward"] == [[0], [1], [2]]
    assert out.bundle.dump("gids")["backward"] == [[1], [1], [0]]


def test_pkfk_dangling_fk_misses():
    gids = rel_of("gids", gid=[1, 2, 3])
    zipf = rel_of("zipf", z=[2, 9, 1])
    out = hashjoin_pkfk(scan(gids), scan(zipf), ["gid"], ["z"])
    assert len(out.relation) == 2
    assert out.bundle.dump("zipf")["forward"] == [[0], [], [1]]
    assert bundle_growth_events(out.bundle) == 0  # backward preallocated


def test_pkfk_duplicate_build_key_fatal():
    gids = rel_of("gids", gid=[1, 1])
    zipf = rel_of("zipf", z=[1])
    with pytest.raises(PkFkViolation):
        hashjoin_pkfk(scan(gids), scan(zipf), ["gid"], ["z"])


def test_pkfk_equals_generic_join():
    rng = np.random.default_rng(1)
    gids = rel_of("gids", gid=list(range(1, 51)))
    zipf = rel_of("zipf", z=rng.integers(1, 51, 2000).tolist())
    a = hashjoin_pkfk(scan(gids), scan(zipf), ["gid"], ["z"])
    b = hashjoin_inject(scan(gids), scan(zipf), ["gid"], ["z"])
    assert a.bundle.dump("gids") == b.bundle.dump("gids")
    # pkfk stores the fk forward side as a rid array; dumps still agree
    assert a.bundle.dump("zipf") == b.bundle.dump("zipf")


# ---------------------------------------------------------------- set/bag ops

def test_set_union_spec_example():
    A = rel_of("A", z=[7])
    B = rel_of("B", z2=[7, 9])
    out = set_union(scan(A), scan(B), ["z"], b_attrs=["z2"])
    assert [r[0] for r in out.relation.rows()] == [7, 9]
    assert out.bundle.dump("A")["backward"] == [[0], []]
    assert out.bundle.dump("B")["backward"] == [[0], [1]]


def test_bag_intersect_spec_example():
    A = rel_of("A", z=[1, 1, 2])
    B = rel_of("B", z2=[1])
    out = bag_intersect(scan(A), scan(B), ["z"], b_attrs=["z2"])
    assert len(out.relation) == 2
    got = out.bundle.dump("A")
    want = oracle.oracle_bag_intersect([1, 1, 2], [1])
    assert got == want["A"]


def test_set_diff_spec_example():
    A = rel_of("A", z=[1, 2])
    B = rel_of("B", z2=[1])
    out = set_diff(scan(A), scan(B), ["z"], b_attrs=["z2"])
    assert [r[0] for r in out.relation.rows()] == [2]
    assert out.bundle.dump("A")["backward"] == [[1]]
    # the whole inner relation supports every output
    assert out.bundle.dump("B")["backward"] == [[0]]
    assert out.bundle.dump("B")["forward"] == [[0]]


def test_bag_union_arithmetic():
    A = rel_of("A", z=[1, 2])
    B = rel_of("B", z2=[3])
    out = bag_union(scan(A), scan(B), ["z"], b_attrs=["z2"])
    assert [r[0] for r in out.relation.rows()] == [1, 2, 3]
    assert out.bundle.pairs["A"].backward.nbytes == 0  # no materialization
    assert out.bundle.dump("B") == {"backward": [[], [], [0]], "forward": [[2]]}


# ---------------------------------------------------------------- nlj / cross

def test_nlj_matches_pairs_and_runs():
    A = rel_of("A", va=[1.0, 5.0, 9.0])
    B = rel_of("B", vb=[2.0, 6.0, 10.0])
    out = nlj_theta(scan(A), scan(B), Cmp("<", Col("va"), Col("vb")))
    want = oracle.oracle_nlj([1.0, 5.0, 9.0], [2.0, 6.0, 10.0], lambda x, y: x < y)
    assert out.bundle.dump("A") == want["A"]
    assert out.bundle.dump("B") == want["B"]


def test_nlj_always_false_empty_everything():
    A = rel_of("A", va=[1.0, 2.0])
    B = rel_of("B", vb=[1.0, 2.0])
    out = nlj_theta(scan(A), scan(B), Cmp("<", Col("va"), Lit(-1.0)))
    assert len(out.relation) == 0
    assert out.bundle.dump("A") == {"backward": [], "forward": [[], []]}
    assert out.bundle.dump("B") == {"backward": [], "forward": [[], []]}


def test_nlj_equals_hashjoin_as_pair_multiset():
    rng = np.random.default_rng(2)
    A = rel_of("A", za=rng.integers(0, 4, 12).tolist())
    B = rel_of("B", zb=rng.integers(0, 4, 15).tolist())
    h = hashjoin_inject(scan(A), scan(B), ["za"], ["zb"])
    n = nlj_theta(scan(A), scan(B), Cmp("=", Col("za"), Col("zb")))
    pairs_h = sorted(zip(h.bundle.pairs["A"].backward.view().tolist(),
                         h.bundle.pairs["B"].backward.view().tolist()))
    pairs_n = sorted(zip(n.bundle.pairs["A"].backward.view().tolist(),
                         n.bundle.pairs["B"].backward.view().tolist()))
    assert pairs_h == pairs_n


def test_cross_product_arithmetic():
    A = rel_of("A", x=[10, 20])
    B = rel_of("B", y=[1, 2, 3])
    out = cross_product(scan(A), scan(B))
    assert out.bundle.pairs["A"].backward.nbytes == 0
    assert out.bundle.pairs["A"].backward.get(4).tolist() == [1]
    assert out.bundle.pairs["B"].backward.get(4).tolist() == [1]
    assert out.bundle.pairs["B"].forward.get(1).tolist() == [1, 4]
    want = oracle.oracle_cross(2, 3)
    assert out.bundle.dump("A") == want["A"]
    assert out.bundle.dump("B") == want["B"]


# ---------------------------------------------------------------- properties

@pytest.mark.parametrize("op", OPS)
def test_oracle_and_mode_equivalence_quick(op):
    run_corpus(op, 40, seed=99)


def test_bag_union_over_selection_composes():
    # non-identity inputs: the arithmetic split lineage must thread through
    # the selections' backward/forward maps
    A = rel_of("A", z=[1, 2, 3, 4], v=[10.0, 80.0, 20.0, 90.0])
    B = rel_of("B", z2=[7, 8], v2=[5.0, 95.0])
    sa = select(scan(A), Cmp("<", Col("v"), Lit(50.0)))     # keeps rows 0, 2
    sb = select(scan(B), Cmp("<", Col("v2"), Lit(50.0)))    # keeps row 0
    out = bag_union(sa, sb, ["z"], b_attrs=["z2"])
    assert [r[0] for r in out.relation.rows()] == [1, 3, 7]
    assert out.bundle.dump("A") == {"backward": [[0], [2], []], "forward": [[0], [], [1], []]}
    assert out.bundle.dump("B") == {"backward": [[], [], [0]], "forward": [[2], []]}


def test_set_ops_over_selection_match_composed_oracle():
    rng = np.random.default_rng(23)
    for _ in range(30):
        n_a, n_b = int(rng.integers(0, 20)), int(rng.integers(0, 20))
        A = rel_of("A", z=rng.integers(0, 4, n_a).tolist(), v=rng.uniform(0, 100, n_a).tolist())
        B = rel_of("B", z2=rng.integers(0, 4, n_b).tolist(), v2=rng.uniform(0, 100, n_b).tolist())
        cut = float(rng.uniform(0, 100))
        sa = select(scan(A), Cmp("<", Col("v"), Lit(cut)))
        sb = select(scan(B), Cmp("<", Col("v2"), Lit(cut)))
        keep_a = [i for i in range(n_a) if A.columns["v"][i] < cut]
        keep_b = [j for j in range(n_b) if B.columns["v2"][j] < cut]
        out = set_union(sa, sb, ["z"], b_attrs=["z2"])
        want = oracle.oracle_set_union([A.columns["z"][i] for i in keep_a],
                                       [B.columns["z2"][j] for j in keep_b])
        got_a = out.bundle.dump("A")["backward"]
        composed = oracle.compose_backward(want["A"]["backward"], [[i] for i in keep_a])
        assert got_a == composed
        got_b = out.bundle.dump("B")["backward"]
        composed_b = oracle.compose_backward(want["B"]["backward"], [[j] for j in keep_b])
        assert got_b == composed_b


def test_cross_over_selection_composes():
    A = rel_of("A", z=[1, 2, 3], v=[10.0, 80.0, 20.0])
    B = rel_of("B", z2=[7, 8])
    sa = select(scan(A), Cmp("<", Col("v"), Lit(50.0)))  # rows 0, 2
    out = cross_product(sa, scan(B))
    # outputs: (a0,b0), (a0,b1), (a2,b0), (a2,b1)
    assert out.bundle.dump("A")["backward"] == [[0], [0], [2], [2]]
    assert out.bundle.dump("B")["backward"] == [[0], [1], [0], [1]]
    assert out.bundle.dump("A")["forward"] == [[0, 1], [], [2, 3]]


def test_duality_random():
    rng = np.random.default_rng(11)
    for _ in range(50):
        A = rel_of("A", za=rng.integers(0, 4, int(rng.integers(0, 20))).tolist())
        B = rel_of("B", zb=rng.integers(0, 4, int(rng.integers(0, 20))).tolist())
        out = hashjoin_inject(scan(A), scan(B), ["za"], ["zb"])
        for name in ("A", "B"):
            d = out.bundle.dump(name)
            n_src = len(A) if name == "A" else len(B)
            fw = d["forward"]
            for o, bucket in enumerate(d["backward"]):
                for r in bucket:
                    assert bucket.count(r) == fw[r].count(o)
