"""Single-operator microbenchmarks over skewed synthetic data.

Kinds:
  groupby — six-aggregate grouping on the zipfian key (optionally with
            known group cardinalities preallocating the buckets)
  pkfk    — gids(id) joined with zipf on the zipfian foreign key,
            optionally with exact per-key match counts
  mn      — skewed many-to-many self-shaped join; output materialization is
            suppressed so capture costs dominate, matching how this join is
            usually measured
  select  — predicate scan with optional selectivity estimates
"""

from __future__ import annotations

import time
from typing import Dict, Optional, Sequence

import numpy as np

from ..expr import AggSpec, Cmp, Col, Func, Lit
from ..operators import (
    CaptureMode,
    bundle_growth_events,
    groupby,
    hashjoin,
    hashjoin_pkfk,
    scan,
    select,
)
from ..relstore import Relation, Schema, gen_zipf
from .report import BenchReport, BenchRow, time_run

def _groupby_aggs():
    from ..expr import Arith

    return [
        AggSpec("count", None, "cnt"),
        AggSpec("sum", Col("v"), "sum_v"),
        AggSpec("sum", Arith("*", Col("v"), Col("v")), "sum_vv"),
        AggSpec("sum", Func("sqrt", Col("v")), "sum_sqrt_v"),
        AggSpec("min", Col("v"), "min_v"),
        AggSpec("max", Col("v"), "max_v"),
    ]


def gids_relation(g: int) -> Relation:
    return Relation(Schema.of(("id", "int64")), {"id": np.arange(1, g + 1, dtype=np.int64)}, "gids")


def bench_micro(kind: str, params: Dict, modes: Sequence[str], runs: int = 15, warmups: int = 3,
                seed: int = 7) -> BenchReport:
    if kind == "groupby":
        return _bench_groupby(params, modes, runs, warmups, seed)
    if kind == "pkfk":
        return _bench_pkfk(params, modes, runs, warmups, seed)
    if kind == "mn":
        return _bench_mn(params, modes, runs, warmups, seed)
    if kind == "select":
        return _bench_select(params, modes, runs, warmups, seed)
    raise ValueError(f"unknown micro kind {kind!r}")


def _forward_growth(out, base: str) -> int:
    out.bundle.finalize()
    fw = out.bundle.pairs[base].forward
    c = getattr(fw, "counter", None)
    return c.events if c is not None else 0


def _report_row(report: BenchReport, name: str, params: Dict, mode: str, mean_ms: float, out,
                extra: Optional[Dict] = None) -> None:
    growth = bundle_growth_events(out.bundle) if out.bundle is not None else 0
    nbytes = out.bundle.nbytes if out.bundle is not None else 0
    report.add(BenchRow(name=name, params=dict(params), mode=mode, latency_ms=mean_ms,
                        growth_events=growth, index_bytes=nbytes, extra=extra or {}))


def _bench_groupby(params, modes, runs, warmups, seed) -> BenchReport:
    n, g, theta = int(params.get("n", 10**6)), int(params.get("g", 1000)), float(params.get("theta", 1.0))
    stats = bool(params.get("stats_cardinalities", False))
    rel = gen_zipf(n, g, theta, seed=seed)
    aggs = _groupby_aggs()
    keys = [(Col("z"), "z")]
    report = BenchReport()
    for mode_name in modes:
        mode = CaptureMode(mode_name)
        finalize_ms: list = []

        def run_once():
            out = groupby(scan(rel, mode=mode), keys, aggs, mode=mode,
                          cardinality_stats=stats and mode is CaptureMode.INJECT)
            if out.bundle is not None:
                # Defer pays its reconstruction here; total latency includes
                # it, and the split is reported alongside
                t0 = time.perf_counter()
                out.bundle.finalize()
                finalize_ms.append((time.perf_counter() - t0) * 1e3)
            return out

        mean_ms, out, _ = time_run(run_once, runs=runs, warmups=warmups)
        extra = {}
        if finalize_ms:
            extra["finalize_ms"] = float(np.mean(finalize_ms[-runs:]))
        _report_row(report, "micro_groupby", {**params, "n": n, "g": g, "theta": theta},
                    mode_name, mean_ms, out, extra=extra)
    report.fill_overheads()
    return report


def _bench_pkfk(params, modes, runs, warmups, seed) -> BenchReport:
    n, g, theta = int(params.get("n", 10**6)), int(params.get("g", 1000)), float(params.get("theta", 1.0))
    stats = bool(params.get("stats_cardinalities", False))
    zipf = gen_zipf(n, g, theta, seed=seed)
    gids = gids_relation(g)
    report = BenchReport()
    match_counts = np.bincount(zipf.columns["z"], minlength=g + 1)[1:] if stats else None
    for mode_name in modes:
        mode = CaptureMode(mode_name)

        def run_once():
            if mode is CaptureMode.NONE:
                return hashjoin(scan(gids, mode=mode), scan(zipf, mode=mode), ["id"], ["z"],
                                mode=mode, pkfk=True, materialize_output=False)
            out = hashjoin_pkfk(scan(gids), scan(zipf), ["id"], ["z"], mode=mode,
                                materialize_output=False,
                                forward_hints=match_counts)
            out.bundle.finalize()
            return out

        mean_ms, out, _ = time_run(run_once, runs=runs, warmups=warmups)
        _report_row(report, "micro_pkfk", {**params, "n": n, "g": g}, mode_name, mean_ms, out,
                    extra={"stats_cardinalities": stats})
    report.fill_overheads()
    return report


def _bench_mn(params, modes, runs, warmups, seed) -> BenchReport:
    left_n = int(params.get("left_n", 1000))
    left_g = int(params.get("left_g", 10))
    right_n = int(params.get("right_n", 10**4))
    right_g = int(params.get("right_g", 100))
    theta = float(params.get("theta", 1.0))
    left = gen_zipf(left_n, left_g, theta, seed=seed, name="zipf1")
    right = gen_zipf(right_n, right_g, theta, seed=seed + 1, name="zipf2")
    right = Relation(
        Schema.of(("id2", "int64"), ("z2", "int64"), ("v2", "float64")),
        {"id2": right.columns["id"], "z2": right.columns["z"], "v2": right.columns["v"]},
        "zipf2",
    )
    report = BenchReport()
    for mode_name in modes:
        mode = CaptureMode(mode_name)
        finalize_ms: list = []

        def run_once():
            out = hashjoin(scan(left, mode=mode), scan(right, mode=mode), ["z"], ["z2"],
                           mode=mode, materialize_output=False)
            if out.bundle is not None:
                t0 = time.perf_counter()
                out.bundle.finalize()
                finalize_ms.append((time.perf_counter() - t0) * 1e3)
            return out

        mean_ms, out, _ = time_run(run_once, runs=runs, warmups=warmups)
        extra = {"out_rows": out.out_count}
        if finalize_ms:
            extra["finalize_ms"] = float(np.mean(finalize_ms[-runs:]))
        if out.bundle is not None:
            extra["forward_a_growth"] = _forward_growth(out, "zipf1")
        _report_row(report, "micro_mn",
                    {"left_n": left_n, "left_g": left_g, "right_n": right_n, "right_g": right_g,
                     "theta": theta},
                    mode_name, mean_ms, out, extra=extra)
    report.fill_overheads()
    return report


def _bench_select(params, modes, runs, warmups, seed) -> BenchReport:
    n = int(params.get("n", 10**6))
    cut = float(params.get("cut", 50.0))  # v < cut, selectivity ~ cut/100
    est = params.get("est_selectivity")
    est = float(est) if est is not None else None
    rel = gen_zipf(n, int(params.get("g", 1000)), float(params.get("theta", 1.0)), seed=seed)
    pred = Cmp("<", Col("v"), Lit(cut))
    report = BenchReport()
    for mode_name in modes:
        mode = CaptureMode(mode_name)

        def run_once():
            return select(scan(rel, mode=mode), pred, est_selectivity=est, mode=mode)

        mean_ms, out, _ = time_run(run_once, runs=runs, warmups=warmups)
        _report_row(report, "micro_select", {"n": n, "cut": cut, "est_selectivity": est},
                    mode_name, mean_ms, out)
    report.fill_overheads()
    return report
