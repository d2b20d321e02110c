"""Crossfilter over linked count views.

Four (or any number of) COUNT group-by views share one input table.
Brushing a bin in one view recomputes every other view over the rows that
contributed to the brushed bin:

  lazy — no capture; each brush re-runs the group-bys behind a shared
         selection scan of the input table
  bt   — backward lineage indexes turn the selection scan into an
         index scan, but the group-bys still re-execute
  bt_ft — forward indexes map each input row straight to its bin in every
         view, so counts update in place with no hash table rebuild
  partial_cube — group-by push-down materializes all ordered dimension
         pairs up front (sparse encoding); a brush is a lookup

All strategies return count vectors aligned to the original view bins, with
zero-count bins retained (the visualization keeps its marks).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..relstore import Relation, gen_flights
from .report import BenchReport, BenchRow

STRATEGIES = ("lazy", "bt", "bt_ft", "partial_cube")


@dataclass
class View:
    dim: str
    bins: np.ndarray    # bin keys in first-encounter order
    counts: np.ndarray  # aligned with bins
    codes: np.ndarray   # per input row: bin position (perfect hash)


@dataclass
class SparseCube:
    """Counts over an ordered dimension pair, sparsely encoded: flat keys
    (bin_a * n_b + bin_b) sorted, one count per occupied cell."""

    keys: np.ndarray
    counts: np.ndarray
    n_b: int

    def slice_counts(self, bin_a: int) -> np.ndarray:
        lo = np.searchsorted(self.keys, bin_a * self.n_b)
        hi = np.searchsorted(self.keys, (bin_a + 1) * self.n_b)
        out = np.zeros(self.n_b, dtype=np.int64)
        out[self.keys[lo:hi] - bin_a * self.n_b] = self.counts[lo:hi]
        return out


@dataclass
class CrossfilterState:
    table: Relation
    strategy: str
    views: Dict[str, View] = field(default_factory=dict)
    backward: Dict[str, List[np.ndarray]] = field(default_factory=dict)  # dim -> per-bin rid arrays
    cubes: Dict[Tuple[str, str], SparseCube] = field(default_factory=dict)
    capture_ms: float = 0.0

    def view_counts(self) -> Dict[str, np.ndarray]:
        return {d: v.counts.copy() for d, v in self.views.items()}


def build_views(table: Relation, dims: Sequence[str], strategy: str) -> CrossfilterState:
    """Run the per-dimension COUNT group-bys, capturing whatever the strategy
    needs (nothing for lazy, backward for bt, backward+forward for bt_ft,
    pair cubes for partial_cube)."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    state = CrossfilterState(table, strategy)
    t0 = time.perf_counter()
    from ..operators import factorize

    for dim in dims:
        col = table.columns[dim]
        codes, n_bins, rep = factorize([col])
        bins = col[rep]
        counts = np.bincount(codes, minlength=n_bins)
        state.views[dim] = View(dim, bins, counts, codes)
        if strategy in ("bt", "bt_ft"):
            order = np.argsort(codes, kind="stable")
            offs = np.concatenate(([0], np.cumsum(counts)))
            rids = np.arange(len(col), dtype=np.int64)[order]
            state.backward[dim] = [rids[offs[i]: offs[i + 1]] for i in range(n_bins)]
        # bt keeps only the backward index (forward direction pruned); bt_ft
        # additionally keeps `codes`, the forward map used as a perfect hash
    if strategy == "partial_cube":
        for da in dims:
            for db in dims:
                if da == db:
                    continue
                va, vb = state.views[da], state.views[db]
                n_b = len(vb.bins)
                flat = va.codes * n_b + vb.codes
                keys, counts = np.unique(flat, return_counts=True)
                state.cubes[(da, db)] = SparseCube(keys, counts, n_b)
        for dim in dims:
            state.backward[dim] = []  # cubes answer brushes; no rid storage
    state.capture_ms = (time.perf_counter() - t0) * 1e3
    return state


def brush(state: CrossfilterState, dim: str, bin_positions: Sequence[int],
          remove_non_affected: bool = False) -> Dict[str, np.ndarray]:
    """Counts of every other view restricted to rows in the brushed bins.
    Returns {dim: counts aligned to that view's bins}; the brushed view is
    returned unchanged.  Zero-count groups are kept unless
    remove_non_affected is set, which marks them with -1 for callers that
    want strict SQL semantics."""
    view = state.views[dim]
    for b in bin_positions:
        if not 0 <= int(b) < len(view.bins):
            raise KeyError(f"bin {b} not in view {dim!r}")
    out: Dict[str, np.ndarray] = {dim: view.counts.copy()}
    others = [d for d in state.views if d != dim]

    if state.strategy == "partial_cube":
        for other in others:
            cube = state.cubes[(dim, other)]
            agg = np.zeros(len(state.views[other].bins), dtype=np.int64)
            for b in bin_positions:
                agg += cube.slice_counts(int(b))
            out[other] = agg
        return _maybe_trim(out, dim, remove_non_affected)

    if state.strategy == "lazy":
        # shared selection scan of the base table
        col = state.table.columns[dim]
        sel = np.asarray(view.bins, dtype=col.dtype)[np.asarray(bin_positions, dtype=np.int64)]
        mask = np.isin(col, sel)
        rows = np.flatnonzero(mask)
    else:
        parts = [state.backward[dim][int(b)] for b in bin_positions]
        rows = np.concatenate(parts) if parts else np.empty(0, np.int64)

    if state.strategy == "bt_ft":
        # forward indexes are perfect hashes onto the existing view bins
        for other in others:
            fw = state.views[other].codes
            out[other] = np.bincount(fw[rows], minlength=len(state.views[other].bins))
    else:
        # lazy and bt re-run the group-by on the selected subset, then align
        # the counts onto the original bins
        for other in others:
            col = state.table.columns[other][rows]
            from ..operators import factorize

            if len(col):
                codes, n_sub, rep = factorize([col])
                sub_bins = col[rep]
                sub_counts = np.bincount(codes, minlength=n_sub)
            else:
                sub_bins, sub_counts = np.empty(0), np.empty(0, np.int64)
            aligned = np.zeros(len(state.views[other].bins), dtype=np.int64)
            pos = {k: i for i, k in enumerate(state.views[other].bins.tolist())}
            for k, c in zip(sub_bins.tolist(), sub_counts.tolist()):
                aligned[pos[k]] = c
            out[other] = aligned
    return _maybe_trim(out, dim, remove_non_affected)


def _maybe_trim(out: Dict[str, np.ndarray], brushed: str, remove: bool) -> Dict[str, np.ndarray]:
    if not remove:
        return out
    return {d: (c if d == brushed else np.where(c > 0, c, -1)) for d, c in out.items()}


def bench_crossfilter(strategy: str, table: Optional[Relation] = None, rows: int = 10**6,
                      dims: Sequence[str] = ("latlon_bin", "day_bin", "delay_bin", "carrier"),
                      seed: int = 7, max_bins_per_view: Optional[int] = None) -> Tuple[BenchReport, Dict]:
    """Brush every non-empty bin of every view once; report per-interaction
    and cumulative latency plus the capture cost."""
    table = table if table is not None else gen_flights(rows, seed=seed)
    state = build_views(table, dims, strategy)
    report = BenchReport()
    latencies: List[float] = []
    interactions: List[Tuple[str, int]] = []
    for dim in dims:
        n_bins = len(state.views[dim].bins)
        limit = n_bins if max_bins_per_view is None else min(n_bins, max_bins_per_view)
        for b in range(limit):
            interactions.append((dim, b))
    all_counts: Dict[Tuple[str, int], Dict[str, np.ndarray]] = {}
    for dim, b in interactions:
        t0 = time.perf_counter()
        counts = brush(state, dim, [b])
        latencies.append((time.perf_counter() - t0) * 1e3)
        all_counts[(dim, b)] = counts
    lat = np.asarray(latencies)
    report.add(BenchRow(
        name="crossfilter",
        params={"strategy": strategy, "rows": len(table), "dims": list(dims),
                "interactions": len(interactions)},
        mode=strategy,
        latency_ms=float(lat.mean()) if len(lat) else 0.0,
        extra={
            "capture_ms": state.capture_ms,
            "median_ms": float(np.median(lat)) if len(lat) else 0.0,
            "p99_ms": float(np.percentile(lat, 99)) if len(lat) else 0.0,
            "cumulative_ms": float(lat.sum()),
            "under_150ms": int((lat < 150.0).sum()),
        },
    ))
    return report, {"state": state, "latencies": lat, "counts": all_counts,
                    "interactions": interactions}
