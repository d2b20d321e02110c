"""Benchmark report rows, timing harness, and JSON/CSV emission."""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional


@dataclass
class BenchRow:
    name: str
    params: Dict[str, object]
    mode: str
    latency_ms: float
    relative_overhead: Optional[float] = None
    growth_events: int = 0
    index_bytes: int = 0
    extra: Dict[str, object] = field(default_factory=dict)


@dataclass
class BenchReport:
    runs: List[BenchRow] = field(default_factory=list)

    def add(self, row: BenchRow) -> BenchRow:
        self.runs.append(row)
        return row

    def row(self, name: str, mode: str) -> BenchRow:
        for r in self.runs:
            if r.name == name and r.mode == mode:
                return r
        raise KeyError((name, mode))

    def fill_overheads(self, baseline_mode: str = "none") -> None:
        """relative_overhead = latency(mode)/latency(baseline) - 1, per name."""
        base: Dict[str, float] = {}
        for r in self.runs:
            if r.mode == baseline_mode:
                base[r.name] = r.latency_ms
        for r in self.runs:
            if r.name in base and base[r.name] > 0:
                r.relative_overhead = r.latency_ms / base[r.name] - 1.0

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps({"runs": [asdict(r) for r in self.runs]}, indent=2, default=_coerce))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["name", "mode", "latency_ms", "relative_overhead", "growth_events", "index_bytes", "params", "extra"])
            for r in self.runs:
                w.writerow([
                    r.name, r.mode, f"{r.latency_ms:.4f}",
                    "" if r.relative_overhead is None else f"{r.relative_overhead:.4f}",
                    r.growth_events, r.index_bytes,
                    json.dumps(r.params, default=_coerce), json.dumps(r.extra, default=_coerce),
                ])


def _coerce(x):
    if hasattr(x, "item"):
        return x.item()
    if hasattr(x, "tolist"):
        return x.tolist()
    return str(x)


def time_run(fn: Callable[[], object], runs: int = 15, warmups: int = 3) -> tuple:
    """Mean latency in ms over `runs` timed executions after `warmups`;
    returns (mean_ms, last_result, all_ms)."""
    result = None
    for _ in range(warmups):
        result = fn()
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        result = fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return statistics.fmean(samples), result, samples
