"""Figure rendering for benchmark reports (PNG files next to the JSON/CSV)."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .report import BenchReport


def _save(fig, outdir, name: str) -> Path:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.png"
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def overhead_bars(report: BenchReport, outdir, name: str = "overhead") -> Optional[Path]:
    """Latency per mode with the relative overhead annotated."""
    rows = [r for r in report.runs]
    if not rows:
        return None
    fig, ax = plt.subplots(figsize=(6, 3.2))
    labels = [f"{r.name}\n{r.mode}" for r in rows]
    vals = [r.latency_ms for r in rows]
    bars = ax.bar(range(len(rows)), vals, color="#4878d0")
    for b, r in zip(bars, rows):
        if r.relative_overhead is not None:
            ax.text(b.get_x() + b.get_width() / 2, b.get_height(), f"{r.relative_overhead:+.2f}x",
                    ha="center", va="bottom", fontsize=8)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("latency (ms)")
    return _save(fig, outdir, name)


def crossfilter_latency(latencies_by_strategy: Dict[str, np.ndarray], outdir,
                        threshold_ms: float = 150.0) -> Sequence[Path]:
    """Per-interaction latency (sorted) and cumulative latency, one line per
    strategy, with the interactivity threshold marked."""
    paths = []
    fig, ax = plt.subplots(figsize=(6, 3.2))
    for strategy, lat in latencies_by_strategy.items():
        ax.plot(np.sort(lat)[::-1], label=strategy, linewidth=1.2)
    ax.axhline(threshold_ms, color="red", linestyle="--", linewidth=0.8, label=f"{threshold_ms:.0f} ms")
    ax.set_yscale("log")
    ax.set_xlabel("interaction (sorted by latency)")
    ax.set_ylabel("latency (ms, log)")
    ax.legend(fontsize=8)
    paths.append(_save(fig, outdir, "xfilter_per_interaction"))

    fig, ax = plt.subplots(figsize=(6, 3.2))
    for strategy, lat in latencies_by_strategy.items():
        ax.plot(np.cumsum(lat) / 1e3, label=strategy, linewidth=1.2)
    ax.set_xlabel("interaction")
    ax.set_ylabel("cumulative time (s)")
    ax.legend(fontsize=8)
    paths.append(_save(fig, outdir, "xfilter_cumulative"))
    return paths


def fd_latency_bars(reports: Dict[str, BenchReport], outdir) -> Optional[Path]:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    width = 0.8 / max(1, len(reports))
    names = None
    for i, (approach, rep) in enumerate(sorted(reports.items())):
        labels = [r.name for r in rep.runs]
        names = names or labels
        ax.bar(np.arange(len(labels)) + i * width, [r.latency_ms for r in rep.runs],
               width=width, label=approach)
    if names is None:
        plt.close(fig)
        return None
    ax.set_xticks(np.arange(len(names)) + width / 2)
    ax.set_xticklabels(names, fontsize=7, rotation=20)
    ax.set_ylabel("latency (ms)")
    ax.legend(fontsize=8)
    return _save(fig, outdir, "fd_latency")
