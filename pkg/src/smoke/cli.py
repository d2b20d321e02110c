"""Command-line interface.

    smoke gen zipf|flights|tpch ...
    smoke bench micro --kind groupby --n 1e6 --groups 1000 --theta 1 \
          --modes none,inject,defer,callback [--stats-cardinalities]
    smoke bench tpch --query q1 --data DIR --modes none,inject,defer
    smoke bench xfilter --strategy btft --rows 1e6
    smoke profile fd --table f.csv --fd "zip->state" --approach cd
    smoke query --data DIR --sql "SELECT ..."
    smoke serve --port 8000

Benchmark commands write report.json + report.csv plus rendered figures
into --out (default ./reports).
"""

from __future__ import annotations

import json
from pathlib import Path

import click


def _count(value: str) -> int:
    return int(float(value))


def _modes(value: str):
    return [m.strip() for m in value.split(",") if m.strip()]


@click.group()
def main():
    """In-memory query engine with fine-grained lineage capture."""


# ---------------------------------------------------------------- gen

@main.group()
def gen():
    """Synthetic dataset generators."""


@gen.command("zipf")
@click.option("--n", default="1e6", help="row count (1e6 style accepted)")
@click.option("--groups", "-g", default="1000")
@click.option("--theta", default=1.0, type=float)
@click.option("--seed", default=7, type=int)
@click.option("--out", default="zipf.csv", type=click.Path())
def gen_zipf_cmd(n, groups, theta, seed, out):
    from .relstore import gen_zipf, write_csv

    rel = gen_zipf(_count(n), _count(groups), theta, seed=seed)
    write_csv(rel, out)
    click.echo(f"wrote {len(rel)} rows to {out}")


@gen.command("flights")
@click.option("--n", default="1e6")
@click.option("--seed", default=7, type=int)
@click.option("--out", default="flights.csv", type=click.Path())
def gen_flights_cmd(n, seed, out):
    from .relstore import gen_flights, write_csv

    rel = gen_flights(_count(n), seed=seed)
    write_csv(rel, out)
    click.echo(f"wrote {len(rel)} rows to {out}")


@gen.command("tpch")
@click.option("--sf", default=0.01, type=float, help="scale factor")
@click.option("--seed", default=7, type=int)
@click.option("--out", default="tpch-data", type=click.Path())
def gen_tpch_cmd(sf, seed, out):
    from .bench.tpch import generate, write_tbl

    tables = generate(sf, seed=seed)
    write_tbl(tables, out)
    for name, rel in tables.items():
        click.echo(f"  {name + '.tbl':16s} {len(rel):>9,} rows")
    click.echo(f"wrote .tbl files to {out}")


# ---------------------------------------------------------------- bench

@main.group()
def bench():
    """Benchmarks; emit JSON/CSV reports and figures."""


def _emit(report, outdir, figure_fn=None):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    report.to_json(outdir / "report.json")
    report.to_csv(outdir / "report.csv")
    if figure_fn is not None:
        figure_fn(outdir)
    click.echo(f"report written to {outdir}/report.json and report.csv")
    for r in report.runs:
        oh = "" if r.relative_overhead is None else f"  overhead {r.relative_overhead:+.2f}x"
        click.echo(f"  {r.name:18s} {r.mode:12s} {r.latency_ms:10.2f} ms{oh}  growth={r.growth_events}")


@bench.command("micro")
@click.option("--kind", type=click.Choice(["groupby", "pkfk", "mn", "select"]), required=True)
@click.option("--n", default="1e6")
@click.option("--groups", "-g", default="1000")
@click.option("--theta", default=1.0, type=float)
@click.option("--modes", default="none,inject,defer,callback")
@click.option("--stats-cardinalities", is_flag=True, default=False)
@click.option("--est-selectivity", default=None, type=float, help="selection benchmark estimate")
@click.option("--cut", default=50.0, type=float, help="selection predicate v < cut")
@click.option("--left-n", default="1000", help="mn join left rows")
@click.option("--left-g", default="10", help="mn join left groups")
@click.option("--right-n", default="1e4", help="mn join right rows")
@click.option("--right-g", default="100", help="mn join right groups")
@click.option("--runs", default=15, type=int)
@click.option("--warmups", default=3, type=int)
@click.option("--seed", default=7, type=int)
@click.option("--out", default="reports/micro", type=click.Path())
def bench_micro_cmd(kind, n, groups, theta, modes, stats_cardinalities, est_selectivity, cut,
                    left_n, left_g, right_n, right_g, runs, warmups, seed, out):
    from .bench.figures import overhead_bars
    from .bench.micro import bench_micro

    params = {
        "n": _count(n), "g": _count(groups), "theta": theta,
        "stats_cardinalities": stats_cardinalities,
        "est_selectivity": est_selectivity, "cut": cut,
        "left_n": _count(left_n), "left_g": _count(left_g),
        "right_n": _count(right_n), "right_g": _count(right_g),
    }
    report = bench_micro(kind, params, _modes(modes), runs=runs, warmups=warmups, seed=seed)
    _emit(report, out, lambda d: overhead_bars(report, d, name=f"micro_{kind}"))


@bench.command("tpch")
@click.option("--query", type=click.Choice(["q1", "q3", "q10", "q12"]), required=True)
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--modes", default="none,inject,defer")
@click.option("--runs", default=15, type=int)
@click.option("--warmups", default=3, type=int)
@click.option("--out", default="reports/tpch", type=click.Path())
def bench_tpch_cmd(query, data_dir, modes, runs, warmups, out):
    from .bench.figures import overhead_bars
    from .bench.tpch import bench_tpch

    report = bench_tpch(query, data_dir, _modes(modes), runs=runs, warmups=warmups)
    _emit(report, out, lambda d: overhead_bars(report, d, name=f"tpch_{query}"))


@bench.command("xfilter")
@click.option("--strategy", default="btft",
              type=click.Choice(["lazy", "bt", "btft", "bt_ft", "cube", "partial_cube", "all"]))
@click.option("--rows", default="1e6")
@click.option("--seed", default=7, type=int)
@click.option("--max-bins", default=None, type=int, help="cap brushed bins per view")
@click.option("--out", default="reports/xfilter", type=click.Path())
def bench_xfilter_cmd(strategy, rows, seed, max_bins, out):
    from .bench.figures import crossfilter_latency
    from .bench.report import BenchReport
    from .bench.xfilter import bench_crossfilter
    from .relstore import gen_flights

    names = {"btft": "bt_ft", "cube": "partial_cube"}
    table = gen_flights(_count(rows), seed=seed)
    wanted = ["lazy", "bt", "bt_ft", "partial_cube"] if strategy == "all" else [names.get(strategy, strategy)]
    combined = BenchReport()
    latencies = {}
    for s in wanted:
        rep, detail = bench_crossfilter(s, table=table, max_bins_per_view=max_bins)
        combined.runs.extend(rep.runs)
        latencies[s] = detail["latencies"]
    _emit(combined, out, lambda d: crossfilter_latency(latencies, d))


# ---------------------------------------------------------------- profile

@main.group()
def profile():
    """Data profiling workloads."""


@profile.command("fd")
@click.option("--table", "table_path", required=True, type=click.Path(exists=True))
@click.option("--fd", "fds", multiple=True, required=True, help="e.g. 'zip->state' (repeatable)")
@click.option("--approach", type=click.Choice(["cd", "ug", "both"]), default="cd")
@click.option("--delimiter", default=",")
@click.option("--runs", default=1, type=int)
@click.option("--warmups", default=0, type=int)
@click.option("--out", default="reports/fd", type=click.Path())
def profile_fd_cmd(table_path, fds, approach, delimiter, runs, warmups, out):
    import csv as _csv

    from .bench.fd import bench_fd
    from .bench.figures import fd_latency_bars
    from .relstore import Schema, load_csv

    with open(table_path, newline="") as f:
        header = next(_csv.reader(f, delimiter=delimiter))
    schema = Schema(tuple((h, "text") for h in header))
    rel = load_csv(table_path, schema, delimiter=delimiter, name="t", header=True)

    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    approaches = ["cd", "ug"] if approach == "both" else [approach]
    reports = {}
    for a in approaches:
        graph, report = bench_fd(rel, list(fds), a, runs=runs, warmups=warmups)
        reports[a] = report
        (outdir / f"violations_{a}.json").write_text(
            json.dumps({fd: {str(k): v for k, v in vals.items()}
                        for fd, vals in graph.edges.items()}, indent=2)
        )
        report.to_json(outdir / f"report_{a}.json")
        report.to_csv(outdir / f"report_{a}.csv")
        for fd, vals in graph.edges.items():
            click.echo(f"[{a}] {fd}: {len(vals)} violating value(s)")
    fd_latency_bars(reports, outdir)
    click.echo(f"reports written to {outdir}")


# ---------------------------------------------------------------- query / serve

@main.command("query")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True),
              help="directory of TPC-H .tbl files")
@click.option("--sql", required=True)
@click.option("--mode", default="inject", type=click.Choice(["none", "inject", "defer", "callback"]))
@click.option("--limit", default=20, type=int)
def query_cmd(data_dir, sql, mode, limit):
    from .bench.tpch import load_dir, make_session
    from .operators import CaptureMode

    session = make_session(load_dir(data_dir))
    res = session.sql(sql, mode=CaptureMode(mode))
    click.echo(" | ".join(res.output.schema.names))
    for i, row in enumerate(res.output.rows()):
        if i >= limit:
            click.echo(f"... ({len(res.output)} rows total)")
            break
        click.echo(" | ".join(str(v) for v in row))
    click.echo(f"[{len(res.output)} rows, {res.stats.execute_ms:.1f} ms, "
               f"capture {res.stats.capture_ms:.1f} ms, handle {res.handle}]")


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve_cmd(host, port):
    from .server import serve

    click.echo(f"serving on http://{host}:{port}")
    serve(host, port)


if __name__ == "__main__":
    main()
