import json

from click.testing import CliRunner

from smoke.cli import main


def test_gen_and_query_roundtrip(tmp_path):
    runner = CliRunner()
    data = tmp_path / "data"
    r = runner.invoke(main, ["gen", "tpch", "--sf", "0.001", "--out", str(data)])
    assert r.exit_code == 0, r.output
    assert (data / "lineitem.tbl").exists()
    r = runner.invoke(main, ["query", "--data", str(data), "--sql",
                             "SELECT l_returnflag, count(*) AS c FROM lineitem GROUP BY l_returnflag"])
    assert r.exit_code == 0, r.output
    assert "l_returnflag" in r.output


def test_bench_micro_writes_report_and_figure(tmp_path):
    runner = CliRunner()
    out = tmp_path / "rep"
    r = runner.invoke(main, [
        "bench", "micro", "--kind", "groupby", "--n", "2e4", "--groups", "50",
        "--modes", "none,inject", "--runs", "2", "--warmups", "1", "--out", str(out),
    ])
    assert r.exit_code == 0, r.output
    doc = json.loads((out / "report.json").read_text())
    assert {run["mode"] for run in doc["runs"]} == {"none", "inject"}
    assert (out / "report.csv").exists()
    assert (out / "micro_groupby.png").exists()


def test_bench_xfilter_cli(tmp_path):
    runner = CliRunner()
    out = tmp_path / "x"
    r = runner.invoke(main, ["bench", "xfilter", "--strategy", "btft", "--rows", "2e4",
                             "--max-bins", "3", "--out", str(out)])
    assert r.exit_code == 0, r.output
    assert (out / "xfilter_cumulative.png").exists()


def test_profile_fd_cli(tmp_path):
    runner = CliRunner()
    table = tmp_path / "f.csv"
    table.write_text("zip,state\n10001,NY\n10001,NJ\n94110,CA\n")
    out = tmp_path / "fd"
    r = runner.invoke(main, ["profile", "fd", "--table", str(table), "--fd", "zip->state",
                             "--approach", "both", "--out", str(out)])
    assert r.exit_code == 0, r.output
    cd = json.loads((out / "violations_cd.json").read_text())
    ug = json.loads((out / "violations_ug.json").read_text())
    assert cd == ug == {"zip->state": {"10001": [0, 1]}}


def test_gen_zipf_csv(tmp_path):
    runner = CliRunner()
    out = tmp_path / "z.csv"
    r = runner.invoke(main, ["gen", "zipf", "--n", "100", "--groups", "5", "--out", str(out)])
    assert r.exit_code == 0, r.output
    assert len(out.read_text().strip().splitlines()) == 100
