import filecmp

import pytest

from isptrain.cli import main
from isptrain.cost import METRIC_COLUMNS, MetricLog
from isptrain.replay import load_trace


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["gen-data", "--kind", "lr", "--n", "3000", "--dim", "200", "--sparsity", "0.05",
                 "--b", "50", "--seed", "1", "--out", str(out), "--force"]) == 0
    return out


def test_gen_data_spec_example(tmp_path):
    out = tmp_path / "d"
    args = ["gen-data", "--kind", "lr", "--n", "20000", "--dim", "1000", "--sparsity", "0.01",
            "--b", "250", "--seed", "7", "--out", str(out)]
    assert main(args) == 0
    parts = sorted(out.glob("part-*.txt"))
    assert len(parts) == 80 and (out / "manifest.txt").exists()
    snapshot = tmp_path / "snap"
    snapshot.mkdir()
    for f in out.iterdir():
        (snapshot / f.name).write_bytes(f.read_bytes())
    assert main(args) == 2                       # refuses to overwrite
    assert main(args + ["--force"]) == 0
    cmp = filecmp.dircmp(out, snapshot)
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for f in out.iterdir():
        assert f.read_bytes() == (snapshot / f.name).read_bytes()


def test_gen_data_rejects_zero_batch(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--b", "0", "--out", str(tmp_path / "x")])
    assert exc.value.code == 2


def test_gen_pmf(tmp_path):
    assert main(["gen-data", "--kind", "pmf", "--n-users", "20", "--n-movies", "30", "--rank", "2",
                 "--sparsity", "0.2", "--b", "40", "--out", str(tmp_path / "p")]) == 0
    assert "kind = PMF" in (tmp_path / "p" / "manifest.txt").read_text()


def _run(corpus_dir, out, *extra):
    return main(["run", "--data", str(corpus_dir), "--model", "lr", "--workers", "3", "--b", "50",
                 "--max-steps", "20", "--set", "optimizer.eta=0.5", "--out", str(out), *extra])


def _checksum(out):
    line = next(l for l in (out / "summary.txt").read_text().splitlines() if l.startswith("checksum"))
    return line.split()[-1]


def test_run_isp_v0_matches_bsp(corpus_dir, tmp_path):
    assert _run(corpus_dir, tmp_path / "isp", "--sync", "isp", "--v", "0", "--seed", "5") == 0
    assert _run(corpus_dir, tmp_path / "bsp", "--sync", "bsp", "--seed", "5") == 0
    assert _checksum(tmp_path / "isp") == _checksum(tmp_path / "bsp")
    mlog = MetricLog.read(tmp_path / "isp" / "metrics.csv")
    assert mlog.header["sync"] == "isp" and mlog.header["v"] == "0.0"
    assert (tmp_path / "isp" / "metrics.csv").read_text().splitlines()[
        len(mlog.header)] == ",".join(METRIC_COLUMNS)
    assert "total" in (tmp_path / "isp" / "cost.csv").read_text()


def test_run_with_config_file(corpus_dir, tmp_path):
    cfg = tmp_path / "job.cfg"
    cfg.write_text("sync = isp\nv = 0.2\nstop.max_steps = 10\n")
    assert _run(corpus_dir, tmp_path / "o", "--config", str(cfg), "--v", "0.7") == 0
    header = MetricLog.read(tmp_path / "o" / "metrics.csv").header
    assert header["v"] == "0.7" and header["stop.max_steps"] == "20"


def test_run_ssp(corpus_dir, tmp_path):
    assert _run(corpus_dir, tmp_path / "s", "--sync", "ssp", "--slack", "3") == 0
    assert MetricLog.read(tmp_path / "s" / "metrics.csv").header["slack"] == "3"


def test_run_config_errors(corpus_dir, tmp_path, capsys):
    assert _run(corpus_dir, tmp_path / "e", "--sync", "bsp", "--v", "0.5") == 2
    assert _run(corpus_dir, tmp_path / "e", "--set", "bogus=1") == 2
    assert _run(corpus_dir, tmp_path / "e", "--set", "novalue") == 2
    assert "config error" in capsys.readouterr().err


def test_run_abort_exit_code(corpus_dir, tmp_path):
    assert _run(corpus_dir, tmp_path / "a", "--set", "store.report_timeout_s=0.000001",
                "--mode", "threaded") == 1


def test_verify_passes_and_dumps_trace(tmp_path, capsys):
    trace = tmp_path / "out.trace"
    assert main(["verify", "--traces", "50", "--trace", str(trace)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 4 and all(l.startswith("PASS") for l in lines)
    with open(trace) as fh:
        assert load_trace(fh).records


def test_verify_injected_fault_fails(capsys):
    assert main(["verify", "--traces", "20", "--inject-fault"]) == 1
    out = capsys.readouterr().out
    assert "FAIL  replay identity" in out


def test_report(corpus_dir, tmp_path, capsys):
    _run(corpus_dir, tmp_path / "r1", "--sync", "bsp")
    _run(corpus_dir, tmp_path / "r2", "--sync", "isp", "--v", "0.7")
    logs = [str(tmp_path / "r1" / "metrics.csv"), str(tmp_path / "r2" / "metrics.csv")]
    assert main(["report", *logs, "--out", str(tmp_path / "rep")]) == 0
    budget = (tmp_path / "rep" / "budget.csv").read_text().splitlines()
    assert budget[0].startswith("budget_usd,run0_time_s")
    assert [row.split(",")[0] for row in budget[1:]] == ["0.09", "0.18", "0.36"]
    # the budgets dwarf these tiny runs, so every row is the full run
    final = MetricLog.read(logs[0]).rows[-1]
    assert float(budget[1].split(",")[1]) == pytest.approx(final.wall_ms / 1000.0, abs=1e-6)
    for name in ("loss_vs_time.csv", "cost_vs_loss.csv", "perf_per_dollar.csv"):
        assert (tmp_path / "rep" / name).exists()
    capsys.readouterr()
    assert main(["report", logs[0], "--out", str(tmp_path / "one")]) == 0
    assert (tmp_path / "one" / "budget.csv").read_text().splitlines()[0] == \
        "budget_usd,metrics_time_s,metrics_loss"


def test_report_schema_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("step,loss\n1,0.5\n")
    assert main(["report", str(bad), "--out", str(tmp_path / "x")]) == 2
