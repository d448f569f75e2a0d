"""Bench driver metrics, reproducibility and the command-line front end."""

import random

import pytest

from tccstore.bench.cli import main
from tccstore.bench.driver import CSV_HEADER, BenchSpec, run_bench, run_recovery, run_round
from tccstore.bench.workloads import WORKLOADS


def fixed(workload, workers=1, txns=40, **kw):
    return BenchSpec(workload, workers=workers, duration=1.0, seed=11, block_size=4096,
                     log="full", txns_per_worker=txns, **kw)


@pytest.mark.parametrize("workload", sorted(WORKLOADS))
def test_single_worker_run_is_reproducible(workload):
    a = run_bench(fixed(workload))
    b = run_bench(fixed(workload))
    assert a.engine.log.to_text() == b.engine.log.to_text()
    assert a.committed == a.started == 40
    assert a.mean_retries == 0 and a.max_retries == 0


@pytest.mark.parametrize("workload", ["btree-random", "corner-case", "mixed-ops"])
def test_metric_sanity_under_contention(workload):
    rep = run_bench(fixed(workload, workers=4, txns=60, options={"switch_interval": 1e-5}))
    assert rep.committed + rep.aborted == rep.started == 240
    assert rep.max_retries <= rep.max_distinct_actions
    assert rep.progress_violations == 0
    assert rep.unfinished_ops == 0


def test_timed_run_excludes_warmup():
    rep = run_bench(BenchSpec("btree-sequential", duration=0.3, warmup=0.2))
    assert rep.ops < rep.ops_total
    assert 0.25 < rep.elapsed < 1.5
    assert rep.csv_row().count(",") == CSV_HEADER.count(",")


@pytest.mark.parametrize("kw", [dict(workload="nope"), dict(workload="btree-random", workers=0),
                                dict(workload="btree-random", duration=0),
                                dict(workload="btree-random", log="some")])
def test_invalid_spec(kw):
    with pytest.raises(ValueError):
        BenchSpec(**kw)


def test_cli_prints_header_and_row(capsys):
    assert main(["--workload", "short-txn", "--workers", "2", "--duration-secs", "0.2",
                 "--warmup-secs", "0", "--mode", "extended"]) == 0
    out, err = capsys.readouterr()
    header, row = out.strip().splitlines()
    assert header == CSV_HEADER
    fields = dict(zip(header.split(","), row.split(",")))
    assert fields["workload"] == "short-txn" and fields["mode"] == "extended"
    assert float(fields["throughput"]) > 0
    assert "committed" in err


def test_cli_writes_log_file(tmp_path, capsys):
    path = tmp_path / "sched.log"
    assert main(["--workload", "corner-case", "--txns-per-worker", "5", "--reads", "4",
                 "--no-header", "--log-file", str(path)]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 1
    assert "Commit" in path.read_text()


@pytest.mark.parametrize("argv", [
    ["--workload", "nope"],
    ["--workload", "btree-random", "--workers", "0"],
    ["--workload", "btree-random", "--duration-secs", "-1"],
    ["--workload", "btree-random", "--mode", "fast"],
    ["--workload", "btree-random", "--block-size", "16"],
    ["--workload", "verify", "--rounds", "0"],
])
def test_cli_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_cli_verify_passes_and_detects_fault(capsys):
    assert main(["--workload", "verify", "--rounds", "20", "--seed", "4"]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == "basic,20,20,0"
    assert main(["--workload", "verify", "--rounds", "100", "--fault", "skip-counter-check"]) == 1


def test_verify_round_reports_every_check():
    r = run_round("extended", random.Random(5))
    assert r.ok and r.view_ok and r.structure_problems == []


def test_recovery_trials_pass():
    trials = run_recovery(20, seed=9)
    assert all(t.ok for t in trials)
    assert sum(t.committed for t in trials) > 0
