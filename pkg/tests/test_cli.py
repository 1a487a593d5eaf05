import csv
import json
import subprocess
import sys

import pytest

from mamabcache import cli
from mamabcache.demand import DAY

CONFIG = "M: 2\nU: 6\nF: 8\nS: 2\nT_total: 40\nreplications: 2\noracle:\n  restarts: 3\n"


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(CONFIG)
    return path


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_run_writes_outputs(tmp_path, config):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(config), "--out", str(out), "--learners", "lfu"]) == 0
    rows = _rows(out / "per_slot.csv")
    assert tuple(rows[0]) == cli.PER_SLOT_COLUMNS
    assert len(rows) == 1 + 40 * 2
    agg = _rows(out / "aggregate.csv")
    assert agg[0][:3] == ["slot", "mean_delay", "std_delay"] and len(agg) == 41
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["learner"] == "lfu" and len(manifest["replications"]) == 2
    assert manifest["replications"][0]["max_conservation_residual"] < 1e-9
    assert "T_total: 40" in (out / "config.yaml").read_text()


def test_single_slot_run(tmp_path):
    out = tmp_path / "one"
    assert cli.main(["run", "--out", str(out), "--learners", "lru", "--T-total", "1",
                     "--replications", "1", "--set", "M=2", "--set", "U=5", "--set", "F=6",
                     "--set", "S=2", "--set", "oracle.restarts=2"]) == 0
    rows = _rows(out / "per_slot.csv")
    assert len(rows) == 2 and rows[1][:2] == ["0", "0"]


def test_reruns_are_byte_identical(tmp_path, config):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["run", "--config", str(config), "--out", str(out),
                         "--learners", "edge_v2", "--seed", "3"]) == 0
    for name in ("per_slot.csv", "aggregate.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_parallel_matches_serial(tmp_path, config):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["run", "--config", str(config), "--out", str(a), "--learners", "cucb"])
    cli.main(["run", "--config", str(config), "--out", str(b), "--learners", "cucb", "--jobs", "2"])
    assert (a / "per_slot.csv").read_bytes() == (b / "per_slot.csv").read_bytes()


def test_compare_and_summary(tmp_path, config):
    out = tmp_path / "cmp"
    assert cli.main(["compare", "--config", str(config), "--out", str(out),
                     "--learners", "lfu,oracle_ca"]) == 0
    summary = _rows(out / "summary.csv")
    assert summary[0][0] == "learner" and [r[0] for r in summary[1:]] == ["lfu", "oracle_ca"]
    oracle = dict(zip(summary[0], summary[2]))
    assert float(oracle["final_regret_mean"]) == 0.0
    assert (out / "lfu" / "per_slot.csv").exists()


def test_sweep(tmp_path, config):
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--config", str(config), "--out", str(out), "--learners", "lru",
                     "--sweep", "l_c=30,60", "--replications", "1"]) == 0
    summary = _rows(out / "summary.csv")
    assert [r[1] for r in summary[1:]] == ["30", "60"]
    assert (out / "l_c=60" / "lru" / "config.yaml").exists()


def test_ingest_then_run_trace(tmp_path):
    raw = tmp_path / "ratings.dat"
    raw.write_text("".join(f"{u}::{f}::3::{d * DAY + 5}\n"
                           for d in range(4) for u, f in ((1, 2), (2, 3), (3, 2))))
    assert cli.main(["ingest", "--trace", str(raw), "--out", str(tmp_path / "t")]) == 0
    sliced = tmp_path / "t" / "trace.slots.csv"
    assert sliced.exists()
    cfg = tmp_path / "trace.yaml"
    cfg.write_text(f"M: 2\nS: 1\nl_c: 200\nreplications: 1\nworkload:\n  mode: trace\n  trace_path: {sliced}\n")
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out), "--learners", "lru"]) == 0
    rows = _rows(out / "per_slot.csv")
    assert len(rows) == 5 and rows[1][6] == ""  # no regret in trace mode


@pytest.mark.parametrize("argv", [
    ["run", "--out", "{out}", "--set", "S=-1"],
    ["run", "--out", "{out}", "--set", "bogus=1"],
    ["run", "--out", "{out}", "--config", "{missing}"],
    ["run", "--out", "{out}", "--learners", "lfu,lru"],
    ["sweep", "--out", "{out}", "--sweep", "S"],
    ["ingest", "--trace", "{missing}", "--out", "{out}"],
])
def test_errors_exit_2(tmp_path, capsys, argv):
    argv = [a.format(out=tmp_path / "o", missing=tmp_path / "none.yaml") for a in argv]
    assert cli.main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mamabcache", "run", "--out", str(tmp_path),
                          "--set", "S=-1"], capture_output=True, text=True)
    assert res.returncode == 2 and "cache_size" in res.stderr
