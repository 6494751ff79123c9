import json
import subprocess
import sys

import pytest

from cda_forge.cli import main


@pytest.fixture
def small_config(tmp_path):
    doc = {"zone": "narrow", "buyers": {"count": 10, "interval": 50},
           "sellers": [{"strategy": "TRUTH", "count": 9, "interval": 50}],
           "target": {"strategy": "P", "interval": 50}, "cycles": 1500, "seed": 2, "opt": True}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("run", "compare", "sweep", "opt", "report"):
        assert cmd in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "cda_forge", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "compare" in res.stdout


def test_run_is_reproducible(small_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(small_config), "--out", str(a), "--dump-decisions"]) == 0
    assert main(["run", "--config", str(small_config), "--out", str(b), "--dump-decisions"]) == 0
    fa = files(a)
    assert {"events.jsonl", "agents.csv", "series.csv", "summary.json", "opt.json",
            "decisions.jsonl"} <= set(fa)
    assert fa == files(b)
    summary = json.loads(fa["summary.json"])
    assert summary["opt"]["total"] >= summary["opt"]["logged_total"]


def test_seed_override(small_config, tmp_path):
    assert main(["run", "--config", str(small_config), "--out", str(tmp_path / "s"),
                 "--seed", "9"]) == 0
    summary = json.loads((tmp_path / "s" / "summary.json").read_text())
    assert summary["config"]["seed"] == 9


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"buyers": {"count": 10, "interval": 0}}))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "buyers.interval" in capsys.readouterr().err
    broken = tmp_path / "broken.json"
    broken.write_text("{\n  \"zone\": \n")
    assert main(["run", "--config", str(broken), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "o")]) == 2
    assert main(["compare", "--zone", "narrow", "--rates", "0.1,x",
                 "--out", str(tmp_path / "c")]) == 2


def test_opt_command(small_config, tmp_path, capsys):
    out = tmp_path / "run"
    main(["run", "--config", str(small_config), "--out", str(out)])
    log = out / "events.jsonl"
    r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
    assert main(["opt", "--log", str(log), "--out", str(r1)]) == 0
    assert main(["opt", "--log", str(log), "--out", str(r2)]) == 0
    assert r1.read_bytes() == r2.read_bytes()
    doc = json.loads(r1.read_text())
    assert doc["total"] >= doc["logged_total"]
    assert main(["opt", "--log", str(log), "--grid", "9,3", "--out", str(r1)]) == 2
    # a truncated log is a runtime failure that names the line
    text = log.read_text()
    cut = tmp_path / "cut.jsonl"
    cut.write_text(text[: len(text) // 2])
    assert main(["opt", "--log", str(cut), "--out", str(tmp_path / "x.json")]) == 1
    assert "line" in capsys.readouterr().err


def test_compare_report_and_sweep(tmp_path, capsys):
    c = tmp_path / "cell"
    assert main(["compare", "--zone", "narrow", "--rates", "0.4,0.4", "--targets", "FM5,RM",
                 "--seeds", "0,1", "--cycles", "1000", "--no-opt", "--out", str(c)]) == 0
    cell = json.loads((c / "cell.json").read_text())
    assert set(cell["majority"]) == {"FM5", "RM"}
    rep = tmp_path / "rep"
    assert main(["report", "--in", str(c), "--out", str(rep)]) == 0
    lines = (rep / "verdicts.csv").read_text().splitlines()
    assert lines[0] == "strategy,zone,0.1&0.1,0.1&0.4,0.4&0.1,0.4&0.4"
    assert len(lines) == 1 + 2 * 3
    assert main(["report", "--in", str(tmp_path / "nothing"), "--out", str(rep)]) == 1

    spec = tmp_path / "sweep.json"
    spec.write_text(json.dumps({"points": [[0, 0, 0], [0, 2, 0]], "zone": "medium",
                                "rates": [0.4, 0.4], "target": "CP5", "seeds": [0],
                                "cycles": 800}))
    assert main(["sweep", "--config", str(spec), "--out", str(tmp_path / "sw")]) == 0
    rows = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
    assert len(rows) == 3
