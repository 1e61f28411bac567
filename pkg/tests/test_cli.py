import json
import subprocess
import sys

import pytest

from nqsim.cli import (
    EXIT_CHECK,
    EXIT_IO,
    EXIT_OK,
    EXIT_USAGE,
    UsageError,
    execute,
    expand_grid,
    main,
    parse_args,
    parse_config_file,
)
from nqsim.config import ScenarioConfig
from nqsim.xmodel import COUNTEREXAMPLE_SCRIPT, XConfig

COUPLE = ["couple", "--lambda1", "0.4", "--lambda2", "0.4", "--mu1", "1", "--mu2", "1", "--threshold", "1"]


def test_couple_manifest():
    m = parse_args(COUPLE + ["--horizon", "10000", "--seed", "7"])
    assert m.command == "couple"
    assert m.config == ScenarioConfig(0.4, 0.4, 1, 1, 1.0, 10000.0, 7)


def test_replay_manifest_needs_no_flags():
    m = parse_args(["replay-table1"])
    assert m.config == COUNTEREXAMPLE_SCRIPT


def test_sweep_manifest():
    m = parse_args(["sweep", "--grid", "0.1:2.9:0.2", "--mu1", "1", "--mu2", "1", "--thresholds", "0.1,1,10"])
    assert m.command == "sweep"
    assert expand_grid(m.params["grid"]) == [round(0.1 + 0.2 * k, 10) for k in range(15)]
    assert m.params["thresholds"] == "0.1,1,10"


def test_x_search_manifest():
    m = parse_args(["x-search", "--lambda1", "0.5", "--lambda2", "0.5", "--mu1", "1", "--mu2", "1",
                    "--t1", "5", "--t2", "1", "--seeds", "4", "--seed", "10"])
    assert m.config == XConfig(0.5, 0.5, 1, 1, 5.0, 1.0, 1000.0, 10)
    assert m.seeds == [10, 11, 12, 13]


@pytest.mark.parametrize(
    "argv",
    [
        ["couple", "--lambda1", "0.4", "--mu1", "1", "--mu2", "1", "--threshold", "1"],
        COUPLE + ["--model", "x"],
        COUPLE + ["--t1", "2"],
        COUPLE + ["--bogus", "1"],
        ["frobnicate"],
        ["sweep", "--grid", "1:0:0.1", "--mu1", "1", "--mu2", "1"],
        ["couple", "--lambda1", "-1", "--lambda2", "0.4", "--mu1", "1", "--mu2", "1", "--threshold", "1"],
    ],
)
def test_usage_errors(argv, capsys):
    with pytest.raises(UsageError):
        parse_args(argv)
    assert main(argv) == EXIT_USAGE


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "scenario.txt"
    cfg.write_text("# scenario\nlambda1 = 0.3\nhorizon = 250\nseed = 5\n", encoding="utf-8")
    m = parse_args(COUPLE + ["--horizon", "10", "--config", str(cfg)])
    assert m.config == ScenarioConfig(0.3, 0.4, 1, 1, 1.0, 250.0, 5)


def test_config_file_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "scenario.txt"
    cfg.write_text("colour = blue\n", encoding="utf-8")
    with pytest.raises(UsageError):
        parse_args(COUPLE + ["--config", str(cfg)])


def test_scripted_config_file(tmp_path):
    cfg = tmp_path / "script.txt"
    cfg.write_text(
        "horizon = 12\n[arrivals]\n0 1\n1 2\n2 2\n[z1]\n10\n[z2]\n5\n6\n[thresholds]\nt1 = 5\nt2 = 1\n",
        encoding="utf-8",
    )
    m = parse_args(["replay-table1", "--config", str(cfg), "--out", str(tmp_path)])
    assert m.config == COUNTEREXAMPLE_SCRIPT
    assert execute(m) == EXIT_OK
    report = json.loads((tmp_path / "table1.json").read_text())
    assert report["status"] == "confirmed-counterexample"


def test_parse_config_sections():
    flat, sections = parse_config_file("a = 1\n[z1]\n3.5  # comment\n[thresholds]\nt1 = 2\n")
    assert flat == {"a": "1", "t1": "2"}
    assert sections == {"z1": ["3.5"], "thresholds": []}


def test_coupled_run_exits_zero_with_empty_violations(tmp_path):
    assert main(COUPLE + ["--horizon", "500", "--seed", "3", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "violations.jsonl").read_text() == ""
    rows = (tmp_path / "trace.csv").read_text().splitlines()
    assert rows[0].startswith("time,event_kind,or_q1_minus")
    assert rows[1].startswith("0,Start,")


def test_lower_bound_pair(tmp_path):
    assert main(COUPLE + ["--horizon", "500", "--pair", "all", "--out", str(tmp_path)]) == EXIT_OK


def test_negative_control_exits_nonzero(tmp_path):
    assert main(COUPLE + ["--horizon", "500", "--negative-control", "--out", str(tmp_path)]) == EXIT_CHECK
    assert (tmp_path / "violations.jsonl").read_text().strip()


def test_replay_command_report(tmp_path):
    assert main(["replay-table1", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "table1.json").read_text())
    assert report["matches_reference"] is True
    assert report["q2_violation_intervals"] == [[3.0, 5.0]]
    assert [(r["start"], r["server"], r["departure"]) for r in report["ub"]] == [(5, 2, 6), (2, 2, 5), (3, 1, 10)]


def test_simulate_models(tmp_path):
    for model in ("or", "ub", "fcfs"):
        out = tmp_path / model
        argv = ["simulate", "--lambda1", "0.5", "--lambda2", "0.5", "--mu1", "1", "--mu2", "1", "--horizon", "200",
                "--model", model, "--out", str(out)]
        if model != "fcfs":
            argv += ["--threshold", "1"]
        assert main(argv) == EXIT_OK
        assert (out / "trace.csv").read_text().splitlines()[0].split(",")[2] == f"{model}_q1_minus"


def test_x_search_run(tmp_path):
    argv = ["x-search", "--lambda1", "0.5", "--lambda2", "0.5", "--mu1", "1", "--mu2", "1", "--t1", "5",
            "--t2", "1", "--seeds", "5", "--horizon", "300", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    records = [json.loads(x) for x in (tmp_path / "x_search.jsonl").read_text().splitlines()]
    assert [r["seed"] for r in records] == list(range(5))
    assert all(r["confirmed"] in (None, True) for r in records)


def test_sweep_run(tmp_path):
    argv = ["sweep", "--grid", "0.3:1.5:0.6", "--mu1", "1", "--mu2", "1", "--thresholds", "1",
            "--horizon", "1000", "--min-distance", "0.15", "--out", str(tmp_path)]
    assert main(argv) in (EXIT_OK, EXIT_CHECK)
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "lambda1,lambda2,T,inside_theory,slope,slope_stderr,classification"
    assert len(lines) > 1


def test_fcfs_equiv_refuses_unstable(tmp_path):
    argv = ["fcfs-equiv", "--lambda1", "1.5", "--lambda2", "0.8", "--mu1", "1", "--mu2", "1", "--threshold", "1",
            "--out", str(tmp_path)]
    assert main(argv) == EXIT_USAGE


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["replay-table1", "--out", str(blocker / "sub")]) == EXIT_IO


def test_reruns_are_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(COUPLE + ["--horizon", "300", "--seed", "9", "--out", str(tmp_path / name)]) == EXIT_OK
    for artifact in ("trace.csv", "violations.jsonl"):
        assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nqsim", "replay-table1", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "confirmed-counterexample" in proc.stdout
