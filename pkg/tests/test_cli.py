from dataclasses import replace

from tap3sim.cli import main, replay_audits
from tap3sim.logaudit import FELLOW
from tap3sim.metrics import CSV_COLUMNS
from tap3sim.sim import DESK_CONFIG_TEXT, desk_profile, run_scenario


def write_config(tmp_path, text=DESK_CONFIG_TEXT):
    path = tmp_path / "scenario.conf"
    path.write_text(text)
    return str(path)


def small_config_text():
    return DESK_CONFIG_TEXT.replace("sim_duration = 200", "sim_duration = 60")


def test_run_writes_csv_and_trace(tmp_path, capsys):
    cfg = write_config(tmp_path, small_config_text())
    out = tmp_path / "run.csv"
    trace = tmp_path / "run.trace"
    rc = main(["run", "--config", cfg, "--seed", "3",
               "--out", str(out), "--trace", str(trace)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == CSV_COLUMNS
    assert lines[1].startswith("tap3,0,3,")
    text = trace.read_text()
    assert text.startswith("# tap3sim trace v1")
    assert "# audit-log" in text


def test_audit_replays_trace(tmp_path, capsys):
    cfg = write_config(tmp_path, small_config_text())
    trace = tmp_path / "run.trace"
    assert main(["run", "--config", cfg, "--trace", str(trace)]) == 0
    capsys.readouterr()
    assert main(["audit", "--trace", str(trace)]) == 0
    out = capsys.readouterr().out
    assert "verdict" in out.splitlines()[0]
    assert len(out.splitlines()) > 1


def test_audit_rejects_trace_without_log(tmp_path, capsys):
    trace = tmp_path / "bare.trace"
    trace.write_text("# tap3sim trace v1\n# packets\n")
    assert main(["audit", "--trace", str(trace)]) == 1


def test_bad_config_exits_one(tmp_path, capsys):
    cfg = write_config(tmp_path, "node_count = 1\nmystery = 2\n")
    assert main(["run", "--config", cfg]) == 1


def test_bad_usage_exits_one(capsys):
    assert main(["frobnicate"]) == 1


def test_missing_config_exits_one(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "absent.conf")]) == 1


def test_sweep_cli_end_to_end(tmp_path, capsys):
    cfg = write_config(tmp_path, small_config_text())
    out = tmp_path / "sweep.csv"
    plots = tmp_path / "plots"
    rc = main(["sweep", "--config", cfg, "--pause", "0:20:20",
               "--protocols", "tap3,mprf", "--seeds", "1..2",
               "--out", str(out), "--plots", str(plots)])
    assert rc == 0
    lines = out.read_text().splitlines()
    # header + 2 protocols * 2 pauses * 2 seeds + 4 averaged rows
    assert len(lines) == 13
    assert (plots / "pdr_percent.svg").exists()


def test_replayed_audits_match_honest_runs():
    # static topology: the strict replayed scan has no notion of honest
    # link-break drops, so it must only see clean Received/Forwarded logs
    cfg = replace(desk_profile(seed=2), sim_duration=80.0, attackers=[],
                  max_speed=0.0)
    result = run_scenario(cfg, trace=True)
    assert result.audit_export is not None
    reports = replay_audits(result.audit_export)
    assert reports
    assert all(r.verdict == FELLOW for r in reports)
    assert not any(r.passive_attackers for r in reports)
