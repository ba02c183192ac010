"""Command-line front end.

Subcommands: `run` (single scenario, metrics CSV + optional trace file),
`sweep` (protocol x pause x seed grid with CSV and optional SVG plots) and
`audit` (replay the evidence logs recorded in a trace file through the
log-audit checks).  Exit codes: 0 success, 1 validation error, 2 run
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import logaudit
from .metrics import (
    CSV_COLUMNS,
    SweepSpec,
    render_plots,
    report_from_result,
    sweep,
)
from .routing import ProtocolKind
from .sim import ConfigError, RunResult, parse_config, run_scenario

TRACE_HEADER = "# tap3sim trace v1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_pauses(text: str) -> list[float]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"bad pause range {text!r}, want start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise UsageError("pause step must be positive")
        out = []
        v = start
        while v <= stop + 1e-9:
            out.append(round(v, 9))
            v += step
        return out
    return [float(p) for p in text.split(",") if p]


def _parse_seeds(text: str) -> list[int]:
    if ".." in text:
        lo, _, hi = text.partition("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",") if s]


def _parse_protocols(text: str) -> list[ProtocolKind]:
    by_name = {p.value: p for p in ProtocolKind}
    out = []
    for name in text.split(","):
        name = name.strip()
        if name not in by_name:
            raise UsageError(f"unknown protocol {name!r}")
        out.append(by_name[name])
    return out


def _load_config(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def write_trace_file(path: str, result: RunResult) -> None:
    lines = [TRACE_HEADER, "# packets",
             "time,kind,from,to,packet_id,path_id,bytes"]
    lines += result.packet_rows
    lines += ["# verdicts",
              "node_id,sseq,oseq,dseq_delta,distance,threshold,label"]
    lines += result.verdict_rows
    lines += ["# audits", "flow_id,verdict,active_pos,passive_positions"]
    lines += result.audit_rows
    if result.audit_export is not None:
        lines += ["# audit-log",
                  json.dumps(result.audit_export, sort_keys=True,
                             separators=(",", ":"))]
    Path(path).write_text("\n".join(lines) + "\n")


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.rng_seed = args.seed
    cfg.validate()
    result = run_scenario(cfg, trace=args.trace is not None,
                          check_privacy=True)
    report = report_from_result(result)
    csv_text = CSV_COLUMNS + "\n" + report.csv_row() + "\n"
    if args.out:
        Path(args.out).write_text(csv_text)
    else:
        sys.stdout.write(csv_text)
    if args.trace:
        write_trace_file(args.trace, result)
    return 0


def _cmd_sweep(args) -> int:
    base = _load_config(args.config)
    spec = SweepSpec(base, _parse_pauses(args.pause),
                     _parse_protocols(args.protocols),
                     _parse_seeds(args.seeds))
    spec.validate()
    result = sweep(spec)
    Path(args.out).write_text(result.csv_text())
    if args.plots:
        plot_dir = Path(args.plots)
        plot_dir.mkdir(parents=True, exist_ok=True)
        for name, svg in render_plots(result).items():
            (plot_dir / name).write_text(svg)
    return 0


def replay_audits(export: dict) -> list[logaudit.AuditReport]:
    """Rebuild the recorded evidence logs and re-run every recorded path
    audit through the destination check and attacker scans."""
    published = {}
    for nid, entries in export.get("nodes", {}).items():
        log = logaudit.NodeLog()
        for data in entries:
            log.append(logaudit.entry_from_list(data))
        published[int(nid)] = log.publish()
    reports = []
    for record in export.get("paths", []):
        route_logs = [published.get(r) for r in record["relays"]]
        reports.append(logaudit.audit_route(
            route_logs, published.get(record["dst"]),
            [logaudit.entry_from_list(e) for e in record["control"]],
            [logaudit.entry_from_list(e) for e in record["data"]],
            [],
            logaudit.destination_rules(), logaudit.intermediary_rules(),
            logaudit.combined_rules()))
    return reports


def _cmd_audit(args) -> int:
    try:
        text = Path(args.trace).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read trace {args.trace}: {exc}") from exc
    export = None
    lines = text.splitlines()
    for i, line in enumerate(lines):
        if line == "# audit-log" and i + 1 < len(lines):
            export = json.loads(lines[i + 1])
            break
    if export is None:
        raise UsageError(f"{args.trace} contains no recorded audit logs")
    reports = replay_audits(export)
    sys.stdout.write("flow_id,verdict,active_pos,passive_positions\n")
    for record, report in zip(export.get("paths", []), reports):
        sys.stdout.write(report.csv_row(record["flow"]) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tap3sim",
                     description="Trust-aware anonymous MANET routing "
                                 "simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--trace")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a pause-time sweep")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--pause", required=True,
                         help="start:stop:step or comma list, in seconds")
    p_sweep.add_argument("--protocols", default="tap3,smprf,mprf")
    p_sweep.add_argument("--seeds", default="1..5",
                         help="lo..hi or comma list")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--plots")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_audit = sub.add_parser("audit", help="replay recorded audit logs")
    p_audit.add_argument("--trace", required=True)
    p_audit.set_defaults(func=_cmd_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # run failure
        print(f"run failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
