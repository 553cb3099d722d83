"""Command-line front end.

    stivsa pf        --case case14
    stivsa sti       --case case14 --load-scale 1.2
    stivsa screen    --case case14 --exclude 1-2,7-8 --format csv
    stivsa benchmark --case case14 --load-scale 1.2 --exclude 1-2,7-8 --format json

Exit status: 0 on success, 1 on input errors, 2 when screen/benchmark raised
an alarm.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from .case_model import CaseFormatError, NetworkCase, bundled_case, load_case
from .engine import (BaseCaseError, ScreeningConfig, StiReport, base_case_sti, benchmark, operating_case,
                     screen)
from .power_flow import PfOptions, PowerFlowError, calculated_injection, solve_power_flow

EXIT_OK, EXIT_INPUT, EXIT_ALARM = 0, 1, 2
CSV_COLUMNS = ("outage", "bus", "sti_predicted", "sti_benchmark", "alarm", "status")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2, which is reserved for alarms
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INPUT)


def _num(x: float | None) -> str:
    return "" if x is None else f"{x:.4f}"


def _json_num(x: float | None):
    return None if x is None else float(f"{x:.4f}")


def _resolve_case(spec: str) -> NetworkCase:
    path = Path(spec)
    if path.exists():
        return load_case(path)
    if not path.suffix and (Path(__file__).parent / "data" / f"{spec}.m").exists():
        return bundled_case(spec)
    raise CliError(f"case file not found: {spec}")


def _int_list(text: str | None) -> tuple[int, ...] | None:
    if not text:
        return None
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise CliError(f"--buses expects comma-separated bus numbers, got {text!r}") from None


def _styled() -> bool:
    return "VSA_NO_COLOR" not in os.environ and sys.stdout.isatty()


# ---------------------------------------------------------------------------
# serialization

def config_dict(report: StiReport) -> dict:
    c = report.config
    return {
        "load_scale": c.load_scale,
        "alarm_threshold": c.alarm_threshold,
        "excluded_branches": list(c.excluded_branches),
        "monitored_buses": list(report.monitored_buses),
        "scale_generation": c.scale_generation,
    }


def report_to_json(report: StiReport) -> str:
    doc = {
        "config": config_dict(report),
        "records": [
            {"outage": r.outage, "bus": r.bus, "sti_predicted": _json_num(r.sti_predicted),
             "sti_benchmark": _json_num(r.sti_benchmark), "alarm": r.alarm, "status": r.status}
            for r in report.records
        ],
        "sigma": {k: _json_num(v) for k, v in report.sigma_per_outage.items()},
        "sigma_excluded": report.sigma_excluded,
        "base_sti": {str(b): _json_num(v) for b, v in report.base_sti.items()},
    }
    return json.dumps(doc, indent=2) + "\n"


def report_to_csv(report: StiReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.records:
        w.writerow([r.outage, "" if r.bus is None else r.bus, _num(r.sti_predicted), _num(r.sti_benchmark),
                    int(r.alarm), r.status])
    return buf.getvalue()


def report_to_table(report: StiReport, styled: bool = False) -> str:
    c = report.config
    lines = [f"load scale {c.load_scale:.4f}  alarm threshold {c.alarm_threshold:.4f}  "
             f"excluded {','.join(c.excluded_branches) or '-'}"]
    head = f"{'outage':>8} {'bus':>5} {'STI':>8} {'STI*':>8} {'alarm':>5}  status"
    lines.append(f"\033[1m{head}\033[0m" if styled else head)
    for r in report.records:
        row = (f"{r.outage:>8} {'' if r.bus is None else r.bus:>5} {_num(r.sti_predicted):>8} "
               f"{_num(r.sti_benchmark):>8} {'yes' if r.alarm else '':>5}  {r.status}")
        lines.append(f"\033[31m{row}\033[0m" if styled and r.alarm else row)
    if report.sigma_per_outage:
        lines.append("")
        lines.append(f"{'outage':>8} {'sigma%':>8}")
        lines += [f"{k:>8} {v:>8.4f}" for k, v in report.sigma_per_outage.items()]
        lines.append(f"records excluded from sigma: {report.sigma_excluded}")
    return "\n".join(lines) + "\n"


def _rows_out(fmt: str, columns, rows, meta: dict, styled: bool = False) -> str:
    if fmt == "json":
        return json.dumps({**meta, "rows": [dict(zip(columns, r)) for r in rows]}, indent=2) + "\n"
    text_rows = [["" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v)) for v in r] for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        w.writerows(text_rows)
        return buf.getvalue()
    widths = [max(len(c), *(len(r[i]) for r in text_rows)) for i, c in enumerate(columns)]
    head = " ".join(c.rjust(wd) for c, wd in zip(columns, widths))
    out = [f"\033[1m{head}\033[0m" if styled else head]
    out += [" ".join(v.rjust(wd) for v, wd in zip(r, widths)) for r in text_rows]
    return "\n".join(out) + "\n"


def _round4(x: float) -> float:
    return float(f"{x:.4f}")


# ---------------------------------------------------------------------------
# commands

def _cmd_pf(case: NetworkCase, args) -> tuple[str, int]:
    config = ScreeningConfig(load_scale=args.load_scale)
    op_case = operating_case(case, config)
    point = solve_power_flow(op_case, PfOptions(enforce_q_limits=not args.no_q_limits))
    s = calculated_injection(op_case, point) * op_case.base_mva
    cols = ("bus", "kind", "v_mag", "v_ang_deg", "p_inj_mw", "q_inj_mvar")
    rows = [(b.id, point.bus_kinds[k].value, _round4(point.v_mag[k]), _round4(math.degrees(point.v_ang[k])),
             _round4(s[k].real), _round4(s[k].imag)) for k, b in enumerate(op_case.buses)]
    meta = {"iterations": point.iterations, "load_scale": args.load_scale}
    return _rows_out(args.format, cols, rows, meta, _styled()), EXIT_OK


def _cmd_sti(case: NetworkCase, args) -> tuple[str, int]:
    config = _config(case, args)
    values = base_case_sti(case, config)
    cols = ("bus", "sti", "alarm")
    rows = [(b, _round4(v), int(v > config.alarm_threshold)) for b, v in values.items()]
    return _rows_out(args.format, cols, rows, {"load_scale": args.load_scale}, _styled()), EXIT_OK


def _config(case: NetworkCase, args) -> ScreeningConfig:
    excluded = tuple(t.strip() for t in (args.exclude or "").split(",") if t.strip())
    for token in excluded:
        try:
            case.branch_by_label(token)
        except KeyError:
            raise CliError(f"--exclude names unknown branch {token!r}") from None
    return ScreeningConfig(load_scale=args.load_scale, alarm_threshold=args.threshold,
                           excluded_branches=excluded, monitored_buses=_int_list(args.buses),
                           scale_generation=not args.loads_only, workers=args.workers)


def _cmd_report(case: NetworkCase, args) -> tuple[str, int]:
    config = _config(case, args)
    report = (benchmark if args.command == "benchmark" else screen)(case, config)
    if args.format == "json":
        text = report_to_json(report)
    elif args.format == "csv":
        text = report_to_csv(report)
    else:
        text = report_to_table(report, _styled())
        if args.timestamp:
            text = f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n" + text
    return text, EXIT_ALARM if report.alarms() else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stivsa", description="STI-based N-1 voltage stability screening")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("pf", "sti", "screen", "benchmark"):
        p = sub.add_parser(name)
        p.add_argument("--case", required=True, help="MATPOWER case file, or a bundled case name (case14)")
        p.add_argument("--load-scale", type=float, default=1.0)
        p.add_argument("--format", choices=("table", "csv", "json"), default="table")
        p.add_argument("--output", "-o", help="write to this file instead of stdout")
        if name == "pf":
            p.add_argument("--no-q-limits", action="store_true", help="do not enforce generator Q limits")
            continue
        p.add_argument("--threshold", type=float, default=0.45)
        p.add_argument("--buses", help="comma-separated monitored load buses")
        p.add_argument("--loads-only", action="store_true",
                       help="scale loads only; generator dispatch stays at the case values")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        if name != "sti":
            p.add_argument("--exclude", help="comma-separated branch labels, e.g. 1-2,7-8")
            p.add_argument("--timestamp", action="store_true", help="prefix table output with a timestamp")
        else:
            p.set_defaults(exclude=None)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.load_scale <= 0:
            raise CliError("--load-scale must be positive")
        case = _resolve_case(args.case)
        handler = {"pf": _cmd_pf, "sti": _cmd_sti}.get(args.command, _cmd_report)
        text, code = handler(case, args)
    except (CliError, CaseFormatError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (BaseCaseError, PowerFlowError) as exc:
        print(f"error: {exc}; check the case data or reduce --load-scale", file=sys.stderr)
        return EXIT_INPUT
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
