"""edge-rtm command line.

Exit codes: 0 success, 1 usage or parse error, 2 infeasible result,
3 invariant violation in input data. Every flag can also be supplied
through an ``EDGE_RTM_<FLAG>`` environment variable; the flag wins.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from edge_rtm.governor import select_point
from edge_rtm.opspace import (
    Budgets,
    DuplicateKeyError,
    InvariantViolation,
    TableError,
    TableParseError,
    dump_table,
    load_table_file,
    pareto_frontier,
)
from edge_rtm.platform import PlatformError, builtin_platform, dump_platform, BUILTIN_PLATFORMS
from edge_rtm.sim import ScenarioError, Trace, format_summary, load_scenario, run, summarize

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_INVALID_DATA = 3

ENV_PREFIX = "EDGE_RTM_"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def _env_float(name: str):
    v = _env(name)
    if v is None:
        return None
    try:
        return float(v)
    except ValueError:
        raise SystemExit(f"edge-rtm: error: {ENV_PREFIX}{name.upper()} is not a number: {v!r}") from None


def _fail(code: int, message: str) -> int:
    print(message, file=sys.stderr)
    return code


def _table_error_code(exc: TableError) -> int:
    if isinstance(exc, TableParseError):
        return EXIT_USAGE
    return EXIT_INVALID_DATA


def _load(path: str):
    """Load a table; returns (table, None) or (None, exit code) after printing diagnostics."""
    try:
        return load_table_file(path), None
    except OSError as exc:
        return None, _fail(EXIT_USAGE, f"{path}: {exc.strerror}")
    except TableError as exc:
        for line in exc.diagnostics:
            print(f"{path}: {exc.kind}: {line}", file=sys.stderr)
        return None, _table_error_code(exc)


def cmd_validate(args) -> int:
    table, code = _load(args.table)
    if table is None:
        return code
    for i, _ in enumerate(table, start=1):
        print(f"row {i}: ok")
    print(f"{len(table)} rows ok")
    return EXIT_OK


def cmd_pareto(args) -> int:
    table, code = _load(args.table)
    if table is None:
        return code
    out = []
    for wid in table.workload_ids():
        out.extend(pareto_frontier(table.for_workload(wid)))
    sys.stdout.write(dump_table(out, args.format))
    return EXIT_OK


def cmd_select(args) -> int:
    table, code = _load(args.table)
    if table is None:
        return code
    ids = table.workload_ids()
    wid = args.workload or (ids[0] if len(ids) == 1 else None)
    if wid is None:
        return _fail(EXIT_USAGE, f"table holds several workloads ({', '.join(ids)}); pass --workload")
    if wid not in ids:
        return _fail(EXIT_USAGE, f"workload {wid!r} not in table")
    inf = math.inf
    try:
        budgets = Budgets(
            t_max=inf if args.t_max is None else args.t_max,
            e_max=inf if args.e_max is None else args.e_max,
            p_max=inf if args.p_max is None else args.p_max,
            acc_min=args.acc_min or 0.0,
        )
    except ValueError as exc:
        return _fail(EXIT_USAGE, str(exc))
    if not budgets.bounded():
        return _fail(EXIT_USAGE, "at least one budget must be finite")
    p = select_point(table.for_workload(wid), budgets)
    if p is None:
        print(f"# infeasible: no point of {wid} meets t<={budgets.t_max} E<={budgets.e_max} "
              f"P<={budgets.p_max} acc>={budgets.acc_min}")
        return EXIT_INFEASIBLE
    sys.stdout.write(dump_table([p], "csv").split("\n", 1)[1])
    goal = f"accuracy {p.accuracy:g}" if not budgets.acc_min else f"accuracy {p.accuracy:g} (target {budgets.acc_min:g})"
    print(f"# rationale: max {goal}, then min energy {p.energy:g} mJ, "
          f"min time {p.exec_time:g} ms, lowest frequency {p.resource.freq_mhz} MHz")
    return EXIT_OK


def _run_one(path: Path, trace_path: Optional[Path], with_summary: bool) -> tuple[int, str]:
    scenario = load_scenario(path)
    trace = run(scenario)
    if trace_path is not None:
        trace.write(trace_path)
    text = format_summary(summarize(trace)) if with_summary and len(trace) else ""
    code = EXIT_INFEASIBLE if any(r.infeasible for r in trace.records) else EXIT_OK
    return code, text


def cmd_run(args) -> int:
    if args.all:
        scen_dir = Path(args.all)
        if not scen_dir.is_dir():
            return _fail(EXIT_USAGE, f"{scen_dir}: not a directory")
        paths = sorted(scen_dir.glob("*.json"))
        out_dir = Path(args.trace) if args.trace else None
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
        jobs = [(p, out_dir / (p.stem + ".trace.csv") if out_dir else None) for p in paths]
        try:
            with ThreadPoolExecutor() as pool:
                results = list(pool.map(lambda j: _run_one(j[0], j[1], args.summary), jobs))
        except (ScenarioError, OSError) as exc:
            return _fail(EXIT_USAGE, f"error: {exc}")
        for (p, _), (code, text) in zip(jobs, results):
            print(f"{p.name}: exit {code}")
            sys.stdout.write(text)
        return max((c for c, _ in results), default=EXIT_OK)
    if not args.scenario:
        return _fail(EXIT_USAGE, "run: a scenario path or --all <dir> is required")
    try:
        code, text = _run_one(Path(args.scenario), Path(args.trace) if args.trace else None, args.summary)
    except ScenarioError as exc:
        return _fail(EXIT_USAGE, f"{args.scenario}: {exc}")
    except OSError as exc:
        return _fail(EXIT_USAGE, f"{args.scenario}: {exc.strerror}")
    sys.stdout.write(text)
    return code


def cmd_summarize(args) -> int:
    try:
        text = Path(args.trace).read_text(encoding="utf-8")
        trace = Trace.from_csv(text)
    except OSError as exc:
        return _fail(EXIT_USAGE, f"{args.trace}: {exc.strerror}")
    except ValueError as exc:
        return _fail(EXIT_USAGE, f"{args.trace}: {exc}")
    if not len(trace):
        return _fail(EXIT_USAGE, f"{args.trace}: empty trace")
    sys.stdout.write(format_summary(summarize(trace)))
    return EXIT_OK


def cmd_platform_dump(args) -> int:
    try:
        spec = builtin_platform(args.name)
    except PlatformError as exc:
        return _fail(EXIT_USAGE, str(exc))
    sys.stdout.write(dump_platform(spec))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edge-rtm", description="Runtime resource manager for embedded DNN workloads.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("validate", help="check an operating-point table")
    p.add_argument("table", nargs="?", default=_env("table"))
    p.set_defaults(func=cmd_validate, required=("table",))

    p = sub.add_parser("pareto", help="emit the Pareto frontier of a table")
    p.add_argument("table", nargs="?", default=_env("table"))
    p.add_argument("--format", choices=("csv", "json"), default=_env("format", "csv"))
    p.set_defaults(func=cmd_pareto, required=("table",))

    p = sub.add_parser("select", help="pick the best point under budgets")
    p.add_argument("--table", default=_env("table"))
    p.add_argument("--workload", default=_env("workload"))
    p.add_argument("--t-max", type=float, default=_env_float("t_max"), help="ms")
    p.add_argument("--e-max", type=float, default=_env_float("e_max"), help="mJ")
    p.add_argument("--p-max", type=float, default=_env_float("p_max"), help="mW")
    p.add_argument("--acc-min", type=float, default=_env_float("acc_min"), help="%%")
    p.set_defaults(func=cmd_select, required=("table", "t_max", "e_max"))

    p = sub.add_parser("run", help="replay a scenario")
    p.add_argument("scenario", nargs="?", default=_env("scenario"))
    p.add_argument("--trace", default=_env("trace"), help="trace CSV path (directory with --all)")
    p.add_argument("--summary", action="store_true", default=_env("summary", "") not in ("", "0"))
    p.add_argument("--all", default=_env("all"), metavar="DIR", help="run every *.json scenario in DIR")
    p.set_defaults(func=cmd_run, required=())

    p = sub.add_parser("summarize", help="aggregate a trace CSV")
    p.add_argument("trace", nargs="?", default=_env("trace"))
    p.set_defaults(func=cmd_summarize, required=("trace",))

    p = sub.add_parser("platform", help="platform descriptions")
    psub = p.add_subparsers(dest="platform_command", parser_class=_Parser, required=True)
    d = psub.add_parser("dump", help="print a built-in platform as JSON")
    d.add_argument("name", nargs="?", default=_env("name"), choices=sorted(BUILTIN_PLATFORMS))
    d.set_defaults(func=cmd_platform_dump, required=("name",))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    missing = [n for n in args.required if getattr(args, n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        return _fail(EXIT_USAGE, f"edge-rtm {args.command}: missing {flags}")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
