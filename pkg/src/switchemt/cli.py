"""Command-line harness: ``switchemt run|table|compare|order``.

Exit codes: 0 on success, 1 for bad arguments or netlists, 2 for numerical
failures (singular systems, switching oscillations).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from .circuit import Circuit, NetlistError, parse_netlist
from .events import Between, MethodId, ResolutionConfig, ResolutionError
from .mna import Conductances, QuantityError, SingularSystemError, Tag
from .stepper import ORACLE_STEP, RunConfig, WaveformTrace, simulate
from .tables import (
    CASES,
    STEP_LADDER,
    SELECTORS,
    ConvergenceTable,
    SelectorError,
    build_table,
    estimate_order,
    format_order,
    waveform_error,
)

DEFAULT_END = {"rectifier": 0.05, "buckboost": 0.5}
DEFAULT_QUANTITY = {"rectifier": ("v(rl)",), "buckboost": ("i(lx)", "v(co)")}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with 2
        raise UsageError(message)


# -- trace CSV -----------------------------------------------------------------


def write_trace_csv(trace: WaveformTrace, fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("time", "tag") + tuple(trace.names))
    for t, tag, row in zip(trace.times, trace.tags, trace.rows):
        w.writerow([format(t, ".17g"), tag.value] + [format(float(v), ".17g") for v in row])


def read_trace_csv(fh: TextIO) -> WaveformTrace:
    r = csv.reader(fh)
    head = next(r)
    if head[:2] != ["time", "tag"]:
        raise ValueError("not a trace CSV: header must start with time,tag")
    trace = WaveformTrace(tuple(head[2:]))
    for row in r:
        trace.append(float(row[0]), Tag(row[1]), np.array([float(v) for v in row[2:]]))
    return trace


# -- argument helpers -------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    items = [s for s in text.split(",") if s.strip()]
    if not items:
        raise UsageError("empty list of step sizes")
    try:
        return [float(s) for s in items]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _methods(text: str) -> list[str]:
    out = [s.strip().upper() for s in text.split(",") if s.strip()]
    bad = [m for m in out if m not in ("A", "B", "C")]
    if bad or not out:
        raise UsageError(f"methods must be a comma list of A, B, C; got {text!r}")
    return out


def _circuit(args) -> tuple[Circuit, str | None]:
    if bool(args.case) == bool(args.netlist):
        raise UsageError("give exactly one of --case or --netlist")
    if args.case:
        return CASES[args.case](), args.case
    path = Path(args.netlist)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read netlist {path}: {exc.strerror}") from None
    return parse_netlist(text, name=path.stem), None


def _add_circuit_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", choices=sorted(CASES))
    p.add_argument("--netlist", help="path to a netlist file")


# -- subcommands ------------------------------------------------------------------


def cmd_run(args, out: TextIO) -> int:
    if not args.out:
        raise UsageError("--out is required")
    circuit, case = _circuit(args)
    end = args.end if args.end is not None else DEFAULT_END.get(case)
    if end is None:
        raise UsageError("--end is required for netlist circuits")
    record = tuple(args.record.split(",")) if args.record else None
    try:
        cfg = RunConfig(
            circuit, MethodId(args.method), args.step, end,
            conductances=Conductances(gmin=args.gmin),
            resolution=ResolutionConfig(max_iterations=args.max_iter),
            record=record,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    trace = simulate(cfg)
    with open(args.out, "w", newline="") as fh:
        write_trace_csv(trace, fh)
    out.write(f"{len(trace)} samples, {len(trace.events)} events -> {args.out}\n")
    for e in trace.events:
        out.write(f"  t={e.t_sw:.9g} {e.trigger}: {e.statuses_before} -> {e.statuses_after}\n")
    return 0


def _table(args) -> ConvergenceTable:
    sel = SELECTORS.get(args.event)
    if sel is None:
        raise UsageError(f"unknown --event {args.event!r}; choose from {', '.join(sorted(SELECTORS))}")
    if args.case and args.case != sel.case:
        raise UsageError(f"event {args.event!r} belongs to case {sel.case!r}")
    steps = _float_list(args.steps)
    if any(not (math.isfinite(h) and h > 0) for h in steps):
        raise UsageError("step sizes must be positive")
    return build_table(args.event, args.quantity, args.between, _methods(args.methods), steps, args.jobs)


def cmd_table(args, out: TextIO) -> int:
    table = _table(args)
    out.write(table.to_text())
    if args.out:
        Path(args.out).write_text(table.to_csv())
    return 0


def cmd_compare(args, out: TextIO) -> int:
    circuit, case = _circuit(args)
    end = args.end if args.end is not None else DEFAULT_END.get(case)
    if end is None:
        raise UsageError("--end is required for netlist circuits")
    quantities = tuple(args.quantities.split(",")) if args.quantities else DEFAULT_QUANTITY.get(case)
    if not quantities:
        raise UsageError("--quantities is required for netlist circuits")
    try:
        cfg = RunConfig(circuit, MethodId(args.method), args.step, end, record=quantities)
        ref_cfg = RunConfig(circuit, MethodId.B, args.oracle_step, end, record=quantities)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    trace, oracle = simulate(cfg), simulate(ref_cfg)
    out.write(f"method {args.method}, h={args.step:g} s vs oracle h={args.oracle_step:g} s\n")
    out.write(f"{'quantity':<12}{'rms':>14}{'max':>14}\n")
    for q in quantities:
        m = waveform_error(trace, oracle, q)
        out.write(f"{q:<12}{m.rms:>14.6e}{m.max:>14.6e}\n")
    return 0


def cmd_order(args, out: TextIO) -> int:
    if args.table:
        table = ConvergenceTable.from_csv(Path(args.table).read_text())
    elif args.event:
        table = _table(args)
    else:
        raise UsageError("give --table CSV or the --event/--quantity table arguments")
    for m, col in table.values.items():
        try:
            out.write(f"{m}: order {format_order(estimate_order(table.steps, col))}\n")
        except ValueError as exc:
            out.write(f"{m}: {exc}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="switchemt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate and write a waveform CSV")
    _add_circuit_args(r)
    r.add_argument("--method", choices=("A", "B", "C"), default="B")
    r.add_argument("--step", type=float, required=True, help="step size in seconds")
    r.add_argument("--end", type=float, help="end time in seconds")
    r.add_argument("--out", help="CSV output path")
    r.add_argument("--gmin", type=float, default=Conductances().gmin)
    r.add_argument("--max-iter", type=int, default=ResolutionConfig().max_iterations)
    r.add_argument("--record", help="comma list of quantities, e.g. v(rl),i(lx)")
    r.set_defaults(func=cmd_run)

    def table_args(q: argparse.ArgumentParser, required: bool) -> None:
        q.add_argument("--case", choices=sorted(CASES))
        q.add_argument("--event", required=required, help=", ".join(sorted(SELECTORS)))
        q.add_argument("--quantity", default="i(lx)")
        q.add_argument("--between", choices=[b.value for b in Between], default="pre-post")
        q.add_argument("--methods", default="A,B,C")
        q.add_argument("--steps", default=",".join(f"{h:g}" for h in STEP_LADDER))
        q.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    t = sub.add_parser("table", help="dislocation convergence table")
    table_args(t, True)
    t.add_argument("--out", help="also write the table as CSV")
    t.set_defaults(func=cmd_table)

    c = sub.add_parser("compare", help="waveform error against the small-step oracle")
    _add_circuit_args(c)
    c.add_argument("--method", choices=("A", "B", "C"), required=True)
    c.add_argument("--step", type=float, required=True)
    c.add_argument("--end", type=float)
    c.add_argument("--oracle-step", type=float, default=ORACLE_STEP)
    c.add_argument("--quantities")
    c.set_defaults(func=cmd_compare)

    o = sub.add_parser("order", help="accuracy order from a table")
    o.add_argument("--table", help="table CSV written by 'table --out'")
    table_args(o, False)
    o.set_defaults(func=cmd_order)
    return p


def main(argv: Sequence[str] | None = None, out: TextIO | None = None, err: TextIO | None = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, out)
    except (UsageError, NetlistError, SelectorError, QuantityError) as exc:
        err.write(f"error: {exc}\n")
        return 1
    except (SingularSystemError, ResolutionError) as exc:
        err.write(f"numerical failure: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
