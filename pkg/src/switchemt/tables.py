"""Dislocation tables, order estimates and oracle comparisons."""

from __future__ import annotations

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .circuit import Circuit, builtin_buckboost, builtin_rectifier
from .events import Between, EventRecord, MethodId, dislocation
from .mna import Tag, check_quantities
from .stepper import ORACLE_STEP, RunConfig, WaveformTrace, simulate

STEP_LADDER = (5e-6, 10e-6, 20e-6, 40e-6, 80e-6, 160e-6, 320e-6)

CASES: dict[str, Callable[[], Circuit]] = {
    "rectifier": builtin_rectifier,
    "buckboost": builtin_buckboost,
}

# Start of the window in which the rectifier turn-off is measured: the
# firing instant (pi/6 + 4*pi) / (2*pi*60).
RECTIFIER_WINDOW = (math.pi / 6 + 4 * math.pi) / (2 * math.pi * 60.0)


class SelectorError(LookupError):
    pass


def _is_thyristor_turnoff(e: EventRecord) -> bool:
    return any(e.turned_off(n) for n in ("t1", "t2"))


@dataclass(frozen=True)
class EventSelector:
    name: str
    case: str
    t_end: float
    pick: Callable[[EventRecord], bool]
    description: str

    def find(self, events: Sequence[EventRecord]) -> EventRecord:
        for e in events:
            if self.pick(e):
                return e
        raise SelectorError(f"event {self.name!r} not found before t_end={self.t_end}")


SELECTORS = {
    s.name: s
    for s in (
        EventSelector(
            "rectifier-turnoff", "rectifier", 0.042,
            lambda e: e.t_sw > RECTIFIER_WINDOW and _is_thyristor_turnoff(e),
            "bridge current drops to zero after the firing at 0.03472 s",
        ),
        EventSelector(
            "buckboost-turnoff", "buckboost", 0.41,
            lambda e: abs(e.t_sw - 0.3) < 1e-9 and e.turned_off("sw"),
            "switch turned off at 0.3 s",
        ),
        EventSelector(
            "buckboost-turnon", "buckboost", 0.41,
            lambda e: abs(e.t_sw - 0.4) < 1e-9 and e.turned_on("sw"),
            "switch turned on at 0.4 s",
        ),
    )
}


def run_case(case: str, method: MethodId | str, h: float, t_end: float, record: Sequence[str] = ()) -> WaveformTrace:
    return simulate(RunConfig(CASES[case](), MethodId(method), h, t_end, record=tuple(record)))


def event_dislocation(selector: str, quantity: str, between: Between | str, method: MethodId | str, h: float) -> float:
    sel = SELECTORS[selector]
    trace = run_case(sel.case, method, h, sel.t_end)
    return dislocation(sel.find(trace.events), quantity, between, CASES[sel.case]())


@dataclass
class ConvergenceTable:
    case: str
    selector: str
    quantity: str
    between: str
    steps: tuple[float, ...]
    values: dict[str, list[float]] = field(default_factory=dict)

    def multiples(self, method: str) -> list[float | None]:
        """Each row's dislocation over the previous (smaller h) row's."""
        col = self.values[method]
        out: list[float | None] = [None]
        for prev, cur in zip(col, col[1:]):
            out.append(cur / prev if prev > 0 else None)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        methods = list(self.values)
        head = ["h"] + [f"{m}_{k}" for m in methods for k in ("dislocation", "multiple")]
        buf.write(",".join(head) + "\n")
        mult = {m: self.multiples(m) for m in methods}
        for r, h in enumerate(self.steps):
            row = [format(h, ".17g")]
            for m in methods:
                row.append(format(self.values[m][r], ".17g"))
                mm = mult[m][r]
                row.append("" if mm is None else format(mm, ".17g"))
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, **meta) -> "ConvergenceTable":
        lines = [ln for ln in text.strip().splitlines() if ln]
        head = lines[0].split(",")
        methods = [c[: -len("_dislocation")] for c in head if c.endswith("_dislocation")]
        steps, values = [], {m: [] for m in methods}
        for ln in lines[1:]:
            cells = ln.split(",")
            steps.append(float(cells[0]))
            for m in methods:
                values[m].append(float(cells[head.index(f"{m}_dislocation")]))
        defaults = dict(case="", selector="", quantity="", between="")
        defaults.update(meta)
        return cls(steps=tuple(steps), values=values, **defaults)

    def to_text(self) -> str:
        methods = list(self.values)
        lines = [f"{self.selector}: {self.quantity} dislocation ({self.between})"]
        lines.append("step(us) " + "".join(f"{m + ' dislo.':>14}{'multi.':>8}" for m in methods))
        mult = {m: self.multiples(m) for m in methods}
        for r, h in enumerate(self.steps):
            cells = []
            for m in methods:
                mm = mult[m][r]
                cells.append(f"{self.values[m][r]:>14.3e}{'--' if mm is None else f'{mm:.1f}':>8}")
            lines.append(f"{h * 1e6:>8g} " + "".join(cells))
        return "\n".join(lines) + "\n"


def _cell(args):
    selector, quantity, between, method, h = args
    return event_dislocation(selector, quantity, between, method, h)


def build_table(
    selector: str,
    quantity: str,
    between: Between | str,
    methods: Sequence[str] = ("A", "B", "C"),
    steps: Sequence[float] = STEP_LADDER,
    jobs: int = 1,
) -> ConvergenceTable:
    """Run every (h, method) cell and assemble the table in (h, method) order."""
    if not steps:
        raise ValueError("no step sizes given")
    if selector not in SELECTORS:
        raise SelectorError(f"unknown event selector {selector!r}; choose from {sorted(SELECTORS)}")
    check_quantities(CASES[SELECTORS[selector].case](), (quantity,))
    steps = tuple(sorted(steps))
    between = Between(between).value
    grid = [(selector, quantity, between, m, h) for m in methods for h in steps]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            flat = list(pool.map(_cell, grid))
    else:
        flat = [_cell(a) for a in grid]
    values = {m: flat[k * len(steps):(k + 1) * len(steps)] for k, m in enumerate(methods)}
    return ConvergenceTable(SELECTORS[selector].case, selector, quantity, between, steps, values)


EXACT = math.inf


def estimate_order(steps: Sequence[float], dislocations: Sequence[float], zero_tol: float = 1e-14) -> float:
    """Least-squares slope of log2(dislocation) against log2(h).

    A column that is zero throughout is exact and returns ``math.inf``.
    """
    h = np.asarray(steps, dtype=float)
    d = np.abs(np.asarray(dislocations, dtype=float))
    if np.all(d <= zero_tol):
        return EXACT
    keep = d > zero_tol
    if keep.sum() < 3:
        raise ValueError("need at least three positive dislocations to estimate an order")
    slope, _ = np.polyfit(np.log2(h[keep]), np.log2(d[keep]), 1)
    return float(slope)


def format_order(order: float) -> str:
    return "exact (order inf)" if math.isinf(order) else f"{order:.3f}"


@dataclass(frozen=True)
class ErrorMetrics:
    quantity: str
    rms: float
    max: float
    samples: int


def _sided_interp(tq: np.ndarray, left: np.ndarray, tr: np.ndarray, vr: np.ndarray) -> np.ndarray:
    """Linear interpolation that respects jumps stored as repeated times.

    Queries flagged ``left`` take the value just before a jump at their
    instant, the others the value just after it.
    """
    lo = np.searchsorted(tr, tq, side="left")
    hi = np.searchsorted(tr, tq, side="right")
    out = np.interp(tq, tr, vr)
    exact = hi > lo
    pick = np.where(left, lo, hi - 1)
    out[exact] = vr[pick[exact]]
    return out


def waveform_error(trace: WaveformTrace, reference: WaveformTrace, quantity: str) -> ErrorMetrics:
    """RMS and max difference at the trace's timestamps, AtEvent samples excluded.

    The reference is interpolated linearly in time; pre-event samples are
    matched against the reference's left limit, all others against its right
    limit.
    """
    keep = [k for k, tag in enumerate(trace.tags) if tag is not Tag.AT]
    t = np.asarray(trace.times)[keep]
    v = trace.column(quantity)[keep]
    left = np.array([trace.tags[k] is Tag.PRE for k in keep], dtype=bool)
    tr, vr = reference.series(quantity)
    err = v - _sided_interp(t, left, tr, vr)
    return ErrorMetrics(quantity, float(np.sqrt(np.mean(err**2))), float(np.max(np.abs(err))), len(t))


def compare(
    case: str, method: str, h: float, quantities: Sequence[str], t_end: float,
    oracle_h: float = ORACLE_STEP, oracle: WaveformTrace | None = None,
) -> list[ErrorMetrics]:
    trace = run_case(case, method, h, t_end, quantities)
    if oracle is None:
        oracle = run_case(case, MethodId.B, oracle_h, t_end, quantities)
    return [waveform_error(trace, oracle, q) for q in quantities]


__all__ = [
    "STEP_LADDER",
    "CASES",
    "SELECTORS",
    "ConvergenceTable",
    "build_table",
    "estimate_order",
    "format_order",
    "waveform_error",
    "compare",
    "event_dislocation",
    "run_case",
    "Tag",
]
