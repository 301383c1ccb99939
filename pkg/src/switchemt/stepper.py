"""Fixed-step trapezoidal time loop with located switching events."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .circuit import Circuit
from .events import (
    EventRecord,
    MethodId,
    OscillationError,
    ResolutionConfig,
    reinitialize,
    resolve_simultaneous,
)
from .mna import DEFAULT_G, Conductances, SingularSystemError, check_quantities, Snapshot, Tag, advance, probe, stacked, trapezoidal, unknown_map
from .status import SwitchStatusSet
from .switchlogic import (
    DEFAULT_THRESHOLDS,
    Thresholds,
    indicators,
    initial_statuses,
    interpolate,
    time_events_in,
)

# Candidates closer than this fraction of a step are one simultaneous event.
MERGE_WINDOW = 1e-6
# Events allowed back to back at one instant before the run is declared stuck.
MAX_EVENTS_PER_INSTANT = 20


def default_record(circuit: Circuit) -> tuple[str, ...]:
    names = []
    for b in circuit.branches:
        names += [f"v({b.name})", f"i({b.name})"]
    return tuple(names)


@dataclass(frozen=True)
class RunConfig:
    circuit: Circuit
    method: MethodId
    h: float
    t_end: float
    conductances: Conductances = DEFAULT_G
    thresholds: Thresholds = DEFAULT_THRESHOLDS
    resolution: ResolutionConfig = ResolutionConfig()
    x0: tuple[float, ...] | None = None
    record: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", MethodId(self.method))
        if not (0.0 < self.h < self.t_end):
            raise ValueError(f"need 0 < h < t_end, got h={self.h!r}, t_end={self.t_end!r}")
        if self.x0 is not None and len(self.x0) != len(self.circuit.state_branches):
            raise ValueError("x0 length does not match the number of inductors and capacitors")
        if self.record is not None:
            check_quantities(self.circuit, self.record)

    @property
    def recorded(self) -> tuple[str, ...]:
        return self.record if self.record is not None else default_record(self.circuit)


@dataclass
class WaveformTrace:
    """Samples in time order; every event contributes a pre/at/post triple."""

    names: tuple[str, ...]
    times: list[float] = field(default_factory=list)
    tags: list[Tag] = field(default_factory=list)
    rows: list[np.ndarray] = field(default_factory=list)
    events: list[EventRecord] = field(default_factory=list)

    def append(self, t: float, tag: Tag, values: np.ndarray) -> None:
        self.times.append(t)
        self.tags.append(tag)
        self.rows.append(values)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def values(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, len(self.names)))
        return np.vstack(self.rows)

    def column(self, name: str) -> np.ndarray:
        k = self.names.index(name)
        return np.array([r[k] for r in self.rows])

    def series(self, name: str, skip_at: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """(t, value) with AtEvent samples dropped by default."""
        keep = [k for k, tag in enumerate(self.tags) if not (skip_at and tag is Tag.AT)]
        col = self.column(name)
        return np.asarray(self.times)[keep], col[keep]


class _Recorder:
    def __init__(self, circuit: Circuit, names: tuple[str, ...], goff: float):
        self.circuit = circuit
        self.trace = WaveformTrace(names)
        self.goff = goff

    def add(self, snap: Snapshot, tag: Tag | None = None) -> None:
        P = probe(self.circuit, snap.statuses, self.trace.names, self.goff)
        self.trace.append(snap.t, tag or snap.tag, P @ stacked(snap))


def initialize(cfg: RunConfig) -> tuple[Snapshot, SwitchStatusSet]:
    """Consistent values at t = 0 through one resolution + reinitialization."""
    c = cfg.circuit
    s = len(c.state_branches)
    x0 = np.zeros(s) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)
    zeta0 = initial_statuses(c, 0.0)
    pre = Snapshot(0.0, x0, np.zeros(s), np.zeros(len(unknown_map(c, zeta0))), zeta0, Tag.PRE)
    zeta, at, _ = resolve_simultaneous(
        pre, zeta0, cfg.method, cfg.h, c, cfg.resolution, cfg.thresholds, None, cfg.conductances
    )
    zeta = zeta.replace(zeta.on, epoch=0)
    post = reinitialize(at, zeta, cfg.method, cfg.h, c, cfg.conductances)
    return post, zeta


def step_trapezoidal(
    history: Snapshot, statuses: SwitchStatusSet, h: float, circuit: Circuit,
    g: Conductances = DEFAULT_G, t_target: float | None = None,
) -> Snapshot:
    t_target = history.t + h if t_target is None else t_target
    return advance(circuit, statuses, trapezoidal(h), t_target, history.x, history.xdot, g)


@dataclass(frozen=True)
class Located:
    t_sw: float
    trigger: str
    pre: Snapshot
    forced: dict[str, bool]


def detect_and_locate(
    prev: Snapshot,
    nxt: Snapshot,
    statuses: SwitchStatusSet,
    circuit: Circuit,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
    goff: float = DEFAULT_G.goff,
    after: float | None = None,
) -> list[Located]:
    """Candidate events inside (prev.t, nxt.t], earliest first, ties merged.

    ``after`` drops candidates at or before that time (used to skip past a
    dismissed no-op event inside the same step).
    """
    span = nxt.t - prev.t
    cands: list[tuple[float, str, str | None, bool | None]] = []
    for cr in indicators(circuit, prev, nxt, statuses, thresholds, goff):
        kind = "turn-on" if cr.turn_on else "turn-off"
        cands.append((prev.t + cr.theta * span, f"{cr.switch} {kind}", cr.switch, cr.turn_on))
    for te in time_events_in(circuit, prev.t, nxt.t):
        cands.append((te.t, "gate " + "/".join(te.switches), None, None))
    if after is not None:
        cands = [c for c in cands if c[0] > after]
    cands.sort(key=lambda c: (c[0], c[1]))
    out: list[Located] = []
    window = MERGE_WINDOW * span
    k = 0
    while k < len(cands):
        t0 = cands[k][0]
        group = [c for c in cands[k:] if c[0] - t0 <= window]
        k += len(group)
        # exact time events win when merged with state crossings
        timed = [c[0] for c in group if c[2] is None]
        t_sw = timed[0] if timed else t0
        # a current zero crossing decides its own device; voltage crossings
        # are left to the status check
        forced = {c[2]: c[3] for c in group if c[2] is not None and not c[3]}
        trigger = "; ".join(c[1] for c in group)
        out.append(Located(t_sw, trigger, interpolate(prev, nxt, t_sw, Tag.PRE), forced))
    return out


def simulate(cfg: RunConfig) -> WaveformTrace:
    """Run from 0 to ``cfg.t_end`` with fixed trapezoidal steps of ``cfg.h``.

    After an event the grid restarts at the event instant. Numerical
    failures carry the simulation time at which they happened.
    """
    clock = [0.0]
    try:
        return _run(cfg, clock)
    except SingularSystemError as exc:
        if exc.t is not None:
            raise
        raise SingularSystemError(exc.reason, exc.statuses, clock[0]) from exc


def _run(cfg: RunConfig, clock: list[float]) -> WaveformTrace:
    c, h, g = cfg.circuit, cfg.h, cfg.conductances
    rec = _Recorder(c, cfg.recorded, g.goff)
    snap, zeta = initialize(cfg)
    rec.add(snap, Tag.REGULAR)
    origin, k = 0.0, 0
    last_event_t, same_instant = None, 0
    while snap.t < cfg.t_end:
        clock[0] = snap.t
        nxt = step_trapezoidal(snap, zeta, h, c, g, t_target=origin + (k + 1) * h)
        event = None
        after = None
        while True:
            found = detect_and_locate(snap, nxt, zeta, c, cfg.thresholds, g.goff, after)
            if not found:
                break
            cand = found[0]
            new_zeta, at, iters = resolve_simultaneous(
                cand.pre, zeta, cfg.method, h, c, cfg.resolution, cfg.thresholds, cand.forced, g
            )
            if new_zeta == zeta:
                # nothing switches: the step stands as computed
                after = cand.t_sw
                continue
            post = reinitialize(at, new_zeta, cfg.method, h, c, g)
            event = EventRecord(cand.t_sw, cand.pre, at, post, zeta, new_zeta, iters, cand.trigger, cand.forced)
            break
        if event is None:
            snap, k = nxt, k + 1
            rec.add(snap)
            continue
        if event.t_sw == last_event_t:
            same_instant += 1
            if same_instant > MAX_EVENTS_PER_INSTANT:
                raise OscillationError("repeated events at one instant", event.t_sw, (event.statuses_after,))
        else:
            last_event_t, same_instant = event.t_sw, 1
        for s in (event.pre, event.at, event.post):
            rec.add(s)
        rec.trace.events.append(event)
        snap, zeta = event.post, event.statuses_after
        origin, k = event.t_sw, 0
    return rec.trace


ORACLE_STEP = 0.5e-6


def oracle_simulate(
    circuit: Circuit, t_end: float, h: float = ORACLE_STEP, record: Sequence[str] | None = None, **kw
) -> WaveformTrace:
    """Small-step Method B reference run."""
    return simulate(RunConfig(circuit, MethodId.B, h, t_end, record=None if record is None else tuple(record), **kw))


def events_equal(a: WaveformTrace, b: WaveformTrace) -> bool:
    return len(a.events) == len(b.events) and all(
        x.t_sw == y.t_sw and x.statuses_after == y.statuses_after for x, y in zip(a.events, b.events)
    )


def total_energy(circuit: Circuit, snap: Snapshot) -> float:
    """Energy stored in inductors and capacitors."""
    e = 0.0
    for v, b in zip(snap.x, circuit.state_branches):
        e += 0.5 * b.kind.value * v * v
    return e


__all__ = [
    "RunConfig",
    "WaveformTrace",
    "initialize",
    "step_trapezoidal",
    "detect_and_locate",
    "simulate",
    "oracle_simulate",
    "total_energy",
    "ORACLE_STEP",
]
