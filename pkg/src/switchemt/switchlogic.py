"""Gate signals, scheduled time events and the switch status rules.

Device conventions: diodes and thyristors conduct from anode (first node)
to cathode (second node). A conducting device is monitored through its
current, a blocking diode through its anode-cathode voltage, and a blocking
thyristor only at its firing instants (or while its firing pulse lasts).
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from .circuit import Circuit, Diode, Firing, GateSwitch, Pwm, Thyristor, VSourceAC
from .mna import GOFF, Snapshot, quantities
from .status import SwitchStatusSet

__all__ = [
    "SwitchStatusSet",
    "Thresholds",
    "TimeEvent",
    "gate_level",
    "time_events_in",
    "initial_statuses",
    "check_statuses",
    "indicators",
]

# Relative slack on gate timing, so that exactly scheduled instants round the
# right way despite float products such as 0.3 * 5.
_TIME_SLACK = 1e-9


@dataclass(frozen=True)
class Thresholds:
    eps_v: float = 1e-9
    eps_i: float = 1e-9


DEFAULT_THRESHOLDS = Thresholds()


class TimeEvent(NamedTuple):
    t: float
    gate: Pwm | Firing
    switches: tuple[str, ...]


def _firing_clock(gate: Firing, circuit: Circuit) -> tuple[float, float]:
    src = circuit.branch(gate.reference_source).kind
    assert isinstance(src, VSourceAC)
    return 2.0 * math.pi * src.frequency, src.phase


def firing_instant(gate: Firing, circuit: Circuit, k: int) -> float:
    omega, phi = _firing_clock(gate, circuit)
    return (gate.alpha + k * math.pi - phi) / omega


def gate_level(gate: Pwm | Firing, t: float, circuit: Circuit | None = None) -> bool:
    """True for a High gate at time ``t``.

    Firing gates need ``circuit`` to look up their reference source.
    """
    if isinstance(gate, Pwm):
        phase = t * gate.frequency
        frac = phase - math.floor(phase + _TIME_SLACK)
        return (frac < gate.duty - _TIME_SLACK) != (not gate.high_at_zero)
    if circuit is None:
        raise ValueError("a firing gate needs the circuit to resolve its reference source")
    omega, phi = _firing_clock(gate, circuit)
    half = math.pi / omega
    tol = _TIME_SLACK * half
    k = math.floor((t - firing_instant(gate, circuit, 0)) / half + _TIME_SLACK)
    if k < 0:
        return False
    tk = firing_instant(gate, circuit, k)
    if abs(t - tk) <= tol:
        return True
    return tk <= t <= tk + gate.pulse_width + tol


def _gate_edges(gate: Pwm | Firing, circuit: Circuit, t0: float, t1: float) -> list[float]:
    if isinstance(gate, Pwm):
        f = gate.frequency
        out = []
        for m in range(math.floor(t0 * f) - 1, math.ceil(t1 * f) + 2):
            out.extend((m / f, (m + gate.duty) / f))
        return out
    omega, phi = _firing_clock(gate, circuit)
    half = math.pi / omega
    k0 = max(0, math.floor((t0 - firing_instant(gate, circuit, 0)) / half) - 1)
    out = []
    k = k0
    while True:
        tk = firing_instant(gate, circuit, k)
        if tk > t1:
            break
        out.append(tk)
        k += 1
    return out


def time_events_in(circuit: Circuit, t0: float, t1: float) -> list[TimeEvent]:
    """All gate edges and firing instants in (t0, t1], ascending.

    Switches driven by identical gate signals share one entry.
    """
    if not t0 < t1:
        raise ValueError(f"empty interval ({t0}, {t1}]")
    groups: dict[tuple[float, Pwm | Firing], list[str]] = {}
    for b in circuit.switches:
        if isinstance(b.kind, (Thyristor, GateSwitch)):
            for te in _gate_edges(b.kind.gate, circuit, t0, t1):
                if t0 < te <= t1:
                    groups.setdefault((te, b.kind.gate), []).append(b.name)
    events = [TimeEvent(t, gate, tuple(names)) for (t, gate), names in groups.items()]
    events.sort(key=lambda e: (e.t, e.switches))
    return events


def initial_statuses(circuit: Circuit, t: float = 0.0) -> SwitchStatusSet:
    """Gate switches follow their gates; diodes and thyristors start Off."""
    on = [b.name for b in circuit.switches if isinstance(b.kind, GateSwitch) and gate_level(b.kind.gate, t)]
    return SwitchStatusSet(circuit.switch_names, frozenset(on))


@lru_cache(maxsize=64)
def _device_names(circuit: Circuit) -> tuple[tuple[str, ...], tuple[str, ...]]:
    devs = [b for b in circuit.switches if not isinstance(b.kind, GateSwitch)]
    currents = tuple(f"i({b.name})" for b in devs)
    voltages = tuple(f"v({b.name})" for b in devs)
    return currents, voltages


def device_readings(circuit: Circuit, snap: Snapshot, goff: float = GOFF) -> dict[str, tuple[float, float]]:
    """(current, anode-cathode voltage) of every diode and thyristor."""
    cur, vol = _device_names(circuit)
    vals = quantities(circuit, snap, cur + vol, goff)
    n = len(cur)
    names = [c[2:-1] for c in cur]
    return {name: (float(vals[k]), float(vals[n + k])) for k, name in enumerate(names)}


def check_statuses(
    snapshot: Snapshot,
    statuses: SwitchStatusSet,
    t: float,
    circuit: Circuit,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
    forced: Mapping[str, bool] | None = None,
    goff: float = GOFF,
) -> SwitchStatusSet:
    """Propose the status set implied by the values in ``snapshot``.

    Blocking diode turns On when v_AK > eps_v; blocking thyristor when its
    gate is High at ``t`` and v_AK > eps_v. A conducting device turns Off
    when its current is <= eps_i. ``forced`` pins switches whose current
    zero crossing triggered the event; those have already been judged from
    the crossing itself. Pending turn-ons are applied together; current
    driven turn-offs only once no device wants to turn on.
    """
    forced = forced or {}
    readings = device_readings(circuit, snapshot, goff)
    on = set(statuses.on)
    turn_on, turn_off = set(), set()
    for b in circuit.switches:
        name = b.name
        if name in forced or isinstance(b.kind, GateSwitch):
            level = forced[name] if name in forced else gate_level(b.kind.gate, t)
            (on.add if level else on.discard)(name)
            continue
        i, v = readings[name]
        if name in statuses.on:
            if i <= thresholds.eps_i:
                turn_off.add(name)
        elif isinstance(b.kind, Diode):
            if v > thresholds.eps_v:
                turn_on.add(name)
        elif gate_level(b.kind.gate, t, circuit) and v > thresholds.eps_v:
            turn_on.add(name)
    # a device needing a partner to close its current path must not be
    # dropped while that partner is still being switched in
    if turn_on:
        on |= turn_on
    else:
        on -= turn_off
    return statuses.replace(on)


class Crossing(NamedTuple):
    theta: float
    switch: str
    turn_on: bool


def indicators(
    circuit: Circuit,
    prev: Snapshot,
    nxt: Snapshot,
    statuses: SwitchStatusSet,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
    goff: float = GOFF,
) -> list[Crossing]:
    """State-event crossings between two snapshots solved under ``statuses``.

    ``theta`` in [0, 1] is the linear-root position inside the step. A
    conducting device whose current is already <= 0 at ``prev`` and falls
    below -eps_i at ``nxt`` yields theta = 0.
    """
    a = device_readings(circuit, prev, goff)
    b = device_readings(circuit, nxt, goff)
    out = []
    for br in circuit.switches:
        name = br.name
        if isinstance(br.kind, GateSwitch):
            continue
        (i0, v0), (i1, v1) = a[name], b[name]
        if name in statuses.on:
            if i0 > 0.0 >= i1:
                out.append(Crossing(i0 / (i0 - i1), name, False))
            elif i0 <= 0.0 and i1 < -thresholds.eps_i:
                out.append(Crossing(0.0, name, False))
            continue
        if isinstance(br.kind, Thyristor):
            g = br.kind.gate
            if g.pulse_width <= 0.0 or not (
                gate_level(g, prev.t, circuit) and gate_level(g, nxt.t, circuit)
            ):
                continue
        if v0 <= thresholds.eps_v < v1:
            out.append(Crossing(min(max(v0 / (v0 - v1), 0.0), 1.0), name, True))
    return out


def interpolate(prev: Snapshot, nxt: Snapshot, t: float, tag) -> Snapshot:
    """Linear interpolation of x, xdot and y between two snapshots."""
    span = nxt.t - prev.t
    w = 0.0 if span == 0 else (t - prev.t) / span
    w = min(max(w, 0.0), 1.0)

    def lerp(p: np.ndarray, q: np.ndarray) -> np.ndarray:
        return p + w * (q - p)

    return Snapshot(t, lerp(prev.x, nxt.x), lerp(prev.xdot, nxt.xdot), lerp(prev.y, nxt.y), prev.statuses, tag)

