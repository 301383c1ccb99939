"""Switching-event calculation without assuming continuous states.

Three building blocks estimate the network values at an event instant from
the differential states at that instant:

* block A: one backward Euler half step; the values at ``t + h/2`` stand in
  for the values at ``t``.
* block B: backward Euler half step forward, linear extrapolation of the
  states half a step back, then a backward Euler half step to ``t``.
* block C: two consecutive backward Euler half steps, then linear
  extrapolation of x, xdot and y back to ``t``.

Methods A, B and C use the corresponding block both for resolving
simultaneous switching and for reinitialization.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .circuit import Circuit
from .mna import DEFAULT_G, Conductances, Snapshot, Tag, advance, backward_euler, quantities, quantity
from .status import SwitchStatusSet
from .switchlogic import DEFAULT_THRESHOLDS, Thresholds, check_statuses


class MethodId(enum.Enum):
    A = "A"
    B = "B"
    C = "C"


class ResolutionError(RuntimeError):
    """Resolution did not reach a fixed point."""

    def __init__(self, message: str, t: float, history: tuple[SwitchStatusSet, ...]):
        trail = " -> ".join(str(s) for s in history)
        super().__init__(f"{message} at t={t!r}; statuses tried: {trail}")
        self.t = t
        self.history = history


class IterationLimitError(ResolutionError):
    pass


class OscillationError(ResolutionError):
    pass


@dataclass(frozen=True)
class ResolutionConfig:
    max_iterations: int = 50
    detect_cycles: bool = True

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True, eq=False)
class EventRecord:
    t_sw: float
    pre: Snapshot
    at: Snapshot
    post: Snapshot
    statuses_before: SwitchStatusSet
    statuses_after: SwitchStatusSet
    iterations: int
    trigger: str
    # switches pinned by their own current zero crossing during resolution
    forced: Mapping[str, bool] = field(default_factory=dict)

    @property
    def changed(self) -> tuple[str, ...]:
        return self.statuses_before.changed(self.statuses_after)

    def turned_off(self, name: str) -> bool:
        return self.statuses_before.is_on(name) and not self.statuses_after.is_on(name)

    def turned_on(self, name: str) -> bool:
        return not self.statuses_before.is_on(name) and self.statuses_after.is_on(name)


def _half_step(circuit, statuses, base_t, h, x, g, t_target=None):
    t_target = base_t + h / 2.0 if t_target is None else t_target
    return advance(circuit, statuses, backward_euler(h / 2.0), t_target, x, np.zeros_like(x), g)


def block_a(base: Snapshot, statuses: SwitchStatusSet, h: float, circuit: Circuit, g: Conductances = DEFAULT_G) -> Snapshot:
    half = _half_step(circuit, statuses, base.t, h, base.x, g)
    return Snapshot(base.t, half.x, half.xdot, half.y, statuses, base.tag)


def block_b(base: Snapshot, statuses: SwitchStatusSet, h: float, circuit: Circuit, g: Conductances = DEFAULT_G) -> Snapshot:
    half = _half_step(circuit, statuses, base.t, h, base.x, g)
    x_back = 2.0 * base.x - half.x
    snap = _half_step(circuit, statuses, base.t - h / 2.0, h, x_back, g, t_target=base.t)
    return Snapshot(base.t, snap.x, snap.xdot, snap.y, statuses, base.tag)


def block_c(base: Snapshot, statuses: SwitchStatusSet, h: float, circuit: Circuit, g: Conductances = DEFAULT_G) -> Snapshot:
    half = _half_step(circuit, statuses, base.t, h, base.x, g)
    full = _half_step(circuit, statuses, base.t + h / 2.0, h, half.x, g, t_target=base.t + h)
    return Snapshot(
        base.t,
        2.0 * half.x - full.x,
        2.0 * half.xdot - full.xdot,
        2.0 * half.y - full.y,
        statuses,
        base.tag,
    )


BLOCKS: Mapping[MethodId, Callable[..., Snapshot]] = {
    MethodId.A: block_a,
    MethodId.B: block_b,
    MethodId.C: block_c,
}


def resolve_simultaneous(
    pre: Snapshot,
    statuses: SwitchStatusSet,
    method: MethodId,
    h: float,
    circuit: Circuit,
    cfg: ResolutionConfig = ResolutionConfig(),
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
    forced: Mapping[str, bool] | None = None,
    g: Conductances = DEFAULT_G,
) -> tuple[SwitchStatusSet, Snapshot, int]:
    """Iterate block, status check and status change until nothing toggles.

    Every iteration restarts from ``pre``; interim values are discarded.
    Returns the final statuses (epoch advanced by one), the AtEvent snapshot
    solved under them, and the number of block evaluations.
    """
    block = BLOCKS[method]
    trial = statuses
    tried: list[tuple[SwitchStatusSet, Snapshot, SwitchStatusSet]] = []
    for iteration in range(1, cfg.max_iterations + 1):
        at = block(pre, trial, h, circuit, g)
        proposal = check_statuses(at, trial, pre.t, circuit, thresholds, forced, g.goff)
        tried.append((trial, at, proposal))
        if proposal == trial:
            return _finish(pre, trial, at, statuses, iteration)
        seen = [entry[0] for entry in tried]
        if cfg.detect_cycles and proposal in seen:
            cycle = tried[seen.index(proposal):]
            pick = _zero_current_choice(cycle, circuit, thresholds, g)
            if pick is None:
                raise OscillationError("switching oscillation", pre.t, tuple(seen) + (proposal,))
            return _finish(pre, pick[0], pick[1], statuses, iteration)
        trial = proposal
    raise IterationLimitError(
        f"no fixed point after {cfg.max_iterations} iterations", pre.t, tuple(e[0] for e in tried)
    )


def _finish(pre: Snapshot, final: SwitchStatusSet, at: Snapshot, before: SwitchStatusSet, iterations: int):
    final = final.replace(final.on, epoch=before.epoch + 1)
    return final, Snapshot(pre.t, at.x, at.xdot, at.y, final, Tag.AT), iterations


def _zero_current_choice(cycle, circuit, thresholds, g):
    """Break an on/off cycle caused by devices that are forward biased but
    would carry no current (no return path). Such devices stay Off.

    Returns (statuses, at) for the cycle member whose only complaint is that
    kind of turn-on, or None when the cycle is a genuine oscillation.
    """
    by_set = {entry[0]: entry for entry in cycle}
    best = None
    for trial, at, proposal in cycle:
        if not proposal.on >= trial.on:
            continue
        wants = proposal.on - trial.on
        other = by_set.get(proposal)
        if other is None:
            continue
        currents = quantities(circuit, other[1], tuple(f"i({n})" for n in sorted(wants)), g.goff)
        if np.all(np.abs(currents) <= thresholds.eps_i):
            if best is None or len(trial.on) < len(best[0].on):
                best = (trial, at)
    return best


def reinitialize(
    at: Snapshot, statuses: SwitchStatusSet, method: MethodId, h: float, circuit: Circuit, g: Conductances = DEFAULT_G
) -> Snapshot:
    """One application of the method's block from the AtEvent values."""
    snap = BLOCKS[method](at, statuses, h, circuit, g)
    return Snapshot(at.t, snap.x, snap.xdot, snap.y, statuses, Tag.POST)


class Between(enum.Enum):
    PRE_VS_POST = "pre-post"
    AT_VS_POST = "at-post"


def dislocation(e: EventRecord, name: str, between: Between | str, circuit: Circuit, goff: float | None = None) -> float:
    """|q(first) - q(second)| for quantity ``name`` across an event."""
    between = Between(between)
    first = e.pre if between is Between.PRE_VS_POST else e.at
    kw = {} if goff is None else {"goff": goff}
    return abs(quantity(circuit, first, name, **kw) - quantity(circuit, e.post, name, **kw))
