"""Circuit description, netlist parser/writer and the two benchmark circuits.

Netlist grammar (one element per line, ``*`` starts a comment)::

    VAC <name> <n+> <n-> amp=<f> freq=<f> phase=<f>
    VDC <name> <n+> <n-> value=<f>
    R|L|C <name> <n1> <n2> value=<f>
    D <name> <anode> <cathode>
    T <name> <anode> <cathode> alpha=<f rad> ref=<vsrc-name> pulse=<f s>
    S <name> <n1> <n2> pwm freq=<f> duty=<f> high_at_zero=<0|1>

Node label ``0`` is ground. Other labels get dense indices in order of
first appearance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

__all__ = [
    "Resistor",
    "Inductor",
    "Capacitor",
    "VSourceDC",
    "VSourceAC",
    "Diode",
    "Thyristor",
    "GateSwitch",
    "Pwm",
    "Firing",
    "Branch",
    "Circuit",
    "NetlistError",
    "parse_netlist",
    "render_netlist",
    "builtin_rectifier",
    "builtin_buckboost",
    "RECTIFIER_NETLIST",
    "BUCKBOOST_NETLIST",
]


class NetlistError(ValueError):
    """Raised for malformed netlists and invalid circuits."""

    def __init__(self, message: str, line: int | None = None, token: str | None = None):
        where = f"line {line}: " if line is not None else ""
        what = f" (near {token!r})" if token is not None else ""
        super().__init__(f"{where}{message}{what}")
        self.line = line
        self.token = token


# -- element kinds -----------------------------------------------------------


@dataclass(frozen=True)
class Resistor:
    value: float


@dataclass(frozen=True)
class Inductor:
    value: float


@dataclass(frozen=True)
class Capacitor:
    value: float


@dataclass(frozen=True)
class VSourceDC:
    value: float


@dataclass(frozen=True)
class VSourceAC:
    """v(t) = amplitude * sin(2*pi*frequency*t + phase)."""

    amplitude: float
    frequency: float
    phase: float = 0.0

    def __call__(self, t: float) -> float:
        return self.amplitude * math.sin(2.0 * math.pi * self.frequency * t + self.phase)


@dataclass(frozen=True)
class Pwm:
    frequency: float
    duty: float
    high_at_zero: bool = True


@dataclass(frozen=True)
class Firing:
    """Thyristor firing pulses at angle ``alpha`` past each zero crossing of
    the referenced AC source (both half cycles)."""

    alpha: float
    reference_source: str
    pulse_width: float = 0.0


GateRef = Union[Pwm, Firing]


@dataclass(frozen=True)
class Diode:
    pass


@dataclass(frozen=True)
class Thyristor:
    gate: Firing


@dataclass(frozen=True)
class GateSwitch:
    gate: Pwm


Kind = Union[Resistor, Inductor, Capacitor, VSourceDC, VSourceAC, Diode, Thyristor, GateSwitch]

SWITCH_KINDS = (Diode, Thyristor, GateSwitch)
SOURCE_KINDS = (VSourceDC, VSourceAC)


@dataclass(frozen=True)
class Branch:
    name: str
    kind: Kind
    nodes: tuple[int, int]

    @property
    def is_switch(self) -> bool:
        return isinstance(self.kind, SWITCH_KINDS)

    @property
    def is_source(self) -> bool:
        return isinstance(self.kind, SOURCE_KINDS)

    @property
    def is_state(self) -> bool:
        return isinstance(self.kind, (Inductor, Capacitor))


@dataclass(frozen=True)
class Circuit:
    """A piecewise-linear network. Ground is node 0.

    Instances are validated on construction and hashable, so they can key
    caches of assembled matrices.
    """

    node_count: int
    branches: tuple[Branch, ...]
    name: str = ""
    node_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "branches", tuple(self.branches))
        if not self.node_names:
            object.__setattr__(self, "node_names", tuple(str(i) for i in range(self.node_count)))
        _validate(self)

    def __hash__(self) -> int:
        # hashed on every cache lookup in the solver; compute once
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash((self.node_count, self.branches, self.name, self.node_names))
            object.__setattr__(self, "_hash", h)
        return h

    def branch(self, name: str) -> Branch:
        for b in self.branches:
            if b.name == name:
                return b
        raise KeyError(name)

    @cached_property
    def switch_names(self) -> tuple[str, ...]:
        return tuple(b.name for b in self.branches if b.is_switch)

    @cached_property
    def switches(self) -> tuple[Branch, ...]:
        return tuple(b for b in self.branches if b.is_switch)

    @cached_property
    def state_branches(self) -> tuple[Branch, ...]:
        """Inductors and capacitors, in branch order; this is the layout of x."""
        return tuple(b for b in self.branches if b.is_state)

    def state_index(self, name: str) -> int:
        for k, b in enumerate(self.state_branches):
            if b.name == name:
                return k
        raise KeyError(f"{name!r} is not an inductor or capacitor")

    def node_index(self, label: str) -> int:
        return self.node_names.index(label)


def _positive(value: float, what: str) -> None:
    if not (math.isfinite(value) and value > 0):
        raise NetlistError(f"{what} must be finite and positive, got {value!r}")


def _validate(c: Circuit) -> None:
    if c.node_count < 1:
        raise NetlistError("circuit needs at least the ground node")
    if len(c.node_names) != c.node_count:
        raise NetlistError("node_names length does not match node_count")
    if len(set(c.node_names)) != c.node_count:
        raise NetlistError("node names must be unique")
    seen: set[str] = set()
    for b in c.branches:
        if not b.name:
            raise NetlistError("empty branch name")
        if b.name in seen:
            raise NetlistError(f"duplicate branch name {b.name!r}")
        seen.add(b.name)
        for n in b.nodes:
            if not (0 <= n < c.node_count):
                raise NetlistError(f"branch {b.name!r} references node {n} outside 0..{c.node_count - 1}")
        k = b.kind
        if isinstance(k, (Resistor, Inductor, Capacitor)):
            _positive(k.value, f"value of {b.name!r}")
        elif isinstance(k, VSourceDC):
            if not math.isfinite(k.value):
                raise NetlistError(f"value of {b.name!r} must be finite")
        elif isinstance(k, VSourceAC):
            if not all(math.isfinite(v) for v in (k.amplitude, k.frequency, k.phase)):
                raise NetlistError(f"parameters of {b.name!r} must be finite")
            _positive(k.frequency, f"frequency of {b.name!r}")
        elif isinstance(k, GateSwitch):
            _positive(k.gate.frequency, f"pwm frequency of {b.name!r}")
            if not 0.0 < k.gate.duty < 1.0:
                raise NetlistError(f"pwm duty of {b.name!r} must lie in (0, 1)")
    for b in c.branches:
        if isinstance(b.kind, Thyristor):
            g = b.kind.gate
            if not 0.0 <= g.alpha < math.pi:
                raise NetlistError(f"firing angle of {b.name!r} must lie in [0, pi)")
            if not (math.isfinite(g.pulse_width) and g.pulse_width >= 0.0):
                raise NetlistError(f"pulse width of {b.name!r} must be >= 0")
            ref = next((r for r in c.branches if r.name == g.reference_source), None)
            if ref is None or not isinstance(ref.kind, VSourceAC):
                raise NetlistError(
                    f"unresolved reference {g.reference_source!r} in {b.name!r}: no AC source of that name"
                )


# -- netlist text ------------------------------------------------------------

_PARAMS = {
    "VAC": ("amp", "freq", "phase"),
    "VDC": ("value",),
    "R": ("value",),
    "L": ("value",),
    "C": ("value",),
    "D": (),
    "T": ("alpha", "ref", "pulse"),
    "S": ("freq", "duty", "high_at_zero"),
}


def _number(tok: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise NetlistError("expected a number", lineno, tok) from None


def parse_netlist(text: str, name: str = "") -> Circuit:
    """Parse netlist text into a validated :class:`Circuit`."""
    labels = ["0"]
    raw: list[tuple[int, str, str, tuple[int, int], dict[str, str]]] = []

    def node(label: str) -> int:
        if label not in labels:
            labels.append(label)
        return labels.index(label)

    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("*", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        kind = toks[0]
        if kind not in _PARAMS:
            raise NetlistError("unknown element kind", lineno, kind)
        if len(toks) < 4:
            raise NetlistError("expected '<kind> <name> <node> <node>'", lineno, line)
        bname, n1, n2 = toks[1], toks[2], toks[3]
        rest = toks[4:]
        if kind == "S":
            if not rest or rest[0] != "pwm":
                raise NetlistError("switch needs a 'pwm' gate", lineno, rest[0] if rest else line)
            rest = rest[1:]
        params: dict[str, str] = {}
        for tok in rest:
            key, eq, val = tok.partition("=")
            if not eq or not val or key not in _PARAMS[kind]:
                raise NetlistError(f"unexpected parameter for {kind}", lineno, tok)
            if key in params:
                raise NetlistError("repeated parameter", lineno, tok)
            params[key] = val
        missing = [k for k in _PARAMS[kind] if k not in params and not (kind == "VAC" and k == "phase")]
        if missing:
            raise NetlistError(f"missing parameter(s) {', '.join(missing)}", lineno, line)
        raw.append((lineno, kind, bname, (node(n1), node(n2)), params))

    branches = []
    for lineno, kind, bname, nodes, p in raw:
        num = lambda key: _number(p[key], lineno)  # noqa: E731
        if kind == "VAC":
            k = VSourceAC(num("amp"), num("freq"), num("phase") if "phase" in p else 0.0)
        elif kind == "VDC":
            k = VSourceDC(num("value"))
        elif kind == "R":
            k = Resistor(num("value"))
        elif kind == "L":
            k = Inductor(num("value"))
        elif kind == "C":
            k = Capacitor(num("value"))
        elif kind == "D":
            k = Diode()
        elif kind == "T":
            k = Thyristor(Firing(num("alpha"), p["ref"], num("pulse")))
        else:
            flag = p["high_at_zero"]
            if flag not in ("0", "1"):
                raise NetlistError("high_at_zero must be 0 or 1", lineno, flag)
            k = GateSwitch(Pwm(num("freq"), num("duty"), flag == "1"))
        branches.append(Branch(bname, k, nodes))
    try:
        return Circuit(len(labels), tuple(branches), name, tuple(labels))
    except NetlistError as exc:
        raise NetlistError(str(exc)) from None


_LETTER = {Resistor: "R", Inductor: "L", Capacitor: "C"}


def render_netlist(circuit: Circuit) -> str:
    """Write ``circuit`` back as netlist text; floats use repr for exact round-trip."""
    lab = circuit.node_names
    lines = [f"* {circuit.name}"] if circuit.name else []
    for b in circuit.branches:
        n1, n2 = lab[b.nodes[0]], lab[b.nodes[1]]
        k = b.kind
        if isinstance(k, VSourceAC):
            tail, tag = f"amp={k.amplitude!r} freq={k.frequency!r} phase={k.phase!r}", "VAC"
        elif isinstance(k, VSourceDC):
            tail, tag = f"value={k.value!r}", "VDC"
        elif isinstance(k, (Resistor, Inductor, Capacitor)):
            tail, tag = f"value={k.value!r}", _LETTER[type(k)]
        elif isinstance(k, Diode):
            tail, tag = "", "D"
        elif isinstance(k, Thyristor):
            g = k.gate
            tail, tag = f"alpha={g.alpha!r} ref={g.reference_source} pulse={g.pulse_width!r}", "T"
        else:
            g = k.gate
            tail, tag = f"pwm freq={g.frequency!r} duty={g.duty!r} high_at_zero={int(g.high_at_zero)}", "S"
        lines.append(f"{tag} {b.name} {n1} {n2} {tail}".rstrip())
    return "\n".join(lines) + "\n"


# -- benchmark circuits ------------------------------------------------------

# Semi-controlled bridge: thyristors in the upper legs, diodes in the lower
# legs, C || R across the DC side. Ground sits on the source's return node.
RECTIFIER_NETLIST = f"""\
* single-phase semi-controlled full bridge rectifier
VAC vs a 0 amp=1.0 freq=60.0 phase=0.0
T t1 a p alpha={math.pi / 6!r} ref=vs pulse=0.0
T t2 0 p alpha={math.pi / 6!r} ref=vs pulse=0.0
D d1 n a
D d2 n 0
C cl p n value=0.02
R rl p n value=0.1
"""

# Inverting buck-boost; the diode conducts from the output node into the
# inductor node while the switch is open.
BUCKBOOST_NETLIST = """\
* buck-boost converter
VDC vs in 0 value=1.0
S sw in x pwm freq=5.0 duty=0.5 high_at_zero=1
L lx x 0 value=0.006
D d1 out x
C co out 0 value=0.3
R rl out 0 value=0.1
"""


def builtin_rectifier() -> Circuit:
    a, p, n = 1, 2, 3
    firing = Firing(math.pi / 6, "vs", 0.0)
    return Circuit(
        node_count=4,
        branches=(
            Branch("vs", VSourceAC(1.0, 60.0, 0.0), (a, 0)),
            Branch("t1", Thyristor(firing), (a, p)),
            Branch("t2", Thyristor(firing), (0, p)),
            Branch("d1", Diode(), (n, a)),
            Branch("d2", Diode(), (n, 0)),
            Branch("cl", Capacitor(0.02), (p, n)),
            Branch("rl", Resistor(0.1), (p, n)),
        ),
        name="single-phase semi-controlled full bridge rectifier",
        node_names=("0", "a", "p", "n"),
    )


def builtin_buckboost() -> Circuit:
    vin, x, out = 1, 2, 3
    return Circuit(
        node_count=4,
        branches=(
            Branch("vs", VSourceDC(1.0), (vin, 0)),
            Branch("sw", GateSwitch(Pwm(5.0, 0.5, True)), (vin, x)),
            Branch("lx", Inductor(0.006), (x, 0)),
            Branch("d1", Diode(), (out, x)),
            Branch("co", Capacitor(0.3), (out, 0)),
            Branch("rl", Resistor(0.1), (out, 0)),
        ),
        name="buck-boost converter",
        node_names=("0", "in", "x", "out"),
    )
