"""Modified nodal analysis with trapezoidal / backward Euler companion models.

Unknowns are the node voltages of nodes ``1..N-1`` followed by one current
per voltage-defined branch (every voltage source and every closed switch),
in branch order. Branch currents are positive from the first to the second
terminal through the element. Closed ideal switches are 0 V branches; open
switches carry only the ``goff`` leakage conductance.

For a fixed status set and step size the discretized network is linear and
time invariant apart from the source values, so the matrix, its LU factors
and the affine maps from history to solution are built once and cached.
"""

from __future__ import annotations

import enum
import functools
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .circuit import Capacitor, Circuit, Inductor, Resistor, VSourceAC, VSourceDC
from .status import SwitchStatusSet

GMIN = 1e-12
GOFF = 1e-10
PIVOT_FLOOR = 1e-300


class SingularSystemError(ArithmeticError):
    def __init__(self, message: str, statuses: SwitchStatusSet | None = None, t: float | None = None):
        detail = f" under statuses {statuses}" if statuses is not None else ""
        at = f" at t={t!r}" if t is not None else ""
        super().__init__(f"{message}{detail}{at}")
        self.reason = message
        self.statuses = statuses
        self.t = t


class QuantityError(ValueError):
    """Unknown or malformed quantity selector."""


def check_quantities(circuit: Circuit, names: tuple[str, ...]) -> None:
    """Raise QuantityError unless every selector resolves on ``circuit``."""
    probe(circuit, SwitchStatusSet(circuit.switch_names, frozenset()), tuple(names))


class Tag(enum.Enum):
    REGULAR = "regular"
    PRE = "pre"
    AT = "at"
    POST = "post"


class Integrator(enum.Enum):
    TRAPEZOIDAL = "trapezoidal"
    BACKWARD_EULER = "backward_euler"


@dataclass(frozen=True)
class IntegratorKind:
    method: Integrator
    h_eff: float

    def __post_init__(self) -> None:
        if not (self.h_eff > 0 and math.isfinite(self.h_eff)):
            raise ValueError(f"h_eff must be positive, got {self.h_eff!r}")


def trapezoidal(h: float) -> IntegratorKind:
    return IntegratorKind(Integrator.TRAPEZOIDAL, h)


def backward_euler(h: float) -> IntegratorKind:
    return IntegratorKind(Integrator.BACKWARD_EULER, h)


@dataclass(frozen=True)
class Conductances:
    """Numerical regularization: node-to-ground ``gmin`` and open-switch ``goff``."""

    gmin: float = GMIN
    goff: float = GOFF


DEFAULT_G = Conductances()


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Full solution at one instant.

    ``x`` holds one entry per inductor (current) and capacitor (voltage) in
    branch order; ``y`` is laid out per :func:`unknown_map` of ``statuses``.
    """

    t: float
    x: np.ndarray
    xdot: np.ndarray
    y: np.ndarray
    statuses: SwitchStatusSet
    tag: Tag = Tag.REGULAR

    def retag(self, tag: Tag, t: float | None = None) -> "Snapshot":
        return replace(self, tag=tag, t=self.t if t is None else t)

    def same_values(self, other: "Snapshot") -> bool:
        return (
            self.t == other.t
            and self.statuses == other.statuses
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.xdot, other.xdot)
            and np.array_equal(self.y, other.y)
        )


@dataclass(frozen=True, eq=False)
class LinearSystem:
    dimension: int
    matrix: np.ndarray
    rhs: np.ndarray
    unknown_map: tuple[str, ...]
    statuses: SwitchStatusSet | None = None
    lu: tuple | None = field(default=None, repr=False)


def voltage_defined(circuit: Circuit, statuses: SwitchStatusSet) -> tuple[int, ...]:
    return tuple(
        k
        for k, b in enumerate(circuit.branches)
        if b.is_source or (b.is_switch and statuses.is_on(b.name))
    )


def unknown_map(circuit: Circuit, statuses: SwitchStatusSet) -> tuple[str, ...]:
    nodes = tuple(f"v({lab})" for lab in circuit.node_names[1:])
    return nodes + tuple(f"i({circuit.branches[k].name})" for k in voltage_defined(circuit, statuses))


def _check_statuses(circuit: Circuit, statuses: SwitchStatusSet) -> None:
    if statuses.names != circuit.switch_names:
        raise ValueError(f"status set {statuses.names} does not match switches {circuit.switch_names}")


def _check_history(circuit: Circuit, x: np.ndarray, xdot: np.ndarray) -> None:
    s = len(circuit.state_branches)
    if np.shape(x) != (s,) or np.shape(xdot) != (s,):
        raise ValueError(f"history layout mismatch: expected {s} states, got x{np.shape(x)} xdot{np.shape(xdot)}")


def source_values(circuit: Circuit, t: float) -> np.ndarray:
    vals = []
    for b in circuit.branches:
        if isinstance(b.kind, VSourceDC):
            vals.append(b.kind.value)
        elif isinstance(b.kind, VSourceAC):
            vals.append(b.kind(t))
    return np.array(vals, dtype=float)


@dataclass(frozen=True, eq=False)
class _Stamps:
    """Cached per (circuit, on-set, integrator, conductances) discretization.

    rhs = hx @ x + hd @ xdot + hs @ e(t)
    y   = kx @ x + kd @ xdot + ks @ e(t)
    x'  = ax @ y + bx @ x + cx @ xdot
    x'dot = ad @ y + bd @ x + cd @ xdot
    """

    matrix: np.ndarray
    lu: tuple
    hx: np.ndarray
    hd: np.ndarray
    hs: np.ndarray
    kx: np.ndarray
    kd: np.ndarray
    ks: np.ndarray
    ax: np.ndarray
    bx: np.ndarray
    cx: np.ndarray
    ad: np.ndarray
    bd: np.ndarray
    cd: np.ndarray
    unknowns: tuple[str, ...]


@functools.lru_cache(maxsize=512)
def _stamps(circuit: Circuit, statuses: SwitchStatusSet, integ: IntegratorKind, g: Conductances) -> _Stamps:
    nn = circuit.node_count - 1
    vdef = voltage_defined(circuit, statuses)
    dim = nn + len(vdef)
    states = circuit.state_branches
    s = len(states)
    nsrc = sum(b.is_source for b in circuit.branches)
    h = integ.h_eff
    trap = integ.method is Integrator.TRAPEZOIDAL

    A = np.zeros((dim, dim))
    hx = np.zeros((dim, s))
    hd = np.zeros((dim, s))
    hs = np.zeros((dim, nsrc))
    # branch voltage v = vsel @ y
    vsel = np.zeros((s, dim))
    ax = np.zeros((s, dim))
    bx = np.zeros((s, s))
    cx = np.zeros((s, s))
    ad = np.zeros((s, dim))
    bd = np.zeros((s, s))
    cd = np.zeros((s, s))

    def stamp_g(n1: int, n2: int, gval: float) -> None:
        if n1:
            A[n1 - 1, n1 - 1] += gval
        if n2:
            A[n2 - 1, n2 - 1] += gval
        if n1 and n2:
            A[n1 - 1, n2 - 1] -= gval
            A[n2 - 1, n1 - 1] -= gval

    for i in range(nn):
        A[i, i] += g.gmin

    state_pos = {b.name: k for k, b in enumerate(states)}
    src_pos = 0
    vrow = {k: nn + r for r, k in enumerate(vdef)}
    for k, b in enumerate(circuit.branches):
        n1, n2 = b.nodes
        kind = b.kind
        if isinstance(kind, Resistor):
            stamp_g(n1, n2, 1.0 / kind.value)
        elif isinstance(kind, (Inductor, Capacitor)):
            j = state_pos[b.name]
            if n1:
                vsel[j, n1 - 1] += 1.0
            if n2:
                vsel[j, n2 - 1] -= 1.0
            if isinstance(kind, Capacitor):
                C = kind.value
                gc = 2.0 * C / h if trap else C / h
                stamp_g(n1, n2, gc)
                # i = gc*v - Ih ; Ih = gc*x_h (+ C*xdot_h for trapezoidal)
                ih_x, ih_d = gc, (C if trap else 0.0)
                for n, sgn in ((n1, 1.0), (n2, -1.0)):
                    if n:
                        hx[n - 1, j] += sgn * ih_x
                        hd[n - 1, j] += sgn * ih_d
                ax[j] = vsel[j]
                ad[j] = gc / C * vsel[j]
                bd[j, j] = -ih_x / C
                cd[j, j] = -ih_d / C
            else:
                L = kind.value
                gl = h / (2.0 * L) if trap else h / L
                stamp_g(n1, n2, gl)
                # i = gl*v + J ; J = x_h (+ (h/2)*xdot_h for trapezoidal)
                j_x, j_d = 1.0, (h / 2.0 if trap else 0.0)
                for n, sgn in ((n1, -1.0), (n2, 1.0)):
                    if n:
                        hx[n - 1, j] += sgn * j_x
                        hd[n - 1, j] += sgn * j_d
                ax[j] = gl * vsel[j]
                bx[j, j] = j_x
                cx[j, j] = j_d
                ad[j] = vsel[j] / L
        elif k in vrow:
            r = vrow[k]
            if n1:
                A[n1 - 1, r] += 1.0
                A[r, n1 - 1] += 1.0
            if n2:
                A[n2 - 1, r] -= 1.0
                A[r, n2 - 1] -= 1.0
            if b.is_source:
                hs[r, src_pos] = 1.0
        elif b.is_switch:
            stamp_g(n1, n2, g.goff)
        if b.is_source:
            src_pos += 1

    with warnings.catch_warnings():
        # zero pivots are reported below as SingularSystemError
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu = scipy.linalg.lu_factor(A, check_finite=True) if dim else (A, np.zeros(0, dtype=int))
    if dim and np.min(np.abs(np.diag(lu[0]))) < PIVOT_FLOOR:
        raise SingularSystemError("singular MNA matrix", statuses)
    if dim:
        kx, kd, ks = (scipy.linalg.lu_solve(lu, m) if m.shape[1] else np.zeros((dim, 0)) for m in (hx, hd, hs))
    else:
        kx, kd, ks = np.zeros((0, s)), np.zeros((0, s)), np.zeros((0, nsrc))
    for m in (A, hx, hd, hs, kx, kd, ks, ax, bx, cx, ad, bd, cd):
        m.setflags(write=False)
    return _Stamps(A, lu, hx, hd, hs, kx, kd, ks, ax, bx, cx, ad, bd, cd, unknown_map(circuit, statuses))


def assemble(
    circuit: Circuit,
    statuses: SwitchStatusSet,
    integ: IntegratorKind,
    t_target: float,
    history: Snapshot,
    g: Conductances = DEFAULT_G,
) -> LinearSystem:
    """Build the companion-model system for one step from ``history`` to ``t_target``."""
    _check_statuses(circuit, statuses)
    _check_history(circuit, history.x, history.xdot)
    st = _stamps(circuit, statuses, integ, g)
    rhs = st.hx @ history.x + st.hd @ history.xdot + st.hs @ source_values(circuit, t_target)
    return LinearSystem(len(rhs), np.array(st.matrix), rhs, st.unknowns, statuses, st.lu)


def solve(system: LinearSystem) -> np.ndarray:
    """Dense LU solve with partial pivoting and a residual check."""
    if system.dimension == 0:
        return np.zeros(0)
    lu = system.lu
    if lu is None:
        lu = scipy.linalg.lu_factor(system.matrix)
    if np.min(np.abs(np.diag(lu[0]))) < PIVOT_FLOOR:
        raise SingularSystemError("singular MNA matrix", system.statuses)
    y = scipy.linalg.lu_solve(lu, system.rhs)
    resid = np.max(np.abs(system.matrix @ y - system.rhs))
    if not resid <= 1e-10 * (1.0 + np.max(np.abs(system.rhs))):
        raise SingularSystemError(f"MNA residual {resid:.3e} too large", system.statuses)
    return y


def extract_snapshot(
    circuit: Circuit,
    statuses: SwitchStatusSet,
    integ: IntegratorKind,
    t_target: float,
    history: Snapshot,
    solution: np.ndarray,
    g: Conductances = DEFAULT_G,
    tag: Tag = Tag.REGULAR,
) -> Snapshot:
    """Recover x and xdot at ``t_target`` from the companion relations."""
    _check_history(circuit, history.x, history.xdot)
    st = _stamps(circuit, statuses, integ, g)
    if solution.shape != (st.matrix.shape[0],):
        raise ValueError("solution layout does not match the status set")
    x = st.ax @ solution + st.bx @ history.x + st.cx @ history.xdot
    xdot = st.ad @ solution + st.bd @ history.x + st.cd @ history.xdot
    return Snapshot(t_target, x, xdot, np.array(solution, dtype=float), statuses, tag)


def advance(
    circuit: Circuit,
    statuses: SwitchStatusSet,
    integ: IntegratorKind,
    t_target: float,
    x: np.ndarray,
    xdot: np.ndarray,
    g: Conductances = DEFAULT_G,
    tag: Tag = Tag.REGULAR,
) -> Snapshot:
    """One discretized step from history (x, xdot) to ``t_target``.

    Same result as ``assemble`` + ``solve`` + ``extract_snapshot`` but uses
    the cached solution operators directly.
    """
    st = _stamps(circuit, statuses, integ, g)
    e = source_values(circuit, t_target)
    y = st.kx @ x + st.kd @ xdot + st.ks @ e
    xn = st.ax @ y + st.bx @ x + st.cx @ xdot
    xdn = st.ad @ y + st.bd @ x + st.cd @ xdot
    return Snapshot(t_target, xn, xdn, y, statuses, tag)


# -- quantities --------------------------------------------------------------


def _parse_quantity(name: str) -> tuple[str, str]:
    head, sep, rest = name.partition("(")
    if not sep or not rest.endswith(")") or head not in ("v", "i", "x", "node"):
        raise QuantityError(f"unknown quantity selector {name!r}; use v(branch), i(branch), x(branch) or node(label)")
    return head, rest[:-1]


@functools.lru_cache(maxsize=1024)
def probe(circuit: Circuit, statuses: SwitchStatusSet, names: tuple[str, ...], goff: float = GOFF) -> np.ndarray:
    """Row-per-quantity matrix P with ``q = P @ concat(x, xdot, y)``."""
    nn = circuit.node_count - 1
    s = len(circuit.state_branches)
    vdef = voltage_defined(circuit, statuses)
    dim = nn + len(vdef)
    P = np.zeros((len(names), 2 * s + dim))

    def vrow(n1: int, n2: int) -> np.ndarray:
        r = np.zeros(2 * s + dim)
        if n1:
            r[2 * s + n1 - 1] += 1.0
        if n2:
            r[2 * s + n2 - 1] -= 1.0
        return r

    for q, name in enumerate(names):
        head, arg = _parse_quantity(name)
        if head == "node":
            if arg not in circuit.node_names:
                raise QuantityError(f"unknown node {arg!r}")
            P[q] = vrow(circuit.node_index(arg), 0)
            continue
        try:
            k = next(i for i, b in enumerate(circuit.branches) if b.name == arg)
        except StopIteration:
            raise QuantityError(f"unknown branch {arg!r} in {name!r}") from None
        b = circuit.branches[k]
        v = vrow(*b.nodes)
        if head == "v":
            P[q] = v
        elif head == "x":
            if not b.is_state:
                raise QuantityError(f"{name!r}: x() needs an inductor or capacitor")
            P[q, circuit.state_index(arg)] = 1.0
        elif isinstance(b.kind, Resistor):
            P[q] = v / b.kind.value
        elif isinstance(b.kind, Inductor):
            P[q, circuit.state_index(arg)] = 1.0
        elif isinstance(b.kind, Capacitor):
            P[q, s + circuit.state_index(arg)] = b.kind.value
        elif k in vdef:
            P[q, 2 * s + nn + vdef.index(k)] = 1.0
        else:
            P[q] = goff * v
    P.setflags(write=False)
    return P


def stacked(snap: Snapshot) -> np.ndarray:
    return np.concatenate((snap.x, snap.xdot, snap.y))


def quantities(circuit: Circuit, snap: Snapshot, names: tuple[str, ...], goff: float = GOFF) -> np.ndarray:
    return probe(circuit, snap.statuses, tuple(names), goff) @ stacked(snap)


def quantity(circuit: Circuit, snap: Snapshot, name: str, goff: float = GOFF) -> float:
    return float(quantities(circuit, snap, (name,), goff)[0])
