import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from switchemt.circuit import builtin_buckboost, builtin_rectifier, parse_netlist
from switchemt.mna import (
    Conductances,
    IntegratorKind,
    Integrator,
    LinearSystem,
    QuantityError,
    SingularSystemError,
    Snapshot,
    advance,
    assemble,
    backward_euler,
    extract_snapshot,
    quantities,
    quantity,
    solve,
    trapezoidal,
    unknown_map,
)
from switchemt.status import SwitchStatusSet

RC = parse_netlist("C c 1 0 value=1\nR r 1 0 value=1")
NO_GMIN = Conductances(gmin=0.0)


def _off(c):
    return SwitchStatusSet(c.switch_names, frozenset())


def _history(c, x, xdot=None, t=0.0):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xdot = np.zeros_like(x) if xdot is None else np.atleast_1d(np.asarray(xdot, dtype=float))
    return Snapshot(t, x, xdot, np.zeros(0), _off(c))


def _step(c, statuses, integ, t, hist, g=Conductances()):
    sysm = assemble(c, statuses, integ, t, hist, g)
    return extract_snapshot(c, statuses, integ, t, hist, solve(sysm), g)


def test_rc_backward_euler_system():
    sysm = assemble(RC, _off(RC), backward_euler(0.1), 0.1, _history(RC, 1.0, 123.0))
    assert sysm.dimension == 1
    assert sysm.matrix[0, 0] == pytest.approx(11.0, abs=1e-11)
    assert solve(sysm)[0] == pytest.approx(10 / 11, rel=1e-10)


def test_rc_trapezoidal_system():
    # i_C history of -1 means xdot = -1 for C = 1
    sysm = assemble(RC, _off(RC), trapezoidal(0.1), 0.1, _history(RC, 1.0, -1.0))
    assert sysm.matrix[0, 0] == pytest.approx(21.0, abs=1e-11)
    assert solve(sysm)[0] == pytest.approx(19 / 21, rel=1e-10)
    assert solve(sysm)[0] == pytest.approx(0.904762, abs=1e-6)


def test_rc_backward_euler_snapshot():
    snap = _step(RC, _off(RC), backward_euler(0.05), 0.05, _history(RC, 1.0))
    assert snap.x[0] == pytest.approx(1 / 1.05, rel=1e-10)
    assert snap.xdot[0] == pytest.approx(-1 / 1.05, rel=1e-10)
    assert snap.x[0] == pytest.approx(0.952381, abs=1e-6)


def test_solve_identity_and_2x2():
    eye = LinearSystem(3, np.eye(3), np.array([1.0, -2.0, 3.5]), ("a", "b", "c"))
    np.testing.assert_array_equal(solve(eye), [1.0, -2.0, 3.5])
    two = LinearSystem(2, np.array([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0]), ("a", "b"))
    np.testing.assert_allclose(solve(two), [1.0, 1.0], rtol=1e-14)


def test_singular_system_reported_with_statuses():
    c = parse_netlist("VDC v1 1 0 value=1\nVDC v2 1 0 value=2\nD d 1 0")
    with pytest.raises(SingularSystemError) as info:
        assemble(c, _off(c), trapezoidal(1e-4), 1e-4, _history(c, []))
    assert info.value.statuses == _off(c)
    assert "d=Off" in str(info.value)


def test_integrator_kind_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        IntegratorKind(Integrator.TRAPEZOIDAL, 0.0)


def test_rectifier_all_off_pins_floating_nodes():
    c = builtin_rectifier()
    t = 0.004
    snap = advance(c, _off(c), trapezoidal(1e-4), t, np.zeros(1), np.zeros(1))
    assert quantity(c, snap, "node(a)") == pytest.approx(math.sin(2 * math.pi * 60 * t), abs=1e-6)


def test_buckboost_all_open_has_no_switch_unknowns():
    c = builtin_buckboost()
    names = unknown_map(c, _off(c))
    assert names == ("v(in)", "v(x)", "v(out)", "i(vs)")
    # the output capacitor discharges into the load regardless of the source
    h, tau = 1e-4, 0.1 * 0.3
    snap = advance(c, _off(c), trapezoidal(h), h, np.array([0.0, 1.0]), np.array([0.0, -1.0 / tau]))
    assert snap.x[1] == pytest.approx((1 - h / (2 * tau)) / (1 + h / (2 * tau)), rel=1e-9)
    assert abs(snap.x[0]) < 1e-9  # open-switch leakage only


def test_closed_switch_adds_current_unknown():
    c = builtin_buckboost()
    on = SwitchStatusSet(c.switch_names, frozenset({"sw"}))
    assert unknown_map(c, on)[-1] == "i(sw)"


def _all_status_sets(c):
    names = c.switch_names
    for bits in itertools.product((False, True), repeat=len(names)):
        yield SwitchStatusSet(names, frozenset(n for n, b in zip(names, bits) if b))


def _has_voltage_loop(c, zeta):
    """True when sources and closed switches form a loop (union-find)."""
    parent = list(range(c.node_count))

    def find(k):
        while parent[k] != k:
            k = parent[k]
        return k

    for b in c.branches:
        if b.is_source or (b.is_switch and zeta.is_on(b.name)):
            r1, r2 = find(b.nodes[0]), find(b.nodes[1])
            if r1 == r2:
                return True
            parent[r1] = r2
    return False


@pytest.mark.parametrize("factory, expected", [(builtin_rectifier, 9), (builtin_buckboost, 4)])
@pytest.mark.parametrize("integ", [trapezoidal(5e-6), trapezoidal(320e-6), backward_euler(2.5e-6)])
def test_every_status_set_is_solvable_or_reported(factory, expected, integ):
    # a loop of 0 V branches is singular for ideal switches; it must be
    # reported rather than solved
    c = factory()
    s = len(c.state_branches)
    rng = np.random.default_rng(7)
    solved = 0
    for zeta in _all_status_sets(c):
        hist = Snapshot(0.01, rng.normal(size=s), rng.normal(size=s), np.zeros(0), zeta)
        if _has_voltage_loop(c, zeta):
            with pytest.raises(SingularSystemError):
                assemble(c, zeta, integ, 0.01 + integ.h_eff, hist)
            continue
        y = solve(assemble(c, zeta, integ, 0.01 + integ.h_eff, hist))
        assert np.all(np.isfinite(y))
        solved += 1
    # rectifier: t1+t2 or d1+d2 short the source, leaving 3 * 3 sets
    assert solved == expected


@pytest.mark.parametrize("factory", [builtin_rectifier, builtin_buckboost])
def test_open_switch_matrix_symmetric(factory):
    c = factory()
    sysm = assemble(c, _off(c), trapezoidal(1e-4), 1e-4, _history(c, np.zeros(len(c.state_branches))))
    np.testing.assert_allclose(sysm.matrix, sysm.matrix.T, atol=0)


def test_advance_matches_assemble_solve_extract():
    c = builtin_rectifier()
    zeta = SwitchStatusSet(c.switch_names, frozenset({"t1", "d2"}))
    hist = Snapshot(0.0351, np.array([0.3]), np.array([-2.0]), np.zeros(0), zeta)
    ref = _step(c, zeta, trapezoidal(1e-4), 0.0352, hist)
    fast = advance(c, zeta, trapezoidal(1e-4), 0.0352, hist.x, hist.xdot)
    np.testing.assert_allclose(fast.x, ref.x, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(fast.xdot, ref.xdot, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(fast.y, ref.y, rtol=1e-12, atol=1e-15)


def test_ramp_inductor_trapezoidal_exact():
    c = parse_netlist("VDC v 1 0 value=2\nL l 1 0 value=0.5")
    zeta = _off(c)
    x, xdot, t = np.array([0.0]), np.array([4.0]), 0.0
    for _ in range(10):
        snap = advance(c, zeta, trapezoidal(0.1), t + 0.1, x, xdot)
        x, xdot, t = snap.x, snap.xdot, snap.t
    assert x[0] == pytest.approx(4.0 * t, rel=1e-12)
    assert xdot[0] == pytest.approx(4.0, rel=1e-12)


def test_zero_state_zero_source_stays_zero():
    c = parse_netlist("VDC v 1 0 value=0\nR r 1 2 value=1\nC c 2 0 value=1\nL l 2 0 value=1")
    snap = advance(c, _off(c), trapezoidal(0.1), 0.1, np.zeros(2), np.zeros(2))
    assert not np.any(snap.x) and not np.any(snap.xdot)


def _kcl_residual(c, snap, g):
    """Net current leaving each non-ground node, gmin included."""
    names = tuple(f"i({b.name})" for b in c.branches)
    cur = quantities(c, snap, names, g.goff)
    res = np.zeros(c.node_count)
    for i, b in zip(cur, c.branches):
        res[b.nodes[0]] += i
        res[b.nodes[1]] -= i
    for k in range(1, c.node_count):
        res[k] += g.gmin * quantity(c, snap, f"node({c.node_names[k]})")
    return res[1:], np.max(np.abs(cur))


@settings(max_examples=40, deadline=None)
@given(
    case=st.sampled_from(["rectifier", "buckboost"]),
    bits=st.integers(min_value=0, max_value=15),
    be=st.booleans(),
    h=st.sampled_from([5e-6, 1e-4, 320e-6]),
    seed=st.integers(0, 2**16),
)
def test_snapshot_consistency(case, bits, be, h, seed):
    c = builtin_rectifier() if case == "rectifier" else builtin_buckboost()
    names = c.switch_names
    zeta = SwitchStatusSet(names, frozenset(n for k, n in enumerate(names) if bits >> k & 1))
    assume(not _has_voltage_loop(c, zeta))
    rng = np.random.default_rng(seed)
    s = len(c.state_branches)
    integ = backward_euler(h) if be else trapezoidal(h)
    g = Conductances()
    snap = advance(c, zeta, integ, 0.02 + h, rng.normal(size=s), rng.normal(size=s), g)
    for k, b in enumerate(c.state_branches):
        v = quantity(c, snap, f"v({b.name})")
        if b.kind.__class__.__name__ == "Inductor":
            assert snap.xdot[k] == pytest.approx(v / b.kind.value, rel=1e-9, abs=1e-9)
        else:
            assert snap.x[k] == pytest.approx(v, rel=1e-9, abs=1e-12)
    res, scale = _kcl_residual(c, snap, g)
    assert np.max(np.abs(res)) <= 1e-9 * (1.0 + scale)


@pytest.mark.parametrize("factory, on", [(builtin_rectifier, {"t1", "d2"}), (builtin_buckboost, {"sw"}), (builtin_buckboost, {"d1"})])
def test_tiny_step_changes_little(factory, on):
    c = factory()
    rng = np.random.default_rng(3)
    s = len(c.state_branches)
    t0 = 0.004
    x = rng.normal(size=s)
    if factory is builtin_rectifier:
        # the bridge puts the capacitor straight across the source
        x[0] = math.sin(2 * math.pi * 60 * t0)
    zeta = SwitchStatusSet(c.switch_names, frozenset(on))
    a = advance(c, zeta, trapezoidal(1e-9), t0 + 1e-9, x, np.zeros(s))
    b = advance(c, zeta, backward_euler(1e-9), t0 + 1e-9, x, np.zeros(s))
    assert np.all(np.abs(a.x - x) <= 1e-6 * np.abs(x))
    assert np.all(np.abs(b.x - x) <= 1e-6 * np.abs(x))


def _rc_exact(t, v0, t0):
    # C v' = sin(t) - v with R = C = 1
    def vp(tt):
        return (np.sin(tt) - np.cos(tt)) / 2.0

    return vp(t) + (v0 - vp(t0)) * np.exp(-(t - t0))


def _local_errors(integ_factory):
    c = parse_netlist(f"VAC vs 1 0 amp=1 freq={1 / (2 * math.pi)!r} phase=0\nR r 1 2 value=1\nC c 2 0 value=1")
    t0, v0 = 0.3, 0.7
    xdot0 = math.sin(t0) - v0
    steps = np.array([1e-4, 3e-4, 1e-3, 3e-3, 1e-2])
    errs = []
    for h in steps:
        snap = advance(c, _off(c), integ_factory(h), t0 + h, np.array([v0]), np.array([xdot0]), NO_GMIN)
        errs.append(abs(snap.x[0] - _rc_exact(t0 + h, v0, t0)))
    return steps, np.array(errs)


def test_trapezoidal_local_error_third_order():
    h, e = _local_errors(trapezoidal)
    slope = np.polyfit(np.log(h), np.log(e), 1)[0]
    assert abs(slope - 3.0) <= 0.15


def test_backward_euler_local_error_second_order():
    h, e = _local_errors(backward_euler)
    slope = np.polyfit(np.log(h), np.log(e), 1)[0]
    assert abs(slope - 2.0) <= 0.15


def test_history_layout_mismatch():
    with pytest.raises(ValueError):
        assemble(RC, _off(RC), trapezoidal(0.1), 0.1, _history(RC, [1.0, 2.0]))


def test_unknown_quantity():
    snap = advance(RC, _off(RC), trapezoidal(0.1), 0.1, np.ones(1), np.zeros(1))
    with pytest.raises(QuantityError):
        quantity(RC, snap, "w(c)")
    with pytest.raises(QuantityError):
        quantity(RC, snap, "i(nope)")
    with pytest.raises(QuantityError):
        quantity(RC, snap, "x(r)")
