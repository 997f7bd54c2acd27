"""Exact AC power flow on a radial multi-phase feeder (backward/forward sweep)."""

from __future__ import annotations

import numpy as np

from .errors import IterationLimitError
from .grid import PHASES, Network

NOMINAL_ANGLE = {"a": 0.0, "b": -2 * np.pi / 3, "c": 2 * np.pi / 3}


def nominal_voltage(phase, magnitude=1.0):
    return magnitude * np.exp(1j * NOMINAL_ANGLE[phase])


def backward_forward_sweep(net: Network, s_inj: dict, v_pcc=None, tol=1e-12,
                           max_iter=200):
    """Solve constant-power injections ``s_inj[(bus, phase)]`` (per unit, active
    sign convention) with the PCC voltage fixed.

    Returns ``(V, I, F)``: nodal voltages and injection currents keyed by
    ``(bus, phase)`` and line currents keyed by ``(line index, phase)`` in the
    line's from->to orientation.
    """
    vmag = net.v_pcc_pu if v_pcc is None else v_pcc
    order, parent = net.tree()
    pcc = net.pcc.id
    z_pu = [ln.z_ohm / net.z_base for ln in net.lines]
    # line connecting each non-root bus to its parent, and its orientation sign
    up_line = {}
    for k, ln in enumerate(net.lines):
        if parent.get(ln.to_bus) == ln.from_bus:
            up_line[ln.to_bus] = (k, +1)
        else:
            up_line[ln.from_bus] = (k, -1)
    V = {bp: nominal_voltage(bp[1], vmag) for bp in net.bus_phases()}
    for it in range(max_iter):
        I = {bp: (np.conj(s_inj.get(bp, 0.0) / V[bp]) if bp[0] != pcc else 0.0)
             for bp in V}
        # backward: current drawn by each subtree through its parent line
        sub = {bp: -I[bp] for bp in I}  # consumption-positive current
        for b in reversed(order):
            if b == pcc:
                continue
            pb = parent[b]
            for ph in net.bus(b).phases:
                if (pb, ph) in sub:
                    sub[(pb, ph)] += sub[(b, ph)]
        F = {}
        for b, (k, sgn) in up_line.items():
            for ph in net.lines[k].phases:
                F[(k, ph)] = sgn * sub[(b, ph)]
        # forward: voltages from the root outward
        newV = dict(V)
        for b in order:
            if b == pcc:
                continue
            k, sgn = up_line[b]
            ln = net.lines[k]
            f = np.array([F[(k, ph)] for ph in ln.phases])
            drop = z_pu[k] @ f  # V_from - V_to
            pb = parent[b]
            for i, ph in enumerate(ln.phases):
                newV[(b, ph)] = newV[(pb, ph)] - sgn * drop[i]
        err = max(abs(newV[bp] - V[bp]) for bp in V)
        V = newV
        if err < tol:
            break
    else:
        raise IterationLimitError(f"power flow did not converge ({err:.2e})", err)
    I = {bp: (np.conj(s_inj.get(bp, 0.0) / V[bp]) if bp[0] != pcc else 0.0) for bp in V}
    for ph in net.pcc.phases:
        I[(pcc, ph)] = 0.0
    for k, ln in enumerate(net.lines):
        for ph in ln.phases:
            if ln.from_bus == pcc:
                I[(pcc, ph)] += F[(k, ph)]
            elif ln.to_bus == pcc:
                I[(pcc, ph)] -= F[(k, ph)]
    return V, I, F


def injections_from_profiles(net: Network, profiles, t, p_extra=None, q_extra=None):
    """Per-unit complex injections at hour ``t`` with PV at unity pf and no
    storage or demand response, optionally plus per-(bus, phase) extras."""
    s = {}
    base = net.s_base_kva
    for bp in net.bus_phases():
        p = -profiles.load_p[bp][t] + profiles.pv_avail.get(bp, np.zeros(t + 1))[t]
        q = -profiles.load_q[bp][t]
        if p_extra is not None:
            p += p_extra.get(bp, 0.0)
        if q_extra is not None:
            q += q_extra.get(bp, 0.0)
        s[bp] = complex(p, q) / base
    return s


__all__ = ["backward_forward_sweep", "injections_from_profiles", "nominal_voltage",
           "NOMINAL_ANGLE", "PHASES"]
