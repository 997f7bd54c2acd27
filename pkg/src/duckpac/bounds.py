"""Variable bounds that make the McCormick relaxation well defined.

Two methods are provided. ``"box"`` uses a fixed voltage band and angle window
for every phase and sizes injection currents by apparent power over minimum
voltage. ``"sweep"`` first solves exact power flows at the corners of the
injection box for every hour and wraps the resulting voltages (and currents) in
a margin, which yields a much tighter relaxation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import ValidationError
from .grid import Network
from .mccormick import product_bounds
from .powerflow import NOMINAL_ANGLE, backward_forward_sweep


@dataclass
class Interval:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, x, tol=0.0):
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))


@dataclass
class Bounds:
    """Per-unit bounds, one :class:`Interval` of length T per keyed quantity.

    Keys are ``(bus, phase)`` for nodal quantities and ``(line, phase)`` for
    line currents; battery energy boxes are keyed by bus.
    """

    horizon: int
    v_re: dict = field(default_factory=dict)
    v_im: dict = field(default_factory=dict)
    i_re: dict = field(default_factory=dict)
    i_im: dict = field(default_factory=dict)
    flow_re: dict = field(default_factory=dict)
    flow_im: dict = field(default_factory=dict)
    p: dict = field(default_factory=dict)
    q: dict = field(default_factory=dict)
    soc: dict = field(default_factory=dict)

    def check(self):
        for name in ("v_re", "v_im", "i_re", "i_im", "flow_re", "flow_im", "p", "q", "soc"):
            for key, iv in getattr(self, name).items():
                if not (np.all(np.isfinite(iv.lo)) and np.all(np.isfinite(iv.hi))):
                    raise ValidationError(f"bounds {name}{key}: not finite")
                if np.any(iv.lo > iv.hi):
                    raise ValidationError(f"bounds {name}{key}: lower > upper")
        return self


def arc_rectangle(r_lo, r_hi, center, half_width):
    """Axis-aligned box enclosing the annular sector ``r in [r_lo, r_hi]``,
    angle in ``center +- half_width`` (radians). Returns (re_lo, re_hi, im_lo, im_hi)."""
    if r_lo <= 0:
        raise ValidationError("voltage band must keep the minimum magnitude positive")

    def extremes(f, crit):
        angles = [center - half_width, center + half_width]
        for c in crit:
            k = np.ceil((center - half_width - c) / (2 * np.pi))
            a = c + 2 * np.pi * k
            if a <= center + half_width + 1e-15:
                angles.append(a)
        vals = [f(a) for a in angles]
        return min(vals), max(vals)

    cmin, cmax = extremes(np.cos, [0.0, np.pi])
    smin, smax = extremes(np.sin, [np.pi / 2, -np.pi / 2])

    def scale(gmin, gmax):
        hi = r_hi * gmax if gmax >= 0 else r_lo * gmax
        lo = r_hi * gmin if gmin < 0 else r_lo * gmin
        return lo, hi

    re_lo, re_hi = scale(cmin, cmax)
    im_lo, im_hi = scale(smin, smax)
    return re_lo, re_hi, im_lo, im_hi


def injection_box(net: Network, profiles, flexible=True):
    """Per-unit (P, Q) injection intervals per ``(bus, phase)``, PCC excluded."""
    T = net.horizon
    base = net.s_base_kva
    P, Q = {}, {}
    for b in net.buses:
        if b.kind == "pcc":
            continue
        nph = len(b.phases)
        alpha = profiles.alpha_dr.get(b.id) if (flexible and b.flex is not None) else None
        k_pf = np.tan(np.arccos(b.pv.pf_min)) if (flexible and b.pv is not None) else 0.0
        for ph in b.phases:
            lp = profiles.load_p[(b.id, ph)] / base
            lq = profiles.load_q[(b.id, ph)] / base
            p_lo = -lp.copy()
            p_hi = -lp * (1 - alpha) if alpha is not None else -lp.copy()
            q_lo = -lq.copy()
            q_hi = -lq.copy()
            pv = profiles.pv_avail.get((b.id, ph))
            if pv is not None:
                pv = pv / base
                p_lo = p_lo + pv
                p_hi = p_hi + pv
                q_lo = q_lo - k_pf * pv
                q_hi = q_hi + k_pf * pv
            bat = b.battery
            if bat is not None and flexible:
                p_lo = p_lo - bat.p_sc_max / base / nph
                p_hi = p_hi + bat.p_sd_max / base / nph
            P[(b.id, ph)] = Interval(p_lo, p_hi)
            Q[(b.id, ph)] = Interval(q_lo, q_hi)
    return P, Q


def preprocess_bounds(net: Network, profiles, method="box", v_band=0.10,
                      angle_window_deg=30.0, v_margin=0.01, i_margin=0.05,
                      flexible=True) -> Bounds:
    """Finite bounds on every voltage, current and power variable.

    Parameters
    ----------
    method : {"box", "sweep"}
        ``"box"``: voltage components enclose the sector ``|V| in 1 +- v_band``,
        angle within ``angle_window_deg`` of the phase's nominal angle; each
        injection current component is bounded by ``S_max / V_min``.
        ``"sweep"``: voltages and currents are taken from exact power flows at
        the corners of every hour's injection box, padded by ``v_margin``
        (per unit) and ``i_margin`` (relative).
    flexible : bool
        When False, devices and demand response are ignored (baseline bounds).

    In both methods line currents are the interval sums of the injection
    current bounds in the downstream subtree, the PCC voltage is fixed and the
    PCC current is minus the sum of all other injection bounds.
    """
    if method not in ("box", "sweep"):
        raise ValueError(f"unknown bounds method {method!r}")
    T = net.horizon
    out = Bounds(T)
    pcc = net.pcc.id
    P, Q = injection_box(net, profiles, flexible=flexible)
    vmin = 1.0 - v_band
    if vmin <= 0:
        raise ValidationError("degenerate voltage band: minimum magnitude is zero")
    half = np.deg2rad(angle_window_deg)

    for ph in net.pcc.phases:
        v = net.v_pcc_pu * np.exp(1j * NOMINAL_ANGLE[ph])
        out.v_re[(pcc, ph)] = Interval(np.full(T, v.real), np.full(T, v.real))
        out.v_im[(pcc, ph)] = Interval(np.full(T, v.imag), np.full(T, v.imag))

    if method == "box":
        for bp in P:
            re_lo, re_hi, im_lo, im_hi = arc_rectangle(vmin, 1.0 + v_band,
                                                       NOMINAL_ANGLE[bp[1]], half)
            out.v_re[bp] = Interval(np.full(T, re_lo), np.full(T, re_hi))
            out.v_im[bp] = Interval(np.full(T, im_lo), np.full(T, im_hi))
            p, q = P[bp], Q[bp]
            smax = np.sqrt(np.maximum(p.lo ** 2, p.hi ** 2) + np.maximum(q.lo ** 2, q.hi ** 2))
            imax = smax / vmin
            out.i_re[bp] = Interval(-imax, imax)
            out.i_im[bp] = Interval(-imax.copy(), imax.copy())
    else:
        _sweep_bounds(net, P, Q, out, v_margin, i_margin)

    # PCC current: KCL over the whole tree
    for ph in net.pcc.phases:
        lo_r = np.zeros(T); hi_r = np.zeros(T)
        lo_i = np.zeros(T); hi_i = np.zeros(T)
        for bp in P:
            if bp[1] == ph:
                lo_r -= out.i_re[bp].hi; hi_r -= out.i_re[bp].lo
                lo_i -= out.i_im[bp].hi; hi_i -= out.i_im[bp].lo
        out.i_re[(pcc, ph)] = Interval(lo_r, hi_r)
        out.i_im[(pcc, ph)] = Interval(lo_i, hi_i)

    # line currents: interval sum of the subtree's injection current bounds
    sub = net.downstream()
    for k, ln in enumerate(net.lines):
        child = net.line_downstream_bus(k)
        sign = -1.0 if child == ln.to_bus else 1.0
        for ph in ln.phases:
            lo_r = np.zeros(T); hi_r = np.zeros(T)
            lo_i = np.zeros(T); hi_i = np.zeros(T)
            for b in sub[child]:
                if (b, ph) in out.i_re:
                    lo_r += out.i_re[(b, ph)].lo; hi_r += out.i_re[(b, ph)].hi
                    lo_i += out.i_im[(b, ph)].lo; hi_i += out.i_im[(b, ph)].hi
            if sign < 0:
                lo_r, hi_r, lo_i, hi_i = -hi_r, -lo_r, -hi_i, -lo_i
            out.flow_re[(k, ph)] = Interval(lo_r, hi_r)
            out.flow_im[(k, ph)] = Interval(lo_i, hi_i)

    # powers: device intervals; PCC power is linear in its current (fixed voltage)
    for bp in P:
        out.p[bp] = P[bp]
        out.q[bp] = Q[bp]
    for ph in net.pcc.phases:
        bp = (pcc, ph)
        vr, vi = out.v_re[bp].lo, out.v_im[bp].lo
        ir, ii = out.i_re[bp], out.i_im[bp]
        p_lo, p_hi = _lin2(vr, ir, vi, ii)
        q_lo, q_hi = _lin2(vi, ir, -vr, ii)
        out.p[bp] = Interval(p_lo, p_hi)
        out.q[bp] = Interval(q_lo, q_hi)

    for b in net.buses:
        bat = b.battery
        if bat is not None:
            e = net.s_base_kva
            out.soc[b.id] = Interval(np.full(T, bat.b_min / e), np.full(T, bat.b_max / e))
    return out.check()


def _lin2(a, x: Interval, c, y: Interval):
    """Interval of ``a*x + c*y`` for constant vectors a, c."""
    lo = np.minimum(a * x.lo, a * x.hi) + np.minimum(c * y.lo, c * y.hi)
    hi = np.maximum(a * x.lo, a * x.hi) + np.maximum(c * y.lo, c * y.hi)
    return lo, hi


def _sweep_bounds(net, P, Q, out, v_margin, i_margin):
    T = net.horizon
    keys = list(P)
    corners = list(product((0, 1), repeat=2)) + [(0.5, 0.5)]
    vr = {bp: [] for bp in keys}
    vi = {bp: [] for bp in keys}
    for t in range(T):
        for cp, cq in corners:
            s = {}
            for bp in keys:
                p = P[bp].lo[t] + cp * (P[bp].hi[t] - P[bp].lo[t])
                q = Q[bp].lo[t] + cq * (Q[bp].hi[t] - Q[bp].lo[t])
                s[bp] = complex(p, q)
            V, _, _ = backward_forward_sweep(net, s)
            for bp in keys:
                vr[bp].append((t, V[bp].real))
                vi[bp].append((t, V[bp].imag))
    for bp in keys:
        lo_r = np.full(T, np.inf); hi_r = np.full(T, -np.inf)
        lo_i = np.full(T, np.inf); hi_i = np.full(T, -np.inf)
        for (t, x) in vr[bp]:
            lo_r[t] = min(lo_r[t], x); hi_r[t] = max(hi_r[t], x)
        for (t, x) in vi[bp]:
            lo_i[t] = min(lo_i[t], x); hi_i[t] = max(hi_i[t], x)
        out.v_re[bp] = Interval(lo_r - v_margin, hi_r + v_margin)
        out.v_im[bp] = Interval(lo_i - v_margin, hi_i + v_margin)
        # currents over the corners of the (S, V) box: I = conj(S) / conj(V)
        ir_lo = np.full(T, np.inf); ir_hi = np.full(T, -np.inf)
        ii_lo = np.full(T, np.inf); ii_hi = np.full(T, -np.inf)
        for p_end, q_end, vr_end, vi_end in product((0, 1), repeat=4):
            p = P[bp].hi if p_end else P[bp].lo
            q = Q[bp].hi if q_end else Q[bp].lo
            v = ((out.v_re[bp].hi if vr_end else out.v_re[bp].lo)
                 + 1j * (out.v_im[bp].hi if vi_end else out.v_im[bp].lo))
            cur = np.conj((p + 1j * q) / v)
            ir_lo = np.minimum(ir_lo, cur.real); ir_hi = np.maximum(ir_hi, cur.real)
            ii_lo = np.minimum(ii_lo, cur.imag); ii_hi = np.maximum(ii_hi, cur.imag)
        pad = i_margin * np.maximum(np.maximum(abs(ir_lo), abs(ir_hi)),
                                    np.maximum(abs(ii_lo), abs(ii_hi)))
        out.i_re[bp] = Interval(ir_lo - pad, ir_hi + pad)
        out.i_im[bp] = Interval(ii_lo - pad, ii_hi + pad)


def product_interval(x: Interval, y: Interval) -> Interval:
    lo, hi = product_bounds(x.lo, x.hi, y.lo, y.hi)
    return Interval(lo, hi)
