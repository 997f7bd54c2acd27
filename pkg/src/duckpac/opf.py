"""Multi-period current-injection OPF with McCormick-relaxed power definitions.

All quantities are per unit on the network's per-phase power base; battery
energy is in per-unit hours. Injections follow the active sign convention
(generation positive).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .bounds import Bounds, Interval, product_interval
from .errors import DataIOError, ValidationError
from .grid import Network
from .mccormick import mccormick_planes

BUS_QUANTITIES = ("vr", "vi", "ir", "ii", "p", "q", "w_rr", "w_ii", "w_ri", "w_ir")
FLOW_QUANTITIES = ("fr", "fi")
DEVICE_QUANTITIES = ("pg", "qg", "pl", "ql")
BATTERY_QUANTITIES = ("psc", "psd", "soc")
# (product, first factor, second factor)
PRODUCTS = (("w_rr", "vr", "ir"), ("w_ii", "vi", "ii"),
            ("w_ri", "vr", "ii"), ("w_ir", "vi", "ir"))


class VariableIndex:
    """Bijection between variable keys and column numbers.

    A key is ``(quantity, element, phase, hour)``; ``element`` is a bus id for
    nodal, device and battery quantities and a line index for line currents.
    Battery and ramp quantities use the empty phase ``""``.
    """

    def __init__(self):
        self.keys: list[tuple] = []
        self._col: dict[tuple, int] = {}
        self.owner_bus: list[int] = []

    def add(self, key, owner_bus) -> int:
        if key in self._col:
            raise ValueError(f"duplicate variable {key}")
        self._col[key] = len(self.keys)
        self.keys.append(key)
        self.owner_bus.append(owner_bus)
        return self._col[key]

    def __getitem__(self, key) -> int:
        return self._col[key]

    def __contains__(self, key) -> bool:
        return key in self._col

    def __len__(self) -> int:
        return len(self.keys)

    def get(self, key, default=None):
        return self._col.get(key, default)

    def select(self, quantity=None, element=None, phase=None, hour=None) -> list[int]:
        out = []
        for i, (q, e, p, t) in enumerate(self.keys):
            if ((quantity is None or q == quantity) and (element is None or e == element)
                    and (phase is None or p == phase) and (hour is None or t == hour)):
                out.append(i)
        return out


@dataclass
class CanonicalProblem:
    """``min c^T x  s.t.  G x = b,  H x <= d,  lb <= x <= ub``.

    ``row_bus_eq`` / ``row_bus_ineq`` record the bus each constraint row is
    attached to, and ``row_kind_*`` a short tag describing its origin.
    """

    c: np.ndarray
    G: sp.csr_matrix
    b: np.ndarray
    H: sp.csr_matrix
    d: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    index: VariableIndex
    horizon: int
    row_bus_eq: np.ndarray
    row_bus_ineq: np.ndarray
    row_kind_eq: list
    row_kind_ineq: list
    objective_kind: str = "none"
    s_base_kva: float = 1.0
    pcc: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.c)

    @property
    def col_bus(self):
        return np.asarray(self.index.owner_bus)

    def objective(self, x):
        return float(self.c @ x)

    def residuals(self, x):
        """(max |Gx-b|, max positive part of Hx-d, max bound violation)."""
        eq = float(np.max(np.abs(self.G @ x - self.b), initial=0.0))
        ineq = float(np.max(self.H @ x - self.d, initial=0.0))
        box = float(max(np.max(self.lb - x, initial=0.0), np.max(x - self.ub, initial=0.0)))
        return eq, max(ineq, 0.0), max(box, 0.0)

    def is_feasible(self, x, tol=1e-8):
        return all(r <= tol for r in self.residuals(x))

    def counts(self) -> dict:
        """Variable and row counts by kind; a pure function of the network
        structure and horizon."""
        out = {"n": self.n, "m_eq": self.G.shape[0], "m_ineq": self.H.shape[0]}
        for q, *_ in self.index.keys:
            out[f"var:{q}"] = out.get(f"var:{q}", 0) + 1
        for k in self.row_kind_eq:
            out[f"eq:{k}"] = out.get(f"eq:{k}", 0) + 1
        for k in self.row_kind_ineq:
            out[f"ineq:{k}"] = out.get(f"ineq:{k}", 0) + 1
        return out

    def value(self, x, quantity, element, phase="", hour=0):
        return float(x[self.index[(quantity, element, phase, hour)]])

    def series(self, x, quantity, element, phase=""):
        return np.array([x[self.index[(quantity, element, phase, t)]]
                         for t in range(self.horizon)])


class _Rows:
    def __init__(self):
        self.r, self.c, self.v = [], [], []
        self.rhs, self.bus, self.kind = [], [], []

    def add(self, coefs, rhs, bus, kind):
        i = len(self.rhs)
        for col, val in coefs:
            if val != 0.0:
                self.r.append(i)
                self.c.append(col)
                self.v.append(float(val))
        self.rhs.append(float(rhs))
        self.bus.append(bus)
        self.kind.append(kind)

    def matrix(self, n):
        return sp.csr_matrix((self.v, (self.r, self.c)), shape=(len(self.rhs), n))


def is_prosumer(bus) -> bool:
    return bus.pv is not None or bus.battery is not None


def build_ci_opf(net: Network, profiles, bounds: Bounds, objective="pcc_ramp",
                 flexible=True) -> CanonicalProblem:
    """Assemble the relaxed multi-period CI-OPF.

    Per hour: Ohm's law on every line phase (real and imaginary rows), KCL
    defining injections from line currents, McCormick planes for the four
    voltage-current products, power definitions from the products, prosumer
    splits and the PV power-factor cone. Battery state of charge couples hours.
    With ``objective="pcc_ramp"`` the sum over hours of the absolute hour-to-hour
    change of total PCC active power is minimised through epigraph variables.
    With ``flexible=False`` PV runs at unity power factor and demand response
    and storage are disabled.
    """
    if objective not in ("pcc_ramp", "none"):
        raise ValueError(f"unknown objective {objective!r}")
    T = net.horizon
    if objective == "pcc_ramp" and T < 2:
        raise ValidationError("pcc_ramp objective needs a horizon of at least 2 hours")
    pcc = net.pcc
    if pcc.devices or pcc.load_ref is not None:
        raise ValidationError(f"pcc bus {pcc.id} cannot carry load or devices")
    base = net.s_base_kva
    idx = VariableIndex()
    lb, ub = [], []

    def var(key, owner, iv_lo, iv_hi):
        idx.add(key, owner)
        lb.append(float(iv_lo))
        ub.append(float(iv_hi))

    def need(table, key, name):
        try:
            return table[key]
        except KeyError:
            raise ValidationError(f"missing {name} bound for {key}") from None

    zpu = [ln.z_ohm / net.z_base for ln in net.lines]
    prod_iv = {}
    for bp in net.bus_phases():
        ivs = {"vr": need(bounds.v_re, bp, "v_re"), "vi": need(bounds.v_im, bp, "v_im"),
               "ir": need(bounds.i_re, bp, "i_re"), "ii": need(bounds.i_im, bp, "i_im")}
        for w, x, y in PRODUCTS:
            prod_iv[(w, bp)] = product_interval(ivs[x], ivs[y])
    for k, ln in enumerate(net.lines):
        for ph in ln.phases:
            need(bounds.flow_re, (k, ph), "flow_re")
            need(bounds.flow_im, (k, ph), "flow_im")

    # ---- variables -------------------------------------------------------
    for t in range(T):
        for b in net.buses:
            for ph in b.phases:
                bp = (b.id, ph)
                var(("vr", b.id, ph, t), b.id, bounds.v_re[bp].lo[t], bounds.v_re[bp].hi[t])
                var(("vi", b.id, ph, t), b.id, bounds.v_im[bp].lo[t], bounds.v_im[bp].hi[t])
                var(("ir", b.id, ph, t), b.id, bounds.i_re[bp].lo[t], bounds.i_re[bp].hi[t])
                var(("ii", b.id, ph, t), b.id, bounds.i_im[bp].lo[t], bounds.i_im[bp].hi[t])
                pb = need(bounds.p, bp, "p")
                qb = need(bounds.q, bp, "q")
                var(("p", b.id, ph, t), b.id, pb.lo[t], pb.hi[t])
                var(("q", b.id, ph, t), b.id, qb.lo[t], qb.hi[t])
                for w, _, _ in PRODUCTS:
                    iv = prod_iv[(w, bp)]
                    var((w, b.id, ph, t), b.id, iv.lo[t], iv.hi[t])
                if is_prosumer(b):
                    lp = profiles.load_p[bp][t] / base
                    lq = profiles.load_q[bp][t] / base
                    alpha = profiles.alpha_dr.get(b.id) if (flexible and b.flex) else None
                    a = 0.0 if alpha is None else float(alpha[t])
                    if b.pv is not None and ph in b.pv.capacity_kw:
                        pv = profiles.pv_avail.get(bp, np.zeros(T))[t] / base
                        kq = np.tan(np.arccos(b.pv.pf_min)) if flexible else 0.0
                        var(("pg", b.id, ph, t), b.id, pv, pv)
                        var(("qg", b.id, ph, t), b.id, -kq * pv, kq * pv)
                    var(("pl", b.id, ph, t), b.id, lp * (1 - a), lp)
                    var(("ql", b.id, ph, t), b.id, lq, lq)
        for k, ln in enumerate(net.lines):
            owner = ln.from_bus
            for ph in ln.phases:
                fr, fi = bounds.flow_re[(k, ph)], bounds.flow_im[(k, ph)]
                var(("fr", k, ph, t), owner, fr.lo[t], fr.hi[t])
                var(("fi", k, ph, t), owner, fi.lo[t], fi.hi[t])
        for b in net.buses:
            bat = b.battery
            if bat is None:
                continue
            on = 1.0 if flexible else 0.0
            var(("psc", b.id, "", t), b.id, 0.0, on * bat.p_sc_max / base)
            var(("psd", b.id, "", t), b.id, 0.0, on * bat.p_sd_max / base)
            soc = bounds.soc[b.id]
            var(("soc", b.id, "", t), b.id, soc.lo[t], soc.hi[t])
    ramp_cols = []
    if objective == "pcc_ramp":
        for t in range(1, T):
            span = 0.0
            for ph in pcc.phases:
                pb = bounds.p[(pcc.id, ph)]
                span += max(pb.hi[t] - pb.lo[t - 1], pb.hi[t - 1] - pb.lo[t])
            var(("ramp", pcc.id, "", t), pcc.id, 0.0, max(span, 0.0))
            ramp_cols.append(idx[("ramp", pcc.id, "", t)])

    n = len(idx)
    c = np.zeros(n)
    c[ramp_cols] = 1.0

    # ---- equality rows ---------------------------------------------------
    eq = _Rows()
    for t in range(T):
        for k, ln in enumerate(net.lines):
            m, nn = ln.from_bus, ln.to_bus
            z = zpu[k]
            for i, ph in enumerate(ln.phases):
                # V_m - V_n - sum_j Z_ij F_j = 0, split into real and imaginary parts
                re = [(idx[("vr", m, ph, t)], 1.0), (idx[("vr", nn, ph, t)], -1.0)]
                im = [(idx[("vi", m, ph, t)], 1.0), (idx[("vi", nn, ph, t)], -1.0)]
                for j, ph2 in enumerate(ln.phases):
                    r, x = z[i, j].real, z[i, j].imag
                    re += [(idx[("fr", k, ph2, t)], -r), (idx[("fi", k, ph2, t)], x)]
                    im += [(idx[("fr", k, ph2, t)], -x), (idx[("fi", k, ph2, t)], -r)]
                eq.add(re, 0.0, m, "ohm_re")
                eq.add(im, 0.0, m, "ohm_im")
        for b in net.buses:
            for ph in b.phases:
                kre = [(idx[("ir", b.id, ph, t)], 1.0)]
                kim = [(idx[("ii", b.id, ph, t)], 1.0)]
                for k, ln in enumerate(net.lines):
                    if ph not in ln.phases:
                        continue
                    if ln.from_bus == b.id:
                        s = -1.0
                    elif ln.to_bus == b.id:
                        s = 1.0
                    else:
                        continue
                    kre.append((idx[("fr", k, ph, t)], s))
                    kim.append((idx[("fi", k, ph, t)], s))
                eq.add(kre, 0.0, b.id, "kcl_re")
                eq.add(kim, 0.0, b.id, "kcl_im")
                eq.add([(idx[("p", b.id, ph, t)], 1.0), (idx[("w_rr", b.id, ph, t)], -1.0),
                        (idx[("w_ii", b.id, ph, t)], -1.0)], 0.0, b.id, "pdef")
                eq.add([(idx[("q", b.id, ph, t)], 1.0), (idx[("w_ri", b.id, ph, t)], 1.0),
                        (idx[("w_ir", b.id, ph, t)], -1.0)], 0.0, b.id, "qdef")
                if is_prosumer(b):
                    prow = [(idx[("p", b.id, ph, t)], 1.0), (idx[("pl", b.id, ph, t)], 1.0)]
                    qrow = [(idx[("q", b.id, ph, t)], 1.0), (idx[("ql", b.id, ph, t)], 1.0)]
                    if ("pg", b.id, ph, t) in idx:
                        prow.append((idx[("pg", b.id, ph, t)], -1.0))
                        qrow.append((idx[("qg", b.id, ph, t)], -1.0))
                    if b.battery is not None:
                        share = 1.0 / len(b.phases)
                        prow.append((idx[("psd", b.id, "", t)], -share))
                        prow.append((idx[("psc", b.id, "", t)], share))
                    eq.add(prow, 0.0, b.id, "prosumer_p")
                    eq.add(qrow, 0.0, b.id, "prosumer_q")
        for b in net.buses:
            bat = b.battery
            if bat is None:
                continue
            keep = 1.0 - bat.eta_self
            row = [(idx[("soc", b.id, "", t)], 1.0),
                   (idx[("psc", b.id, "", t)], -bat.eta_c),
                   (idx[("psd", b.id, "", t)], 1.0 / bat.eta_d)]
            if t == 0:
                eq.add(row, keep * bat.b0 / base, b.id, "soc")
            else:
                row.append((idx[("soc", b.id, "", t - 1)], -keep))
                eq.add(row, 0.0, b.id, "soc")

    # ---- inequality rows -------------------------------------------------
    ineq = _Rows()
    lb_arr, ub_arr = np.asarray(lb), np.asarray(ub)
    for t in range(T):
        for b in net.buses:
            for ph in b.phases:
                for w, x, y in PRODUCTS:
                    cx, cy, cw = (idx[(x, b.id, ph, t)], idx[(y, b.id, ph, t)],
                                  idx[(w, b.id, ph, t)])
                    coef, rhs = mccormick_planes(lb_arr[cx], ub_arr[cx], lb_arr[cy], ub_arr[cy])
                    for kk in range(4):
                        ineq.add([(cx, coef[kk, 0]), (cy, coef[kk, 1]), (cw, coef[kk, 2])],
                                 rhs[kk], b.id, "mce")
                if b.pv is not None and ("pg", b.id, ph, t) in idx:
                    kq = np.tan(np.arccos(b.pv.pf_min)) if flexible else 0.0
                    pg, qg = idx[("pg", b.id, ph, t)], idx[("qg", b.id, ph, t)]
                    ineq.add([(qg, 1.0), (pg, -kq)], 0.0, b.id, "pv_cone")
                    ineq.add([(qg, -1.0), (pg, -kq)], 0.0, b.id, "pv_cone")
    if objective == "pcc_ramp":
        for t in range(1, T):
            r = idx[("ramp", pcc.id, "", t)]
            delta = []
            for ph in pcc.phases:
                delta += [(idx[("p", pcc.id, ph, t)], 1.0), (idx[("p", pcc.id, ph, t - 1)], -1.0)]
            ineq.add(delta + [(r, -1.0)], 0.0, pcc.id, "ramp")
            ineq.add([(cc, -v) for cc, v in delta] + [(r, -1.0)], 0.0, pcc.id, "ramp")

    return CanonicalProblem(
        c=c, G=eq.matrix(n), b=np.asarray(eq.rhs), H=ineq.matrix(n), d=np.asarray(ineq.rhs),
        lb=lb_arr, ub=ub_arr, index=idx, horizon=T,
        row_bus_eq=np.asarray(eq.bus, dtype=int), row_bus_ineq=np.asarray(ineq.bus, dtype=int),
        row_kind_eq=eq.kind, row_kind_ineq=ineq.kind, objective_kind=objective,
        s_base_kva=base, pcc=pcc.id,
    )


def pcc_power(prob: CanonicalProblem, x, phases=None) -> np.ndarray:
    """Total PCC active power injection per hour (per unit)."""
    out = np.zeros(prob.horizon)
    sel =[(i, key[3]) for i, key in enumerate(prob.index.keys)
           if key[0] == "p" and key[1] == prob.pcc and (phases is None or key[2] in phases)]
    for i, t in sel:
        out[t] += x[i]
    return out


# ---------------------------------------------------------------------------
# sparse-triplet export

def export_problem(prob: CanonicalProblem, path):
    """Write the problem as plain-text sparse triplets.

    Sections, each introduced by ``<name> <count>``: ``objective`` (col value),
    ``bounds`` (col lower upper), ``eq`` (row col value), ``eq_rhs`` (row value),
    ``ineq`` and ``ineq_rhs`` likewise, and ``vars`` (col quantity element phase
    hour). Infinite bounds are written as ``inf``/``-inf``.
    """
    path = Path(path)
    lines = [f"# canonical problem n={prob.n} m_eq={prob.G.shape[0]} "
             f"m_ineq={prob.H.shape[0]} horizon={prob.horizon} objective={prob.objective_kind}"]
    nz = np.flatnonzero(prob.c)
    lines.append(f"objective {len(nz)}")
    lines += [f"{i} {float(prob.c[i])!r}" for i in nz]
    lines.append(f"bounds {prob.n}")
    lines += [f"{i} {float(prob.lb[i])!r} {float(prob.ub[i])!r}" for i in range(prob.n)]
    for name, M, rhs in (("eq", prob.G, prob.b), ("ineq", prob.H, prob.d)):
        coo = M.tocoo()
        lines.append(f"{name} {coo.nnz}")
        lines += [f"{r} {c} {float(v)!r}" for r, c, v in zip(coo.row, coo.col, coo.data)]
        lines.append(f"{name}_rhs {len(rhs)}")
        lines += [f"{i} {float(v)!r}" for i, v in enumerate(rhs)]
    lines.append(f"vars {prob.n}")
    lines += [f"{i} {q} {e} {p or '-'} {t}" for i, (q, e, p, t) in enumerate(prob.index.keys)]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataIOError(f"{path}: {exc}") from exc


def read_exported(path):
    """Parse :func:`export_problem` output into ``(c, lb, ub, G, b, H, d)``."""
    text = Path(path).read_text().splitlines()
    pos = 1
    header = dict(kv.split("=") for kv in text[0].split()[3:7])
    n, m_eq, m_in = int(header["n"]), int(header["m_eq"]), int(header["m_ineq"])
    sections = {}
    while pos < len(text):
        name, count = text[pos].split()
        count = int(count)
        sections[name] = [ln.split() for ln in text[pos + 1: pos + 1 + count]]
        pos += 1 + count
    c = np.zeros(n)
    for i, v in sections["objective"]:
        c[int(i)] = float(v)
    lb = np.array([float(r[1]) for r in sections["bounds"]])
    ub = np.array([float(r[2]) for r in sections["bounds"]])

    def mat(name, m):
        rows = sections[name]
        M = sp.csr_matrix(([float(r[2]) for r in rows],
                           ([int(r[0]) for r in rows], [int(r[1]) for r in rows])), shape=(m, n))
        rhs = np.zeros(m)
        for i, v in sections[f"{name}_rhs"]:
            rhs[int(i)] = float(v)
        return M, rhs

    G, b = mat("eq", m_eq)
    H, d = mat("ineq", m_in)
    return c, lb, ub, G, b, H, d
