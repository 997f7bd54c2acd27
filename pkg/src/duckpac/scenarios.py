"""Baseline, local and distributed control of a feeder over one day.

Scenario A runs PV at unity power factor with no storage or demand response.
Scenario B lets every agent (a battery cluster or a single bus) minimise its
own peak net consumption with no network model. Scenario C solves the relaxed
CI-OPF for minimum PCC ramping with NST-PAC.

PCC series are reported loss-exclusive: net load = served load - PV -
battery discharge + battery charge, so the three scenarios are comparable.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import scipy.sparse as sp

from .bounds import preprocess_bounds
from .central import solve_centralized
from .decomposition import decompose
from .errors import DataIOError, InfeasibleError, ValidationError
from .opf import build_ci_opf, is_prosumer, pcc_power
from .pac import GainSchedule, NSTPAC, StopRule, write_trace
from .scaling import equilibrate

SCENARIOS = ("A", "B", "C")
# initial SOC (kWh) of the bundled feeder's batteries in ascending bus order
SOC_CASES = {"min": (45.0, 0.0, 160.0), "mid": (120.0, 400.0, 400.0),
             "full": (450.0, 540.0, 800.0)}
# tie-breakers for the local LPs (per kWh of throughput / curtailment)
LOCAL_EPS = 1e-6


@dataclass
class SolverConfig:
    """NST-PAC and relaxation settings for Scenario C."""

    max_iter: int = 1000
    eps_primal: float = 1e-4
    eps_coord: float = 1e-4
    rho: float = 1.0
    gamma: float | None = None
    floor: float = 0.05
    cap: float = 0.5
    plain: bool = False
    eps_inner: float = 1e-8
    workers: int = 1
    bounds: str = "sweep"
    strategy: str = "per-cluster"
    scale: bool = True

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc or {})
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ValidationError(f"unknown solver settings: {sorted(extra)}")
        cfg = cls(**doc)
        if cfg.max_iter < 1:
            raise ValidationError("max_iter must be positive")
        if cfg.eps_primal <= 0 or cfg.eps_coord <= 0 or cfg.eps_inner <= 0:
            raise ValidationError("tolerances must be positive")
        if cfg.bounds not in ("box", "sweep"):
            raise ValidationError(f"unknown bounds method {cfg.bounds!r}")
        if cfg.strategy not in ("per-bus", "per-cluster"):
            raise ValidationError(f"unknown decomposition strategy {cfg.strategy!r}")
        return cfg

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise DataIOError(f"{path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from exc
        return cls.from_dict(doc.get("solver", doc))


@dataclass
class ScenarioResult:
    tag: str
    pcc_kw: np.ndarray
    soc_kwh: dict = field(default_factory=dict)
    battery_kw: dict = field(default_factory=dict)    # discharge - charge
    mean_agent_time: float = 0.0
    objectives: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    flows: dict = field(default_factory=dict)         # bus -> (charge, discharge)

    def __post_init__(self):
        self.pcc_kw = np.asarray(self.pcc_kw, dtype=float)

    @property
    def horizon(self):
        return len(self.pcc_kw)

    @property
    def ramp_kw(self):
        return np.abs(np.diff(self.pcc_kw))

    @property
    def total_ramp(self):
        return float(self.ramp_kw.sum())

    def check(self, net, tol=1e-6):
        """Raise :class:`ValidationError` if an SOC trajectory leaves its box."""
        for bus, soc in self.soc_kwh.items():
            bat = net.bus(bus).battery
            if np.any(soc < bat.b_min - tol) or np.any(soc > bat.b_max + tol):
                raise ValidationError(f"scenario {self.tag}: battery {bus} SOC out of bounds")
        return True

    def replay(self, net):
        """SOC trajectories recomputed from the stored charge and discharge series."""
        return {bus: soc_replay(net.bus(bus).battery, psc, psd)
                for bus, (psc, psd) in self.flows.items()}


# --------------------------------------------------------------------------- helpers

def total_ramp(series):
    """Sum of absolute hour-to-hour changes."""
    return float(np.abs(np.diff(np.asarray(series, dtype=float))).sum())


def ramp_reduction(base, other):
    """Percent reduction ``100 * (base - other) / base``."""
    if base == 0:
        return 0.0 if other == 0 else float("-inf")
    return 100.0 * (base - other) / base


def soc_replay(bat, psc, psd):
    """SOC trajectory (kWh) from charge/discharge powers (kW) and ``bat.b0``."""
    keep = 1.0 - bat.eta_self
    soc = np.empty(len(psc))
    prev = bat.b0
    for t in range(len(psc)):
        prev = keep * prev + bat.eta_c * psc[t] - psd[t] / bat.eta_d
        soc[t] = prev
    return soc


def repair_battery(bat, psc, psd):
    """Clip a dispatch into its power boxes and adjust it hour by hour so the
    replayed SOC stays within ``[b_min, b_max]``. Returns ``(psc, psd, soc)``."""
    psc = np.clip(np.asarray(psc, dtype=float), 0.0, bat.p_sc_max)
    psd = np.clip(np.asarray(psd, dtype=float), 0.0, bat.p_sd_max)
    keep = 1.0 - bat.eta_self
    soc = np.empty(len(psc))
    prev = bat.b0
    for t in range(len(psc)):
        s = keep * prev + bat.eta_c * psc[t] - psd[t] / bat.eta_d
        if s > bat.b_max:
            excess = s - bat.b_max
            cut = min(psc[t], excess / bat.eta_c)
            psc[t] -= cut
            excess -= cut * bat.eta_c
            if excess > 0:
                psd[t] = min(bat.p_sd_max, psd[t] + excess * bat.eta_d)
        elif s < bat.b_min:
            short = bat.b_min - s
            cut = min(psd[t], short * bat.eta_d)
            psd[t] -= cut
            short -= cut / bat.eta_d
            if short > 0:
                psc[t] = min(bat.p_sc_max, psc[t] + short / bat.eta_c)
        # the corrections above can land an ulp outside the box; nudge the flows
        # by at least one ulp of the SOC
        ulp = np.spacing(max(abs(bat.b_max), abs(bat.b_min), 1.0))
        dc, dd = ulp / bat.eta_c, ulp * bat.eta_d
        for _ in range(64):
            s = keep * prev + bat.eta_c * psc[t] - psd[t] / bat.eta_d
            if s > bat.b_max and psc[t] > 0:
                psc[t] = max(0.0, psc[t] - max(dc, np.spacing(psc[t])))
            elif s > bat.b_max and psd[t] < bat.p_sd_max:
                psd[t] = min(bat.p_sd_max, psd[t] + max(dd, np.spacing(psd[t])))
            elif s < bat.b_min and psd[t] > 0:
                psd[t] = max(0.0, psd[t] - max(dd, np.spacing(psd[t])))
            elif s < bat.b_min and psc[t] < bat.p_sc_max:
                psc[t] = min(bat.p_sc_max, psc[t] + max(dc, np.spacing(psc[t])))
            else:
                break
        prev = keep * prev + bat.eta_c * psc[t] - psd[t] / bat.eta_d
        soc[t] = prev
    return psc, psd, soc


def _flex_alpha(profiles, bus, T):
    a = profiles.alpha_dr.get(bus.id)
    if bus.flex is None or a is None:
        return np.zeros(T)
    return np.asarray(a, dtype=float)


# --------------------------------------------------------------------------- scenario A

def run_baseline(net, profiles) -> ScenarioResult:
    """PCC net load with PV at unity power factor and no storage or flexibility."""
    pcc = profiles.total_load() - profiles.total_pv()
    return ScenarioResult("A", pcc, info={"agents": 0})


# --------------------------------------------------------------------------- scenario B

def agents_of(net, clusters=None):
    """Bus groups acting as independent agents: each cluster plus every other bus."""
    clusters = net.clusters if clusters is None else clusters
    groups, used = [], set()
    for cl in clusters:
        members = tuple(sorted(int(b) for b in cl))
        for b in members:
            net.bus(b)
            if b in used:
                raise ValidationError(f"bus {b} appears in two clusters")
        used |= set(members)
        groups.append(members)
    groups += [(b.id,) for b in net.buses if b.id not in used]
    return sorted(groups, key=min)


@dataclass
class AgentSolution:
    buses: tuple
    objective: float           # peak net consumption (kW)
    net_kw: np.ndarray         # consumption - generation per hour
    battery: dict              # bus -> (psc, psd, soc)
    load_kw: np.ndarray
    pv_kw: np.ndarray


def solve_agent(net, profiles, buses) -> AgentSolution:
    """Peak-shaving LP of one agent.

    ``min z  s.t.  z >= -P(t)`` where ``P`` is the agent's net injection, with
    demand response bounded by ``alpha_dr``, PV fixed to its availability and
    battery recursion and boxes. Tiny penalties on battery throughput and on
    curtailed load make the optimum unique.
    """
    T = net.horizon
    cols = {}
    lb, ub, cost = [], [], []

    def var(key, lo, hi, c=0.0):
        cols[key] = len(lb)
        lb.append(lo)
        ub.append(hi)
        cost.append(c)

    var("z", -np.inf, np.inf, 1.0)
    load = np.zeros(T)
    pv = np.zeros(T)
    flex_rows = []
    for bid in buses:
        b = net.bus(bid)
        alpha = _flex_alpha(profiles, b, T)
        for ph in b.phases:
            L = profiles.load_p.get((bid, ph), np.zeros(T))
            load += L
            pv += profiles.pv_avail.get((bid, ph), np.zeros(T))
            for t in range(T):
                if alpha[t] > 0 and L[t] > 0:
                    # served load pl in [L(1 - alpha), L]; curtailment costs LOCAL_EPS
                    var(("pl", bid, ph, t), L[t] * (1 - alpha[t]), L[t], -LOCAL_EPS)
                    flex_rows.append((t, ("pl", bid, ph, t), L[t]))
        bat = b.battery
        if bat is not None:
            for t in range(T):
                var(("psc", bid, t), 0.0, bat.p_sc_max, LOCAL_EPS)
                var(("psd", bid, t), 0.0, bat.p_sd_max, LOCAL_EPS)
                var(("soc", bid, t), bat.b_min, bat.b_max)
    n = len(lb)
    # z - (served load - pv - discharge + charge) >= 0 per hour
    H_rows, H_cols, H_vals, d = [], [], [], []
    fixed_load = load.copy()
    for t, key, L in flex_rows:
        fixed_load[t] -= L
    for t in range(T):
        r = t
        H_rows.append(r); H_cols.append(cols["z"]); H_vals.append(-1.0)
        for tt, key, L in flex_rows:
            if tt == t:
                H_rows.append(r); H_cols.append(cols[key]); H_vals.append(1.0)
        for bid in buses:
            if net.bus(bid).battery is not None:
                H_rows += [r, r]
                H_cols += [cols[("psc", bid, t)], cols[("psd", bid, t)]]
                H_vals += [1.0, -1.0]
        d.append(-(fixed_load[t] - pv[t]))
    G_rows, G_cols, G_vals, b_eq = [], [], [], []
    r = 0
    for bid in buses:
        bat = net.bus(bid).battery
        if bat is None:
            continue
        keep = 1.0 - bat.eta_self
        for t in range(T):
            G_rows += [r, r, r]
            G_cols += [cols[("soc", bid, t)], cols[("psc", bid, t)], cols[("psd", bid, t)]]
            G_vals += [1.0, -bat.eta_c, 1.0 / bat.eta_d]
            if t == 0:
                b_eq.append(keep * bat.b0)
            else:
                G_rows.append(r); G_cols.append(cols[("soc", bid, t - 1)]); G_vals.append(-keep)
                b_eq.append(0.0)
            r += 1
    prob = SimpleNamespace(
        c=np.asarray(cost), lb=np.asarray(lb, dtype=float), ub=np.asarray(ub, dtype=float),
        H=sp.csr_matrix((H_vals, (H_rows, H_cols)), shape=(T, n)), d=np.asarray(d),
        G=sp.csr_matrix((G_vals, (G_rows, G_cols)), shape=(r, n)), b=np.asarray(b_eq))
    try:
        sol = solve_centralized(prob, tol=1e-9)
    except InfeasibleError as exc:
        raise InfeasibleError(f"agent {list(buses)}: {exc}", exc.rows) from None
    x = sol.x
    served = fixed_load.copy()
    for t, key, L in flex_rows:
        served[t] += x[cols[key]]
    net_kw = served - pv
    battery = {}
    for bid in buses:
        bat = net.bus(bid).battery
        if bat is None:
            continue
        psc = np.array([x[cols[("psc", bid, t)]] for t in range(T)])
        psd = np.array([x[cols[("psd", bid, t)]] for t in range(T)])
        psc, psd, soc = repair_battery(bat, psc, psd)
        battery[bid] = (psc, psd, soc)
        net_kw = net_kw + psc - psd
    return AgentSolution(tuple(buses), float(np.max(net_kw)), net_kw, battery, served, pv)


def run_local(net, profiles, clusters=None) -> ScenarioResult:
    """Scenario B: independent peak-shaving agents, summed at the PCC."""
    groups = agents_of(net, clusters)
    T = net.horizon
    pcc = np.zeros(T)
    soc, bat_kw, objectives, flows = {}, {}, {}, {}
    times = []
    for g in groups:
        t0 = time.perf_counter()
        sol = solve_agent(net, profiles, g)
        times.append(time.perf_counter() - t0)
        pcc += sol.net_kw
        objectives[",".join(map(str, g))] = sol.objective
        for bid, (psc, psd, s) in sol.battery.items():
            soc[bid] = s
            bat_kw[bid] = psd - psc
            flows[bid] = (psc, psd)
    return ScenarioResult("B", pcc, soc, bat_kw, float(np.mean(times)), objectives,
                          {"agents": len(groups)}, flows)


# --------------------------------------------------------------------------- scenario C

def build_problem(net, profiles, config: SolverConfig | None = None, objective="pcc_ramp"):
    config = config or SolverConfig()
    bounds = preprocess_bounds(net, profiles, method=config.bounds)
    return build_ci_opf(net, profiles, bounds, objective=objective)


def extract_dispatch(net, profiles, prob, x):
    """Device dispatch from a CI-OPF point, repaired into the device boxes.

    Returns ``(pcc_kw, soc, battery_kw, flows)`` where ``pcc_kw`` is the loss-exclusive
    net load implied by the repaired dispatch.
    """
    T = net.horizon
    base = prob.s_base_kva
    served = np.zeros(T)
    pv = profiles.total_pv()
    soc, bat_kw, flows = {}, {}, {}
    net_bat = np.zeros(T)
    for b in net.buses:
        if b.id == net.pcc.id:
            continue
        alpha = _flex_alpha(profiles, b, T)
        for ph in b.phases:
            L = profiles.load_p.get((b.id, ph), np.zeros(T))
            if is_prosumer(b):
                pl = prob.series(x, "pl", b.id, ph) * base
            else:
                pl = -prob.series(x, "p", b.id, ph) * base
            served += np.clip(pl, L * (1 - alpha), L)
        if b.battery is not None:
            psc = prob.series(x, "psc", b.id) * base
            psd = prob.series(x, "psd", b.id) * base
            psc, psd, s = repair_battery(b.battery, psc, psd)
            soc[b.id] = s
            bat_kw[b.id] = psd - psc
            flows[b.id] = (psc, psd)
            net_bat += psd - psc
    return served - pv - net_bat, soc, bat_kw, flows


def run_distributed(net, profiles, config: SolverConfig | None = None,
                    trace_path=None) -> ScenarioResult:
    """Scenario C: NST-PAC on the relaxed CI-OPF with the PCC ramp objective."""
    config = config or SolverConfig()
    prob = build_problem(net, profiles, config)
    work, eqb = equilibrate(prob) if config.scale else (prob, None)
    atoms, profile = decompose(work, config.strategy, net.clusters)
    gains = GainSchedule.default(atoms, rho=config.rho, gamma=config.gamma,
                                 floor=config.floor, plain=config.plain, cap=config.cap)
    solver = NSTPAC(atoms, profile, gains, eps_inner=config.eps_inner, workers=config.workers,
                    scaling=eqb)
    res = solver.run(StopRule(config.max_iter, config.eps_primal, config.eps_coord))
    if trace_path is not None:
        try:
            with open(trace_path, "w", newline="") as fh:
                write_trace(res.trace, fh)
        except OSError as exc:
            raise DataIOError(f"{trace_path}: {exc}") from exc
    pcc, soc, bat_kw, flows = extract_dispatch(net, profiles, prob, res.x)
    model_pcc = pcc_power(prob, res.x) * prob.s_base_kva
    info = {
        "agents": len(atoms),
        "rounds": res.rounds,
        "converged": res.converged,
        "eq_residual": res.eq_residual,
        "coord_residual": res.coord_residual,
        "relaxed_objective_kw": res.objective * prob.s_base_kva,
        "model_pcc_kw": model_pcc.tolist(),
    }
    return ScenarioResult("C", pcc, soc, bat_kw, res.mean_atom_time,
                          {"pcc_ramp_kw": res.objective * prob.s_base_kva}, info, flows)


# --------------------------------------------------------------------------- comparison

def peak_hour(base: ScenarioResult) -> int:
    """Hour ending the largest baseline up-ramp."""
    return int(np.argmax(np.diff(base.pcc_kw))) + 1


def compare(results, baseline="A") -> dict:
    """Table of total ramping, reduction against ``baseline`` and runtimes.

    Percentages are recomputed from the PCC series every call.
    """
    results = list(results)
    if len(results) < 2:
        raise ValidationError("compare needs at least two results")
    by_tag = {r.tag: r for r in results}
    if baseline not in by_tag:
        raise ValidationError(f"baseline scenario {baseline!r} missing")
    base = by_tag[baseline]
    if any(r.horizon != base.horizon for r in results):
        raise ValidationError("results have mismatched horizons")
    h = peak_hour(base)
    base_peak = abs(base.pcc_kw[h] - base.pcc_kw[h - 1])
    rows = []
    for r in results:
        peak = abs(r.pcc_kw[h] - r.pcc_kw[h - 1])
        rows.append({
            "scenario": r.tag,
            "total_ramp_kw": r.total_ramp,
            "ramp_reduction_pct": ramp_reduction(base.total_ramp, r.total_ramp),
            "peak_hour": h,
            "peak_ramp_kw": float(peak),
            "peak_ramp_reduction_pct": ramp_reduction(float(base_peak), float(peak)),
            "mean_agent_time_s": r.mean_agent_time,
            "agents": r.info.get("agents", 0),
        })
    return {"baseline": baseline, "horizon": base.horizon, "rows": rows}


def soc_sweep(net, profiles, cases=("min", "mid", "full"), config=None, b0_cases=None):
    """Scenario C for each initial-SOC case.

    ``b0_cases`` maps case names to per-battery initial SOC (kWh) in ascending
    battery-bus order; defaults to :data:`SOC_CASES`.
    """
    b0_cases = b0_cases or SOC_CASES
    bat_buses = [b.id for b in net.buses if b.battery is not None]
    out = {}
    for case in cases:
        if case not in b0_cases:
            raise ValidationError(f"unknown SOC case {case!r}")
        vals = b0_cases[case]
        if len(vals) != len(bat_buses):
            raise ValidationError(
                f"SOC case {case!r} lists {len(vals)} batteries, network has {len(bat_buses)}")
        case_net = net.with_battery_b0(dict(zip(bat_buses, vals)))
        res = run_distributed(case_net, profiles, config)
        res.info["soc_case"] = case
        res.info["final_soc_kwh"] = {b: float(s[-1]) for b, s in res.soc_kwh.items()}
        out[case] = res
    return out


# --------------------------------------------------------------------------- output

def _fmt(v):
    return repr(float(v))


def write_results(results, out_dir, prefix=""):
    """Write ``pcc.csv``, ``ramp.csv`` and ``soc.csv``; returns the paths."""
    out = Path(out_dir)
    results = list(results)
    T = results[0].horizon
    paths = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        p = out / f"{prefix}pcc.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["hour"] + [f"pcc_kw_{r.tag}" for r in results])
            for t in range(T):
                w.writerow([t] + [_fmt(r.pcc_kw[t]) for r in results])
        paths.append(p)
        p = out / f"{prefix}ramp.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["hour"] + [f"ramp_kw_{r.tag}" for r in results])
            for t in range(1, T):
                w.writerow([t] + [_fmt(r.ramp_kw[t - 1]) for r in results])
        paths.append(p)
        p = out / f"{prefix}soc.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "battery", "hour", "soc_kwh"])
            for r in results:
                for bus in sorted(r.soc_kwh):
                    for t in range(T):
                        w.writerow([r.tag, bus, t, _fmt(r.soc_kwh[bus][t])])
        paths.append(p)
    except OSError as exc:
        raise DataIOError(f"{out}: {exc}") from exc
    return paths


def summary_json(report, results):
    """JSON-serialisable summary; timing fields are named ``*_time_s``."""
    doc = {"report": report, "scenarios": {}}
    for r in results:
        doc["scenarios"][r.tag] = {
            "total_ramp_kw": r.total_ramp,
            "pcc_kw": r.pcc_kw.tolist(),
            "final_soc_kwh": {str(b): float(s[-1]) for b, s in sorted(r.soc_kwh.items())},
            "objectives": r.objectives,
            "info": r.info,
            "mean_agent_time_s": r.mean_agent_time,
        }
    return doc
