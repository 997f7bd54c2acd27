"""Small hand-built feeders used across the test suite."""

import numpy as np

from duckpac.grid import network_from_dict


def z(re, im):
    return {"re": re, "im": im}


def zmat(block):
    return [[z(v.real, v.imag) for v in row] for row in np.asarray(block, dtype=complex)]


# self / mutual impedance of a generic overhead 3-phase segment (ohm)
Z3 = np.array([[0.35 + 0.75j, 0.08 + 0.30j, 0.08 + 0.25j],
               [0.08 + 0.30j, 0.35 + 0.75j, 0.08 + 0.30j],
               [0.08 + 0.25j, 0.08 + 0.30j, 0.35 + 0.75j]])


def two_bus(T=1, load_kw=40.0, z_ohm=0.3 + 0.6j, pf=0.95):
    """PCC feeding one load; ``load_kw`` is a constant or an hourly series."""
    loads = [float(load_kw)] * T if np.isscalar(load_kw) else [float(v) for v in load_kw]
    T = len(loads)
    doc = {
        "name": "two-bus",
        "horizon": T,
        "base": {"v_ln_kv": 2.4, "s_kva_per_phase": 100.0},
        "buses": [{"id": 1, "phases": "a", "kind": "pcc"},
                  {"id": 2, "phases": "a", "load_ref": "L2"}],
        "lines": [{"from": 1, "to": 2, "phases": "a", "z_ohm": z(z_ohm.real, z_ohm.imag)}],
        "profiles": [{"id": "L2", "p_kw": {"a": loads}, "pf": pf}],
    }
    return network_from_dict(doc)


FOUR_BUS_LOAD = {
    2: [30.0, 34.0, 45.0, 38.0],
    3: [20.0, 26.0, 40.0, 30.0],
    4: [25.0, 22.0, 36.0, 44.0],
}


def four_bus(T=4, battery=True, pv=True, flex=True, b0=20.0, eta=0.95):
    """Single-phase path 1-2-3-4 with a battery at 3, PV at 4, flex load at 2."""
    return network_from_dict(four_bus_doc(T, battery, pv, flex, b0, eta))


def four_bus_doc(T=4, battery=True, pv=True, flex=True, b0=20.0, eta=0.95):
    loads = {k: (v * ((T + 3) // 4))[:T] for k, v in FOUR_BUS_LOAD.items()}
    devices = []
    if battery:
        devices.append({"bus": 3, "type": "battery", "p_sc_max_kw": 12.0, "p_sd_max_kw": 12.0,
                        "b_max_kwh": 40.0, "b_min_kwh": 4.0, "b0_kwh": b0,
                        "eta_c": eta, "eta_d": eta, "eta_self": 0.0})
    if pv:
        devices.append({"bus": 4, "type": "pv", "capacity_kw": {"a": 20.0}, "pf_min": 0.8})
    if flex:
        devices.append({"bus": 2, "type": "flex", "alpha_dr": [0.1] * T})
    doc = {
        "name": "four-bus",
        "horizon": T,
        "base": {"v_ln_kv": 2.4, "s_kva_per_phase": 100.0},
        "buses": [{"id": 1, "phases": "a", "kind": "pcc"}]
        + [{"id": i, "phases": "a", "load_ref": f"L{i}"} for i in (2, 3, 4)],
        "lines": [{"from": i, "to": i + 1, "phases": "a", "z_ohm": z(0.3, 0.6)}
                  for i in (1, 2, 3)],
        "devices": devices,
        "profiles": [{"id": f"L{i}", "p_kw": {"a": loads[i]}} for i in (2, 3, 4)],
    }
    return doc


def eight_bus(T=4):
    """Unbalanced feeder: 3-phase trunk 1-2-3-4, laterals 3-5-6 (a) and 4-7 (bc)-8 (b)."""
    def prof(i, phases, level):
        shape = [1.0, 1.15, 1.4, 1.2, 0.9, 1.05][:T] if T <= 6 else list(
            1 + 0.3 * np.sin(np.arange(T) / 3))
        return {"id": f"L{i}", "p_kw": {p: [level * s for s in shape] for p in phases}}

    doc = {
        "name": "eight-bus",
        "horizon": T,
        "base": {"v_ln_kv": 7.2, "s_kva_per_phase": 500.0},
        "buses": [
            {"id": 1, "phases": "abc", "kind": "pcc"},
            {"id": 2, "phases": "abc", "load_ref": "L2"},
            {"id": 3, "phases": "abc", "load_ref": "L3", "kind": "commercial"},
            {"id": 4, "phases": "abc", "load_ref": "L4"},
            {"id": 5, "phases": "a", "load_ref": "L5"},
            {"id": 6, "phases": "a", "load_ref": "L6"},
            {"id": 7, "phases": "bc", "load_ref": "L7"},
            {"id": 8, "phases": "b", "load_ref": "L8"},
        ],
        "lines": [
            {"from": 1, "to": 2, "phases": "abc", "z_ohm": zmat(Z3)},
            {"from": 2, "to": 3, "phases": "abc", "z_ohm": zmat(Z3 * 1.5)},
            {"from": 3, "to": 4, "phases": "abc", "z_ohm": zmat(Z3)},
            {"from": 3, "to": 5, "phases": "a", "z_ohm": z(0.6, 0.9)},
            {"from": 5, "to": 6, "phases": "a", "z_ohm": z(0.5, 0.7)},
            {"from": 4, "to": 7, "phases": "bc", "z_ohm": zmat(Z3[1:, 1:] * 1.2)},
            {"from": 7, "to": 8, "phases": "b", "z_ohm": z(0.7, 0.8)},
        ],
        "devices": [
            {"bus": 4, "type": "battery", "p_sc_max_kw": 60.0, "p_sd_max_kw": 60.0,
             "b_max_kwh": 200.0, "b_min_kwh": 20.0, "b0_kwh": 100.0,
             "eta_c": 0.95, "eta_d": 0.95, "eta_self": 0.001},
            {"bus": 6, "type": "pv", "capacity_kw": {"a": 40.0}, "pf_min": 0.8},
            {"bus": 7, "type": "flex", "alpha_dr": [0.15] * T},
        ],
        "profiles": [prof(2, "abc", 40.0), prof(3, "abc", 60.0), prof(4, "abc", 35.0),
                     prof(5, "a", 20.0), prof(6, "a", 25.0), prof(7, "bc", 30.0),
                     prof(8, "b", 15.0)],
    }
    return network_from_dict(doc)
