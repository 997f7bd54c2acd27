"""Regenerate src/duckpac/data/ieee34-like.json.

Topology, phasing, segment lengths and spot/distributed loads follow the public
IEEE 34-node test feeder description. Buses are renumbered 1..34 (800 -> 1).
Distributed segment loads are lumped at the downstream bus. Regulators and the
substation transformer become short impedances; line impedances are scaled so
the unregulated peak-hour voltage drop stays near 5 %.
"""

import json
import sys
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "duckpac" / "data" / "ieee34-like.json"

ORDER = [800, 802, 806, 808, 810, 812, 814, 850, 816, 818, 820, 822, 824, 826, 828, 830,
         854, 856, 852, 832, 858, 888, 890, 864, 834, 844, 846, 842, 848, 860, 836, 840,
         862, 838]
NUM = {old: i + 1 for i, old in enumerate(ORDER)}

# (from, to, phases, length ft); "reg"/"xfmr" mark non-line elements
SEGMENTS = [
    (800, 802, "abc", 2580), (802, 806, "abc", 1730), (806, 808, "abc", 32230),
    (808, 810, "b", 5804), (808, 812, "abc", 37500), (812, 814, "abc", 29730),
    (814, 850, "abc", "reg"), (850, 816, "abc", 310), (816, 818, "a", 1710),
    (818, 820, "a", 48150), (820, 822, "a", 13740), (816, 824, "abc", 10210),
    (824, 826, "b", 3030), (824, 828, "abc", 840), (828, 830, "abc", 20440),
    (830, 854, "abc", 520), (854, 856, "b", 23330), (854, 852, "abc", 36830),
    (852, 832, "abc", "reg"), (832, 888, "abc", "xfmr"), (888, 890, "abc", 10560),
    (832, 858, "abc", 4900), (858, 864, "a", 1620), (858, 834, "abc", 5830),
    (834, 842, "abc", 280), (842, 844, "abc", 1350), (844, 846, "abc", 3640),
    (846, 848, "abc", 530), (834, 860, "abc", 2020), (860, 836, "abc", 2680),
    (836, 840, "abc", 860), (836, 862, "abc", 280), (862, 838, "b", 4860),
]

# kW per phase: spot loads plus distributed loads lumped at the segment end
LOADS = {
    806: {"b": 30, "c": 25}, 810: {"b": 16}, 820: {"a": 34}, 822: {"a": 135},
    824: {"b": 5}, 826: {"b": 40}, 828: {"c": 4}, 830: {"a": 17, "b": 10, "c": 25},
    856: {"b": 4}, 858: {"a": 7, "b": 2, "c": 6}, 864: {"a": 2},
    834: {"a": 4, "b": 15, "c": 13}, 860: {"a": 36, "b": 40, "c": 130},
    836: {"a": 30, "b": 10, "c": 42}, 840: {"a": 27, "b": 31, "c": 9},
    838: {"b": 28}, 842: {"a": 9}, 844: {"a": 135, "b": 135, "c": 135},
    846: {"b": 25, "c": 20}, 848: {"a": 20, "b": 43, "c": 20},
    890: {"a": 150, "b": 150, "c": 150},
}
COMMERCIAL = {844, 858}    # hospital, primary school
FLEX = {806, 810, 820, 826, 830, 836, 838, 840, 846, 848, 856, 864}
PV_BUSES = {806, 810, 820, 822, 824, 826, 830, 834, 836, 838, 840, 846, 848, 856, 858,
            860, 864}

# ohm / mile
Z_3PH = np.array([[1.3368 + 1.3343j, 0.2101 + 0.5779j, 0.2130 + 0.5015j],
                  [0.2101 + 0.5779j, 1.3238 + 1.3569j, 0.2066 + 0.4591j],
                  [0.2130 + 0.5015j, 0.2066 + 0.4591j, 1.3294 + 1.3471j]])
Z_1PH = 2.7995 + 1.4855j
LINE_SCALE = 0.25        # calibrated for ~5 % drop without regulators
Z_REG = 0.01 + 0.02j     # ohm, per phase
Z_XFMR = 0.19 + 1.08j    # ohm, 24.9 kV side, per phase

BATTERIES = [  # (bus, charge kW, discharge kW, b_max kWh, b_min kWh, b0 kWh)
    (6, 120.0, 120.0, 450.0, 45.0, 120.0),
    (19, 200.0, 200.0, 540.0, 0.0, 400.0),
    (27, 185.0, 185.0, 800.0, 160.0, 400.0),
]
CLUSTERS = [[3, 4, 5, 6], [19, 20, 21], [26, 27], [7, 8], [22, 23]]


def cz(v):
    return {"re": round(float(v.real), 6), "im": round(float(v.imag), 6)}


def build():
    T = 24
    buses = []
    profiles = []
    devices = []
    phases_of = {800: "abc"}
    for f, t, ph, _ in SEGMENTS:
        phases_of[t] = ph
    for old in ORDER:
        num = NUM[old]
        ph = phases_of[old]
        b = {"id": num, "phases": ph}
        if old == 800:
            b["kind"] = "pcc"
        else:
            b["kind"] = "commercial" if old in COMMERCIAL else "residential"
        if old in LOADS:
            ref = f"L{num}"
            b["load_ref"] = ref
            # stored flat at the datasheet level; the generator applies the day shape
            profiles.append({"id": ref, "p_kw": {p: [float(v)] * T for p, v in LOADS[old].items()},
                             "pf": 0.95})
        buses.append(b)
        if old in PV_BUSES:
            load = LOADS.get(old, {})
            cap = {p: float(max(load.get(p, 0.0), 10.0)) for p in ph}
            devices.append({"bus": num, "type": "pv", "capacity_kw": cap, "pf_min": 0.8})
        if old in FLEX:
            devices.append({"bus": num, "type": "flex"})
    for bus, psc, psd, bmax, bmin, b0 in BATTERIES:
        devices.append({"bus": bus, "type": "battery", "p_sc_max_kw": psc, "p_sd_max_kw": psd,
                        "b_max_kwh": bmax, "b_min_kwh": bmin, "b0_kwh": b0,
                        "eta_c": 0.95, "eta_d": 0.95, "eta_self": 0.001})
    lines = []
    for f, t, ph, length in SEGMENTS:
        idx = ["abc".index(p) for p in ph]
        if length == "reg":
            Z = np.diag([Z_REG] * len(ph))
        elif length == "xfmr":
            Z = np.diag([Z_XFMR] * len(ph))
        elif len(ph) == 1:
            Z = np.array([[Z_1PH]]) * length / 5280.0 * LINE_SCALE
        else:
            Z = Z_3PH[np.ix_(idx, idx)] * length / 5280.0 * LINE_SCALE
        zo = cz(Z[0, 0]) if len(ph) == 1 else [[cz(v) for v in row] for row in Z]
        lines.append({"from": NUM[f], "to": NUM[t], "phases": ph, "z_ohm": zo})
    return {
        "name": "ieee34-like",
        "horizon": T,
        "base": {"v_ln_kv": 14.376, "s_kva_per_phase": 1000.0, "v_pcc_pu": 1.05},
        "buses": buses,
        "lines": lines,
        "devices": devices,
        "profiles": profiles,
        "clusters": CLUSTERS,
        "ieee_node": {str(NUM[o]): o for o in ORDER},
    }


if __name__ == "__main__":
    doc = build()
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else OUT
    out.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {out}")
