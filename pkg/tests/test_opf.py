import dataclasses

import numpy as np
import pytest

from duckpac.bounds import preprocess_bounds
from duckpac.central import solve_centralized
from duckpac.errors import ValidationError
from duckpac.grid import network_from_dict
from duckpac.opf import build_ci_opf, export_problem, pcc_power, read_exported
from duckpac.powerflow import backward_forward_sweep, injections_from_profiles
from duckpac.profiles import profiles_from_network
from acpoint import embed, two_bus_ac
from feeders import eight_bus, four_bus, two_bus, z


def _build(net, method="sweep", objective="pcc_ramp", flexible=True):
    prof = profiles_from_network(net)
    bd = preprocess_bounds(net, prof, method=method)
    return build_ci_opf(net, prof, bd, objective=objective, flexible=flexible), prof


def _battery_net(pv_pf=None):
    devices = [{"bus": 2, "type": "battery", "p_sc_max_kw": 10, "p_sd_max_kw": 10,
                "b_max_kwh": 50, "b_min_kwh": 0, "b0_kwh": 10,
                "eta_c": 1.0, "eta_d": 1.0, "eta_self": 0.0}]
    if pv_pf is not None:
        devices.append({"bus": 2, "type": "pv", "capacity_kw": {"a": 8.0}, "pf_min": pv_pf})
    return network_from_dict({
        "horizon": 1,
        "base": {"v_ln_kv": 2.4, "s_kva_per_phase": 100.0},
        "buses": [{"id": 1, "phases": "a", "kind": "pcc"},
                  {"id": 2, "phases": "a", "load_ref": "L"}],
        "lines": [{"from": 1, "to": 2, "phases": "a", "z_ohm": z(0.3, 0.6)}],
        "devices": devices,
        "profiles": [{"id": "L", "p_kw": {"a": [20.0]}}],
    })


@pytest.mark.parametrize("method", ["box", "sweep"])
def test_two_bus_ac_point_feasible(method):
    net = two_bus(load_kw=40.0)
    prob, prof = _build(net, method=method, objective="none")
    zpu = net.lines[0].z_ohm[0, 0] / net.z_base
    s_load = complex(prof.load_p[(2, "a")][0], prof.load_q[(2, "a")][0]) / net.s_base_kva
    v2, i_line = two_bus_ac(net.v_pcc_pu, zpu, s_load)
    V = {(1, "a"): complex(net.v_pcc_pu), (2, "a"): v2}
    I = {(1, "a"): i_line, (2, "a"): -i_line}
    F = {(0, "a"): i_line}
    x = embed(prob, net, prof, [(V, I, F)])
    assert prob.is_feasible(x, tol=1e-10), prob.residuals(x)


def test_two_bus_relaxation_reproduces_load():
    net = two_bus(load_kw=40.0)
    prob, prof = _build(net, objective="none")
    sol = solve_centralized(prob)
    p2 = prob.value(sol.x, "p", 2, "a", 0) * net.s_base_kva
    assert p2 == pytest.approx(-prof.load_p[(2, "a")][0], rel=1e-9)


def test_eight_bus_ac_points_feasible():
    net = eight_bus()
    prob, prof = _build(net, flexible=True)
    states = [backward_forward_sweep(net, injections_from_profiles(net, prof, t))
              for t in range(net.horizon)]
    x = embed(prob, net, prof, states)
    assert prob.is_feasible(x, tol=1e-9), prob.residuals(x)


def test_lossless_battery_row():
    net = _battery_net()
    prob, _ = _build(net, objective="none")
    base = net.s_base_kva
    lb, ub = prob.lb.copy(), prob.ub.copy()
    i = prob.index[("psc", 2, "", 0)]
    lb[i] = ub[i] = 5.0 / base
    j = prob.index[("psd", 2, "", 0)]
    lb[j] = ub[j] = 0.0
    sol = solve_centralized(dataclasses.replace(prob, lb=lb, ub=ub))
    assert prob.value(sol.x, "soc", 2) * base == pytest.approx(15.0, abs=1e-9)


def test_unity_pf_forces_zero_q():
    net = _battery_net(pv_pf=1.0)
    prob, _ = _build(net, objective="none")
    k = prob.index[("qg", 2, "a", 0)]
    for sense in (1.0, -1.0):
        c = np.zeros(prob.n)
        c[k] = sense
        sol = solve_centralized(dataclasses.replace(prob, c=c))
        assert abs(sol.x[k]) < 1e-12


def test_pcc_with_device_rejected():
    doc = {"horizon": 2,
           "buses": [{"id": 1, "phases": "a", "kind": "pcc"}, {"id": 2, "phases": "a"}],
           "lines": [{"from": 1, "to": 2, "phases": "a", "z_ohm": z(0.1, 0.2)}],
           "devices": [{"bus": 1, "type": "pv", "capacity_kw": {"a": 1.0}}]}
    net = network_from_dict(doc)
    with pytest.raises(ValidationError, match="pcc"):
        _build(net)


def test_ramp_needs_two_hours():
    with pytest.raises(ValidationError):
        _build(two_bus(load_kw=40.0))


def test_counts_two_bus():
    # 10 nodal variables per bus-phase, 2 flow components, 2 Ohm rows,
    # 4 KCL/power rows per bus-phase, 16 planes per bus-phase
    prob, _ = _build(two_bus(load_kw=40.0), objective="none")
    c = prob.counts()
    assert (c["n"], c["m_eq"], c["m_ineq"]) == (2 * 10 + 2, 2 + 2 * 4, 2 * 16)


def test_counts_regression():
    expected = {
        "four": (223, 108, 270),
        "eight": (847, 420, 1102),
    }
    for name, f in (("four", four_bus), ("eight", eight_bus)):
        c = _build(f())[0].counts()
        assert (c["n"], c["m_eq"], c["m_ineq"]) == expected[name]
        assert c["ineq:mce"] == 16 * c["var:vr"]
        assert c["eq:soc"] == c["var:soc"]


def test_mce_rows_per_product():
    prob, _ = _build(four_bus())
    assert prob.counts()["ineq:mce"] == 4 * 4 * 4 * 4  # hours x bus-phases x products x planes


def test_pcc_power_is_sum_of_phases():
    net = eight_bus()
    prob, _ = _build(net)
    sol = solve_centralized(prob)
    total = pcc_power(prob, sol.x)
    parts = sum(pcc_power(prob, sol.x, phases=(ph,)) for ph in net.pcc.phases)
    np.testing.assert_allclose(total, parts)


def test_ramp_objective_matches_series():
    net = four_bus()
    prob, _ = _build(net)
    sol = solve_centralized(prob)
    p = pcc_power(prob, sol.x)
    assert sol.objective == pytest.approx(np.abs(np.diff(p)).sum(), abs=1e-8)


def test_export_round_trip(tmp_path):
    prob, _ = _build(four_bus())
    path = tmp_path / "prob.txt"
    export_problem(prob, path)
    c, lb, ub, G, b, H, d = read_exported(path)
    np.testing.assert_array_equal(c, prob.c)
    np.testing.assert_array_equal(lb, prob.lb)
    np.testing.assert_array_equal(ub, prob.ub)
    assert (G != prob.G).nnz == 0 and (H != prob.H).nnz == 0
    np.testing.assert_array_equal(b, prob.b)
    np.testing.assert_array_equal(d, prob.d)
