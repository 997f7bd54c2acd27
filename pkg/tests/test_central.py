import dataclasses
from types import SimpleNamespace

import numpy as np
import pytest
import scipy.sparse as sp

from duckpac.bounds import preprocess_bounds
from duckpac.central import infeasible_rows, solve_centralized
from duckpac.errors import InfeasibleError
from duckpac.grid import network_from_dict
from duckpac.opf import build_ci_opf
from duckpac.powerflow import backward_forward_sweep, injections_from_profiles
from duckpac.profiles import profiles_from_network
from feeders import FOUR_BUS_LOAD, z


def _lp(c, lb, ub, G=None, b=(), H=None, d=()):
    n = len(c)
    return SimpleNamespace(
        c=np.asarray(c, float), lb=np.asarray(lb, float), ub=np.asarray(ub, float),
        G=sp.csr_matrix(G if G is not None else np.zeros((0, n))), b=np.asarray(b, float),
        H=sp.csr_matrix(H if H is not None else np.zeros((0, n))), d=np.asarray(d, float))


def test_one_dimensional():
    sol = solve_centralized(_lp([1.0], [3.0], [np.inf]))
    assert sol.x[0] == pytest.approx(3.0)


def test_abs_epigraph():
    # x = (a, b, r): min r, r >= a - b, r >= b - a, a = 5, b in [0, 4]
    H = [[1, -1, -1], [-1, 1, -1]]
    sol = solve_centralized(_lp([0, 0, 1], [5, 0, 0], [5, 4, np.inf], H=H, d=[0, 0]))
    assert sol.objective == pytest.approx(1.0)
    assert sol.x[1] == pytest.approx(4.0)


def test_infeasible_reports_rows():
    # x >= 2 and x <= 1 written as rows, plus an unrelated row
    H = [[-1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    prob = _lp([1, 0], [-10, -10], [10, 10], H=H, d=[-2, 1, 5])
    with pytest.raises(InfeasibleError) as err:
        solve_centralized(prob)
    assert sorted(err.value.rows) == [0, 1]
    assert infeasible_rows(prob) == [0, 1]


def test_crossed_bounds():
    with pytest.raises(InfeasibleError):
        solve_centralized(_lp([1.0], [2.0], [1.0]))


def _storage_feeder(p_max=3.0):
    loads = {k: v[:2] for k, v in FOUR_BUS_LOAD.items()}
    return network_from_dict({
        "name": "four-bus-storage",
        "horizon": 2,
        "base": {"v_ln_kv": 2.4, "s_kva_per_phase": 100.0},
        "buses": [{"id": 1, "phases": "a", "kind": "pcc"}]
        + [{"id": i, "phases": "a", "load_ref": f"L{i}"} for i in (2, 3, 4)],
        "lines": [{"from": i, "to": i + 1, "phases": "a", "z_ohm": z(0.3, 0.6)} for i in (1, 2, 3)],
        "devices": [{"bus": 3, "type": "battery", "p_sc_max_kw": p_max, "p_sd_max_kw": p_max,
                     "b_max_kwh": 40.0, "b_min_kwh": 4.0, "b0_kwh": 20.0,
                     "eta_c": 0.95, "eta_d": 0.95}],
        "profiles": [{"id": f"L{i}", "p_kw": {"a": loads[i]}} for i in (2, 3, 4)],
    })


def _fixed_control(prob, net, t, u):
    """Copy of ``prob`` with the hour-``t`` battery output fixed to ``u`` kW."""
    lb, ub = prob.lb.copy(), prob.ub.copy()
    base = net.s_base_kva
    for q, v in (("psc", max(-u, 0.0)), ("psd", max(u, 0.0))):
        k = prob.index[(q, 3, "", t)]
        lb[k] = ub[k] = v / base
    return dataclasses.replace(prob, lb=lb, ub=ub)


def _pcc_range(prob, net, t, u):
    """Relaxed PCC active power interval (kW) at hour ``t`` for control ``u``."""
    fixed = _fixed_control(prob, net, t, u)
    c = np.zeros(prob.n)
    c[prob.index.select("p", prob.pcc, hour=t)] = 1.0
    lo = solve_centralized(dataclasses.replace(fixed, c=c)).objective
    hi = -solve_centralized(dataclasses.replace(fixed, c=-c)).objective
    return lo * net.s_base_kva, hi * net.s_base_kva


def test_four_bus_matches_brute_force():
    p_max = 3.0
    net = _storage_feeder(p_max)
    prof = profiles_from_network(net)
    bounds = preprocess_bounds(net, prof, method="sweep")
    prob = build_ci_opf(net, prof, bounds)
    lp = solve_centralized(prob).objective * net.s_base_kva

    # controls on a 1% grid; per hour the relaxed PCC power is an interval,
    # and the least ramp for a control pair is the gap between two intervals
    grid = np.linspace(-p_max, p_max, 101)
    free = build_ci_opf(net, prof, bounds, objective="none")
    rng = np.array([[_pcc_range(free, net, t, u) for u in grid] for t in range(2)])
    lo0, hi0 = rng[0, :, 0][:, None], rng[0, :, 1][:, None]
    lo1, hi1 = rng[1, :, 0][None, :], rng[1, :, 1][None, :]
    brute = np.maximum(0.0, np.maximum(lo1 - hi0, lo0 - hi1)).min()
    assert brute > 0.5
    assert lp == pytest.approx(brute, rel=0.01)


def test_four_bus_relaxation_below_ac():
    p_max = 3.0
    net = _storage_feeder(p_max)
    prof = profiles_from_network(net)
    prob = build_ci_opf(net, prof, preprocess_bounds(net, prof, method="sweep"))
    lp = solve_centralized(prob).objective * net.s_base_kva
    grid = np.linspace(-p_max, p_max, 101)
    pcc = np.empty((2, len(grid)))
    for t in range(2):
        for k, u in enumerate(grid):
            s = injections_from_profiles(net, prof, t, p_extra={(3, "a"): u})
            V, I, _ = backward_forward_sweep(net, s)
            pcc[t, k] = (V[(1, "a")] * np.conj(I[(1, "a")])).real * net.s_base_kva
    ac = np.abs(pcc[1][None, :] - pcc[0][:, None]).min()
    assert lp <= ac + 1e-9
