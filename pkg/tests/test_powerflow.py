import numpy as np
import pytest

from duckpac.errors import IterationLimitError
from duckpac.powerflow import backward_forward_sweep, injections_from_profiles
from duckpac.profiles import profiles_from_network
from acpoint import two_bus_ac
from feeders import eight_bus, two_bus


def test_two_bus_matches_fixed_point():
    net = two_bus(load_kw=40.0)
    prof = profiles_from_network(net)
    s = injections_from_profiles(net, prof, 0)
    V, I, F = backward_forward_sweep(net, s)
    zpu = net.lines[0].z_ohm[0, 0] / net.z_base
    v2, i_line = two_bus_ac(net.v_pcc_pu, zpu, -s[(2, "a")])
    assert V[(2, "a")] == pytest.approx(v2, abs=1e-12)
    assert F[(0, "a")] == pytest.approx(i_line, abs=1e-12)


def test_eight_bus_physics():
    net = eight_bus()
    prof = profiles_from_network(net)
    s = injections_from_profiles(net, prof, 2)
    V, I, F = backward_forward_sweep(net, s)
    zpu = [ln.z_ohm / net.z_base for ln in net.lines]
    for k, ln in enumerate(net.lines):
        f = np.array([F[(k, ph)] for ph in ln.phases])
        drop = zpu[k] @ f
        for i, ph in enumerate(ln.phases):
            assert V[(ln.from_bus, ph)] - V[(ln.to_bus, ph)] == pytest.approx(drop[i], abs=1e-11)
    for bp, si in s.items():
        if bp[0] != net.pcc.id:
            assert V[bp] * np.conj(I[bp]) == pytest.approx(si, abs=1e-11)
    # KCL at every bus-phase
    for bp, i in I.items():
        total = i
        for k, ln in enumerate(net.lines):
            if bp[1] in ln.phases:
                if ln.from_bus == bp[0]:
                    total -= F[(k, bp[1])]
                elif ln.to_bus == bp[0]:
                    total += F[(k, bp[1])]
        assert abs(total) < 1e-11


def test_iteration_limit():
    net = two_bus(load_kw=40.0)
    s = {(2, "a"): complex(-40.0, -10.0)}  # far beyond the line's transfer limit
    with pytest.raises(IterationLimitError):
        backward_forward_sweep(net, s, max_iter=50)
