import numpy as np
import pytest
import scipy.sparse as sp

from duckpac.bounds import preprocess_bounds
from duckpac.central import solve_centralized
from duckpac.decomposition import Atom, copy_incidence, decompose
from duckpac.errors import StaleMessageError, ValidationError
from duckpac.opf import build_ci_opf
from duckpac.pac import (HAT_A, AtomQP, GainSchedule, Message, NSTPAC, StopRule, Transport,
                         atomic_lagrangian, dual_step, extrapolate, nesterov_schedule,
                         solve_distributed)
from duckpac.profiles import profiles_from_network
from duckpac.scaling import equilibrate
from feeders import four_bus, two_bus


def _atom(c, G, b, lb, ub, H=None, d=()):
    n = len(c)
    H = sp.csr_matrix(H if H is not None else np.zeros((0, n)))
    return Atom(id=0, buses=(1,), owned=np.arange(n), copies=np.zeros(0, dtype=int),
                eq_rows=np.arange(len(b)), ineq_rows=np.arange(H.shape[0]),
                G=sp.csr_matrix(G), b=np.asarray(b, float), H=H, d=np.asarray(d, float),
                c=np.asarray(c, float), lb=np.asarray(lb, float), ub=np.asarray(ub, float),
                copy_owner=np.zeros(0, dtype=int))


def _prob(net):
    prof = profiles_from_network(net)
    return build_ci_opf(net, prof, preprocess_bounds(net, prof, method="sweep"))


# --------------------------------------------------------------------------- elementary steps

def test_extrapolate():
    assert extrapolate(4.0, 2.0, 0.5) == 5.0
    np.testing.assert_array_equal(extrapolate([1.0, 2.0], [1.0, 2.0], 0.7), [1.0, 2.0])
    np.testing.assert_array_equal(extrapolate([3.0], [1.0], 0.0), [3.0])
    with pytest.raises(ValidationError):
        extrapolate([1.0, 2.0], [1.0], 0.5)


def test_dual_step():
    assert dual_step(1.0, 2.0, 0.5) == 2.0
    np.testing.assert_array_equal(dual_step([1.0, -1.0], 3.0, [0.0, 0.0]), [1.0, -1.0])


def test_lagrangian_hand_value():
    atom = _atom([2.0], [[1.0]], [1.0], [-10], [10])
    assert atomic_lagrangian(atom, [2.0], [3.0], []) == pytest.approx(7.0)


def test_lagrangian_zero_duals():
    atom = _atom([1.5, -2.0], [[1.0, 1.0]], [0.0], [-5, -5], [5, 5])
    a = np.array([0.3, 0.4])
    assert atomic_lagrangian(atom, a, [0.0], []) == pytest.approx(atom.objective(a))


def test_lagrangian_feasible_zero_objective():
    atom = _atom([0.0, 0.0], [[1.0, -1.0]], [0.0], [-5, -5], [5, 5])
    assert atomic_lagrangian(atom, [2.0, 2.0], [4.0], []) == 0.0


def test_lagrangian_with_copies():
    prob = _prob(four_bus())
    atoms, profile = decompose(prob)
    ci = copy_incidence(profile)
    x = solve_centralized(prob).x
    a = profile.lift(x)
    nu = np.random.default_rng(1).normal(size=ci.n_rows)
    for atom in atoms:
        aj = a[profile.offsets[atom.id]:profile.offsets[atom.id + 1]]
        mu = np.zeros(len(atom.b))
        # copies agree with owners, so the coordination term vanishes only in total
        val = atomic_lagrangian(atom, aj, mu, nu, ci)
        expected = atom.objective(aj) + nu @ (ci.B_cols(atom.id) @ aj)
        assert val == pytest.approx(expected)
    assert nu @ ci.residual(a) == pytest.approx(0.0, abs=1e-12)


def test_lagrangian_shape_checks():
    atom = _atom([2.0], [[1.0]], [1.0], [-10], [10])
    with pytest.raises(ValidationError):
        atomic_lagrangian(atom, [1.0, 2.0], [0.0], [])
    with pytest.raises(ValidationError):
        atomic_lagrangian(atom, [1.0], [0.0, 1.0], [])


def test_prox_closed_form():
    # argmin a^2/2 + (a - 2)^2/2 = 1 with rho = gamma = 1
    atom = _atom([0.0], [[1.0]], [0.0], [-10], [10])
    qp = AtomQP(atom, 1.0, 1.0, np.zeros(0, dtype=int))
    a_prev, rg, rho = 2.0, 1.0, 1.0
    q = atom.c + atom.G.T @ (np.zeros(1) - rg * atom.b) - a_prev / rho
    assert qp.solve(q)[0] == pytest.approx(1.0, abs=1e-7)


def test_prox_fixed_point_without_constraints():
    atom = _atom([0.0, 0.0], np.zeros((0, 2)), [], [-10, -10], [10, 10])
    qp = AtomQP(atom, 2.0, 1.0, np.zeros(0, dtype=int))
    a = np.array([1.5, -3.0])
    np.testing.assert_allclose(qp.solve(-a / 2.0), a, atol=1e-7)


def test_prox_box_boundary():
    atom = _atom([0.0], np.zeros((0, 1)), [], [0.0], [1.0])
    qp = AtomQP(atom, 1.0, 1.0, np.zeros(0, dtype=int))
    assert qp.solve(np.array([-5.0]))[0] == pytest.approx(1.0, abs=1e-7)


def test_prox_fixed_variables_eliminated():
    atom = _atom([0.0, 0.0], [[1.0, 1.0]], [1.0], [0.25, -10], [0.25, 10])
    qp = AtomQP(atom, 1.0, 1.0, np.zeros(0, dtype=int))
    assert len(qp.free) == 1
    assert qp.solve(np.zeros(2))[0] == 0.25


# --------------------------------------------------------------------------- gains

def test_nesterov_schedule():
    assert nesterov_schedule(1, 0.05) == 0.25
    assert nesterov_schedule(0, 0.05) == 0.05
    assert nesterov_schedule(1000, 0.05, cap=0.5) == 0.5


def test_gains_validation():
    prob = _prob(four_bus())
    atoms, _ = decompose(prob)
    with pytest.raises(ValidationError):
        GainSchedule.default(atoms, floor=0.0)
    with pytest.raises(ValidationError):
        GainSchedule.default(atoms, rho=-1.0)
    with pytest.raises(ValidationError):
        GainSchedule.default(atoms, cap=1.5)
    plain = GainSchedule.default(atoms, plain=True)
    assert plain.alpha_at(0, 50) == plain.phi_at(0, 50) == plain.theta_at(0, 50) == 0.0
    g = GainSchedule.default(atoms)
    np.testing.assert_allclose(g.gamma, [1 / (1 + len(a.neighbors)) for a in atoms])
    assert 0 < g.alpha_at(0, 1) <= g.cap


# --------------------------------------------------------------------------- messaging

def test_transport_locality_and_tags():
    tr = Transport({0: (1,), 1: (0,), 2: ()})
    msg = Message(0, 1, HAT_A, np.array([3]), np.array([1.0]), 5)
    tr.send(msg)
    assert tr.receive(1, 0, HAT_A, 5) is msg
    with pytest.raises(StaleMessageError):
        tr.receive(1, 0, HAT_A, 6)
    with pytest.raises(ValidationError):
        tr.send(Message(0, 2, HAT_A, np.array([0]), np.array([0.0]), 1))
    with pytest.raises(ValidationError):
        tr.receive(2, 0, HAT_A, 5)


def test_out_of_order_phase_is_stale():
    prob = _prob(four_bus())
    atoms, profile = decompose(prob)
    s = NSTPAC(atoms, profile)
    with pytest.raises(StaleMessageError):
        s._phase_coord(0)


# --------------------------------------------------------------------------- the solver

def test_single_atom_reduces_to_proximal():
    prob = _prob(four_bus())
    ref = solve_centralized(prob).objective
    work, eqb = equilibrate(prob)
    atoms, profile = decompose(work, "per-cluster", [(1, 2, 3, 4)])
    assert len(atoms) == 1 and len(atoms[0].copies) == 0
    res = NSTPAC(atoms, profile, scaling=eqb).run(StopRule(3000, 1e-5, 1e-5))
    assert res.converged
    eq = np.array([r[1] for r in res.trace])
    assert eq[-1] <= 1e-5 and eq[-1] < eq[0]
    assert res.objective == pytest.approx(ref, rel=1e-2)


def test_two_bus_oracle():
    prob = _prob(two_bus(load_kw=[40.0, 55.0, 35.0]))
    ref = solve_centralized(prob).objective
    res = solve_distributed(prob, stop=StopRule(5000, 1e-4, 1e-4))
    assert res.converged
    assert res.objective == pytest.approx(ref, rel=1e-2)
    np.testing.assert_allclose(res.x, np.clip(res.x, prob.lb, prob.ub))


def test_threads_do_not_change_trace():
    prob = _prob(four_bus())
    one = solve_distributed(prob, stop=StopRule(60, 1e-12, 1e-12), workers=1)
    four = solve_distributed(prob, stop=StopRule(60, 1e-12, 1e-12), workers=4)
    assert one.trace_csv() == four.trace_csv()
    np.testing.assert_array_equal(one.x, four.x)


def test_trace_csv_header():
    prob = _prob(two_bus(load_kw=[40.0, 55.0, 35.0]))
    res = solve_distributed(prob, stop=StopRule(5, 1e-12, 1e-12))
    lines = res.trace_csv().splitlines()
    assert lines[0] == "round,max_eq_residual,max_coord_residual,objective"
    assert len(lines) == 6
    assert res.reason == "max_iter" and not res.converged
