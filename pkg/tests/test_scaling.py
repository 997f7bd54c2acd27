import numpy as np
import pytest

from duckpac.bounds import preprocess_bounds
from duckpac.central import solve_centralized
from duckpac.opf import build_ci_opf
from duckpac.profiles import profiles_from_network
from duckpac.scaling import Equilibration, equilibrate
from feeders import eight_bus, four_bus


def _prob(net):
    prof = profiles_from_network(net)
    return build_ci_opf(net, prof, preprocess_bounds(net, prof, method="sweep"))


@pytest.mark.parametrize("make", [four_bus, eight_bus])
def test_same_optimum(make):
    prob = _prob(make())
    scaled, eqb = equilibrate(prob)
    a = solve_centralized(prob)
    b = solve_centralized(scaled)
    assert b.objective == pytest.approx(a.objective, rel=1e-6, abs=1e-9)
    assert prob.is_feasible(eqb.to_original(b.x), tol=1e-7)


def test_feasible_points_map():
    prob = _prob(four_bus())
    scaled, eqb = equilibrate(prob)
    x = solve_centralized(prob).x
    y = eqb.to_scaled(x)
    np.testing.assert_allclose(scaled.G @ y - scaled.b, (prob.G @ x - prob.b) / eqb.eq_row,
                               atol=1e-12)
    assert scaled.objective(y) == pytest.approx(prob.objective(x))
    np.testing.assert_allclose(eqb.to_original(y), x)


def test_unit_rows_and_widths():
    prob = _prob(four_bus())
    scaled, eqb = equilibrate(prob)
    norms = np.sqrt(np.asarray(scaled.G.multiply(scaled.G).sum(axis=1)).ravel())
    np.testing.assert_allclose(norms[norms > 0], 1.0)
    width = scaled.ub - scaled.lb
    free = prob.ub - prob.lb >= 1e-3
    np.testing.assert_allclose(width[free], 1.0)


def test_identity():
    prob = _prob(four_bus())
    eqb = Equilibration.identity(prob)
    x = np.arange(prob.n, dtype=float)
    np.testing.assert_array_equal(eqb.to_original(x), x)
