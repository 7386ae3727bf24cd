import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfglab.master_pde import (
    decoupling_consistency,
    exact_field,
    residual_of_field,
    restriction_check,
    solve_master,
)
from mfglab.model_core import InitialLaw, LqParams, NumericalError, ParameterError, TimeGrid
from mfglab.riccati import chi_closed, value_v

P = LqParams(a=0.1, q=0.2, eps=0.5, c=0.3, sigma=1.0, rho=0.5, T=0.5)
PROBE = dict(ts=[0.1, 0.25, 0.4], xs=[-1.0, 0.3, 1.2], ms=[-0.5, 0.4])


def test_exact_field_matches_value_function():
    f = exact_field(P)
    for t, x, m in [(0.0, 1.0, 0.0), (0.3, -0.2, 0.7), (0.5, 1.0, 2.0)]:
        assert f(t, x, m) == pytest.approx(value_v(t, x, m, P), abs=1e-12)
    assert f(0.2, 0.4, 0.4) == pytest.approx(chi_closed(0.2, P), abs=1e-13)


def test_zero_problem_stays_zero():
    p = P.with_(c=0.0, eps=P.q**2)
    g = solve_master(p, n_x=21, n_m=21, steps=40)
    assert np.max(np.abs(g.values)) < 1e-14


def test_terminal_slice_is_exact():
    g = solve_master(P, n_x=21, n_m=21, steps=40)
    X, M = np.meshgrid(g.x_axis, g.m_axis, indexing="ij")
    np.testing.assert_array_equal(g.slice_at(P.T), 0.5 * P.c * (M - X) ** 2)


def test_solution_close_to_exact():
    g = solve_master(P, n_x=31, n_m=31, steps=64)
    assert g.interior_error(0.0) < 0.01


def test_cfl_violation_is_a_numerical_error():
    with pytest.raises(NumericalError):
        solve_master(P, n_x=61, n_m=61, steps=4)


def test_solver_needs_limit_and_room():
    with pytest.raises(ParameterError):
        solve_master(P.with_(N=4))
    with pytest.raises(ParameterError):
        solve_master(P, n_x=4, n_m=21)


def test_residual_of_exact_field_is_tiny():
    assert residual_of_field(exact_field(P), P, h=1e-2, **PROBE) < 1e-6


def test_terminal_cost_is_not_a_solution():
    def frozen(t, x, m):
        return 0.5 * P.c * (np.asarray(m) - x) ** 2 + 0.0 * t

    assert residual_of_field(frozen, P, h=1e-2, **PROBE) > 1e-2


def test_zero_field_solves_zero_problem():
    p = P.with_(c=0.0, eps=P.q**2)
    zero = lambda t, x, m: np.zeros(np.broadcast(t, x, m).shape)
    assert residual_of_field(zero, p, h=1e-2, **PROBE) == 0.0


def test_probe_margin():
    with pytest.raises(ParameterError):
        residual_of_field(exact_field(P), P, ts=[0.0], xs=[0.0], ms=[0.0], h=1e-2)


def test_restriction_symmetric_pair():
    f = exact_field(P)
    assert abs(restriction_check(f, [0.2, 2.2], [0.5, 0.5], 0.1)) < 1e-10


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.5))
@settings(max_examples=30, deadline=None)
def test_restriction_random_measures(seed, t):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=100) * rng.uniform(0.1, 3.0)
    w = rng.random(100)
    w /= w.sum()
    assert abs(restriction_check(exact_field(P), pts, w, t)) <= 1e-8


def test_restriction_of_pde_solution():
    g = solve_master(P, n_x=41, n_m=41, steps=128)
    rng = np.random.default_rng(3)
    pts = np.clip(rng.normal(size=50) * 0.5, -1.5, 1.5)
    w = np.full(50, 1 / 50)
    assert abs(restriction_check(g.field_at(0.0), pts, w, 0.0, h=1e-3)) < 0.02


def test_restriction_weights_validated():
    with pytest.raises(ParameterError):
        restriction_check(exact_field(P), [0.0, 1.0], [0.7, 0.7], 0.0)


def test_decoupling_trivial_case():
    p = P.with_(sigma=0.0)
    rep = decoupling_consistency(p, TimeGrid(0.0, p.T, 40), 10, 1, initial_law=InitialLaw.point(0.0))
    assert rep.statistic < 1e-14


def test_decoupling_passes_for_exact_field_and_catches_perturbation():
    g = TimeGrid(0.0, P.T, 100)
    assert decoupling_consistency(P, g, 4000, 2).passed
    assert not decoupling_consistency(P, g, 10_000, 2, eta_scale=1.1).passed
