import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfglab.model_core import LIMIT, LqParams, ParameterError, TimeGrid
from mfglab.nplayer_game import (
    equilibrium_cost_check,
    nash_gap,
    nash_holds,
    simulate_equilibrium,
    sym_mean,
    value_at_start,
    write_nash_csv,
)
from mfglab.riccati import eta_closed

P10 = LqParams(a=0.1, q=0.2, eps=0.5, c=0.3, sigma=1.0, rho=0.5, T=1.0, N=10)
X0 = np.linspace(-1.0, 1.0, 10)
GRID = TimeGrid(0.0, 1.0, 100)


def test_symmetric_start_without_noise_costs_nothing():
    p = P10.with_(sigma=0.0)
    b = simulate_equilibrium(p, GRID, 3, 1, np.full(10, 0.4))
    assert np.all(b.realized_costs == 0.0)
    assert np.all(b.trajectories == 0.4)


def test_one_deterministic_step_for_two_players():
    p = LqParams(a=0.1, q=0.2, eps=0.5, c=0.3, sigma=0.0, T=0.1, N=2)
    x0 = np.array([-1.0, 2.0])
    b = simulate_equilibrium(p, TimeGrid(0.0, 0.1, 1), 1, 1, x0)
    rate = p.a + p.q + 0.5 * eta_closed(0.0, p)
    expect = x0 + rate * (x0.mean() - x0) * 0.1
    np.testing.assert_allclose(b.trajectories[0, :, -1], expect, rtol=0, atol=1e-15)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=12))
@settings(max_examples=50, deadline=None)
def test_sym_mean_ignores_player_order(xs):
    x = np.array(xs)
    rng = np.random.default_rng(0)
    assert sym_mean(x) == sym_mean(rng.permutation(x))


def test_relabelled_players_swap_costs():
    x0 = np.array([0.5, -0.3, 1.2, 0.0])
    p = P10.with_(N=4)
    a = simulate_equilibrium(p, GRID, 5, 2, x0)
    b = simulate_equilibrium(p, GRID, 5, 2, x0[[2, 1, 0, 3]], path_ids=[2, 1, 0, 3])
    np.testing.assert_array_equal(a.realized_costs[:, [2, 1, 0, 3]], b.realized_costs)


def test_baseline_lambda_matches_equilibrium_bit_exactly():
    rows = nash_gap(P10, GRID, 200, 4, X0, [1.0])
    b = simulate_equilibrium(P10, GRID, 200, 4, X0, keep_paths=False)
    assert rows[0].mean_cost == b.mean_cost(0)[0]


def test_no_heterogeneity_no_cost_for_any_gain():
    rows = nash_gap(P10.with_(sigma=0.0), GRID, 4, 1, np.zeros(10), [0.5, 1.0, 1.5])
    assert all(r.mean_cost == 0.0 for r in rows)


def test_equilibrium_cost_matches_value():
    chk = equilibrium_cost_check(P10, TimeGrid(0.0, 1.0, 200), 2000, 3, X0)
    assert chk.passed
    assert chk.value == pytest.approx(value_at_start(P10, X0))


def test_nash_table(tmp_path):
    rows = nash_gap(P10, GRID, 1000, 5, X0, [0.5, 0.75, 1.0, 1.25, 1.5])
    assert nash_holds(rows)
    assert all(r.diff > 0 for r in rows if r.lam != 1.0)
    path = tmp_path / "nash.csv"
    write_nash_csv(path, rows)
    head = path.read_text().splitlines()[0].split(",")
    assert head[:3] == ["lambda", "mean_cost", "std_err"]


def test_preconditions():
    with pytest.raises(ParameterError):
        simulate_equilibrium(P10.with_(N=LIMIT), GRID, 1, 1, X0)
    with pytest.raises(ParameterError):
        simulate_equilibrium(P10, GRID, 1, 1, X0[:3])
    with pytest.raises(ParameterError):
        simulate_equilibrium(P10.with_(eps=50.0, c=30.0), TimeGrid(0.0, 1.0, 2), 1, 1, X0)
    with pytest.raises(ParameterError):
        nash_gap(P10, GRID, 1, 1, X0, [0.5, 1.5])


def test_threads_do_not_change_results():
    a = simulate_equilibrium(P10, GRID, 600, 9, X0, keep_paths=False, threads=1)
    b = simulate_equilibrium(P10, GRID, 600, 9, X0, keep_paths=False, threads=4)
    assert a.realized_costs.tobytes() == b.realized_costs.tobytes()
