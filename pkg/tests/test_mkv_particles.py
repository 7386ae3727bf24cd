import numpy as np
import pytest

from mfglab.model_core import InitialLaw, LqParams, ParameterError, TimeGrid, make_noise
from mfglab.mkv_particles import (
    conditional_variance_check,
    nplayer_vs_limit,
    ou_moments,
    simulate_mkv,
    simulate_mkv_batch,
    variance_ode,
    write_cloud_csv,
)
from mfglab.riccati import eta_closed

P = LqParams(a=0.1, q=0.2, eps=0.5, c=0.3, sigma=1.0, rho=0.6, T=1.0)
GRID = TimeGrid(0.0, 1.0, 200)


def test_no_noise_point_mass_stays_put():
    c = simulate_mkv(P.with_(sigma=0.0), GRID, 50, 1, InitialLaw.point(0.7), keep_states=True)
    assert np.all(c.states == 0.7)
    assert np.max(c.cond_var) < 1e-28  # rounding of the mean of equal numbers
    assert conditional_variance_check(c) < 1e-28


def test_mean_is_flat_without_common_noise():
    n = 4000
    c = simulate_mkv(P.with_(rho=0.0), GRID, n, 2, InitialLaw(0.0, 1.0))
    assert np.max(np.abs(c.cond_mean - c.cond_mean[0])) < 5.0 / np.sqrt(n)


def test_full_common_noise_variance_decays_deterministically():
    p = P.with_(rho=1.0)
    c = simulate_mkv(p, GRID, 2000, 3, InitialLaw(0.0, 1.0))
    ref = variance_ode(p, GRID, c.cond_var[0])
    # rho=1: the spread only contracts, exactly like the Euler recursion of the ODE
    integ = np.concatenate([[0.0], np.cumsum([p.a + p.q + eta_closed(t, p) for t in GRID.times[:-1]]) * GRID.dt])
    assert np.max(np.abs(ref - c.cond_var[0] * np.exp(-2 * integ))) < 1e-2
    assert np.max(np.abs(c.cond_var - ref)) < 1e-2


def test_mean_error_is_small_and_common_path_is_shared():
    c = simulate_mkv(P, GRID, 4000, 4, InitialLaw(0.0, 1.0))
    assert c.mean_error() < 0.1
    np.testing.assert_array_equal(c.common_path, make_noise(4, 0, GRID, 0).common_path(0))


def test_batch_matches_single_runs():
    law = InitialLaw(0.0, 1.0)
    states, means = simulate_mkv_batch(P, GRID, 3, 20, 5, law, mean_mode="empirical")
    for s in range(3):
        c = simulate_mkv(P, GRID, 20, 5, law, scenario_id=s, keep_states=True)
        np.testing.assert_allclose(states[s], c.states, rtol=0, atol=1e-12)


def test_tagged_particle_against_ou_moments():
    p = P.with_(rho=0.0)
    law = InitialLaw.point(1.5)
    states, _ = simulate_mkv_batch(p, GRID, 1, 20000, 6, law, mean_mode="exact")
    mean, var = ou_moments(p, GRID, 1.5, 1.5)
    np.testing.assert_allclose(states[0].mean(axis=0), mean, atol=0.05)
    np.testing.assert_allclose(states[0].var(axis=0), var, atol=0.05)


def test_ou_mean_reverts_to_population():
    p = P.with_(rho=0.0)
    c = simulate_mkv(p, GRID, 20000, 7, InitialLaw.point(2.0), mean_mode="exact", population_mean=0.0, keep_states=True)
    mean, var = ou_moments(p, GRID, 2.0, 0.0)
    np.testing.assert_allclose(c.states.mean(axis=0), mean, atol=0.05)
    np.testing.assert_allclose(c.states.var(axis=0), var, atol=0.05)


def test_nplayer_distance_vanishes_without_noise_and_with_full_common_noise():
    rows = nplayer_vs_limit(P.with_(sigma=0.0), GRID, 1, [4, 8], n_scenarios=2)
    assert all(r.mean_error < 1e-12 for r in rows)
    rows = nplayer_vs_limit(P.with_(rho=1.0), GRID, 1, [4, 8], n_scenarios=4)
    assert all(r.mean_error < 1e-12 for r in rows)


def test_nplayer_distance_rate():
    rows = nplayer_vs_limit(P, GRID, [1, 2], [32, 64, 128], n_scenarios=64)
    ratios = [a.mean_error / b.mean_error for a, b in zip(rows, rows[1:])]
    assert all(1.2 <= r <= 1.7 for r in ratios), ratios


def test_requires_limit_regime():
    with pytest.raises(ParameterError):
        simulate_mkv(P.with_(N=5), GRID, 10, 1, InitialLaw())


def test_cloud_csv(tmp_path):
    c = simulate_mkv(P, TimeGrid(0.0, 1.0, 4), 10, 1, InitialLaw(0.0, 1.0))
    path = tmp_path / "m.csv"
    write_cloud_csv(path, [c])
    lines = path.read_text().splitlines()
    assert lines[0] == "scenario,t,cond_mean,cond_var,exact_mean" and len(lines) == 6
