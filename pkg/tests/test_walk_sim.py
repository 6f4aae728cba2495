import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trapmodel.errors import HorizonError, ParameterError
from trapmodel.fk_limit import scaling_constant_uncorrected
from trapmodel.lattice_env import Environment, TailSpec, tau_many
from trapmodel.walk_sim import (aging_probability_estimate, clock_values, ctrw_trajectory, grid_identity_residual,
                                position_at, rescale, run_walk, scripted_trajectory)


@pytest.fixture(scope="module")
def env():
    return Environment(3, TailSpec(0.5), 11)


def test_walk_invariants(env):
    tr = run_walk(env, 200_000, master_seed=4)  # spans several kernel chunks
    assert tr.steps == 200_000
    assert np.all(np.abs(np.diff(tr.sites, axis=0)).sum(axis=1) == 1)
    assert np.array_equal(tr.depths, tau_many(env, tr.sites[:-1]))
    # differences of a large running sum lose digits, so compare the sums
    np.testing.assert_allclose(tr.clock[1:], np.cumsum(tr.marks * tr.depths), rtol=1e-9)
    # nondecreasing only: a tiny increment can vanish against a large clock
    assert tr.clock[0] == 0.0 and np.all(np.diff(tr.clock) >= 0)


def test_walk_deterministic(env):
    a = run_walk(env, 70_000, master_seed=1, replica=3)
    b = run_walk(env, 70_000, master_seed=1, replica=3)
    assert np.array_equal(a.sites, b.sites) and np.array_equal(a.clock, b.clock)


def test_unit_marks_constant_env():
    env = Environment(3, TailSpec(0.5), 0, constant=1.0)
    tr = run_walk(env, 1000, unit_marks=True)
    assert np.array_equal(tr.clock, np.arange(1001, dtype=float))


def test_mean_square_displacement():
    env = Environment(3, TailSpec(0.5), 0, constant=1.0)
    r2 = np.array([(run_walk(env, 100, master_seed=8, replica=r).sites[-1] ** 2).sum()
                   for r in range(4000)], dtype=float)
    assert abs(r2.mean() - 100) <= 3 * r2.std(ddof=1) / math.sqrt(r2.size)


def test_exit_time_scale():
    env = Environment(3, TailSpec(0.5), 0, constant=1.0)
    rho = 30.0
    j = np.array([run_walk(env, 10 ** 6, "exit", stop_value=rho, master_seed=2, replica=r).exit_step
                  for r in range(600)], dtype=float)
    assert abs(j.mean() / rho ** 2 - 1) < 0.1


def test_exit_rule_stops_at_first_exit(env):
    tr = run_walk(env, 10 ** 6, "exit", stop_value=10.0, master_seed=3)
    r2 = (tr.sites.astype(float) ** 2).sum(axis=1)
    assert r2[-1] > 100 and np.all(r2[:-1] <= 100)


def test_staircase_position():
    env = Environment(2, TailSpec(0.5), 0, constant=1.0)
    tr = scripted_trajectory(env, [(0, 0), (1, 0), (1, 1)], [2.0, 3.0])
    assert tuple(position_at(tr, 0.0)) == (0, 0)
    assert tuple(position_at(tr, 3.5)) == (1, 0)
    assert tuple(position_at(tr, 2.0)) == (1, 0)
    with pytest.raises(HorizonError):
        position_at(tr, 5.0)


@given(st.lists(st.floats(min_value=1e-3, max_value=10.0), min_size=1, max_size=30),
       st.floats(min_value=0.0, max_value=1.0))
@settings(max_examples=100, deadline=None)
def test_position_is_left_closed_staircase(marks, frac):
    env = Environment(2, TailSpec(0.5), 0, constant=1.0)
    sites = [(k, 0) for k in range(len(marks) + 1)]
    tr = scripted_trajectory(env, sites, marks)
    t = frac * tr.clock[-1] * (1 - 1e-12)
    k = int(np.searchsorted(tr.clock, t, side="right")) - 1
    assert tuple(position_at(tr, t)) == sites[k]
    for k in range(len(marks)):
        assert tuple(position_at(tr, tr.clock[k])) == sites[k]


def test_scripted_requires_neighbours():
    env = Environment(2, TailSpec(0.5), 0, constant=1.0)
    with pytest.raises(ParameterError):
        scripted_trajectory(env, [(0, 0), (2, 0)], [1.0])


def test_rescale_grid_identity(env):
    tr = run_walk(env, 300_000, master_seed=6)
    tri = rescale(tr, 1e4, env, 1.0, 400)
    assert np.all(tri.X_N[0] == 0) and tri.S_N[0] == 0
    assert grid_identity_residual(tri, tr) == 0.0


def test_spec_constant_example():
    assert math.isclose(scaling_constant_uncorrected(3, 0.5, 1.516386), 0.7191, abs_tol=2e-4)


def test_ctrw_waiting_tail():
    tr = ctrw_trajectory(3, 0.5, 200_000, master_seed=1)
    frac = np.mean(tr.depths >= 10)
    assert abs(frac - 10 ** -0.5) <= 4 * math.sqrt(frac * (1 - frac) / tr.depths.size)
    assert np.all(np.abs(np.diff(tr.sites, axis=0)).sum(axis=1) == 1)


def test_clock_values_deterministic(env):
    a = clock_values(env, 500, 64, master_seed=3)
    b = clock_values(env, 500, 64, master_seed=3)
    assert np.array_equal(a, b)
    ref = np.array([run_walk(env, 500, master_seed=3, replica=r).clock[-1] for r in range(8)])
    np.testing.assert_allclose(a[:8], ref, rtol=1e-12)


def test_aging_small_theta_near_one(env):
    s = aging_probability_estimate(env, 1e3, 1e-6, 500, master_seed=1)
    assert s.estimate > 0.97


def test_aging_step_budget(env):
    with pytest.raises(HorizonError):
        aging_probability_estimate(env, 1e8, 1.0, 4, master_seed=1, max_steps=10)
