import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trapmodel.errors import CapacityError, DivergenceError, PreconditionError
from trapmodel.lattice_env import Environment, TailSpec, classify_traps, scales
from trapmodel.srw_analytics import (a_d, axis_and_diagonal_points, green_ball, green_ball_mc, green_free,
                                     green_table, hitting_prob, hitting_prob_mc, hitting_sum_V, watson_g3)


def test_green_free_d3_bracket():
    b = green_free(3, 2e-4)
    assert b.width <= 2e-4 and b.contains(1.516386)
    tight = green_free(3)
    assert tight.contains(watson_g3()) and tight.width <= 1e-6


def test_green_free_d4():
    b = green_free(4)
    assert b.lower < 1.2394671218 < b.upper


def test_green_free_diverges_in_low_dimension():
    with pytest.raises(DivergenceError):
        green_free(2)


def test_a_d():
    assert math.isclose(a_d(3), 3 / (2 * math.pi))


def test_ball_green_symmetry_and_harmonicity():
    t = green_table(3, 8)
    rng = np.random.default_rng(0)
    pts = t.sites[rng.choice(t.sites.shape[0], 12, replace=False)]
    for x in pts[:6]:
        for y in pts[6:]:
            assert math.isclose(t.value(x, y), t.value(y, x), rel_tol=1e-10)
    assert t.harmonicity_residual(pts[0]) < 1e-10


def test_ball_green_increases_to_free_value():
    G = watson_g3()
    vals = [green_ball(3, r, (0, 0, 0), (0, 0, 0)) for r in (5, 10, 20)]
    assert vals[0] < vals[1] < vals[2] < G


def test_mc_vs_exact_green_pairs():
    t = green_table(3, 6)
    inner = t.sites[(t.sites.astype(float) ** 2).sum(axis=1) <= 9]
    rng = np.random.default_rng(3)
    for i in range(20):
        x, y = inner[rng.choice(inner.shape[0], 2, replace=False)]
        mc = green_ball_mc(3, 6, x, y, replicas=4000, master_seed=i)
        assert abs(mc.estimate - t.value(x, y)) <= 4.5 * mc.std_error + 1e-12


def test_hitting_two_routes_and_mc():
    for x in ([3, 0, 0], [2, 2, 1]):
        exact = hitting_prob(3, 12, x)
        assert abs(exact - hitting_prob(3, 12, x, method="dirichlet")) < 1e-12
        mc = hitting_prob_mc(3, 12, x, replicas=20_000, master_seed=1)
        assert abs(mc.estimate - exact) <= 4 * mc.std_error


def test_hitting_precondition_and_capacity():
    with pytest.raises(PreconditionError):
        hitting_prob(3, 10, [0, 0, 0])
    with pytest.raises(CapacityError):
        green_table(3, 200)


def test_axis_and_diagonal_points():
    pts = axis_and_diagonal_points(3, 3, 15)
    norms = np.sqrt((pts.astype(float) ** 2).sum(axis=1))
    assert norms.min() >= 3 and norms.max() <= 15
    assert any((p[0] == p[1] == p[2]) for p in pts)


def test_hitting_sum_two_routes():
    sc = scales(8, 3, 0.5)
    env = Environment(3, TailSpec(0.5), 5, m=3.0)
    sets = classify_traps(env, sc, 0.05, 20.0)
    x = sets.sample_safe_interior(1, np.random.default_rng(2))[0]
    exact = hitting_sum_V(env, sc, sets, x)
    mc = hitting_sum_V(env, sc, sets, x, method="mc", replicas=20_000)
    assert abs(mc.estimate - exact) <= 4 * mc.std_error + 1e-12
