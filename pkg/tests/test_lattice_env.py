import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trapmodel.errors import ParameterError, RegionError, UnsupportedDimensionError
from trapmodel.lattice_env import (Environment, TailSpec, ball_sites, classify_traps, scales, tau_at,
                                   tau_many)


def cube(d, side, offset=0):
    g = np.stack(np.meshgrid(*[np.arange(side) + offset] * d, indexing="ij"), -1)
    return g.reshape(-1, d)


def test_constant_mode():
    env = Environment(3, TailSpec(0.5), 1, constant=1.0)
    assert np.all(tau_many(env, cube(3, 5, -2)) == 1.0)


def test_purity_same_seed_and_site():
    a = Environment(3, TailSpec(0.5), 42)
    b = Environment(3, TailSpec(0.5), 42)
    xs = cube(3, 12, -6)
    assert np.array_equal(tau_many(a, xs), tau_many(b, xs))
    assert tau_at(a, (3, -1, 4)) == tau_at(b, (3, -1, 4))
    assert tau_at(Environment(3, TailSpec(0.5), 43), (3, -1, 4)) != tau_at(a, (3, -1, 4))


@pytest.mark.parametrize("u", [2.0, 10.0, 100.0])
def test_tail_fraction(u):
    env = Environment(3, TailSpec(0.5), 3)
    tau = tau_many(env, cube(3, 100))
    frac = np.mean(tau >= u)
    se = math.sqrt(frac * (1 - frac) / tau.size)
    assert abs(frac - u ** -0.5) <= 3 * se
    assert tau.min() >= 1.0


def test_perturbed_tail_follows_survival():
    tail = TailSpec(0.5, perturbation=lambda u: 0.5 / u)
    env = Environment(2, tail, 9)
    tau = tau_many(env, cube(2, 400))
    for u in (2.0, 10.0):
        frac = np.mean(tau >= u)
        se = math.sqrt(frac * (1 - frac) / tau.size)
        assert abs(frac - float(tail.survival(u))) <= 4 * se


def test_non_monotone_perturbation_rejected():
    with pytest.raises(ParameterError):
        TailSpec(0.5, perturbation=lambda u: 5 * np.sin(u))


@given(st.floats(min_value=1e-9, max_value=1.0))
@settings(max_examples=200, deadline=None)
def test_quantile_inverts_survival(p):
    tail = TailSpec(0.7)
    u = float(tail.quantile(np.array([p]))[0])
    assert u >= 1.0
    assert math.isclose(float(tail.survival(u)), p, rel_tol=1e-9)


def test_region_bounds():
    env = Environment(3, TailSpec(0.5), 1, n=6, m=1.0)  # radius 8
    tau_at(env, (8, 0, 0))
    with pytest.raises(RegionError):
        tau_at(env, (9, 0, 0))


def test_dimension_checks():
    with pytest.raises(UnsupportedDimensionError):
        Environment(1, TailSpec(0.5), 0)


def test_descriptor_round_trip():
    env = Environment(3, TailSpec(0.4), 17, n=8, m=2.0)
    back = Environment.from_descriptor(env.descriptor())
    xs = cube(3, 6, -3)
    assert np.array_equal(tau_many(env, xs), tau_many(back, xs))


def test_scales_examples():
    sc = scales(10, 3, 0.5)
    assert sc.r == 32
    assert sc.g == 2 ** 20
    assert math.isclose(sc.rho, 21.77, abs_tol=5e-3)
    assert math.isclose(sc.nu, 3.175, abs_tol=5e-4)
    assert sc.ordered()


@pytest.mark.parametrize("d,alpha", [(2, 0.3), (3, 0.5), (4, 0.8)])
def test_scales_ordered_for_large_n(d, alpha):
    assert scales(30, d, alpha).ordered()


def brute_classify(env, sc, eps, M, m):
    sites = ball_sites(env.d, m * sc.r)
    tau = tau_many(env, sites)
    mask = (tau >= eps * sc.g) & (tau < M * sc.g)
    deep = sites[mask]
    bad = set()
    if env.d >= 3:
        for i, j in combinations(range(len(deep)), 2):
            if np.sqrt(((deep[i] - deep[j]) ** 2).sum()) <= sc.nu:
                bad |= {tuple(deep[i]), tuple(deep[j])}
    return {tuple(x) for x in deep}, bad, sites


@pytest.mark.parametrize("n,d,seed", [(6, 3, 1), (8, 3, 2), (8, 2, 3)])
def test_classify_against_brute_force(n, d, seed):
    alpha, eps, M, m = 0.5, 0.02, 50.0, 2.0
    sc = scales(n, d, alpha)
    env = Environment(d, TailSpec(alpha), seed, n=n, m=m)
    sets = classify_traps(env, sc, eps, M)
    deep, bad, sites = brute_classify(env, sc, eps, M, m)
    assert {tuple(x) for x in sets.deep} == deep
    assert {tuple(x) for x in sets.bad} == bad
    safe = sets.is_safe(sites)
    for x, ok in zip(sites[:3000], safe[:3000]):
        far = all(np.sqrt(((x - np.array(y)) ** 2).sum()) > sc.nu for y in deep)
        assert ok == far


def test_constant_mode_has_no_deep_traps():
    sc = scales(8, 3, 0.5)
    env = Environment(3, TailSpec(0.5), 0, n=8, constant=1.0)
    sets = classify_traps(env, sc, 0.5, 4.0)
    assert sets.deep.shape[0] == 0 and not sets.bad_mask.any()
    sites = ball_sites(3, sc.r)
    assert sets.is_safe(sites).all()


def test_planted_single_trap():
    sc = scales(8, 3, 0.5)
    env = Environment(3, TailSpec(0.5), 0, n=8, constant=1.0, planted={(0, 0, 0): sc.g})
    sets = classify_traps(env, sc, 0.5, 4.0)
    sites = ball_sites(3, sc.r)
    unsafe = sites[~sets.is_safe(sites)]
    expect = sites[(sites.astype(float) ** 2).sum(axis=1) <= sc.nu ** 2]
    assert {tuple(x) for x in unsafe} == {tuple(x) for x in expect}
    assert not sets.bad_mask.any()


def test_planted_pair_is_bad():
    sc = scales(8, 3, 0.5)
    k = int(math.floor(sc.nu - 1))
    env = Environment(3, TailSpec(0.5), 0, n=8, constant=1.0,
                      planted={(0, 0, 0): sc.g, (k, 0, 0): sc.g})
    sets = classify_traps(env, sc, 0.5, 4.0)
    assert sets.bad_mask.sum() == 2


def test_classify_validates_levels():
    sc = scales(8, 3, 0.5)
    env = Environment(3, TailSpec(0.5), 0, n=8)
    with pytest.raises(ParameterError):
        classify_traps(env, sc, 2.0, 4.0)
