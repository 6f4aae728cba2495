import math

import numpy as np
import pytest

from trapmodel.coarse_grain import (CASE_BAD, CASE_TRAP, CASE_ZERO, coarse_grain, displacement_laplace_check,
                                    lemma24_discrepancies, sample_score_at, score_sum_discrepancy)
from trapmodel.errors import HorizonError, PreconditionError
from trapmodel.lattice_env import Environment, TailSpec, classify_traps, scales
from trapmodel.rng import stream_key
from trapmodel.walk_sim import run_walk, scripted_trajectory

N, D, ALPHA, M_REGION = 8, 3, 0.5, 3.0
SC = scales(N, D, ALPHA)  # r = 16, rho ~ 11.76, nu ~ 2.52


def axis_path(stops):
    """Nearest-neighbour path visiting the listed sites in order along unit moves."""
    path = [np.array(stops[0])]
    for target in stops[1:]:
        target = np.array(target)
        while not np.array_equal(path[-1], target):
            step = path[-1].copy()
            i = int(np.flatnonzero(step != target)[0])
            step[i] += int(np.sign(target[i] - step[i]))
            path.append(step)
    return np.array(path)


def planted(sites):
    env = Environment(D, TailSpec(ALPHA), 0, constant=1.0, m=M_REGION,
                      planted={s: SC.g for s in sites})
    return env, classify_traps(env, SC, 0.5, 4.0)


def test_trap_free_parts_score_zero():
    env, sets = planted([])
    path = axis_path([(0, 0, 0), (30, 0, 0)])
    tr = scripted_trajectory(env, path, np.ones(len(path) - 1))
    rep = coarse_grain(tr, env, SC, sets)
    assert [p.j for p in rep.parts] == [0, 12]
    assert all(p.score == 0.0 and p.case == CASE_ZERO for p in rep.parts)
    assert rep.truncated_final and rep.J is None


def test_single_trap_hand_summed_score():
    y = (5, 0, 0)
    env, sets = planted([y])
    path = axis_path([(0, 0, 0), y, (5, 1, 0), y, (5, -1, 0), y, (14, 0, 0)])
    marks = np.random.default_rng(0).exponential(size=len(path) - 1)
    tr = scripted_trajectory(env, path, marks)
    rep = coarse_grain(tr, env, SC, sets)
    part = rep.parts[0]
    visits = [k for k in range(len(marks)) if tuple(path[k]) == y]
    assert part.case == CASE_TRAP and part.trap == y
    assert part.lam[0] == visits[0] and part.lam[2] == -1
    assert math.isclose(part.score, SC.g * marks[visits].sum(), rel_tol=1e-12)
    # score equals the clock increments spent at y
    inc = np.diff(tr.clock)[visits].sum()
    assert math.isclose(part.score, inc, rel_tol=1e-12)


def test_first_trap_in_bad_set_scores_infinity():
    y, partner = (5, 0, 0), (5, 2, 0)
    env, sets = planted([y, partner])
    assert sets.bad_mask.sum() == 2
    path = axis_path([(0, 0, 0), y, (14, 0, 0)])
    tr = scripted_trajectory(env, path, np.ones(len(path) - 1))
    rep = coarse_grain(tr, env, SC, sets)
    assert rep.parts[0].score == math.inf and rep.parts[0].case == CASE_BAD and rep.J == 0


def test_second_trap_in_part_scores_infinity():
    env, sets = planted([(5, 0, 0), (9, 4, 0)])
    path = axis_path([(0, 0, 0), (5, 0, 0), (9, 0, 0), (9, 4, 0), (9, 10, 0)])
    tr = scripted_trajectory(env, path, np.ones(len(path) - 1))
    rep = coarse_grain(tr, env, SC, sets)
    assert rep.parts[0].case == CASE_BAD and rep.parts[0].lam[2] >= 0


def test_discrepancy_without_traps_is_clock():
    env, sets = planted([])
    tr = run_walk(env, 20_000, master_seed=1)
    rep = coarse_grain(tr, env, SC, sets)
    k = min(5, len(rep.parts))
    expect = tr.clock[rep.stopping_times[k]] / 2 ** (N / ALPHA)
    assert score_sum_discrepancy(rep, tr, N, ALPHA, k) == expect
    with pytest.raises(HorizonError):
        score_sum_discrepancy(rep, tr, N, ALPHA, len(rep.parts) + 1)


@pytest.fixture(scope="module")
def random_setting():
    env = Environment(D, TailSpec(ALPHA), 21, m=M_REGION)
    sets = classify_traps(env, SC, 0.02, 50.0)
    return env, sets


def test_randomized_invariants(random_setting):
    env, sets = random_setting
    for r in range(20):
        tr = run_walk(env, 30_000, master_seed=5, replica=r)
        rep = coarse_grain(tr, env, SC, sets)
        js = rep.stopping_times
        for i in range(1, js.size):
            seg = tr.sites[js[i - 1] + 1: js[i]] - tr.sites[js[i - 1]]
            assert np.all((seg.astype(float) ** 2).sum(axis=1) <= SC.rho ** 2)
            jump = np.sqrt(((tr.sites[js[i]] - tr.sites[js[i - 1]]).astype(float) ** 2).sum())
            assert SC.rho < jump <= SC.rho + 1
        acc = 0.0
        for p in rep.parts:
            assert p.case in (CASE_ZERO, CASE_TRAP, CASE_BAD)
            assert (p.case == CASE_BAD) == (p.score == math.inf)
            assert (p.case == CASE_ZERO) <= (p.score == 0.0)
            if rep.J is not None and p.i < rep.J:
                assert math.isfinite(p.score)
            acc += p.score
            if math.isfinite(acc):
                assert acc <= tr.clock[p.j_next] * (1 + 1e-12)


def test_streamed_parts_match_stored_trajectories(random_setting):
    env, sets = random_setting
    k_max = 6
    out, first_bad = lemma24_discrepancies(env, SC, sets, k_max, 16, master_seed=3)
    for r in range(16):
        tr = run_walk(env, 500_000, rng_key=stream_key(3, "lemma24", r))
        rep = coarse_grain(tr, env, SC, sets)
        assert score_sum_discrepancy(rep, tr, N, ALPHA, k_max) == pytest.approx(out[r], rel=1e-12)
        bad = next((p.i for p in rep.parts[:k_max] if p.case == CASE_BAD), -1)
        assert bad == first_bad[r]


def test_sample_score_precondition(random_setting):
    env, sets = random_setting
    with pytest.raises(PreconditionError):
        sample_score_at(env, SC, sets, (47, 0, 0), 10)
    if sets.deep.shape[0]:
        with pytest.raises(PreconditionError):
            sample_score_at(env, SC, sets, sets.deep[0], 10)


def test_sample_score_trap_free():
    env, sets = planted([])
    s = sample_score_at(env, SC, sets, (0, 0, 0), 200, master_seed=1)
    assert s.p_nonzero().estimate == 0.0 and s.laplace(1.0) == 1.0
    norms = np.sqrt((s.displacements.astype(float) ** 2).sum(axis=1))
    assert np.all((norms > SC.rho) & (norms <= SC.rho + 1))


def test_displacement_check():
    env, sets = planted([])
    r = sample_score_at(env, SC, sets, (0, 0, 0), 4000, master_seed=2).displacements
    assert displacement_laplace_check(r, [0, 0, 0], SC).estimate == 0.0
    out = displacement_laplace_check(r, [1.0, 0, 0], SC)
    assert abs(out.extras["mean_projection"]) <= 4 * out.extras["mean_projection_se"]
    assert out.ci_low <= out.estimate <= out.ci_high
