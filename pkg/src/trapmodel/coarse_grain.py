"""Coarse graining of a trajectory into rho-parts with deep-trap scores.

A part starts at a stopping time j_i and ends at the first step farther than
rho from Y(j_i). Within a part the first deep trap hit, y_i, collects a score:
the mark-weighted time spent at y_i before the walk leaves its nu-ball. Parts
in which anything else happens score infinity.

Case codes: 0 = no deep trap hit (score 0), 1 = scored trap visit, 2 = bad part.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numba as nb
import numpy as np

from .errors import HorizonError, ParameterError, PreconditionError
from .lattice_env import Environment, ScaleSet, TrapSets, tau_at, tau_kernel
from .rng import base_key, next_direction, next_exp, replica_key
from .stats_kit import StatsSummary, bootstrap_ci, proportion_summary
from .walk_sim import TrajectoryRecord

CASE_ZERO, CASE_TRAP, CASE_BAD = 0, 1, 2
_INF = np.inf


# ---- shared jitted helpers --------------------------------------------------------------


@nb.njit(inline="always", cache=True)
def _sq(a, b):
    q = 0.0
    for i in range(a.shape[0]):
        t = float(a[i] - b[i])
        q += t * t
    return q


@nb.njit(inline="always", cache=True)
def _norm_sq(a):
    q = 0.0
    for i in range(a.shape[0]):
        q += float(a[i]) * float(a[i])
    return q


@nb.njit(inline="always", cache=True)
def _same(a, b):
    for i in range(a.shape[0]):
        if a[i] != b[i]:
            return False
    return True


@nb.njit(cache=True)
def _is_safe(x, deep, nu2, R2):
    """x in D(n) and every deep trap farther than nu."""
    if _norm_sq(x) > R2:
        return False
    for j in range(deep.shape[0]):
        if _sq(deep[j], x) <= nu2:
            return False
    return True


@nb.njit(cache=True)
def _deep_index(x, deep):
    for j in range(deep.shape[0]):
        if _same(deep[j], x):
            return j
    return -1


@nb.njit(inline="always", cache=True)
def _is_deep(t, x, lo, hi, R2):
    return t >= lo and t < hi and _norm_sq(x) <= R2


@nb.njit(cache=True)
def _classify(x0, x1, y, have_trap, lam2_ok, lam3_ok, deep, bad, nu, rho, R):
    """Case of a finished part from its start x0, end x1 and first trap y."""
    nu2 = nu * (nu * (1.0 + 1e-12))
    R2 = R * R
    cond31 = (R - math.sqrt(_norm_sq(x0)) > rho) and _is_safe(x0, deep, nu2, R2) and _is_safe(x1, deep, nu2, R2)
    if not cond31:
        return CASE_BAD
    if not have_trap:
        return CASE_ZERO
    if not (lam2_ok and lam3_ok):
        return CASE_BAD
    if rho - math.sqrt(_sq(y, x0)) <= nu:
        return CASE_BAD
    j = _deep_index(y, deep)
    if j >= 0 and bad[j]:
        return CASE_BAD
    return CASE_TRAP


# ---- coarse graining of a stored trajectory ------------------------------------------------


@nb.njit(cache=True)
def _stopping_times(sites, rho2):
    K = sites.shape[0] - 1
    js = np.empty(K + 1, dtype=np.int64)
    js[0] = 0
    n = 1
    for k in range(1, K + 1):
        if _sq(sites[k], sites[js[n - 1]]) > rho2:
            js[n] = k
            n += 1
    return js[:n].copy()


@nb.njit(cache=True)
def _grain_arrays(sites, marks, depths, last_tau, deep, bad, lo, hi, nu, rho, R):
    rho2 = rho * rho
    nu2 = nu * (nu * (1.0 + 1e-12))
    R2 = R * R
    K = marks.shape[0]
    js = _stopping_times(sites, rho2)
    P = js.shape[0] - 1  # complete parts
    lam = -np.ones((P, 3), dtype=np.int64)
    ys = np.zeros((P, sites.shape[1]), dtype=np.int64)
    score = np.zeros(P)
    case = np.zeros(P, dtype=np.int64)
    for i in range(P):
        a, b = js[i], js[i + 1]
        l1 = -1
        for k in range(a, b):
            t = depths[k] if k < K else last_tau
            if _is_deep(t, sites[k], lo, hi, R2):
                l1 = k
                break
        if l1 < 0:
            case[i] = _classify(sites[a], sites[b], sites[a], False, False, False, deep, bad, nu, rho, R)
            score[i] = 0.0 if case[i] == CASE_ZERO else _INF
            continue
        y = sites[l1]
        ys[i] = y
        l2, l3 = -1, -1
        s = 0.0
        for k in range(l1, b):
            if l2 < 0 and _sq(sites[k], y) > nu2:
                l2 = k
            t = depths[k] if k < K else last_tau
            if l3 < 0 and k > l1 and _is_deep(t, sites[k], lo, hi, R2) and (l2 >= 0 or not _same(sites[k], y)):
                l3 = k
            if l2 < 0 and _same(sites[k], y):
                s += marks[k] * depths[k]
        lam[i, 0], lam[i, 1], lam[i, 2] = l1, l2, l3
        case[i] = _classify(sites[a], sites[b], y, True, l2 >= 0, l3 < 0, deep, bad, nu, rho, R)
        score[i] = s if case[i] == CASE_TRAP else _INF
    return js, lam, ys, score, case


@dataclass
class PartRecord:
    i: int
    j: int
    j_next: int
    lam: tuple  # (lambda_1, lambda_2, lambda_3); -1 means not reached before j_next
    trap: Optional[tuple]
    score: float
    case: int
    displacement: np.ndarray


@dataclass
class CoarseGrainReport:
    stopping_times: np.ndarray
    parts: List[PartRecord]
    J: Optional[int]
    truncated_final: bool
    rho: float
    nu: float
    scales: dict = field(default_factory=dict)

    @property
    def scores(self) -> np.ndarray:
        return np.array([p.score for p in self.parts])

    @property
    def cases(self) -> np.ndarray:
        return np.array([p.case for p in self.parts], dtype=np.int64)

    def export_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j_i", "lambda_1", "lambda_2", "lambda_3", "y_i", "s_i", "abs_r_i"])
            for p in self.parts:
                y = "" if p.trap is None else " ".join(map(str, p.trap))
                w.writerow([p.i, p.j, *p.lam, y, repr(p.score),
                            repr(float(np.sqrt((p.displacement.astype(float) ** 2).sum())))])


def coarse_grain(traj: TrajectoryRecord, env: Environment, sc: ScaleSet, sets: TrapSets) -> CoarseGrainReport:
    """Split a trajectory into parts and score each one.

    Works equally on simulated and scripted trajectories. The final part is
    reported only if it is complete; otherwise ``truncated_final`` is set.
    """
    if traj.steps < 1:
        raise ParameterError("trajectory has no steps")
    last = traj.sites[-1]
    last_tau = tau_at(env, last) if env.contains(last) else -1.0
    deep, bad, lo, hi, nu, rho, R = sets.kernel_args()
    js, lam, ys, score, case = _grain_arrays(traj.sites, traj.marks, traj.depths, last_tau,
                                            deep, bad, lo, hi, nu, rho, R)
    parts = []
    for i in range(js.shape[0] - 1):
        trap = None if lam[i, 0] < 0 else tuple(int(c) for c in ys[i])
        parts.append(PartRecord(i, int(js[i]), int(js[i + 1]), tuple(int(v) for v in lam[i]), trap,
                                float(score[i]), int(case[i]), traj.sites[js[i + 1]] - traj.sites[js[i]]))
    J = next((p.i for p in parts if p.case == CASE_BAD), None)
    truncated = js[-1] < traj.steps
    return CoarseGrainReport(js, parts, J, bool(truncated), sc.rho, sc.nu,
                             {"n": sc.n, "h": sc.h, "r": sc.r, "g": sc.g})


def score_sum_discrepancy(report: CoarseGrainReport, traj: TrajectoryRecord, n: int, alpha: float,
                          k_max: int) -> float:
    """max over 1 <= k <= k_max of |S(j_k) - sum_{j<k} s_j| / 2^(n/alpha); inf past a bad part."""
    if k_max < 1:
        raise ParameterError("k_max must be >= 1")
    if len(report.parts) < k_max:
        raise HorizonError(f"trajectory holds {len(report.parts)} complete parts, need {k_max}")
    scale = 2.0 ** (n / alpha)
    worst, acc = 0.0, 0.0
    for k in range(1, k_max + 1):
        acc += report.parts[k - 1].score
        if not math.isfinite(acc):
            return math.inf
        worst = max(worst, abs(traj.clock[report.stopping_times[k]] - acc))
    return worst / scale


def exceed_fraction(discrepancies, delta: float) -> StatsSummary:
    """Fraction of replicas with discrepancy >= delta."""
    return proportion_summary(np.asarray(discrepancies) >= delta, "exceed-fraction")


# ---- streamed parts for batch statistics --------------------------------------------------


@nb.njit(cache=True)
def _stream_part(envp, state, pos, S, deep, bad, lo, hi, nu, rho, R):
    """Run one part from ``pos`` (updated in place). Returns (state, S, score, case, region_error)."""
    d = pos.shape[0]
    rho2 = rho * rho
    nu2 = nu * (nu * (1.0 + 1e-12))
    R2 = R * R
    x0 = pos.copy()
    y = pos.copy()
    have = False
    l2 = False
    l3 = False
    score = 0.0
    first = True
    while True:
        t = tau_kernel(envp, pos)
        if t < 0:
            return state, S, 0.0, CASE_BAD, True
        deep_here = _is_deep(t, pos, lo, hi, R2)
        if have and not l2 and _sq(pos, y) > nu2:
            l2 = True
        if deep_here:
            if not have:
                have = True
                for i in range(d):
                    y[i] = pos[i]
            elif (l2 or not _same(pos, y)) and not first:
                l3 = True
        first = False
        state, e = next_exp(state)
        if have and not l2 and _same(pos, y):
            score += e * t
        S += e * t
        state, dr = next_direction(state, 2 * d)
        pos[dr >> 1] += 1 if (dr & 1) == 0 else -1
        if _sq(pos, x0) > rho2:
            break
    case = _classify(x0, pos, y, have, l2, not l3, deep, bad, nu, rho, R)
    if case == CASE_ZERO:
        score = 0.0
    elif case == CASE_BAD:
        score = _INF
    return state, S, score, case, False


@nb.njit(parallel=True, cache=True)
def _score_batch(envp, base, x0, replicas, deep, bad, lo, hi, nu, rho, R):
    d = x0.shape[0]
    scores = np.empty(replicas)
    cases = np.empty(replicas, dtype=np.int64)
    disp = np.empty((replicas, d), dtype=np.int64)
    err = np.zeros(replicas, dtype=np.bool_)
    for r in nb.prange(replicas):
        pos = x0.copy()
        state = replica_key(base, r)
        state, S, sc, cs, e = _stream_part(envp, state, pos, 0.0, deep, bad, lo, hi, nu, rho, R)
        scores[r] = sc
        cases[r] = cs
        err[r] = e
        for i in range(d):
            disp[r, i] = pos[i] - x0[i]
    return scores, cases, disp, err


@nb.njit(parallel=True, cache=True)
def _lemma24_batch(envp, base, d, k_max, replicas, deep, bad, lo, hi, nu, rho, R, scale):
    """Per replica: max_k |S(j_k) - sum_{j<k} s_j| / scale over k <= k_max (inf after a bad part)."""
    out = np.empty(replicas)
    first_bad = -np.ones(replicas, dtype=np.int64)
    err = np.zeros(replicas, dtype=np.bool_)
    for r in nb.prange(replicas):
        pos = np.zeros(d, dtype=np.int64)
        state = replica_key(base, r)
        S = 0.0
        acc = 0.0
        worst = 0.0
        for k in range(k_max):
            state, S, sc, cs, e = _stream_part(envp, state, pos, S, deep, bad, lo, hi, nu, rho, R)
            if e:
                err[r] = True
                break
            if cs == CASE_BAD:
                first_bad[r] = k
                worst = _INF
                break
            acc += sc
            worst = max(worst, abs(S - acc))
        out[r] = worst / scale
    return out, first_bad, err


@dataclass
class ScoreSample:
    """Empirical law of (s^n(x), r^n(x)) from independent single parts started at x."""

    x: np.ndarray
    scores: np.ndarray
    cases: np.ndarray
    displacements: np.ndarray
    scale: float  # 2^(n/alpha)
    h: float
    r: float

    @property
    def n(self) -> int:
        return self.scores.size

    def p_nonzero(self) -> StatsSummary:
        return proportion_summary(self.cases != CASE_ZERO, "P[s != 0]")

    def p_infinite(self) -> StatsSummary:
        return proportion_summary(self.cases == CASE_BAD, "P[s = inf]")

    def laplace(self, lam: float) -> float:
        """mean of exp(-lam s / 2^(n/alpha)) over finite scores."""
        fin = np.isfinite(self.scores)
        return float(np.exp(-lam * self.scores[fin] / self.scale).mean())


def sample_score_at(env: Environment, sc: ScaleSet, sets: TrapSets, x, replicas: int,
                    master_seed: int = 0) -> ScoreSample:
    """Independent single parts from x in the safe interior."""
    x = np.asarray(x, dtype=np.int64).reshape(-1)
    if not bool(sets.is_safe_interior(x)[0]):
        raise PreconditionError(f"{tuple(x)} is not in the safe interior set")
    deep, bad, lo, hi, nu, rho, R = sets.kernel_args()
    base = np.uint64(base_key(master_seed, "score-" + "_".join(map(str, x))))
    scores, cases, disp, err = _score_batch(env.kernel_args, base, x, replicas, deep, bad, lo, hi, nu, rho, R)
    if err.any():
        raise HorizonError("a part left the addressable region; enlarge the environment")
    return ScoreSample(x, scores, cases, disp, 2.0 ** (sc.n / sc.alpha), sc.h, sc.r)


def lemma24_discrepancies(env: Environment, sc: ScaleSet, sets: TrapSets, k_max: int, replicas: int,
                          master_seed: int = 0):
    """Normalized score-sum discrepancy for independent walks from the origin.

    Replica r follows the walk of ``run_walk(rng_key=stream_key(master_seed, "lemma24", r))``.
    Returns (discrepancy per replica, index of the first bad part or -1).
    """
    deep, bad, lo, hi, nu, rho, R = sets.kernel_args()
    base = np.uint64(base_key(master_seed, "lemma24"))
    out, first_bad, err = _lemma24_batch(env.kernel_args, base, env.d, int(k_max), replicas, deep, bad,
                                         lo, hi, nu, rho, R, 2.0 ** (sc.n / sc.alpha))
    if err.any():
        raise HorizonError("a walk left the addressable region; use an unbounded environment")
    return out, first_bad


def displacement_laplace_check(samples, xi, sc: ScaleSet, rng: Optional[np.random.Generator] = None,
                               resamples: int = 500) -> StatsSummary:
    """h^2 {1 - mean exp(-xi . r / r(n))} with a bootstrap interval."""
    r = np.asarray(samples, dtype=float)
    if r.shape[0] == 0:
        raise ParameterError("empty displacement sample")
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        return StatsSummary(0.0, 0.0, 0.0, 0.0, r.shape[0], "displacement-laplace")
    vals = sc.h ** 2 * (1.0 - np.exp(-(r @ xi) / sc.r))
    rng = np.random.default_rng(0) if rng is None else rng
    out = bootstrap_ci(vals, np.mean, 0.95, resamples, rng, "displacement-laplace")
    out.std_error = float(vals.std(ddof=1) / math.sqrt(vals.size))
    out.extras = {"mean_projection": float((r @ xi).mean()),
                  "mean_projection_se": float((r @ xi).std(ddof=1) / math.sqrt(vals.size))}
    return out
