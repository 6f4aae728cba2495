"""Embedded walk, clock process, trap-model trajectory, CTRW and rescaling.

The walk runs in discrete time with exponential marks: S(k+1) - S(k) = e_k
tau_{Y(k)} and X(t) = Y(k) for S(k) <= t < S(k+1). Every replica draws from
its own counter stream, so batch kernels are independent of thread count.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numba as nb
import numpy as np

from .errors import HorizonError, ParameterError, RegionError
from .fk_limit import scaling_function
from .lattice_env import Environment, tau_kernel
from .rng import base_key, next_direction, next_exp, next_unit, replica_key, stream_key
from .stats_kit import StatsSummary, proportion_summary

STOP_STEPS, STOP_EXIT, STOP_CLOCK = 0, 1, 2
_STOP_CODES = {"steps": STOP_STEPS, "exit": STOP_EXIT, "clock": STOP_CLOCK}


@dataclass
class TrajectoryRecord:
    """Y(0..K), marks e_0..e_{K-1}, depths tau_{Y(0..K-1)} and clock S(0..K)."""

    sites: np.ndarray
    marks: np.ndarray
    depths: np.ndarray
    clock: np.ndarray
    exit_step: Optional[int] = None
    truncated: bool = False
    kind: str = "trap"
    env: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.marks.shape[0]

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    def export_csv(self, path, stride: int = 1):
        d = self.d
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"] + [f"y{i}" for i in range(d)] + ["e_k", "S_k"])
            for k in range(0, self.steps + 1, stride):
                e = repr(float(self.marks[k])) if k < self.steps else ""
                w.writerow([k] + [int(c) for c in self.sites[k]] + [e, repr(float(self.clock[k]))])


@nb.njit(cache=True)
def _walk_chunk(envp, state, pos, S, n_steps, stop_mode, stop_val, unit_marks):
    """Advance one walk by at most n_steps; stops early on the exit/clock rule.

    Returns (sites, marks, depths, clock, state, stopped, region_error).
    ``sites``/``clock`` include the starting point.
    """
    d = pos.shape[0]
    sites = np.empty((n_steps + 1, d), dtype=np.int64)
    marks = np.empty(n_steps)
    depths = np.empty(n_steps)
    clock = np.empty(n_steps + 1)
    sites[0] = pos
    clock[0] = S
    k = 0
    stopped = False
    if stop_mode == STOP_EXIT:
        q = 0.0
        for i in range(d):
            q += float(pos[i]) * float(pos[i])
        stopped = q > stop_val
    elif stop_mode == STOP_CLOCK:
        stopped = S > stop_val
    while not stopped and k < n_steps:
        t = tau_kernel(envp, pos)
        if t < 0:
            return sites[:k + 1], marks[:k], depths[:k], clock[:k + 1], state, stopped, True
        if unit_marks:
            e = 1.0
        else:
            state, e = next_exp(state)
        state, dr = next_direction(state, 2 * d)
        pos[dr >> 1] += 1 if (dr & 1) == 0 else -1
        S += e * t
        marks[k] = e
        depths[k] = t
        k += 1
        sites[k] = pos
        clock[k] = S
        if stop_mode == STOP_EXIT:
            q = 0.0
            for i in range(d):
                q += float(pos[i]) * float(pos[i])
            stopped = q > stop_val
        elif stop_mode == STOP_CLOCK:
            stopped = S > stop_val
    return sites[:k + 1], marks[:k], depths[:k], clock[:k + 1], state, stopped, False


def iter_walk_chunks(env: Environment, max_steps: int, stop_rule: str = "steps", stop_value: float = 0.0,
                     rng_key: int = 0, chunk: int = 1 << 16, unit_marks: bool = False,
                     start=None) -> Iterator[tuple]:
    """Stream a walk in chunks of (sites, marks, depths, clock); the last chunk ends the walk."""
    if max_steps < 1:
        raise ParameterError("max_steps must be >= 1")
    mode = _STOP_CODES[stop_rule]
    if mode == STOP_EXIT:
        radius = env.radius if stop_value <= 0 else stop_value
        if not math.isfinite(radius):
            raise ParameterError("exit rule needs a bounded region or an explicit radius")
        sval = radius * radius
    else:
        sval = float(stop_value)
    pos = np.zeros(env.d, dtype=np.int64) if start is None else np.array(start, dtype=np.int64)
    state = np.uint64(rng_key)
    S = 0.0
    done = 0
    while True:
        n = min(chunk, max_steps - done)
        sites, marks, depths, clock, state, stopped, bad = _walk_chunk(
            env.kernel_args, state, pos, S, n, mode, sval, unit_marks)
        if bad:
            raise RegionError(f"walk reached {tuple(pos)} outside the addressable region")
        state = np.uint64(state)  # numba hands uint64 back as a python int
        done += marks.shape[0]
        S = clock[-1]
        last = stopped or done >= max_steps
        yield sites, marks, depths, clock, stopped
        if last:
            return


def run_walk(env: Environment, max_steps: int, stop_rule: str = "steps", rng_key: Optional[int] = None,
             stop_value: float = 0.0, unit_marks: bool = False, master_seed: int = 0,
             replica: int = 0) -> TrajectoryRecord:
    """Simulate Y, the marks and the clock.

    ``stop_rule`` is ``"steps"`` (run ``max_steps``), ``"exit"`` (first exit
    from the region, or from D(stop_value) when given) or ``"clock"`` (first k
    with S(k) > stop_value). Running out of steps sets ``truncated``.
    """
    if rng_key is None:
        rng_key = stream_key(master_seed, "walk", replica)
    parts = list(iter_walk_chunks(env, max_steps, stop_rule, stop_value, rng_key, unit_marks=unit_marks))
    sites = np.concatenate([parts[0][0]] + [p[0][1:] for p in parts[1:]])
    clock = np.concatenate([parts[0][3]] + [p[3][1:] for p in parts[1:]])
    marks = np.concatenate([p[1] for p in parts])
    depths = np.concatenate([p[2] for p in parts])
    stopped = parts[-1][4]
    exit_step = marks.shape[0] if (stop_rule == "exit" and stopped) else None
    truncated = stop_rule != "steps" and not stopped
    return TrajectoryRecord(sites, marks, depths, clock, exit_step, truncated, "trap", env.descriptor())


def scripted_trajectory(env: Environment, sites, marks) -> TrajectoryRecord:
    """Trajectory from a supplied path and marks; depths and clock come from ``env``."""
    from .lattice_env import tau_many

    sites = np.asarray(sites, dtype=np.int64)
    marks = np.asarray(marks, dtype=float)
    if sites.shape[0] != marks.shape[0] + 1:
        raise ParameterError("need one more site than marks")
    if np.any(np.abs(np.diff(sites, axis=0)).sum(axis=1) != 1):
        raise ParameterError("consecutive sites must be nearest neighbours")
    depths = tau_many(env, sites[:-1]) if marks.size else np.zeros(0)
    clock = np.concatenate([[0.0], np.cumsum(marks * depths)])
    return TrajectoryRecord(sites, marks, depths, clock, None, False, "scripted", env.descriptor())


def position_at(traj: TrajectoryRecord, t: float) -> np.ndarray:
    """X(t) = Y(k) for S(k) <= t < S(k+1)."""
    if t < 0:
        raise ParameterError("t must be nonnegative")
    if t >= traj.clock[-1]:
        raise HorizonError(f"t = {t} is beyond the trajectory clock S(K) = {traj.clock[-1]}")
    k = int(np.searchsorted(traj.clock, t, side="right")) - 1
    return traj.sites[k]


# ---- rescaling ---------------------------------------------------------------------


@dataclass
class RescaledTriple:
    t: np.ndarray
    S_N: np.ndarray
    Y_N: np.ndarray
    X_N: np.ndarray
    inverse_index: np.ndarray  # k*(t) = min{k : S(k) > tN}; S_N^{-1}(t) = k*/f^2
    N: float
    f_N: float
    C_d_alpha: float

    @property
    def inverse(self) -> np.ndarray:
        return self.inverse_index / self.f_N ** 2


def rescale(traj: TrajectoryRecord, N: float, env: Environment, T: float, grid_points: int,
            G: Optional[float] = None) -> RescaledTriple:
    """S_N(t) = S(floor(t f^2))/N, Y_N(t) = sqrt(d) Y(floor(t f^2))/f, X_N(t) = sqrt(d) X(tN)/f."""
    from .fk_limit import scaling_constant

    d, alpha = env.d, env.alpha
    f = scaling_function(N, d, alpha, G)
    t = np.linspace(0.0, T, grid_points)
    kmax = int(math.floor(T * f * f))
    if traj.steps < kmax:
        raise HorizonError(f"trajectory has {traj.steps} steps, need {kmax}")
    if traj.clock[-1] <= T * N:
        raise HorizonError(f"trajectory clock {traj.clock[-1]} does not exceed T N = {T * N}")
    k = np.floor(t * f * f).astype(np.int64)
    S_N = traj.clock[k] / N
    Y_N = math.sqrt(d) * traj.sites[k] / f
    kstar = np.searchsorted(traj.clock, t * N, side="right")
    X_N = math.sqrt(d) * traj.sites[kstar - 1] / f
    return RescaledTriple(t, S_N, Y_N, X_N, kstar, N, f, scaling_constant(d, alpha, G))


def grid_identity_residual(triple: RescaledTriple, traj: TrajectoryRecord) -> float:
    """max |X_N(t) - Y_N(S_N^{-1}(t)-)| over the grid, computed from the triple's inverse.

    Y_N evaluated just before the jump time k*/f^2 of S_N uses index k* - 1.
    """
    f, d = triple.f_N, traj.d
    y_left = math.sqrt(d) * traj.sites[triple.inverse_index - 1] / f
    return float(np.max(np.abs(triple.X_N - y_left)))


# ---- CTRW -------------------------------------------------------------------------


@nb.njit(cache=True)
def _pareto_wait(state, alpha):
    state, u = next_unit(state)
    return state, u ** (-1.0 / alpha)


def ctrw_trajectory(d: int, alpha: float, steps: int, master_seed: int = 0, replica: int = 0) -> TrajectoryRecord:
    """CTRW with i.i.d. Pareto waits; marks are 1 and ``depths`` hold the waits.

    U(t) = Y(k) while the clock sits in [S(k), S(k+1)), the same convention as
    the trap model.
    """
    if steps < 1:
        raise ParameterError("steps must be >= 1")
    sites, waits = _ctrw_path(np.uint64(stream_key(master_seed, "ctrw", replica)), d, alpha, steps)
    clock = np.concatenate([[0.0], np.cumsum(waits)])
    return TrajectoryRecord(sites, np.ones(steps), waits, clock, None, False, "ctrw",
                            {"d": d, "alpha": alpha, "mode": "ctrw"})


@nb.njit(cache=True)
def _ctrw_path(state, d, alpha, steps):
    sites = np.zeros((steps + 1, d), dtype=np.int64)
    waits = np.empty(steps)
    pos = np.zeros(d, dtype=np.int64)
    for k in range(steps):
        state, waits[k] = _pareto_wait(state, alpha)
        state, dr = next_direction(state, 2 * d)
        pos[dr >> 1] += 1 if (dr & 1) == 0 else -1
        sites[k + 1] = pos
    return sites, waits


@nb.njit(parallel=True, cache=True)
def _ctrw_positions(base, d, alpha, t_abs, replicas):
    out = np.zeros((replicas, d), dtype=np.int64)
    for r in nb.prange(replicas):
        s = replica_key(base, r)
        pos = np.zeros(d, dtype=np.int64)
        S = 0.0
        while True:
            s, w = _pareto_wait(s, alpha)
            if S + w > t_abs:
                break
            S += w
            s, dr = next_direction(s, 2 * d)
            pos[dr >> 1] += 1 if (dr & 1) == 0 else -1
        out[r] = pos
    return out


def ctrw_constant(d: int, alpha: float) -> float:
    """C with C N^(-alpha/2) U(tN) -> Z(t): sqrt(d Gamma(1 - alpha))."""
    return math.sqrt(d * math.gamma(1 - alpha))


def ctrw_rescaled_positions(d: int, alpha: float, N: float, t: float, replicas: int,
                            master_seed: int = 0) -> np.ndarray:
    """C N^(-alpha/2) U(tN) for independent CTRWs."""
    base = np.uint64(stream_key(master_seed, "ctrw"))
    pos = _ctrw_positions(base, d, alpha, t * N, replicas)
    return ctrw_constant(d, alpha) * N ** (-alpha / 2) * pos


# ---- batch kernels on a quenched environment ---------------------------------------------


@nb.njit(inline="always", cache=True)
def _with_key(envp, key):
    return (key, envp[1], envp[2], envp[3], envp[4], envp[5], envp[6], envp[7], envp[8])


@nb.njit(parallel=True, cache=True)
def _clock_batch(envp, env_keys, base, d, K, replicas):
    """S(K) for independent walks; env_keys has one key (quenched) or one per replica."""
    out = np.empty(replicas)
    bad = np.zeros(replicas, dtype=np.bool_)
    for r in nb.prange(replicas):
        ep = _with_key(envp, env_keys[0] if env_keys.shape[0] == 1 else env_keys[r])
        s = replica_key(base, r)
        pos = np.zeros(d, dtype=np.int64)
        S = 0.0
        for k in range(K):
            t = tau_kernel(ep, pos)
            if t < 0:
                bad[r] = True
                break
            s, e = next_exp(s)
            S += e * t
            s, dr = next_direction(s, 2 * d)
            pos[dr >> 1] += 1 if (dr & 1) == 0 else -1
        out[r] = S
    return out, bad


def clock_values(env: Environment, K: int, replicas: int, master_seed: int = 0,
                 annealed: bool = False) -> np.ndarray:
    """S(K) over replicas in one fixed environment (or a fresh one per replica).

    In quenched mode replica r is the walk of ``run_walk(env, K, master_seed=master_seed, replica=r)``.
    """
    keys = _env_keys(env, replicas, annealed)
    out, bad = _clock_batch(env.kernel_args, keys, np.uint64(base_key(master_seed, "walk")),
                            env.d, int(K), replicas)
    if bad.any():
        raise RegionError("a walk left the addressable region")
    return out


def clock_marginal(env: Environment, N: float, replicas: int, master_seed: int = 0,
                   G: Optional[float] = None) -> np.ndarray:
    """S_N(1) = S(floor(f(N)^2)) / N."""
    f = scaling_function(N, env.d, env.alpha, G)
    return clock_values(env, int(math.floor(f * f)), replicas, master_seed) / N


def _env_keys(env: Environment, replicas: int, annealed: bool) -> np.ndarray:
    if not annealed:
        return np.array([env.key], dtype=np.uint64)
    from .rng import base_key, replica_key_py

    b = base_key(env.master_seed, "environment-annealed")
    return np.array([replica_key_py(b, r) for r in range(replicas)], dtype=np.uint64)


@nb.njit(parallel=True, cache=True)
def _aging_batch(envp, env_keys, base, d, t_w, t_end, replicas, max_steps):
    """Per replica: (X(t_w) == X(t_end), no jump in [t_w, t_end], ran out of steps)."""
    same = np.zeros(replicas, dtype=np.bool_)
    still = np.zeros(replicas, dtype=np.bool_)
    trunc = np.zeros(replicas, dtype=np.bool_)
    for r in nb.prange(replicas):
        ep = _with_key(envp, env_keys[0] if env_keys.shape[0] == 1 else env_keys[r])
        s = replica_key(base, r)
        pos = np.zeros(d, dtype=np.int64)
        xw = np.zeros(d, dtype=np.int64)
        S = 0.0
        have_w = False
        jumps_after = 0
        k = 0
        while True:
            t = tau_kernel(ep, pos)
            if t < 0:
                trunc[r] = True
                break
            s, e = next_exp(s)
            S_next = S + e * t
            # X = pos on [S, S_next)
            if not have_w and S_next > t_w:
                have_w = True
                for i in range(d):
                    xw[i] = pos[i]
            if S_next > t_end:
                eq = True
                for i in range(d):
                    if pos[i] != xw[i]:
                        eq = False
                same[r] = eq
                still[r] = jumps_after == 0
                break
            if have_w:
                jumps_after += 1
            S = S_next
            s, dr = next_direction(s, 2 * d)
            pos[dr >> 1] += 1 if (dr & 1) == 0 else -1
            k += 1
            if k >= max_steps:
                trunc[r] = True
                break
    return same, still, trunc


def aging_probability_estimate(env: Environment, t_w: float, theta: float, replicas: int,
                               master_seed: int = 0, mode: str = "quenched",
                               max_steps: int = 10 ** 9) -> StatsSummary:
    """Estimate P[X((1+theta) t_w) = X(t_w) | tau].

    The estimate is the same-site fraction; the fraction of replicas that do
    not jump at all during [t_w, (1+theta) t_w] is reported in ``extras``.
    ``mode="annealed"`` draws a fresh environment per replica.
    """
    if t_w <= 0 or theta <= 0:
        raise ParameterError("need t_w > 0 and theta > 0")
    if mode not in ("quenched", "annealed"):
        raise ParameterError(f"unknown mode {mode!r}")
    keys = _env_keys(env, replicas, mode == "annealed")
    same, still, trunc = _aging_batch(env.kernel_args, keys, np.uint64(stream_key(master_seed, "aging")),
                                      env.d, float(t_w), float((1 + theta) * t_w), replicas, max_steps)
    if trunc.any():
        raise HorizonError(f"{int(trunc.sum())} replicas exhausted the step budget")
    out = proportion_summary(same, f"aging-{mode}")
    out.extras = {"mode": mode, "no_move_fraction": float(still.mean()), "t_w": t_w, "theta": theta}
    return out
