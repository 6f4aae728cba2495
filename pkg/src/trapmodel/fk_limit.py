"""Limit objects: the stable subordinator, its inverse, the fractional-kinetics
process, the Mittag-Leffler function, the arcsine aging law and F_d(lambda).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, List, Optional, Sequence

import numpy as np
from scipy import integrate, special

from .errors import HorizonError, ParameterError, UnsupportedDimensionError


def _check_alpha(alpha: float, allow_one: bool = False):
    ok = 0.0 < alpha < 1.0 or (allow_one and alpha == 1.0)
    if not ok:
        raise ParameterError(f"alpha must lie in (0, 1{']' if allow_one else ')'}, got {alpha}")


# ---- one-sided stable laws -----------------------------------------------------------


def zolotarev_a(alpha: float, u):
    """A(u) = [sin(alpha u)^alpha sin((1-alpha) u)^(1-alpha) / sin u]^(1/(1-alpha))."""
    u = np.asarray(u, dtype=float)
    num = alpha * np.log(np.sin(alpha * u)) + (1 - alpha) * np.log(np.sin((1 - alpha) * u))
    return np.exp((num - np.log(np.sin(u))) / (1 - alpha))


def zolotarev_a0(alpha: float) -> float:
    return alpha ** (alpha / (1 - alpha)) * (1 - alpha)


def sample_stable(alpha: float, size, rng: np.random.Generator) -> np.ndarray:
    """One-sided stable variables with E exp(-lam V) = exp(-lam^alpha).

    Uniform-plus-exponential transformation: V = (A(U) / E)^((1-alpha)/alpha).
    """
    _check_alpha(alpha)
    U = rng.uniform(0.0, math.pi, size=size)
    E = rng.standard_exponential(size=size)
    return (zolotarev_a(alpha, U) / E) ** ((1 - alpha) / alpha)


def _sample_tilted_w(alpha: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """W = V'^(-alpha) where V' has density proportional to v^(-alpha) p_1(v).

    In the (U, E) representation the tilt factor is (E/A(U))^(1-alpha), so E
    becomes Gamma(2 - alpha) and U gets density proportional to A(U)^(alpha-1),
    sampled by rejection against the uniform law (A is increasing on (0, pi)).
    """
    a0 = zolotarev_a0(alpha)
    U = np.empty(size)
    todo = np.arange(size)
    while todo.size:
        cand = rng.uniform(0.0, math.pi, size=todo.size)
        acc = rng.uniform(size=todo.size) < (a0 / zolotarev_a(alpha, cand)) ** (1 - alpha)
        U[todo[acc]] = cand[acc]
        todo = todo[~acc]
    E = rng.gamma(2.0 - alpha, size=size)
    return (E / zolotarev_a(alpha, U)) ** (1 - alpha)


def sample_passage(alpha: float, level, rng: np.random.Generator):
    """Exact first passage of the subordinator above ``level`` (array).

    Returns (time, undershoot, jump): the passage time T = inf{t : V(t) > level},
    V(T-) and the size of the crossing jump. Given the undershoot u, the jump is
    Pareto beyond level - u and T = u^alpha W with W from ``_sample_tilted_w``.
    """
    level = np.asarray(level, dtype=float)
    n = level.size
    frac = rng.beta(alpha, 1.0 - alpha, size=n)
    under = level * frac
    gap = level - under
    jump = gap * rng.uniform(size=n) ** (-1.0 / alpha)
    W = _sample_tilted_w(alpha, n, rng)
    T = under ** alpha * W
    zero = level <= 0
    T[zero], under[zero], jump[zero] = 0.0, 0.0, 0.0
    return T, under, jump


@dataclass
class SubordinatorPath:
    t: np.ndarray
    v: np.ndarray
    alpha: float

    def export_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "V"])
            for a, b in zip(self.t, self.v):
                w.writerow([repr(float(a)), repr(float(b))])


def sample_stable_subordinator(alpha: float, t_grid, rng: np.random.Generator) -> SubordinatorPath:
    """V on a grid from independent stable increments, (dt)^(1/alpha) V(1)."""
    _check_alpha(alpha)
    t = np.asarray(t_grid, dtype=float).reshape(-1)
    if t.size == 0 or t[0] < 0 or np.any(np.diff(t) <= 0):
        raise ParameterError("t_grid must be nonempty, nonnegative and strictly increasing")
    dt = np.diff(np.concatenate([[0.0], t]))
    inc = np.zeros_like(dt)
    pos = dt > 0
    inc[pos] = dt[pos] ** (1 / alpha) * sample_stable(alpha, int(pos.sum()), rng)
    return SubordinatorPath(t=t, v=np.cumsum(inc), alpha=alpha)


def invert_subordinator(path: SubordinatorPath, s: float) -> float:
    """inf{t in grid : V(t) > s}."""
    if s >= path.v[-1]:
        raise HorizonError(f"level {s} is not exceeded on the sampled grid (V(t_G) = {path.v[-1]})")
    return float(path.t[np.searchsorted(path.v, s, side="right")])


# ---- Brownian motion and the FK process --------------------------------------------------


class BrownianPath:
    """Lazily sampled d-dimensional Brownian motion.

    Times past the last sampled one get a fresh Gaussian increment; times in
    between get a Brownian-bridge draw, so values at any query set are exact.
    """

    def __init__(self, d: int, rng: np.random.Generator):
        self.d = d
        self.rng = rng
        self.times: List[float] = [0.0]
        self.values: List[np.ndarray] = [np.zeros(d)]

    def at(self, t: float) -> np.ndarray:
        if t < 0:
            raise ParameterError("Brownian time must be nonnegative")
        k = int(np.searchsorted(self.times, t))
        if k < len(self.times) and self.times[k] == t:
            return self.values[k]
        if k == len(self.times):
            dt = t - self.times[-1]
            val = self.values[-1] + math.sqrt(dt) * self.rng.standard_normal(self.d)
        else:
            t0, t1 = self.times[k - 1], self.times[k]
            b0, b1 = self.values[k - 1], self.values[k]
            w = (t - t0) / (t1 - t0)
            sd = math.sqrt((t - t0) * (t1 - t) / (t1 - t0))
            val = b0 + w * (b1 - b0) + sd * self.rng.standard_normal(self.d)
        self.times.insert(k, float(t))
        self.values.insert(k, val)
        return val


@dataclass
class FKPath:
    s: np.ndarray
    z: np.ndarray  # shape (len(s), d)
    inverse_time: np.ndarray  # V^{-1}(s)
    level_after: np.ndarray  # V(V^{-1}(s)), the subordinator value just after the crossing
    alpha: float
    brownian: Optional[BrownianPath] = field(default=None, repr=False)

    def export_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s"] + [f"z{i}" for i in range(self.z.shape[1])] + ["inverse_time"])
            for k in range(self.s.size):
                w.writerow([repr(float(self.s[k]))] + [repr(float(c)) for c in self.z[k]]
                           + [repr(float(self.inverse_time[k]))])


def _check_s_grid(s_grid) -> np.ndarray:
    s = np.asarray(s_grid, dtype=float).reshape(-1)
    if s.size == 0 or s[0] < 0 or np.any(np.diff(s) < 0):
        raise ParameterError("s_grid must be nonempty, nonnegative and nondecreasing")
    return s


def inverse_subordinator_times(alpha: float, s_grid, replicas: int, rng: np.random.Generator):
    """Exact joint samples of V^{-1}(s_1..s_G) and V just after each crossing.

    By the strong Markov property the subordinator restarts at each passage;
    a grid level below the current position keeps the same inverse time.
    """
    _check_alpha(alpha)
    s = _check_s_grid(s_grid)
    T = np.zeros((replicas, s.size))
    lev = np.zeros((replicas, s.size))
    t_cur = np.zeros(replicas)
    v_cur = np.zeros(replicas)
    for j, sj in enumerate(s):
        need = np.nonzero(v_cur <= sj)[0]
        if need.size:
            dt, under, jump = sample_passage(alpha, sj - v_cur[need], rng)
            t_cur[need] += dt
            v_cur[need] += under + jump
        T[:, j] = t_cur
        lev[:, j] = v_cur
    return T, lev


def sample_fk_batch(d: int, alpha: float, s_grid, replicas: int, rng: np.random.Generator):
    """Z(s_1..s_G) for many independent paths; returns (z, inverse_times).

    Inverse times are nondecreasing along each path, so Brownian motion is
    sampled exactly by independent Gaussian increments between them.
    """
    if d < 1:
        raise UnsupportedDimensionError("d must be >= 1")
    T, _ = inverse_subordinator_times(alpha, s_grid, replicas, rng)
    dT = np.diff(np.concatenate([np.zeros((replicas, 1)), T], axis=1), axis=1)
    incr = np.sqrt(dT)[:, :, None] * rng.standard_normal((replicas, T.shape[1], d))
    return np.cumsum(incr, axis=1), T


def sample_fk_path(d: int, alpha: float, s_grid, rng: np.random.Generator) -> FKPath:
    """One path of Z(s) = B(V^{-1}(s)) at the grid points."""
    s = _check_s_grid(s_grid)
    T, lev = inverse_subordinator_times(alpha, s, 1, rng)
    B = BrownianPath(d, rng)
    z = np.array([B.at(float(t)) for t in T[0]]).reshape(s.size, d)
    return FKPath(s=s, z=z, inverse_time=T[0], level_after=lev[0], alpha=alpha, brownian=B)


def sample_fk_marginal(d: int, alpha: float, t: float, replicas: int, rng: np.random.Generator):
    """Z(t) through the one-time identity V^{-1}(t) = (t / V(1))^alpha in law."""
    V = sample_stable(alpha, replicas, rng)
    tau = (t / V) ** alpha
    return np.sqrt(tau)[:, None] * rng.standard_normal((replicas, d))


# ---- special functions --------------------------------------------------------------------


def _ml_series(alpha: float, x: float) -> float:
    """E_alpha(-x) by direct summation; accurate while x^(1/alpha) is moderate."""
    total, m = 0.0, 0
    while True:
        term = math.exp(m * math.log(x) - special.gammaln(1 + m * alpha)) if x > 0 else (1.0 if m == 0 else 0.0)
        total += term if m % 2 == 0 else -term
        if m > 5 and term < 1e-17 * max(1.0, abs(total)):
            break
        m += 1
        if m > 2000:
            raise ParameterError("Mittag-Leffler series did not converge")
    return total


def _ml_integral(alpha: float, x: float) -> float:
    """E_alpha(-x) = int_0^inf e^{-r t} K(r) dr with t = x^(1/alpha).

    After r = v^(1/alpha) the kernel is smooth:
    sin(alpha pi) / (alpha pi) * exp(-t v^(1/alpha)) / (v^2 + 2 v cos(alpha pi) + 1).
    """
    t = x ** (1 / alpha)
    c, s = math.cos(alpha * math.pi), math.sin(alpha * math.pi)

    def f(v):
        return math.exp(-t * v ** (1 / alpha)) / (v * v + 2 * v * c + 1)

    pieces = [(0.0, 1.0), (1.0, 4.0), (4.0, math.inf)]
    total = 0.0
    for a, b in pieces:
        val, _ = integrate.quad(f, a, b, epsabs=1e-15, epsrel=1e-13, limit=400,
                                points=[1.0] if a < 1.0 < b else None)
        total += val
    return s / (alpha * math.pi) * total


SERIES_CUTOFF = 4.0  # series is used while x^(1/alpha) <= this


def mittag_leffler(alpha: float, z: float, method: str = "auto") -> float:
    """E_alpha(z) on the negative real axis, alpha in (0, 1]."""
    _check_alpha(alpha, allow_one=True)
    if z > 0:
        raise ParameterError("only z <= 0 is supported")
    x = -float(z)
    if alpha == 1.0:
        return math.exp(-x)
    if x == 0.0:
        return 1.0
    if method == "series" or (method == "auto" and x ** (1 / alpha) <= SERIES_CUTOFF):
        return _ml_series(alpha, x)
    if method in ("integral", "auto"):
        return _ml_integral(alpha, x)
    raise ParameterError(f"unknown method {method!r}")


def fk_charfn_target(alpha: float, t: float, xi) -> float:
    """E exp(i xi . Z(t)) = E_alpha(-|xi|^2 t^alpha / 2)."""
    if t < 0:
        raise ParameterError("t must be nonnegative")
    xi2 = float(np.sum(np.asarray(xi, dtype=float) ** 2))
    return mittag_leffler(alpha, -xi2 * t ** alpha / 2)


def aging_function(alpha: float, theta: float) -> float:
    """(sin(alpha pi)/pi) int_0^{1/(1+theta)} u^(alpha-1) (1-u)^(-alpha) du.

    Quadrature with the algebraic endpoint weight; for b > 1/2 the complementary
    integral near u = 1 is computed instead so the singular factor stays a weight.
    """
    _check_alpha(alpha)
    if theta < 0:
        raise ParameterError("theta must be nonnegative")
    if theta == 0:
        return 1.0
    b = 1.0 / (1.0 + theta)
    norm = math.sin(alpha * math.pi) / math.pi
    if b <= 0.5:
        val, _ = integrate.quad(lambda u: (1 - u) ** (-alpha), 0.0, b, weight="alg",
                                wvar=(alpha - 1, 0.0), epsabs=0.0, epsrel=1e-12)
        return norm * val
    val, _ = integrate.quad(lambda v: (1 - v) ** (alpha - 1), 0.0, 1.0 - b, weight="alg",
                            wvar=(-alpha, 0.0), epsabs=0.0, epsrel=1e-12)
    return 1.0 - norm * val


# ---- constants and F_d ------------------------------------------------------------------


@lru_cache(maxsize=None)
def green_constant(d: int) -> float:
    from .srw_analytics import green_free
    return green_free(d, 1e-9).value


def _gg(alpha: float) -> float:
    return math.gamma(1 - alpha) * math.gamma(1 + alpha)


def scaling_constant(d: int, alpha: float, G: Optional[float] = None) -> float:
    """C_d(alpha) in f(N) = C_d N^(alpha/2) (times the log correction for d = 2).

    For d >= 3 this is [G^(alpha-1) Gamma(1-alpha) Gamma(1+alpha)]^(-1/2), the
    value consistent with the hitting constant K_d = 1/G_d(0) measured by
    simulation; ``scaling_constant_uncorrected`` keeps the G^alpha form.
    """
    _check_alpha(alpha)
    if d == 2:
        return (math.pi ** (1 - alpha) * alpha ** (alpha - 1) * _gg(alpha)) ** -0.5
    if d < 2:
        raise UnsupportedDimensionError("d >= 2 required")
    G = green_constant(d) if G is None else G
    return (G ** (alpha - 1) * _gg(alpha)) ** -0.5


def scaling_constant_uncorrected(d: int, alpha: float, G: Optional[float] = None) -> float:
    """[G^alpha Gamma(1-alpha) Gamma(1+alpha)]^(-1/2) for d >= 3 (d = 2 unchanged)."""
    if d == 2:
        return scaling_constant(2, alpha)
    _check_alpha(alpha)
    G = green_constant(d) if G is None else G
    return (G ** alpha * _gg(alpha)) ** -0.5


def c1_constant(d: int, alpha: float) -> float:
    if d == 2:
        return math.sqrt(math.pi) * (math.log(2) / alpha) ** ((1 - alpha) / 2)
    return 1.0


def c2_constant(d: int, alpha: float, G: Optional[float] = None) -> float:
    return 1.0 / (scaling_constant(d, alpha, G) * c1_constant(d, alpha))


def hitting_constants(d: int, G: Optional[float] = None):
    """(K_d, K'_d): P[s != 0] ~ K_d p / h^2 and the score scale K'_d."""
    if d == 2:
        return 1.0 / math.log(2), math.log(2) / math.pi
    G = green_constant(d) if G is None else G
    return 1.0 / G, G


def scaling_function(N: float, d: int, alpha: float, G: Optional[float] = None) -> float:
    """f(N)."""
    C = scaling_constant(d, alpha, G)
    if d == 2:
        return C * N ** (alpha / 2) * math.log(N) ** ((1 - alpha) / 2)
    return C * N ** (alpha / 2)


@dataclass(frozen=True)
class FdParams:
    d: int
    alpha: float
    epsilon: float
    M: float
    K: float
    Kp: float
    p_eps_M: float
    c1: float
    c2: float

    @classmethod
    def build(cls, d: int, alpha: float, epsilon: float, M: float, G: Optional[float] = None) -> "FdParams":
        _check_alpha(alpha)
        if not (0 < epsilon < M):
            raise ParameterError("need 0 < epsilon < M")
        K, Kp = hitting_constants(d, G)
        return cls(d, alpha, epsilon, M, K, Kp, epsilon ** -alpha - M ** -alpha,
                   c1_constant(d, alpha), c2_constant(d, alpha, G))

    def limit(self, lam: float) -> float:
        """epsilon -> 0, M -> inf value K (K' lam)^alpha Gamma(1+alpha) Gamma(1-alpha)."""
        return self.K * (self.Kp * lam) ** self.alpha * _gg(self.alpha)


def f_d_lambda(params: FdParams, lam: float) -> float:
    """F_d(lam) = K {p - int_eps^M alpha z^(-alpha-1) / (1 + K' lam z) dz}.

    Computed as K int alpha c z^(-alpha) / (1 + c z) dz, c = K' lam, on a log
    scale, which avoids cancelling two nearly equal numbers.
    """
    if lam < 0:
        raise ParameterError("lambda must be nonnegative")
    if lam == 0:
        return 0.0
    a = params.alpha
    c = params.Kp * lam
    lo, hi = math.log(params.epsilon), math.log(params.M)

    def f(y):
        return a * c * math.exp((1 - a) * y) / (1 + c * math.exp(y))

    peak = -math.log(c)
    pts = [peak] if lo < peak < hi else None
    val, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-11, limit=500, points=pts)
    return params.K * val


def fd_limit_identity_check(d: int, alpha: float, lambda_set: Iterable[float], t_set: Iterable[float],
                            eps: float, M: float, G: Optional[float] = None) -> dict:
    """Compare (t^alpha / c_2^2) F_d(lambda/t) with lambda^alpha over a grid."""
    p = FdParams.build(d, alpha, eps, M, G)
    rows = []
    for lam in lambda_set:
        for t in t_set:
            lhs = t ** alpha / p.c2 ** 2 * f_d_lambda(p, lam / t)
            rhs = lam ** alpha
            rows.append({"lambda": lam, "t": t, "lhs": lhs, "rhs": rhs, "abs_dev": abs(lhs - rhs),
                         "rel_dev": abs(lhs - rhs) / rhs if rhs > 0 else abs(lhs)})
    rel = [r["rel_dev"] for r in rows]
    spread = {}
    for lam in {r["lambda"] for r in rows}:
        devs = [r["rel_dev"] for r in rows if r["lambda"] == lam]
        spread[lam] = max(devs) - min(devs)
    return {"d": d, "alpha": alpha, "epsilon": eps, "M": M, "rows": rows, "max_rel_dev": max(rel),
            "max_abs_dev": max(r["abs_dev"] for r in rows), "t_spread": max(spread.values())}
