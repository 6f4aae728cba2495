"""Potential theory of the simple random walk on Z^d.

Free Green's function at the origin with a rigorous bracket, Green's functions
of the walk killed on leaving a Euclidean ball (sparse solves or Monte Carlo),
hitting probabilities with their asymptotic bounds, and the hitting sum V_x.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numba as nb
import numpy as np
from scipy import integrate, special
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import cg

from .errors import CapacityError, DivergenceError, ParameterError, PreconditionError
from .lattice_env import Environment, ScaleSet, TrapSets, ball_sites, tau_kernel
from .rng import next_direction, replica_key, stream_key
from .stats_kit import StatsSummary, mean_summary, proportion_summary

EXACT_SITE_LIMIT = 1_000_000


# ---- free Green's function ------------------------------------------------------


@dataclass(frozen=True)
class GreenBracket:
    lower: float
    upper: float
    cutoff: float
    quad_error: float

    @property
    def value(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, v: float) -> bool:
        return self.lower <= v <= self.upper


def _tail_bounds(d: int, U: float) -> Tuple[float, float]:
    """Bounds on d * int_U^inf i0e(u)^d du.

    With i0e(u) = (1/pi) int_0^2 e^{-us} (s(2-s))^{-1/2} ds one gets
    (2 pi u)^{-1/2} erf(sqrt(2u)) <= i0e(u)
    <= (2 pi u)^{-1/2} (1 - u^{-2/3}/2)^{-1/2} + exp(-u^{1/3}).
    """
    base = d * (2 * math.pi) ** (-d / 2) * U ** (1 - d / 2) / (d / 2 - 1)
    lo = math.erf(math.sqrt(2 * U)) ** d * base
    a = (1 - U ** (-2.0 / 3.0) / 2) ** -0.5
    b = math.sqrt(2 * math.pi * U) * math.exp(-U ** (1.0 / 3.0))
    return lo, (a + b) ** d * base


def green_free(d: int, precision: float = 1e-6) -> GreenBracket:
    """Bracket for G_d(0), the expected number of visits to the origin.

    Uses the continuous-time identity G_d(0) = d int_0^inf (e^{-u} I_0(u))^d du:
    a walk with unit jump rate spends mean time 1 per visit and its coordinates
    are independent rate-1/d walks. The integral is done by quadrature up to a
    cutoff U and the remainder is bracketed analytically.
    """
    if d <= 2:
        raise DivergenceError(f"the simple random walk is recurrent in d = {d}; G_d(0) diverges")
    if precision <= 0:
        raise ParameterError("precision must be positive")
    U = 16.0
    while True:
        lo, hi = _tail_bounds(d, U)
        if hi - lo <= precision / 4 and hi <= 1e3 * precision:
            break
        U *= 4.0
    edges = np.concatenate([[0.0], np.geomspace(1.0, U, int(math.log10(U)) * 4 + 2)])
    total, err = 0.0, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        v, e = integrate.quad(lambda u: special.i0e(u) ** d, a, b, epsabs=1e-15, epsrel=1e-13, limit=200)
        total += v
        err += e
    body = d * total
    err = d * err + 4 * np.finfo(float).eps * body
    return GreenBracket(lower=body + lo - err, upper=body + hi + err, cutoff=U, quad_error=err)


def watson_g3() -> float:
    """Closed form of G_3(0) through four Gamma values (independent oracle)."""
    g = special.gamma
    return math.sqrt(6) / (32 * math.pi ** 3) * g(1 / 24) * g(5 / 24) * g(7 / 24) * g(11 / 24)


def a_d(d: int) -> float:
    """Constant of the Green's function asymptotics G(0, x) ~ a_d |x|^{2-d}."""
    return d / 2 * math.gamma(d / 2 - 1) * math.pi ** (-d / 2)


# ---- killed Green's function on a ball ---------------------------------------------


class GreenTable:
    """Green's function of the walk killed on leaving D(r) = {|x| <= r}.

    Values are computed on demand, one sparse solve per source site; by
    symmetry the solve with source y yields G(x, y) for every x.
    """

    def __init__(self, d: int, r: float, tol: float = 1e-14):
        if d < 2:
            raise ParameterError("d >= 2 required")
        vol = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r ** d
        if vol > 1.1 * EXACT_SITE_LIMIT:
            raise CapacityError(f"D({r}) in d={d} has ~{vol:.3g} sites; use the Monte Carlo method")
        self.d, self.r, self.tol = d, float(r), tol
        self.sites = ball_sites(d, r)
        if self.sites.shape[0] > EXACT_SITE_LIMIT:
            raise CapacityError(f"D({r}) has {self.sites.shape[0]} sites; use the Monte Carlo method")
        self.R = int(math.floor(r))
        side = 2 * self.R + 1
        self._lookup = -np.ones((side,) * d, dtype=np.int64)
        self._lookup[tuple((self.sites + self.R).T)] = np.arange(self.sites.shape[0])
        self.matrix = self._build()
        self._columns: Dict[int, np.ndarray] = {}
        self.method = "exact-linear-solve"

    def index(self, x) -> int:
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        if np.any(np.abs(x) > self.R):
            raise PreconditionError(f"{tuple(x)} is outside D({self.r})")
        i = int(self._lookup[tuple(x + self.R)])
        if i < 0:
            raise PreconditionError(f"{tuple(x)} is outside D({self.r})")
        return i

    def _neighbours(self):
        n, d = self.sites.shape
        rows, cols = [], []
        for axis in range(d):
            for sgn in (-1, 1):
                nb_ = self.sites.copy()
                nb_[:, axis] += sgn
                ok = np.all(np.abs(nb_) <= self.R, axis=1)
                j = np.full(n, -1, dtype=np.int64)
                idx = nb_[ok] + self.R
                j[ok] = self._lookup[tuple(idx.T)]
                keep = j >= 0
                rows.append(np.nonzero(keep)[0])
                cols.append(j[keep])
        return np.concatenate(rows), np.concatenate(cols)

    def _build(self) -> csr_matrix:
        n = self.sites.shape[0]
        rows, cols = self._neighbours()
        self._nb_rows, self._nb_cols = rows, cols
        data = np.full(rows.shape[0], -1.0 / (2 * self.d))
        diag = np.arange(n)
        return csr_matrix((np.concatenate([data, np.ones(n)]),
                           (np.concatenate([rows, diag]), np.concatenate([cols, diag]))), shape=(n, n))

    def _solve(self, A, b):
        x, info = cg(A, b, rtol=self.tol, atol=0.0, maxiter=20 * A.shape[0])
        if info != 0:
            raise RuntimeError(f"conjugate gradient did not converge (info={info})")
        return x

    def column(self, y) -> np.ndarray:
        """G(., y) as a vector over ``self.sites``."""
        j = self.index(y)
        if j not in self._columns:
            b = np.zeros(self.sites.shape[0])
            b[j] = 1.0
            self._columns[j] = self._solve(self.matrix, b)
        return self._columns[j]

    def value(self, x, y) -> float:
        i, j = self.index(x), self.index(y)
        if j in self._columns:
            return float(self._columns[j][i])
        if i in self._columns:
            return float(self._columns[i][j])
        return float(self.column(y)[i])

    def harmonicity_residual(self, y) -> float:
        """max |G(x, y) - delta_xy - (2d)^-1 sum_{z~x} G(z, y)| over the ball."""
        g = self.column(y)
        b = np.zeros_like(g)
        b[self.index(y)] = 1.0
        return float(np.max(np.abs(self.matrix @ g - b)))

    def hitting(self, x) -> float:
        """p_r(0, x) from the Dirichlet problem with the target removed."""
        j = self.index(x)
        o = self.index(np.zeros(self.d, dtype=np.int64))
        if j == o:
            return 1.0
        n = self.sites.shape[0]
        keep = np.ones(n, dtype=bool)
        keep[j] = False
        A = self.matrix[keep][:, keep]
        b = np.zeros(n)
        b[self._nb_rows[self._nb_cols == j]] = 1.0 / (2 * self.d)
        h = self._solve(A.tocsr(), b[keep])
        pos = o - (1 if o > j else 0)
        return float(h[pos])

    def export_csv(self, path, pairs: Sequence[Tuple[Sequence[int], Sequence[int]]]):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "value", "method", "tolerance"])
            for x, y in pairs:
                w.writerow([" ".join(map(str, x)), " ".join(map(str, y)),
                            repr(self.value(x, y)), self.method, self.tol])


_TABLES: Dict[Tuple[int, float], GreenTable] = {}


def green_table(d: int, r: float) -> GreenTable:
    key = (d, float(r))
    if key not in _TABLES:
        _TABLES[key] = GreenTable(d, r)
    return _TABLES[key]


# ---- Monte Carlo estimators --------------------------------------------------------


@nb.njit(cache=True)
def _mc_visits(base, d, r2, x0, target, replicas, stop_on_hit):
    """Per replica: visits to ``target`` before leaving D(r) (or 0/1 hit flag)."""
    out = np.zeros(replicas)
    pos = np.empty(d, dtype=np.int64)
    for rep in range(replicas):
        s = replica_key(base, rep)
        for i in range(d):
            pos[i] = x0[i]
        count = 0.0
        while True:
            same = True
            for i in range(d):
                if pos[i] != target[i]:
                    same = False
                    break
            if same:
                count += 1.0
                if stop_on_hit:
                    break
            s, k = next_direction(s, 2 * d)
            pos[k >> 1] += 1 if (k & 1) == 0 else -1
            q = 0.0
            for i in range(d):
                q += float(pos[i]) * float(pos[i])
            if q > r2:
                break
        out[rep] = count
    return out


def green_ball(d: int, r: float, x, y, method: str = "exact", replicas: int = 10_000,
               master_seed: int = 0) -> float:
    """G_{D(r)}(x, y); ``method`` is ``"exact"`` or ``"mc"``."""
    if method == "exact":
        return green_table(d, r).value(x, y)
    if method == "mc":
        return green_ball_mc(d, r, x, y, replicas, master_seed).estimate
    raise ParameterError(f"unknown method {method!r}")


def green_ball_mc(d, r, x, y, replicas=10_000, master_seed=0) -> StatsSummary:
    base = np.uint64(stream_key(master_seed, "green-mc"))
    v = _mc_visits(base, d, float(r) ** 2, np.asarray(x, np.int64), np.asarray(y, np.int64),
                   replicas, False)
    return mean_summary(v, "monte-carlo")


def hitting_prob(d: int, r: float, x, method: str = "exact", replicas: int = 10_000,
                 master_seed: int = 0) -> float:
    """p_r(0, x): probability the walk from 0 hits x before leaving D(r)."""
    x = np.asarray(x, dtype=np.int64)
    nx = float(np.sqrt((x.astype(float) ** 2).sum()))
    if not (0 < nx < r):
        raise PreconditionError("hitting_prob requires 0 < |x| < r")
    if method == "exact":
        t = green_table(d, r)
        return t.value(np.zeros(d, np.int64), x) / t.value(x, x)
    if method == "dirichlet":
        return green_table(d, r).hitting(x)
    if method == "mc":
        return hitting_prob_mc(d, r, x, replicas, master_seed).estimate
    raise ParameterError(f"unknown method {method!r}")


def hitting_prob_mc(d, r, x, replicas=10_000, master_seed=0) -> StatsSummary:
    base = np.uint64(stream_key(master_seed, "hitting-mc"))
    v = _mc_visits(base, d, float(r) ** 2, np.zeros(d, np.int64), np.asarray(x, np.int64),
                   replicas, True)
    return proportion_summary(v > 0, "monte-carlo")


# ---- bounds on hitting probabilities ----------------------------------------------------


@dataclass(frozen=True)
class EnvelopeConstants:
    """Explicit constants standing in for the O(.) terms of the hitting bounds."""

    lower: float  # p >= (a/G)(|x|^{2-d} - r^{2-d}) - lower |x|^{1-d}
    upper: float  # p <= a (|x|^{2-d} - r^{2-d}) + upper |x|^{1-d}
    inner: float  # refined bound, additive term inside the bracket
    outer: float  # refined bound, factor (1 + outer (r - |x|)^{2-d})


def _norm(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt((x * x).sum()))


def hitting_bounds(d: int, r: float, x, c: EnvelopeConstants, G: float) -> Tuple[float, float, float]:
    """(lower, upper, refined upper) bounds on p_r(0, x)."""
    nx = _norm(x)
    a = a_d(d)
    core = nx ** (2 - d) - r ** (2 - d)
    lower = a / G * core - c.lower * nx ** (1 - d)
    upper = a * core + c.upper * nx ** (1 - d)
    refined = a / G * (core + c.inner * nx ** (1 - d)) * (1 + c.outer * (r - nx) ** (2 - d))
    return lower, upper, refined


def fit_envelope_constants(d: int, radii: Sequence[float], points_fn, G: float,
                           safety: float = 1.5) -> EnvelopeConstants:
    """Smallest constants making every bound hold on a calibration set, times ``safety``.

    ``points_fn(r)`` returns the sites used at radius r. The inner/outer pair
    is fitted from G(0, x) and G(x, x) separately, mirroring how the refined
    bound is assembled from the Green's function estimates.
    """
    a = a_d(d)
    need = np.zeros(4)
    for r in radii:
        t = green_table(d, r)
        origin = np.zeros(d, np.int64)
        for x in points_fn(r):
            nx = _norm(x)
            g0x, gxx = t.value(origin, x), t.value(x, x)
            p = g0x / gxx
            core = nx ** (2 - d) - r ** (2 - d)
            need[0] = max(need[0], (a / G * core - p) * nx ** (d - 1))
            need[1] = max(need[1], (p - a * core) * nx ** (d - 1))
            need[2] = max(need[2], (g0x / a - core) * nx ** (d - 1))
            need[3] = max(need[3], (G / gxx - 1) * (r - nx) ** (d - 2))
    need = np.maximum(need, 0.0) * safety
    return EnvelopeConstants(*map(float, need))


def axis_and_diagonal_points(d: int, r_min: float, r_max: float) -> np.ndarray:
    """Sites k e_1 and k (1, ..., 1) with r_min <= |x| <= r_max."""
    pts = []
    for k in range(1, int(r_max) + 1):
        if r_min <= k <= r_max:
            v = np.zeros(d, np.int64)
            v[0] = k
            pts.append(v)
    for k in range(1, int(r_max) + 1):
        if r_min <= k * math.sqrt(d) <= r_max:
            pts.append(np.full(d, k, np.int64))
    return np.array(pts, dtype=np.int64)


# ---- hitting sum over deep traps -------------------------------------------------------


@nb.njit(cache=True)
def _distinct_traps_hit(envp, base, d, x0, r2, lo, hi, replicas):
    """Per replica: number of distinct sites with lo <= tau < hi hit before leaving D_x0(r)."""
    out = np.zeros(replicas)
    pos = np.empty(d, dtype=np.int64)
    seen = np.empty((64, d), dtype=np.int64)
    for rep in range(replicas):
        s = replica_key(base, rep)
        for i in range(d):
            pos[i] = x0[i]
        nseen = 0
        while True:
            t = tau_kernel(envp, pos)
            if t >= lo and t < hi:
                new = True
                for j in range(nseen):
                    same = True
                    for i in range(d):
                        if seen[j, i] != pos[i]:
                            same = False
                            break
                    if same:
                        new = False
                        break
                if new:
                    if nseen == seen.shape[0]:
                        grown = np.empty((2 * nseen, d), dtype=np.int64)
                        grown[:nseen] = seen[:nseen]
                        seen = grown
                    seen[nseen] = pos
                    nseen += 1
            s, k = next_direction(s, 2 * d)
            pos[k >> 1] += 1 if (k & 1) == 0 else -1
            q = 0.0
            for i in range(d):
                dq = float(pos[i] - x0[i])
                q += dq * dq
            if q > r2:
                break
        out[rep] = nseen
    return out


def hitting_sum_V(env: Environment, sc: ScaleSet, sets: TrapSets, x, method: str = "exact",
                  replicas: int = 2000, master_seed: int = 0, rho: Optional[float] = None,
                  check_safe: bool = True):
    """Sum over deep traps y of P_x[Y hits y before leaving D_x(rho)].

    ``method="exact"`` sums per-trap ratios G(0, y-x)/G(y-x, y-x) on a killed
    ball; ``"mc"`` returns a StatsSummary of the number of distinct deep traps
    hit, whose mean is the same sum. ``rho`` overrides the level-n scale.
    """
    x = np.asarray(x, dtype=np.int64).reshape(-1)
    if check_safe and not bool(sets.is_safe_interior(x)[0]):
        raise PreconditionError(f"{tuple(x)} is not in the safe interior set")
    rho = sc.rho if rho is None else float(rho)
    if method == "exact":
        if sets.deep.shape[0] == 0:
            return 0.0
        diff = sets.deep - x
        inside = (diff.astype(float) ** 2).sum(axis=1) <= rho * rho
        if not inside.any():
            return 0.0
        t = green_table(env.d, rho)
        origin = np.zeros(env.d, np.int64)
        return float(sum(t.value(origin, y) / t.value(y, y) for y in diff[inside]))
    if method == "mc":
        lo, hi = sets.depth_window
        base = np.uint64(stream_key(master_seed, "hitting-sum"))
        counts = _distinct_traps_hit(env.kernel_args, base, env.d, x, rho * rho, lo, hi, replicas)
        return mean_summary(counts, "monte-carlo")
    raise ParameterError(f"unknown method {method!r}")
