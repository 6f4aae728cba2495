"""Quenched trap-depth field, level-n scales and trap classification.

The field is never stored. ``tau_x`` is a hash of ``(master_seed, x)`` pushed
through the inverse tail function, so every replica, thread and process sees
the same environment.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba as nb
import numpy as np
from scipy.spatial import cKDTree

from .errors import CapacityError, ParameterError, RegionError, UnsupportedDimensionError
from .rng import base_key, mix64, to_unit

_COORD_OFFSET = np.int64(1 << 40)
_COORD_MUL = np.array(
    [0x9E3779B97F4A7C15, 0xC2B2AE3D27D4EB4F, 0x165667B19E3779F9, 0xD6E8FEB86659FD93,
     0xA0761D6478BD642F, 0xE7037ED1A0B428DB, 0x8EBC6AF09C88C6E3, 0x589965CC75374CC3],
    dtype=np.uint64,
)
MODE_PARETO = 0
MODE_CONSTANT = 1
MODE_TABLE = 2
_NEAR = 1e-12  # relative slack when comparing squared lattice distances with nu^2


@dataclass(frozen=True)
class TailSpec:
    """Tail law P[tau >= u] = u^-alpha (1 + L(u)) for u >= 1.

    ``perturbation`` is L; ``None`` means L == 0 (exact Pareto). A supplied L
    must be bounded, keep the survival function nonincreasing, and decay to 0.
    Values of the survival function above 1 are clipped, so tau >= 1 always.
    """

    alpha: float
    perturbation: Optional[Callable[[np.ndarray], np.ndarray]] = None
    u_max: float = 1e12
    table_size: int = 4096

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.perturbation is not None:
            log_u, log_p = self._table()
            if np.any(np.diff(log_p) > 1e-12):
                raise ParameterError("u^-alpha (1 + L(u)) must be nonincreasing")
            if not np.all(np.isfinite(log_p)):
                raise ParameterError("1 + L(u) must stay positive and finite")

    @property
    def mode(self) -> str:
        return "zero" if self.perturbation is None else "perturbed"

    def survival(self, u):
        u = np.asarray(u, dtype=float)
        base = np.where(u >= 1.0, np.power(np.maximum(u, 1.0), -self.alpha), 1.0)
        if self.perturbation is not None:
            base = base * (1.0 + np.asarray(self.perturbation(np.maximum(u, 1.0)), dtype=float))
        return np.clip(np.where(u >= 1.0, base, 1.0), 0.0, 1.0)

    def _table(self):
        log_u = np.linspace(0.0, math.log(self.u_max), self.table_size)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_p = np.log(self.survival(np.exp(log_u)))
        return log_u, log_p

    def quantile_table(self):
        """Arrays (log p ascending, log u) for inverse-transform sampling."""
        if self.perturbation is None:
            return np.zeros(1), np.zeros(1)
        log_u, log_p = self._table()
        return np.ascontiguousarray(log_p[::-1]), np.ascontiguousarray(log_u[::-1])

    def quantile(self, p):
        """Inverse survival function, the map from a (0,1] uniform to tau."""
        p = np.asarray(p, dtype=float)
        out = np.empty_like(p)
        lp, lu = self.quantile_table()
        flat_p, flat_out = p.reshape(-1), out.reshape(-1)
        for i in range(flat_p.size):
            flat_out[i] = _inverse_tail(flat_p[i], self.alpha, MODE_PARETO if self.perturbation is None
                                        else MODE_TABLE, 1.0, lp, lu)
        return out


@nb.njit(inline="always", cache=True)
def _inverse_tail(u, alpha, mode, const, log_p, log_u):
    if mode == MODE_PARETO:
        return u ** (-1.0 / alpha)
    if mode == MODE_CONSTANT:
        return const
    lu = np.log(u)
    if lu <= log_p[0]:
        # beyond the table the perturbation is treated as negligible
        return np.exp(log_u[0]) * np.exp((log_p[0] - lu) / alpha)
    if lu >= log_p[-1]:
        return np.exp(log_u[-1])
    k = np.searchsorted(log_p, lu)
    w = (lu - log_p[k - 1]) / (log_p[k] - log_p[k - 1])
    return np.exp(log_u[k - 1] + w * (log_u[k] - log_u[k - 1]))


@nb.njit(inline="always", cache=True)
def site_bits(key, x):
    h = key
    for i in range(x.shape[0]):
        h = mix64(h ^ (np.uint64(x[i] + _COORD_OFFSET) * _COORD_MUL[i]))
    return h


@nb.njit(cache=True)
def tau_kernel(envp, x):
    """tau_x from packed environment parameters; -1.0 flags a site outside the region."""
    key, alpha, mode, const, log_p, log_u, planted_x, planted_v, radius2 = envp
    r2 = 0.0
    for i in range(x.shape[0]):
        r2 += float(x[i]) * float(x[i])
    if r2 > radius2:
        return -1.0
    for j in range(planted_x.shape[0]):
        hit = True
        for i in range(x.shape[0]):
            if planted_x[j, i] != x[i]:
                hit = False
                break
        if hit:
            return planted_v[j]
    if mode == MODE_CONSTANT:
        return const
    return _inverse_tail(to_unit(site_bits(key, x)), alpha, mode, const, log_p, log_u)


@nb.njit(cache=True)
def _tau_many(envp, xs):
    out = np.empty(xs.shape[0])
    for k in range(xs.shape[0]):
        out[k] = tau_kernel(envp, xs[k])
    return out


class Environment:
    """Quenched environment on Z^d, optionally restricted to the ball D(m r(n)).

    Parameters
    ----------
    d : int
        Lattice dimension, at least 2.
    tail : TailSpec
    master_seed : int
    n, m : level and region multiplier. With ``n=None`` the whole lattice is
        addressable.
    constant : float, optional
        Testing hook, every site gets this depth. Flagged in ``descriptor``.
    planted : dict, optional
        Explicit site -> depth overrides, used to build scripted scenarios.
    """

    def __init__(self, d: int, tail: TailSpec, master_seed: int, n: Optional[int] = None,
                 m: float = 1.0, constant: Optional[float] = None, planted: Optional[dict] = None,
                 gamma: Optional[float] = None):
        if d < 2:
            raise UnsupportedDimensionError(f"dimension {d} < 2 is not supported")
        if d > _COORD_MUL.shape[0]:
            raise UnsupportedDimensionError(f"dimension {d} exceeds {_COORD_MUL.shape[0]}")
        if constant is not None and not constant > 0:
            raise ParameterError("constant depth must be positive")
        if m <= 0:
            raise ParameterError("region multiplier m must be positive")
        self.d = int(d)
        self.tail = tail
        self.master_seed = int(master_seed)
        self.n = n
        self.m = float(m)
        self.constant = constant
        self.gamma = gamma
        self.planted = {tuple(int(c) for c in k): float(v) for k, v in (planted or {}).items()}
        for k, v in self.planted.items():
            if len(k) != self.d or not v > 0:
                raise ParameterError(f"bad planted entry {k} -> {v}")
        self.radius = math.inf if n is None else self.m * scales(n, d, tail.alpha, gamma).r
        self.key = np.uint64(base_key(self.master_seed, "environment"))
        log_p, log_u = tail.quantile_table()
        mode = MODE_CONSTANT if constant is not None else (
            MODE_PARETO if tail.perturbation is None else MODE_TABLE)
        px = np.array(list(self.planted.keys()), dtype=np.int64).reshape(-1, self.d)
        pv = np.array(list(self.planted.values()), dtype=np.float64)
        self._envp = (self.key, float(tail.alpha), np.int64(mode), float(constant or 1.0),
                      log_p, log_u, px, pv, float(self.radius) ** 2)

    @property
    def kernel_args(self):
        return self._envp

    @property
    def alpha(self) -> float:
        return self.tail.alpha

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return float(x @ x) <= self.radius ** 2

    def descriptor(self) -> dict:
        out = {"d": self.d, "alpha": self.tail.alpha, "L_mode": self.tail.mode,
               "master_seed": self.master_seed, "n": self.n, "m": self.m}
        if self.constant is not None:
            out["constant_mode"] = self.constant
        if self.planted:
            out["planted_sites"] = len(self.planted)
        return out

    def to_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True)

    @classmethod
    def from_descriptor(cls, desc: dict) -> "Environment":
        if desc.get("L_mode", "zero") != "zero":
            raise ParameterError("a perturbed tail cannot be rebuilt from a descriptor")
        return cls(int(desc["d"]), TailSpec(float(desc["alpha"])), int(desc["master_seed"]),
                   n=desc.get("n"), m=float(desc.get("m", 1.0)), constant=desc.get("constant_mode"))


def tau_at(env: Environment, x) -> float:
    """Depth of site ``x``; raises ``RegionError`` outside the addressable region."""
    x = np.ascontiguousarray(x, dtype=np.int64).reshape(-1)
    if x.shape[0] != env.d:
        raise ParameterError(f"site has {x.shape[0]} coordinates, expected {env.d}")
    val = tau_kernel(env.kernel_args, x)
    if val < 0:
        raise RegionError(f"site {tuple(x)} lies outside the region of radius {env.radius}")
    return float(val)


def tau_many(env: Environment, xs) -> np.ndarray:
    xs = np.ascontiguousarray(xs, dtype=np.int64).reshape(-1, env.d)
    out = _tau_many(env.kernel_args, xs)
    if np.any(out < 0):
        raise RegionError("some sites lie outside the addressable region")
    return out


# ---- scales ------------------------------------------------------------------


@dataclass(frozen=True)
class ScaleSet:
    n: int
    d: int
    alpha: float
    r: float
    g: float
    rho: float
    nu: float
    h: float
    gamma: float
    kappa: float

    # below this level nu, rho and r may coincide (d = 2 at n = 1)
    THRESHOLD = 2

    def ordered(self) -> bool:
        return self.nu < self.rho < self.r


def default_gamma(d: int, alpha: float) -> float:
    return (1.0 - alpha) / 2.0 if d == 2 else 1.0 - 1.0 / (3.0 * d)


def scales(n: int, d: int, alpha: float, gamma: Optional[float] = None) -> ScaleSet:
    """Spatial, depth, coarse-graining and proximity scales at level n."""
    if d < 2:
        raise UnsupportedDimensionError(f"dimension {d} < 2 is not supported")
    if n < 1:
        raise ParameterError("level n must be >= 1")
    if not (0.0 < alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if d == 2:
        gamma = default_gamma(d, alpha) if gamma is None else float(gamma)
        if not (0.0 < gamma < 1.0 - alpha):
            raise ParameterError("d = 2 requires 0 < gamma < 1 - alpha")
        kappa = 5.0 / (1.0 - alpha)
        pref = math.pi ** -0.5 * 2.0 ** (n / 2)
        r = pref * n ** ((1.0 - alpha) / 2)
        g = 2.0 ** (n / alpha) / n
        rho = pref * n ** (gamma / 2)
        nu = pref * n ** (-kappa / 2)
    else:
        if gamma is not None and abs(gamma - default_gamma(d, alpha)) > 1e-15:
            raise ParameterError("gamma is fixed to 1 - 1/(3d) for d >= 3")
        gamma = default_gamma(d, alpha)
        kappa = 1.0 / d
        r = 2.0 ** (n / 2)
        g = 2.0 ** (n / alpha)
        rho = 2.0 ** (gamma * n / 2)
        nu = 2.0 ** (kappa * n / 2)
    return ScaleSet(n=n, d=d, alpha=alpha, r=r, g=g, rho=rho, nu=nu, h=r / rho,
                    gamma=gamma, kappa=kappa)


# ---- trap classification ------------------------------------------------------


@nb.njit(cache=True)
def _scan_ball(envp, d, radius, lo, hi):
    """All sites of the ball with lo <= tau < hi, in lexicographic order."""
    R = int(np.floor(radius))
    r2max = radius * radius
    key, alpha, mode = envp[0], envp[1], envp[2]
    # for plain Pareto fields, pre-screen on the uniform before the pow()
    fast = mode == MODE_PARETO and envp[6].shape[0] == 0
    u_cut = 2.0 if lo <= 0 else lo ** (-alpha) * (1.0 + 1e-9)
    cap = 1024
    coords = np.empty((cap, d), dtype=np.int64)
    vals = np.empty(cap)
    count = 0
    x = np.empty(d, dtype=np.int64)
    for i in range(d - 1):
        x[i] = -R
    while True:
        s = 0.0
        for i in range(d - 1):
            s += float(x[i]) * float(x[i])
        if s <= r2max:
            top = int(np.floor(np.sqrt(r2max - s) + 1e-9))
            while float(top) * top + s > r2max:
                top -= 1
            for z in range(-top, top + 1):
                x[d - 1] = z
                if fast and to_unit(site_bits(key, x)) > u_cut:
                    continue
                t = tau_kernel(envp, x)
                if t >= lo and t < hi:
                    if count == cap:
                        cap *= 2
                        nc = np.empty((cap, d), dtype=np.int64)
                        nv = np.empty(cap)
                        nc[:count] = coords[:count]
                        nv[:count] = vals[:count]
                        coords, vals = nc, nv
                    coords[count] = x
                    vals[count] = t
                    count += 1
        # odometer over the first d - 1 coordinates
        k = d - 2
        while k >= 0:
            x[k] += 1
            if x[k] <= R:
                break
            x[k] = -R
            k -= 1
        if k < 0:
            break
    return coords[:count].copy(), vals[:count].copy()


def ball_sites(d: int, radius: float, limit: int = 20_000_000) -> np.ndarray:
    """Explicit list of lattice sites with |x| <= radius, lexicographic order."""
    R = int(math.floor(radius))
    est = (2 * R + 1) ** d
    if est > limit * 2:
        raise CapacityError(f"ball of radius {radius} in d={d} is too large to enumerate")
    axes = np.arange(-R, R + 1)
    grid = np.stack(np.meshgrid(*([axes] * d), indexing="ij"), axis=-1).reshape(-1, d)
    keep = (grid.astype(float) ** 2).sum(axis=1) <= radius * radius
    return np.ascontiguousarray(grid[keep])


@dataclass
class TrapSets:
    """Deep traps T, safe sites E, safe interior E_0 and bad traps B of one level.

    ``deep`` is explicit; the safe sets are represented by membership tests
    (and enumerable for small regions through ``safe_sites``).
    """

    d: int
    epsilon: float
    M: float
    g: float
    nu: float
    rho: float
    radius: float
    deep: np.ndarray
    deep_tau: np.ndarray
    bad_mask: np.ndarray
    _tree: Optional[cKDTree] = field(default=None, repr=False)

    def __post_init__(self):
        if self.deep.shape[0]:
            self._tree = cKDTree(self.deep.astype(float))

    @property
    def bad(self) -> np.ndarray:
        return self.deep[self.bad_mask]

    @property
    def depth_window(self):
        return self.epsilon * self.g, self.M * self.g

    def _nearest_sq(self, xs):
        xs = np.asarray(xs, dtype=np.int64).reshape(-1, self.d)
        if self._tree is None:
            return np.full(xs.shape[0], np.inf)
        _, idx = self._tree.query(xs.astype(float))
        diff = self.deep[idx] - xs
        return (diff.astype(float) ** 2).sum(axis=1)

    def in_region(self, xs):
        xs = np.asarray(xs, dtype=float).reshape(-1, self.d)
        return (xs ** 2).sum(axis=1) <= self.radius ** 2

    def is_safe(self, xs):
        return self.in_region(xs) & (self._nearest_sq(xs) > self.nu ** 2 * (1 + _NEAR))

    def boundary_distance(self, xs):
        xs = np.asarray(xs, dtype=float).reshape(-1, self.d)
        return self.radius - np.sqrt((xs ** 2).sum(axis=1))

    def is_safe_interior(self, xs):
        return self.is_safe(xs) & (self.boundary_distance(xs) > self.rho)

    def is_deep(self, xs):
        return self.in_region(xs) & (self._nearest_sq(xs) == 0)

    def is_bad(self, xs):
        xs = np.asarray(xs, dtype=np.int64).reshape(-1, self.d)
        if self._tree is None:
            return np.zeros(xs.shape[0], dtype=bool)
        dist, idx = self._tree.query(xs.astype(float))
        return (dist == 0) & self.bad_mask[idx]

    def safe_sites(self, limit: int = 5_000_000) -> np.ndarray:
        sites = ball_sites(self.d, self.radius, limit)
        return sites[self.is_safe(sites)]

    def safe_interior_sites(self, limit: int = 5_000_000) -> np.ndarray:
        sites = ball_sites(self.d, self.radius, limit)
        return sites[self.is_safe_interior(sites)]

    def sample_safe_interior(self, k: int, rng: np.random.Generator, max_tries: int = 1000) -> np.ndarray:
        """k distinct sites of E_0 drawn uniformly by rejection from the cube."""
        inner = self.radius - self.rho
        if inner <= 0:
            raise ParameterError("the safe interior is empty: radius <= rho")
        R = int(math.floor(inner))
        chosen, seen = [], set()
        for _ in range(max_tries):
            cand = rng.integers(-R, R + 1, size=(4 * k, self.d))
            ok = self.is_safe_interior(cand)
            for row in cand[ok]:
                t = tuple(int(c) for c in row)
                if t not in seen:
                    seen.add(t)
                    chosen.append(row)
                    if len(chosen) == k:
                        return np.array(chosen, dtype=np.int64)
        raise CapacityError(f"could not find {k} distinct safe interior sites")

    def kernel_args(self):
        lo, hi = self.depth_window
        return (np.ascontiguousarray(self.deep, dtype=np.int64).reshape(-1, self.d),
                self.bad_mask.astype(np.uint8), float(lo), float(hi), float(self.nu),
                float(self.rho), float(self.radius))

    def summary(self) -> dict:
        return {"deep": int(self.deep.shape[0]), "bad": int(self.bad_mask.sum()),
                "epsilon": self.epsilon, "M": self.M, "nu": self.nu, "rho": self.rho,
                "radius": self.radius}


def classify_traps(env: Environment, sc: ScaleSet, epsilon: float, M: float,
                   max_sites: float = 2e9) -> TrapSets:
    """Scan the region D(m r(n)) and build the trap sets of level ``sc.n``."""
    if not (epsilon < 1.0 < M):
        raise ParameterError("classify_traps requires epsilon < 1 < M")
    if env.n is not None and env.n != sc.n:
        raise ParameterError(f"environment level {env.n} differs from scale level {sc.n}")
    radius = env.m * sc.r
    if env.radius < radius:
        raise RegionError("environment region is smaller than D(m r(n))")
    vol = math.pi ** (env.d / 2) / math.gamma(env.d / 2 + 1) * radius ** env.d
    if vol > max_sites:
        raise CapacityError(f"region holds ~{vol:.3g} sites, above the limit {max_sites:.3g}")
    lo, hi = epsilon * sc.g, M * sc.g
    deep, deep_tau = _scan_ball(env.kernel_args, env.d, radius, lo, hi)
    bad = np.zeros(deep.shape[0], dtype=bool)
    if env.d >= 3 and deep.shape[0] > 1:
        tree = cKDTree(deep.astype(float))
        pairs = tree.query_pairs(sc.nu * (1 + 1e-9), output_type="ndarray")
        if pairs.size:
            diff = deep[pairs[:, 0]] - deep[pairs[:, 1]]
            close = (diff.astype(float) ** 2).sum(axis=1) <= sc.nu ** 2 * (1 + _NEAR)
            bad[pairs[close, 0]] = True
            bad[pairs[close, 1]] = True
    return TrapSets(d=env.d, epsilon=epsilon, M=M, g=sc.g, nu=sc.nu, rho=sc.rho, radius=radius,
                    deep=deep, deep_tau=deep_tau, bad_mask=bad)
