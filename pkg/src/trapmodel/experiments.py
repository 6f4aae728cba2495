"""Experiment registry: configuration, orchestration, report files and plots.

Every experiment is a pure function of (parameters, master_seed). It returns
statistic rows and tolerance checks; ``run`` adds the config echo, resolved
constants, wall-clock and seed provenance, and writes report.json, CSVs and
SVG plots under ``<out>/<experiment>/``.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy import special

from . import coarse_grain as cg
from . import fk_limit as fk
from . import lattice_env as le
from . import srw_analytics as srw
from . import walk_sim as ws
from .errors import ParameterError, UnsupportedDimensionError
from .rng import seed_stream
from .stats_kit import StatsSummary, empirical_charfn, empirical_laplace, ks_statistic, loglog_slope


# ---- records --------------------------------------------------------------------------------


@dataclass
class Check:
    """One tolerance test: ``passed`` is decided by the experiment."""

    name: str
    value: float
    target: Optional[float]
    tolerance: str
    passed: bool


@dataclass
class ExperimentConfig:
    experiment: str
    params: dict = field(default_factory=dict)
    master_seed: int = 0
    threads: Optional[int] = None
    out: str = "runs"

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ParameterError("config file must hold a JSON object")
        known = {"experiment", "params", "master_seed", "threads", "out"}
        extra = set(raw) - known
        if extra:
            raise ParameterError(f"unknown config keys: {sorted(extra)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    def resolved(self) -> dict:
        """Defaults merged with the supplied parameters, validated."""
        spec = REGISTRY.get(self.experiment)
        if spec is None:
            raise ParameterError(f"unknown experiment {self.experiment!r}; see `list`")
        extra = set(self.params) - set(spec.defaults)
        if extra:
            raise ParameterError(f"{self.experiment}: unknown parameters {sorted(extra)}")
        p = dict(spec.defaults)
        p.update(self.params)
        _validate_common(self.experiment, p)
        if spec.validate is not None:
            spec.validate(p)
        return p


@dataclass
class RunReport:
    config: dict
    rows: List[dict]
    checks: List[Check]
    passed: bool
    wall_clock: float
    seed_provenance: dict
    constants: dict
    files: List[str]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checks"] = [asdict(c) for c in self.checks]
        return d


@dataclass
class ExperimentSpec:
    name: str
    description: str
    defaults: dict
    runner: Callable
    validate: Optional[Callable] = None


class _Context:
    """Output helpers bound to one run directory."""

    def __init__(self, out: Path, experiment: str, seed: int):
        self.out = out
        self.experiment = experiment
        self.seed = seed
        self.files: List[str] = []
        self.rows: List[dict] = []
        self.checks: List[Check] = []
        self.purposes: List[str] = []

    def rng(self, purpose: str, replica: int = 0) -> np.random.Generator:
        self.purposes.append(purpose)
        return seed_stream(self.seed, replica, f"{self.experiment}/{purpose}")

    def row(self, statistic: str, summary, **extra):
        if isinstance(summary, StatsSummary):
            r = summary.as_row()
        else:
            r = {"estimate": float(summary)}
        r.update(extra)
        r.update({"statistic": statistic, "experiment": self.experiment, "master_seed": self.seed})
        self.rows.append(_jsonable(r))

    def check(self, name: str, value: float, target: Optional[float], tolerance: str, passed: bool):
        self.checks.append(Check(name, float(value), None if target is None else float(target),
                                 tolerance, bool(passed)))

    def csv(self, name: str, header: List[str], rows) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.files.append(name)
        return path

    def plot(self, name: str, draw: Callable):
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        plt.rcParams["svg.hashsalt"] = "trapmodel"
        fig, ax = plt.subplots(figsize=(5.5, 4))
        draw(ax)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(self.out / name, format="svg", metadata={"Date": None})
        plt.close(fig)
        self.files.append(name)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---- validation --------------------------------------------------------------------------


def _validate_common(name: str, p: dict):
    for key in ("alpha",):
        if key in p and not (0 < p[key] < 1):
            raise ParameterError(f"{name}: alpha must lie in (0, 1), got {p[key]}")
    for key in ("alphas",):
        for a in p.get(key, []):
            if not (0 < a < 1):
                raise ParameterError(f"{name}: every alpha must lie in (0, 1), got {a}")
    if "d" in p and (int(p["d"]) != p["d"] or p["d"] < 2):
        raise UnsupportedDimensionError(f"{name}: d must be an integer >= 2, got {p['d']}")
    for key in ("replicas", "draws", "sites", "parts", "steps", "fk_replicas", "reference"):
        if key in p and (int(p[key]) != p[key] or p[key] < 1):
            raise ParameterError(f"{name}: {key} must be a positive integer, got {p[key]}")
    if "epsilon" in p and "M" in p and not (0 < p["epsilon"] < 1 < p["M"]):
        raise ParameterError(f"{name}: need 0 < epsilon < 1 < M")
    if "m" in p and not p["m"] > 1:
        raise ParameterError(f"{name}: region multiplier m must exceed 1")


def _need_d3(p):
    if p["d"] < 3:
        raise UnsupportedDimensionError("this experiment needs d >= 3")


# ---- constants ---------------------------------------------------------------------------


def resolved_constants(d: int, alpha: Optional[float] = None, n: Optional[int] = None,
                       m: Optional[float] = None) -> dict:
    out: Dict[str, float] = {"d": d}
    if d >= 3:
        out["G_d0"] = fk.green_constant(d)
    K, Kp = fk.hitting_constants(d)
    out.update({"K_d": K, "K_prime_d": Kp})
    if alpha is not None:
        out["alpha"] = alpha
        out["C_d_alpha"] = fk.scaling_constant(d, alpha)
        out["C_d_alpha_uncorrected"] = fk.scaling_constant_uncorrected(d, alpha)
        sc = le.scales(n if n is not None else 10, d, alpha)
        out["gamma"] = sc.gamma
        out["kappa"] = sc.kappa
        if n is not None:
            out.update({"n": n, "r": sc.r, "g": sc.g, "rho": sc.rho, "nu": sc.nu, "h": sc.h})
    if m is not None:
        out["m"] = m
    return out


# ---- experiments ---------------------------------------------------------------------------


def _subordinator_laplace(p, ctx: _Context):
    t0 = time.perf_counter()
    table = []
    for a in p["alphas"]:
        V = fk.sample_stable(a, p["draws"], ctx.rng(f"V-{a}"))
        for lam in p["lambdas"]:
            s = empirical_laplace(V, lam)
            target = math.exp(-lam ** a)
            ok = abs(s.estimate - target) <= p["n_se"] * s.std_error
            ctx.row("laplace", s, alpha=a, lam=lam, target=target)
            ctx.check(f"laplace alpha={a} lambda={lam}", s.estimate, target, f"{p['n_se']} SE", ok)
            table.append((a, lam, s.estimate, s.std_error, target))
    elapsed = time.perf_counter() - t0
    ctx.check("runtime seconds", elapsed, None, f"<= {p['max_seconds']}", elapsed <= p["max_seconds"])
    ctx.csv("laplace.csv", ["alpha", "lambda", "estimate", "std_error", "target"], table)

    def draw(ax):
        lam = np.linspace(0.05, 2.5, 100)
        for a in p["alphas"]:
            ax.plot(lam, np.exp(-lam ** a), lw=1, label=f"exp(-lam^{a})")
            pts = [(r[1], r[2]) for r in table if r[0] == a]
            ax.plot(*zip(*pts), "o", ms=4)
        ax.set_xlabel("lambda")
        ax.set_ylabel("E exp(-lambda V(1))")
    ctx.plot("laplace.svg", draw)
    return {}


def _env_tail(p, ctx: _Context):
    env = le.Environment(p["d"], le.TailSpec(p["alpha"]), ctx.seed)
    side = int(math.ceil(p["sites"] ** (1 / p["d"])))
    grid = np.stack(np.meshgrid(*[np.arange(side)] * p["d"], indexing="ij"), -1).reshape(-1, p["d"])
    sites = grid[: p["sites"]]
    tau = le.tau_many(env, sites)
    again = le.tau_many(env, sites[::-1])[::-1]
    ctx.check("purity (repeat lookup identical)", float(np.max(np.abs(tau - again))), 0.0, "exact",
              bool(np.array_equal(tau, again)))
    ctx.check("min depth >= 1", float(tau.min()), 1.0, ">= 1", bool(tau.min() >= 1.0))
    table = []
    for u in p["u_values"]:
        hits = tau > u
        s = StatsSummary(float(hits.mean()), float(math.sqrt(hits.mean() * (1 - hits.mean()) / hits.size)),
                         0.0, 1.0, hits.size, "tail-fraction")
        target = u ** -p["alpha"]
        ok = abs(s.estimate - target) <= p["n_se"] * s.std_error
        ctx.row("tail", s, u=u, target=target)
        ctx.check(f"P[tau > {u}]", s.estimate, target, f"{p['n_se']} SE", ok)
        table.append((u, s.estimate, s.std_error, target))
    ctx.csv("tail.csv", ["u", "fraction", "std_error", "target"], table)

    def draw(ax):
        u = np.geomspace(1, max(p["u_values"]) * 2, 60)
        ax.loglog(u, u ** -p["alpha"], lw=1, label="u^-alpha")
        ax.loglog([r[0] for r in table], [r[1] for r in table], "o", label="empirical")
        ax.set_xlabel("u")
        ax.set_ylabel("P[tau > u]")
    ctx.plot("tail.svg", draw)
    return resolved_constants(p["d"], p["alpha"])


def _walk_basics(p, ctx: _Context):
    env = le.Environment(p["d"], le.TailSpec(p["alpha"]), ctx.seed)
    traj = ws.run_walk(env, p["steps"], master_seed=ctx.seed)
    inc = np.abs(np.diff(traj.sites, axis=0)).sum(axis=1)
    ctx.check("nearest-neighbour steps", float(np.max(np.abs(inc - 1))), 0.0, "exact", bool(np.all(inc == 1)))
    clock_res = float(np.max(np.abs(np.diff(traj.clock) - traj.marks * traj.depths)))
    ctx.check("clock increments e_k tau_Y(k)", clock_res, 0.0, "<= 1e-9 relative",
              clock_res <= 1e-9 * max(1.0, float(traj.clock[-1])))
    depth_res = float(np.max(np.abs(traj.depths - le.tau_many(env, traj.sites[:-1]))))
    ctx.check("depths match environment", depth_res, 0.0, "exact", depth_res == 0.0)
    T = p["T"]
    if traj.clock[-1] <= T * p["N"]:
        raise ParameterError("walk-basics: steps too few to reach time T N; raise steps or lower N")
    triple = ws.rescale(traj, p["N"], env, T, p["grid_points"])
    res = ws.grid_identity_residual(triple, traj)
    ctx.check("X_N = Y_N(S_N^-1) on the grid", res, 0.0, "<= 1e-12", res <= 1e-12)
    ctx.row("final clock", float(traj.clock[-1]), steps=traj.steps)
    stride = max(1, traj.steps // p["export_points"])
    traj.export_csv(ctx.out / "trajectory.csv", stride=stride)
    ctx.files.append("trajectory.csv")
    ctx.csv("rescaled.csv", ["t"] + [f"X{i}" for i in range(p["d"])],
            [(t, *x) for t, x in zip(triple.t, triple.X_N)])

    def draw(ax):
        for i in range(p["d"]):
            ax.step(triple.t, triple.X_N[:, i], where="post", lw=1, label=f"X_N coordinate {i}")
        ax.set_xlabel("t")
    ctx.plot("rescaled.svg", draw)
    return resolved_constants(p["d"], p["alpha"])


def _clock_marginal(p, ctx: _Context):
    env = le.Environment(p["d"], le.TailSpec(p["alpha"]), ctx.seed)
    S = ws.clock_marginal(env, p["N"], p["replicas"], ctx.seed)
    ref = fk.sample_stable(p["alpha"], p["reference"], ctx.rng("reference"))
    ks = ks_statistic(S, ref)
    ctx.row("ks S_N(1) vs V(1) ensemble", ks, replicas=p["replicas"], reference=p["reference"])
    ctx.check("KS S_N(1) vs V(1)", ks, None, f"<= {p['ks_max']}", ks <= p["ks_max"])
    if p["alpha"] == 0.5:
        exact = ks_statistic(S, lambda x: special.erfc(1 / (2 * np.sqrt(x))))
        ctx.row("ks S_N(1) vs exact Levy cdf", exact)
    ctx.csv("clock_samples.csv", ["replica", "S_N_1"], enumerate(S))

    def draw(ax):
        x1, y1 = np.sort(S), np.arange(1, S.size + 1) / S.size
        x2 = np.sort(ref)
        ax.semilogx(x1, y1, lw=1, label="S_N(1)")
        ax.semilogx(x2, np.arange(1, x2.size + 1) / x2.size, lw=1, label="V(1)")
        ax.set_xlabel("value")
        ax.set_ylabel("ECDF")
    ctx.plot("clock_ecdf.svg", draw)
    return resolved_constants(p["d"], p["alpha"])


def _fk_charfn(p, ctx: _Context):
    t0 = time.perf_counter()
    Z = fk.sample_fk_marginal(p["d"], p["alpha"], p["t"], p["replicas"], ctx.rng("fk"))
    table = []
    for x2 in p["xi2"]:
        xi = np.zeros(p["d"])
        xi[0] = math.sqrt(x2)
        s = empirical_charfn(Z, xi)
        target = fk.fk_charfn_target(p["alpha"], p["t"], xi)
        ok = abs(s.estimate - target) <= p["n_se"] * s.std_error
        ctx.row("charfn", s, xi2=x2, target=target)
        ctx.check(f"charfn |xi|^2={x2}", s.estimate, target, f"{p['n_se']} SE", ok)
        table.append((x2, s.estimate, s.std_error, target))
    elapsed = time.perf_counter() - t0
    ctx.check("runtime seconds", elapsed, None, f"<= {p['max_seconds']}", elapsed <= p["max_seconds"])
    ctx.csv("charfn.csv", ["xi2", "estimate", "std_error", "target"], table)

    def draw(ax):
        x = np.linspace(0, max(p["xi2"]) * 1.2, 80)
        ax.plot(x, [fk.mittag_leffler(p["alpha"], -v * p["t"] ** p["alpha"] / 2) for v in x], lw=1,
                label="E_alpha(-|xi|^2 t^alpha / 2)")
        ax.errorbar([r[0] for r in table], [r[1] for r in table], [2 * r[2] for r in table], fmt="o",
                    label="MC")
        ax.set_xlabel("|xi|^2")
    ctx.plot("charfn.svg", draw)
    return resolved_constants(p["d"], p["alpha"])


def _fk_selfsim(p, ctx: _Context):
    a, lam = p["alpha"], p["lam"]
    Zl = fk.sample_fk_marginal(p["d"], a, lam, p["replicas"], ctx.rng("Z-lambda"))[:, 0]
    Z1 = fk.sample_fk_marginal(p["d"], a, 1.0, p["replicas"], ctx.rng("Z-one"))[:, 0]
    scaled = lam ** (-a / 2) * Zl
    ks = ks_statistic(scaled, Z1)
    ctx.row("ks lambda^(-alpha/2) Z(lambda) vs Z(1)", ks, lam=lam)
    ctx.check("self-similarity KS", ks, None, f"<= {p['ks_max']}", ks <= p["ks_max"])
    ctx.csv("selfsim.csv", ["replica", "scaled_Z_lambda", "Z_1"], zip(range(Z1.size), scaled, Z1))

    def draw(ax):
        for lab, x in (("lambda^(-alpha/2) Z(lambda)", scaled), ("Z(1)", Z1)):
            xs = np.sort(x)
            ax.plot(xs, np.arange(1, xs.size + 1) / xs.size, lw=1, label=lab)
        ax.set_xlabel("first coordinate")
        ax.set_ylabel("ECDF")
    ctx.plot("selfsim.svg", draw)
    return {}


def _aging(p, ctx: _Context):
    grid_a = np.linspace(0.05, 0.95, p["oracle_grid"])
    grid_t = np.geomspace(0.05, 20.0, p["oracle_grid"])
    worst = 0.0
    rows = []
    for a in grid_a:
        for th in grid_t:
            v = fk.aging_function(a, th)
            ref = float(special.betainc(a, 1 - a, 1 / (1 + th)))
            worst = max(worst, abs(v - ref))
            rows.append((a, th, v, ref))
    ctx.check("aging function vs incomplete beta", worst, 0.0, "<= 1e-8", worst <= 1e-8)
    ctx.csv("aging_oracle.csv", ["alpha", "theta", "aging_function", "betainc"], rows)
    env = le.Environment(p["d"], le.TailSpec(p["alpha"]), ctx.seed)
    table = []
    for th in p["thetas"]:
        s = ws.aging_probability_estimate(env, p["t_w"], th, p["replicas"], ctx.seed)
        target = fk.aging_function(p["alpha"], th)
        ctx.row("aging", s, theta=th, t_w=p["t_w"], target=target)
        ctx.check(f"aging theta={th}", s.estimate, target, f"+-{p['abs_tol']}",
                  abs(s.estimate - target) <= p["abs_tol"])
        table.append((th, s.estimate, s.std_error, s.extras["no_move_fraction"], target))
    ctx.csv("aging.csv", ["theta", "same_site", "std_error", "no_move", "target"], table)

    def draw(ax):
        th = np.geomspace(0.05, 20, 80)
        ax.semilogx(th, [fk.aging_function(p["alpha"], v) for v in th], lw=1, label="limit")
        ax.errorbar([r[0] for r in table], [r[1] for r in table], [2 * r[2] for r in table], fmt="o",
                    label=f"trap model t_w={p['t_w']:.0e}")
        ax.set_xlabel("theta")
        ax.set_ylabel("P[same site]")
    ctx.plot("aging.svg", draw)
    return resolved_constants(p["d"], p["alpha"])


def _lemma21_level(p, ctx: _Context, n: int, sites: int, parts: int):
    sc = le.scales(n, p["d"], p["alpha"])
    env = le.Environment(p["d"], le.TailSpec(p["alpha"]), ctx.seed, m=p["m"])
    sets = le.classify_traps(env, sc, p["epsilon"], p["M"])
    xs = sets.sample_safe_interior(sites, ctx.rng(f"sites-n{n}"))
    K, _ = fk.hitting_constants(p["d"])
    pe = p["epsilon"] ** -p["alpha"] - p["M"] ** -p["alpha"]
    per_site = []
    samples = []
    for x in xs:
        s = cg.sample_score_at(env, sc, sets, x, parts, ctx.seed)
        samples.append(s)
        per_site.append((n, *x, s.p_nonzero().estimate, s.p_infinite().estimate,
                         sc.h ** 2 * s.p_nonzero().estimate / (K * pe)))
    return sc, sets, samples, per_site


def _coarse_lemma21(p, ctx: _Context):
    t0 = time.perf_counter()
    K, _ = fk.hitting_constants(p["d"])
    fd = fk.FdParams.build(p["d"], p["alpha"], p["epsilon"], p["M"])
    levels = sorted(set(p["trend_n"]) | {p["n"]})
    rows, trend = [], []
    for n in levels:
        main = n == p["n"]
        sc, sets, samples, per_site = _lemma21_level(p, ctx, n, p["sites"] if main else p["trend_sites"],
                                                     p["parts"])
        rows += per_site
        ratio = np.array([r[-1] for r in per_site])
        p_inf = np.array([r[-2] for r in per_site])
        med = float(np.median(ratio))
        h2 = sc.h ** 2
        ctx.row("median h^2 P[s != 0] / (K p)", med, n=n, sites=len(per_site), parts=p["parts"],
                deep=int(sets.deep.shape[0]), bad=int(sets.bad_mask.sum()))
        ctx.row("h^2 P[s = inf]", float(h2 * p_inf.mean()), n=n)
        for lam in p["lambdas"]:
            est = float(np.mean([h2 * (1 - s.laplace(lam)) for s in samples]))
            ctx.row("h^2 (1 - Laplace)", est, n=n, lam=lam, target=fk.f_d_lambda(fd, lam))
        trend.append((n, med, float(h2 * p_inf.mean())))
        if main:
            lo, hi = p["ratio_band"]
            ctx.check(f"median ratio n={n}", med, 1.0, f"in [{lo}, {hi}]", lo <= med <= hi)
    elapsed = time.perf_counter() - t0
    ctx.check("runtime seconds", elapsed, None, f"<= {p['max_seconds']}", elapsed <= p["max_seconds"])
    ctx.csv("sites.csv", ["n"] + [f"x{i}" for i in range(p["d"])] + ["p_nonzero", "p_inf", "ratio"], rows)
    ctx.csv("trend.csv", ["n", "median_ratio", "h2_p_inf"], trend)

    def draw(ax):
        ax.plot([t[0] for t in trend], [t[1] for t in trend], "o-", label="median ratio")
        ax.plot([t[0] for t in trend], [t[2] for t in trend], "s--", label="h^2 P[s = inf]")
        ax.axhline(1.0, color="grey", lw=0.8)
        ax.set_xlabel("n")
    ctx.plot("trend.svg", draw)
    return resolved_constants(p["d"], p["alpha"], p["n"], p["m"])


def _displacement(p, ctx: _Context):
    sc = le.scales(p["n"], p["d"], p["alpha"])
    env = le.Environment(p["d"], le.TailSpec(p["alpha"]), ctx.seed, m=p["m"])
    sets = le.classify_traps(env, sc, p["epsilon"], p["M"])
    xs = sets.sample_safe_interior(p["sites"], ctx.rng(f"sites-n{p['n']}"))
    r = np.concatenate([cg.sample_score_at(env, sc, sets, x, p["parts"], ctx.seed).displacements
                        for x in xs])
    xi = np.asarray(p["xi"], dtype=float)
    s = cg.displacement_laplace_check(r, xi, sc, ctx.rng("bootstrap"))
    target = -float(xi @ xi) / (2 * p["d"])
    ctx.row("h^2 (1 - E exp(-xi.r/r(n)))", s, target=target)
    ctx.check("displacement Laplace", s.estimate, target, f"+-{p['abs_tol']}",
              abs(s.estimate - target) <= p["abs_tol"])
    norms = np.sqrt((r.astype(float) ** 2).sum(axis=1))
    ctx.check("rho < |r| <= rho + 1", float(norms.max() - sc.rho), None, "exact",
              bool(np.all((norms > sc.rho) & (norms <= sc.rho + 1))))
    ctx.csv("displacements.csv", [f"r{i}" for i in range(p["d"])], r)

    def draw(ax):
        ax.hist(r[:, 0] / sc.r, bins=60, density=True, histtype="step", label="r_1 / r(n)")
        ax.set_xlabel("r_1 / r(n)")
    ctx.plot("displacement.svg", draw)
    return resolved_constants(p["d"], p["alpha"], p["n"], p["m"])


def _coarse_lemma24(p, ctx: _Context):
    sc = le.scales(p["n"], p["d"], p["alpha"])
    env = le.Environment(p["d"], le.TailSpec(p["alpha"]), ctx.seed, m=p["m"])
    sets = le.classify_traps(env, sc, p["epsilon"], p["M"])
    k_max = max(1, math.ceil(p["T"] * sc.h ** 2))
    disc, first_bad = cg.lemma24_discrepancies(env, sc, sets, k_max, p["replicas"], ctx.seed)
    frac = cg.exceed_fraction(disc, p["delta"])
    ctx.row("P[discrepancy >= delta]", frac, delta=p["delta"], k_max=k_max, T=p["T"])
    ctx.row("P[infinite score before k_max]", float(np.mean(np.isinf(disc))))
    ctx.row("P[J / h^2 >= T]", float(np.mean(first_bad < 0)), T=p["T"])
    ctx.check("score-sum discrepancy", frac.estimate, None, f"< {p['delta']}", frac.estimate < p["delta"])
    ctx.csv("discrepancy.csv", ["replica", "discrepancy", "first_bad_part"],
            zip(range(disc.size), disc, first_bad))

    def draw(ax):
        fin = np.sort(disc[np.isfinite(disc)])
        if fin.size:
            ax.semilogx(fin, np.arange(1, fin.size + 1) / disc.size, lw=1, label="finite discrepancies")
        ax.axvline(p["delta"], color="grey", lw=0.8)
        ax.set_xlabel("normalized discrepancy")
        ax.set_ylabel("ECDF (all replicas)")
    ctx.plot("discrepancy.svg", draw)
    return resolved_constants(p["d"], p["alpha"], p["n"], p["m"])


def _green_free(p, ctx: _Context):
    rows = []
    for d in p["dims"]:
        t0 = time.perf_counter()
        b = srw.green_free(d, p["precision"])
        el = time.perf_counter() - t0
        ctx.row("G_d(0) bracket", b.value, d=d, lower=b.lower, upper=b.upper, width=b.width)
        rows.append((d, b.lower, b.upper, b.width))
        ctx.check(f"bracket width d={d}", b.width, None, f"<= {p['precision']}", b.width <= p["precision"])
        ctx.check(f"runtime seconds d={d}", el, None, f"<= {p['max_seconds']}", el <= p["max_seconds"])
        if d == 3:
            ctx.check("bracket contains 1.5163860", b.value, p["target_d3"], "containment",
                      b.contains(p["target_d3"]))
    ctx.csv("green_free.csv", ["d", "lower", "upper", "width"], rows)
    return {}


def _green_ball(p, ctx: _Context):
    d = p["d"]
    G = fk.green_constant(d)
    o = np.zeros(d, np.int64)
    rows = []
    for r in p["radii"]:
        t = srw.green_table(d, r)
        v = t.value(o, o)
        rows.append((r, v, abs(v - G), t.harmonicity_residual(o)))
    slope = loglog_slope([x[0] for x in rows], [x[2] for x in rows])
    ctx.row("log-log slope", slope)
    lo, hi = p["slope_band"]
    ctx.check("decay slope", slope, -1.0, f"in [{lo}, {hi}]", lo <= slope <= hi)
    worst = max(x[3] for x in rows)
    ctx.check("harmonicity residual", worst, 0.0, "<= 1e-10", worst <= 1e-10)
    ctx.csv("green_ball.csv", ["r", "G_r_00", "abs_diff", "harmonic_residual"], rows)

    def draw(ax):
        ax.loglog([x[0] for x in rows], [x[2] for x in rows], "o-", label="|G_D(r)(0,0) - G_d(0)|")
        rr = np.array(p["radii"], float)
        ax.loglog(rr, rows[0][2] * rr[0] / rr, "--", lw=0.8, label="slope -1")
        ax.set_xlabel("r")
    ctx.plot("green_ball.svg", draw)
    return resolved_constants(d)


def _hitting_bounds(p, ctx: _Context):
    d, r = p["d"], p["r"]
    G = fk.green_constant(d)
    pts_fn = lambda rad: srw.axis_and_diagonal_points(d, p["r_min"], min(p["r_max"], rad / 2))
    if p["envelope"] is None:
        c = srw.fit_envelope_constants(d, p["calibration_radii"], pts_fn, G, p["safety"])
    else:
        c = srw.EnvelopeConstants(**p["envelope"])
    t = srw.green_table(d, r)
    o = np.zeros(d, np.int64)
    rows, ok, worst_ratio = [], True, 0.0
    for x in srw.axis_and_diagonal_points(d, p["r_min"], p["r_max"]):
        pr = srw.hitting_prob(d, r, x)
        pd = srw.hitting_prob(d, r, x, method="dirichlet")
        lo, up, ref = srw.hitting_bounds(d, r, x, c, G)
        inside = lo <= pr <= up and pr <= ref
        ok &= inside
        ratio_res = abs(pd * t.value(x, x) - t.value(o, x))
        worst_ratio = max(worst_ratio, ratio_res)
        rows.append((*x, pr, lo, up, ref, ratio_res, int(inside)))
    ctx.check("p_r(0,x) inside bounds", float(sum(1 - r_[-1] for r_ in rows)), 0.0, "all points", ok)
    ctx.check("ratio identity", worst_ratio, 0.0, "<= 1e-12", worst_ratio <= 1e-12)
    ctx.row("envelope constants", 0.0, **asdict(c))
    ctx.csv("hitting.csv", [f"x{i}" for i in range(d)] + ["p", "lower", "upper", "refined", "ratio_residual",
                                                          "inside"], rows)

    def draw(ax):
        nx = [math.sqrt(sum(v * v for v in row[:d])) for row in rows]
        order = np.argsort(nx, kind="stable")
        for k, lab in ((d, "p_r(0,x)"), (d + 1, "lower"), (d + 3, "refined upper")):
            ax.loglog(np.array(nx)[order], np.array([row[k] for row in rows])[order], ".", label=lab)
        ax.set_xlabel("|x|")
    ctx.plot("hitting.svg", draw)
    out = resolved_constants(d)
    out["envelope"] = asdict(c)
    return out


def _fd_limit(p, ctx: _Context):
    t0 = time.perf_counter()
    rows = []
    for d in p["dims"]:
        for a in p["alphas"]:
            res = fk.fd_limit_identity_check(d, a, p["lambdas"], [1.0, 2.0 ** (1 / a)], p["epsilon"], p["M"])
            ctx.row("max relative deviation", res["max_rel_dev"], d=d, alpha=a, t_spread=res["t_spread"])
            ctx.check(f"F_d identity d={d} alpha={a}", res["max_rel_dev"], 0.0, f"<= {p['rel_tol']}",
                      res["max_rel_dev"] <= p["rel_tol"])
            rows += [(d, a, r["lambda"], r["t"], r["lhs"], r["rhs"], r["rel_dev"]) for r in res["rows"]]
    el = time.perf_counter() - t0
    ctx.check("runtime seconds", el, None, f"<= {p['max_seconds']}", el <= p["max_seconds"])
    ctx.csv("fd_limit.csv", ["d", "alpha", "lambda", "t", "lhs", "lambda_pow_alpha", "rel_dev"], rows)

    def draw(ax):
        ax.plot([r[5] for r in rows], [r[4] for r in rows], "o", ms=3, label="(t^a / c2^2) F_d(lambda / t)")
        m = max(r[5] for r in rows)
        ax.plot([0, m], [0, m], lw=0.8, label="identity")
        ax.set_xlabel("lambda^alpha")
    ctx.plot("fd_limit.svg", draw)
    return {"constants_by_d": {d: resolved_constants(d) for d in p["dims"]}}


def _ctrw_compare(p, ctx: _Context):
    U = ws.ctrw_rescaled_positions(p["d"], p["alpha"], p["N"], p["t"], p["replicas"], ctx.seed)
    Z = fk.sample_fk_marginal(p["d"], p["alpha"], p["t"], p["fk_replicas"], ctx.rng("fk"))
    ks = ks_statistic(U[:, 0], Z[:, 0])
    ks_norm = ks_statistic(np.linalg.norm(U, axis=1), np.linalg.norm(Z, axis=1))
    ctx.row("ks first coordinate", ks)
    ctx.row("ks norm", ks_norm)
    ctx.check("CTRW vs FK KS", ks, None, f"<= {p['ks_max']}", ks <= p["ks_max"])
    ctx.csv("ctrw_samples.csv", ["replica"] + [f"U{i}" for i in range(p["d"])],
            [(i, *u) for i, u in enumerate(U)])

    def draw(ax):
        for lab, x in (("CTRW", U[:, 0]), ("FK", Z[:, 0])):
            xs = np.sort(x)
            ax.plot(xs, np.arange(1, xs.size + 1) / xs.size, lw=1, label=lab)
        ax.set_xlabel("first coordinate")
        ax.set_ylabel("ECDF")
    ctx.plot("ctrw_ecdf.svg", draw)
    return {"ctrw_constant": ws.ctrw_constant(p["d"], p["alpha"]), **resolved_constants(p["d"], p["alpha"])}


# ---- registry -------------------------------------------------------------------------------

_COARSE = {"d": 3, "alpha": 0.5, "n": 14, "epsilon": 0.5, "M": 4.0, "m": 2.0}

REGISTRY: Dict[str, ExperimentSpec] = {s.name: s for s in [
    ExperimentSpec("subordinator-laplace", "Laplace transform of V(1) against exp(-lambda^alpha)",
                   {"alphas": [0.3, 0.5, 0.8], "lambdas": [0.5, 1.0, 2.0], "draws": 100000, "n_se": 4.0,
                    "max_seconds": 10.0}, _subordinator_laplace),
    ExperimentSpec("env-tail", "Pareto tail of the site depths and purity of the lookup",
                   {"d": 3, "alpha": 0.5, "sites": 200000, "u_values": [2.0, 10.0, 100.0], "n_se": 4.0},
                   _env_tail),
    ExperimentSpec("walk-basics", "Embedded walk, clock and rescaled triple identities",
                   {"d": 3, "alpha": 0.5, "steps": 200000, "N": 1.0e4, "T": 1.0, "grid_points": 200,
                    "export_points": 2000}, _walk_basics),
    ExperimentSpec("clock-marginal", "KS of S_N(1) against a V(1) reference ensemble",
                   {"d": 3, "alpha": 0.5, "N": 1.0e6, "replicas": 5000, "reference": 1000000, "ks_max": 0.08},
                   _clock_marginal),
    ExperimentSpec("fk-charfn", "FK fixed-time characteristic function against Mittag-Leffler",
                   {"d": 3, "alpha": 0.5, "t": 1.0, "xi2": [1.0, 2.0, 4.0], "replicas": 100000, "n_se": 4.0,
                    "max_seconds": 60.0}, _fk_charfn),
    ExperimentSpec("fk-selfsim", "Self-similarity of the FK process",
                   {"d": 3, "alpha": 0.5, "lam": 4.0, "replicas": 20000, "ks_max": 0.02}, _fk_selfsim),
    ExperimentSpec("aging", "Aging function oracle and trap-model estimate",
                   {"d": 3, "alpha": 0.5, "thetas": [1.0, 3.0], "t_w": 1.0e7, "replicas": 10000,
                    "abs_tol": 0.03, "oracle_grid": 20}, _aging, _need_d3),
    ExperimentSpec("coarse-lemma21", "Probability of a nonzero score and its n-trend",
                   {**_COARSE, "sites": 200, "parts": 500, "trend_n": [10, 12], "trend_sites": 100,
                    "lambdas": [0.5, 1.0, 2.0], "ratio_band": [0.75, 1.25], "max_seconds": 1200.0},
                   _coarse_lemma21, _need_d3),
    ExperimentSpec("displacement", "Exit displacement Laplace functional",
                   {**_COARSE, "sites": 200, "parts": 500, "xi": [1.0, 0.0, 0.0], "abs_tol": 0.05},
                   _displacement, _need_d3),
    ExperimentSpec("coarse-lemma24", "Score sum against the clock",
                   {**_COARSE, "epsilon": 0.1, "T": 1.0, "delta": 0.1, "replicas": 1000},
                   _coarse_lemma24, _need_d3),
    ExperimentSpec("green-free", "Rigorous bracket for G_d(0)",
                   {"dims": [3], "precision": 2.0e-4, "target_d3": 1.516386, "max_seconds": 5.0}, _green_free),
    ExperimentSpec("green-ball", "Decay of G_D(r)(0,0) towards G_d(0)",
                   {"d": 3, "radii": [10, 20, 40], "slope_band": [-1.3, -0.7]}, _green_ball, _need_d3),
    ExperimentSpec("hitting-bounds", "Hitting probability sandwich and ratio identity",
                   {"d": 3, "r": 30, "r_min": 3.0, "r_max": 15.0, "calibration_radii": [20, 40],
                    "safety": 1.5, "envelope": None}, _hitting_bounds, _need_d3),
    ExperimentSpec("fd-limit", "Scaling identity of F_d",
                   {"dims": [2, 3], "alphas": [0.3, 0.5, 0.8], "epsilon": 1.0e-4, "M": 1.0e4,
                    "lambdas": [0.5, 1.0, 2.0], "rel_tol": 0.02, "max_seconds": 5.0}, _fd_limit),
    ExperimentSpec("ctrw-compare", "Rescaled CTRW against the FK marginal",
                   {"d": 3, "alpha": 0.5, "N": 1.0e6, "t": 1.0, "replicas": 20000, "fk_replicas": 200000,
                    "ks_max": 0.05}, _ctrw_compare),
]}


def bundled_config(name: str) -> dict:
    """The default config shipped with the package for experiment ``name``."""
    text = resources.files("trapmodel").joinpath("configs", f"{name}.json").read_text()
    return json.loads(text)


def run(config: ExperimentConfig) -> RunReport:
    """Validate, execute and write all files for one experiment."""
    p = config.resolved()
    spec = REGISTRY[config.experiment]
    out = Path(config.out) / config.experiment
    out.mkdir(parents=True, exist_ok=True)
    ctx = _Context(out, config.experiment, int(config.master_seed))
    t0 = time.perf_counter()
    constants = spec.runner(p, ctx)
    wall = time.perf_counter() - t0
    report = RunReport(
        config={"experiment": config.experiment, "params": p, "master_seed": config.master_seed,
                "threads": config.threads},
        rows=ctx.rows, checks=ctx.checks, passed=all(c.passed for c in ctx.checks), wall_clock=wall,
        seed_provenance={"master_seed": config.master_seed, "numpy_streams": sorted(set(ctx.purposes)),
                         "kernel_streams": "counter keys derived from master_seed and a purpose tag"},
        constants=_jsonable(constants or {}), files=sorted(ctx.files + ["report.json"]))
    with open(out / "report.json", "w") as fh:
        json.dump(_jsonable(report.to_dict()), fh, indent=2)
    return report
