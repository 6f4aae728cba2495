"""Bouchaud trap model on Z^d: simulation, coarse graining and limiting objects.

Submodules load lazily so a caller (the CLI) can fix the numba thread count
before numba is imported.
"""
import importlib
import warnings

# numba probes the system TBB and falls back to OpenMP when it is too old
warnings.filterwarnings("ignore", message="The TBB threading layer requires TBB")

__version__ = "0.1.0"

_EXPORTS = {
    "errors": ["TrapModelError", "ParameterError", "UnsupportedDimensionError", "RegionError",
               "HorizonError", "CapacityError", "DivergenceError", "PreconditionError", "InputError"],
    "rng": ["seed_stream", "stream_key"],
    "lattice_env": ["TailSpec", "Environment", "tau_at", "tau_many", "ScaleSet", "scales", "TrapSets",
                    "classify_traps"],
    "walk_sim": ["TrajectoryRecord", "run_walk", "scripted_trajectory", "position_at", "rescale",
                 "RescaledTriple", "clock_marginal", "aging_probability_estimate", "ctrw_trajectory",
                 "ctrw_rescaled_positions"],
    "fk_limit": ["sample_stable_subordinator", "invert_subordinator", "sample_fk_path", "sample_fk_batch",
                 "sample_fk_marginal", "mittag_leffler", "aging_function", "scaling_constant",
                 "FdParams", "f_d_lambda", "fd_limit_identity_check"],
    # the function coarse_grain shares its module's name: import it from trapmodel.coarse_grain
    "coarse_grain": ["CoarseGrainReport", "score_sum_discrepancy", "sample_score_at",
                     "displacement_laplace_check", "lemma24_discrepancies"],
    "srw_analytics": ["green_free", "green_ball", "hitting_prob", "hitting_bounds", "hitting_sum_V",
                      "GreenBracket"],
    "stats_kit": ["StatsSummary", "ks_statistic", "bootstrap_ci", "empirical_laplace", "empirical_charfn"],
    "experiments": ["ExperimentConfig", "RunReport", "run", "REGISTRY"],
}
_WHERE = {name: mod for mod, names in _EXPORTS.items() for name in names}

__all__ = sorted(_WHERE)


def __getattr__(name):
    if name in _WHERE:
        return getattr(importlib.import_module(f".{_WHERE[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
