"""Deterministic random streams.

Two flavours are provided. Numpy code gets a ``numpy.random.Generator`` keyed on
``(master_seed, purpose, replica)``. Numba kernels get a 64-bit counter key and
draw with SplitMix64, so every replica's draws depend only on its own key and
never on thread scheduling.
"""
from __future__ import annotations

import zlib

import numba as nb
import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

_GOLDEN_U = np.uint64(GOLDEN)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_S32 = np.uint64(32)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0


def mix64_py(z: int) -> int:
    """SplitMix64 finalizer on python ints (reference for the jitted version)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def base_key(master_seed: int, purpose: str) -> int:
    """Key shared by all replicas of one purpose; purposes are domain-separated."""
    h = mix64_py((int(master_seed) & MASK64) + GOLDEN)
    return mix64_py(h ^ mix64_py(purpose_code(purpose) * GOLDEN + 1))


def replica_key_py(base: int, replica: int) -> int:
    return mix64_py((base + (int(replica) + 1) * GOLDEN) & MASK64)


def stream_key(master_seed: int, purpose: str, replica: int = 0) -> int:
    """Counter key for one replica of a jitted kernel."""
    return replica_key_py(base_key(master_seed, purpose), replica)


def seed_stream(master_seed: int, replica_id: int, purpose_tag: str) -> np.random.Generator:
    """Independent, reproducible numpy generator for ``(replica_id, purpose_tag)``."""
    ss = np.random.SeedSequence(
        entropy=int(master_seed) & MASK64,
        spawn_key=(purpose_code(purpose_tag), int(replica_id)),
    )
    return np.random.Generator(np.random.Philox(ss))


# ---- jitted primitives -------------------------------------------------------


@nb.njit(inline="always", cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(inline="always", cache=True)
def replica_key(base, replica):
    return mix64(base + np.uint64(replica + 1) * _GOLDEN_U)


@nb.njit(inline="always", cache=True)
def next_u64(state):
    """Advance a SplitMix64 state; returns (new_state, output)."""
    state = state + _GOLDEN_U
    return state, mix64(state)


@nb.njit(inline="always", cache=True)
def to_unit(h):
    """Map 64 random bits to a double in (0, 1]."""
    return ((h >> _S11) + _ONE) * _INV53


@nb.njit(inline="always", cache=True)
def next_unit(state):
    state, h = next_u64(state)
    return state, to_unit(h)


@nb.njit(inline="always", cache=True)
def next_exp(state):
    state, u = next_unit(state)
    return state, -np.log(u)


@nb.njit(inline="always", cache=True)
def next_direction(state, n_dir):
    """Uniform integer in [0, n_dir) from the top 32 bits (Lemire reduction)."""
    state, h = next_u64(state)
    return state, np.int64(((h >> _S32) * np.uint64(n_dir)) >> _S32)


@nb.njit(cache=True)
def first_units(keys):
    """First (0, 1] draw of each key's stream; used to check stream uniformity."""
    out = np.empty(keys.shape[0])
    for i in range(keys.shape[0]):
        _, out[i] = next_unit(keys[i])
    return out
