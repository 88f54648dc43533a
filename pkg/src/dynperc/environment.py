"""Lazy dynamical-percolation environment on Z^d.

Edges are materialized only when the walker (or a measurement) looks at
them. An edge last seen at time t0 in state s is, at time t, still in state s
unless at least one rate-mu refresh happened in between, which has
probability 1 - exp(-mu (t - t0)); after a refresh the state is a fresh
Bernoulli(p). This reproduces the law of the full refresh field exactly.

The store is a flat open-addressing hash table (linear probing) made of four
parallel arrays plus a counter::

    keys int64, state uint8, stamp float64, copies uint64, meta int64[2]

``copies`` is the bitmask of infected-set copy indices carried by the edge
(bit j-1 for copy j); an edge is frozen iff its mask is nonzero.
``meta[0]`` counts occupied slots.

The per-event helpers never allocate and are compiled without numba's
reference counting (``_nrt=False``); with it, the incref/decref traffic on
the array arguments costs several times the actual work. Callers draw the
uniforms and handle table growth themselves, see :func:`needs_grow`.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .analytic import Params

__all__ = [
    "EdgeKey",
    "EdgeRecord",
    "Environment",
    "pack_edge",
    "unpack_edge",
    "edge_key",
    "new_store",
    "needs_grow",
    "grow",
    "probe",
    "query",
    "prune_arrays",
    "MAX_DIM",
]

EMPTY = np.int64(-1)
MAX_DIM = 6
_AXIS_BITS = 3
_HASH_MULT = np.uint64(0x9E3779B97F4A7C15)


# ---------------------------------------------------------------- keys


@njit(cache=True, _nrt=False)
def pack_edge(base, axis):
    """Pack (base point, axis) into a nonnegative int64."""
    d = base.shape[0]
    bits = 60 // d
    off = np.int64(1) << (bits - 1)
    key = np.int64(axis)
    shift = _AXIS_BITS
    for i in range(d):
        c = base[i]
        if c <= -off or c >= off - 1:
            raise OverflowError("lattice coordinate outside the packable range")
        key |= (c + off) << shift
        shift += bits
    return key


@njit(cache=True, _nrt=False)
def edge_key(pos, axis, sign):
    """Key of the edge the walker at ``pos`` crosses when stepping ``sign * e_axis``."""
    d = pos.shape[0]
    bits = 60 // d
    off = np.int64(1) << (bits - 1)
    key = np.int64(axis)
    shift = _AXIS_BITS
    for i in range(d):
        c = pos[i]
        if i == axis and sign < 0:
            c -= 1
        if c <= -off or c >= off - 1:
            raise OverflowError("lattice coordinate outside the packable range")
        key |= (c + off) << shift
        shift += bits
    return key


@njit(cache=True)
def unpack_edge(key, d):
    bits = 60 // d
    off = np.int64(1) << (bits - 1)
    mask = (np.int64(1) << bits) - 1
    base = np.empty(d, np.int64)
    axis = key & ((1 << _AXIS_BITS) - 1)
    shift = _AXIS_BITS
    for i in range(d):
        base[i] = ((key >> shift) & mask) - off
        shift += bits
    return base, axis


class EdgeKey(NamedTuple):
    """Canonical identity of the lattice edge {base, base + e_axis}."""

    base: tuple[int, ...]
    axis: int

    @classmethod
    def between(cls, x: Sequence[int], y: Sequence[int]) -> "EdgeKey":
        diff = [b - a for a, b in zip(x, y)]
        nz = [i for i, v in enumerate(diff) if v != 0]
        if len(x) != len(y) or len(nz) != 1 or abs(diff[nz[0]]) != 1:
            raise ValueError(f"{tuple(x)} and {tuple(y)} are not nearest neighbours")
        axis = nz[0]
        base = tuple(x) if diff[axis] == 1 else tuple(y)
        return cls(tuple(int(c) for c in base), axis)

    def pack(self) -> int:
        if not 0 <= self.axis < len(self.base) or len(self.base) > MAX_DIM:
            raise ValueError("axis out of range")
        return int(pack_edge(np.asarray(self.base, dtype=np.int64), self.axis))

    @classmethod
    def unpack(cls, key: int, d: int) -> "EdgeKey":
        base, axis = unpack_edge(np.int64(key), d)
        return cls(tuple(int(c) for c in base), int(axis))


class EdgeRecord(NamedTuple):
    state: bool
    stamped_at: float
    frozen: bool


# ---------------------------------------------------------------- table


@njit(cache=True)
def new_store(capacity):
    cap = 16
    while cap < capacity:
        cap *= 2
    return (
        np.full(cap, EMPTY, np.int64),
        np.zeros(cap, np.uint8),
        np.zeros(cap, np.float64),
        np.zeros(cap, np.uint64),
        np.zeros(2, np.int64),
    )


@njit(cache=True, inline="always")
def _slot_of(key, mask):
    h = np.uint64(key) * _HASH_MULT
    h ^= h >> np.uint64(29)
    return np.int64(h & np.uint64(mask))


@njit(cache=True, _nrt=False)
def probe(keys, key):
    """Slot index of ``key``, or ``-1 - free_slot`` if absent."""
    mask = keys.shape[0] - 1
    i = _slot_of(key, mask)
    while True:
        k = keys[i]
        if k == key:
            return i
        if k == EMPTY:
            return -1 - i
        i = (i + 1) & mask


@njit(cache=True, _nrt=False)
def needs_grow(keys, meta, room=1):
    """True when ``room`` more insertions would push the load factor past 1/2."""
    return (meta[0] + room) * 2 >= keys.shape[0]


@njit(cache=True)
def _rehash(keys, state, stamp, copies, meta, cap, keep_all, t_cut, center, radius):
    nk = np.full(cap, EMPTY, np.int64)
    ns = np.zeros(cap, np.uint8)
    nt = np.zeros(cap, np.float64)
    nc = np.zeros(cap, np.uint64)
    mask = cap - 1
    d = center.shape[0]
    count = 0
    for j in range(keys.shape[0]):
        k = keys[j]
        if k == EMPTY:
            continue
        if not keep_all and copies[j] == 0 and stamp[j] < t_cut:
            base, axis = unpack_edge(k, d)
            dist = 0
            for i in range(d):
                dist += abs(base[i] - center[i])
            if dist > radius:
                continue
        i = _slot_of(k, mask)
        while nk[i] != EMPTY:
            i = (i + 1) & mask
        nk[i] = k
        ns[i] = state[j]
        nt[i] = stamp[j]
        nc[i] = copies[j]
        count += 1
    meta[0] = count
    return nk, ns, nt, nc


@njit(cache=True)
def grow(keys, state, stamp, copies, meta):
    """Double the table; returns the four new arrays (``meta`` is updated in place)."""
    return _rehash(keys, state, stamp, copies, meta, keys.shape[0] * 2, True, 0.0, np.zeros(1, np.int64), 0)


@njit(cache=True)
def prune_arrays(keys, state, stamp, copies, meta, t_cut, center, radius):
    """Drop unfrozen records stamped before ``t_cut`` and farther than ``radius``.

    Exact only up to probability exp(-mu * (t - t_cut)) per dropped edge:
    a record that stale would have been refreshed anyway.
    """
    cap = keys.shape[0]
    while cap > 1024 and 8 * meta[0] < cap:
        cap //= 2
    return _rehash(keys, state, stamp, copies, meta, cap, False, t_cut, center, radius)


@njit(cache=True, _nrt=False)
def query(keys, state, stamp, copies, meta, key, t, mu, p, u):
    """Current state (0/1) of an edge at time ``t``, driven by one uniform ``u``.

    A missing edge is inserted with state ``u < p``. A present unfrozen edge
    is refreshed when ``u < r = 1 - exp(-mu dt)`` and its new state is then
    ``u < p r`` (given a refresh, u / r is again uniform). The table must
    have room for one insertion.
    """
    slot = probe(keys, key)
    if slot < 0:
        slot = -1 - slot
        keys[slot] = key
        state[slot] = u < p
        stamp[slot] = t
        copies[slot] = 0
        meta[0] += 1
        return state[slot]
    if copies[slot] != 0:
        return state[slot]
    dt = t - stamp[slot]
    if dt < 0.0:
        raise ValueError("edge queried at a time before its last stamp")
    r = -math.expm1(-mu * dt)
    if u < r:
        state[slot] = u < p * r
    stamp[slot] = t
    return state[slot]


# ---------------------------------------------------------------- wrapper


class Environment:
    """Lazily evaluated edge field for one replica.

    Not thread safe; one instance per worker.
    """

    def __init__(self, params: Params, rng: np.random.Generator, capacity: int = 1024):
        self.params = params
        self.rng = rng
        self.keys, self.state, self.stamp, self.copies, self.meta = new_store(capacity)

    @property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.keys, self.state, self.stamp, self.copies, self.meta

    def __len__(self) -> int:
        return int(self.meta[0])

    def _key(self, key: EdgeKey | int) -> int:
        if isinstance(key, EdgeKey):
            if len(key.base) != self.params.d:
                raise ValueError("edge key dimension does not match params.d")
            return key.pack()
        return int(key)

    def slot(self, key: EdgeKey | int) -> int:
        slot = probe(self.keys, self._key(key))
        if slot < 0:
            raise KeyError(f"edge {key} has never been examined")
        return int(slot)

    def ensure_room(self) -> None:
        if needs_grow(self.keys, self.meta):
            self.keys, self.state, self.stamp, self.copies = grow(*self.arrays)

    def record(self, key: EdgeKey | int) -> EdgeRecord | None:
        slot = probe(self.keys, self._key(key))
        if slot < 0:
            return None
        return EdgeRecord(bool(self.state[slot]), float(self.stamp[slot]), bool(self.copies[slot] != 0))

    def query(self, key: EdgeKey | int, t: float) -> bool:
        if t < 0:
            raise ValueError("time must be nonnegative")
        k = self._key(key)
        self.ensure_room()
        u = self.rng.random()
        return bool(query(*self.arrays, k, float(t), self.params.mu, self.params.p, u))

    def freeze(self, key: EdgeKey | int, t: float) -> None:
        self.query(key, t)
        slot = self.slot(key)
        if self.copies[slot] != 0:
            raise ValueError("edge is already frozen")
        self.copies[slot] = 1

    def unfreeze(self, key: EdgeKey | int, t: float) -> None:
        slot = self.slot(key)
        if self.copies[slot] == 0:
            raise ValueError("edge is not frozen")
        if t < self.stamp[slot]:
            raise ValueError("unfreeze time precedes the record's stamp")
        self.copies[slot] = 0
        self.stamp[slot] = t

    def force_state(self, key: EdgeKey | int, state: bool, t: float) -> None:
        slot = self.slot(key)
        self.state[slot] = bool(state)
        self.stamp[slot] = t

    def plant(self, key: EdgeKey | int, state: bool, t: float = 0.0) -> None:
        """Insert-or-overwrite: query to materialize, then force the state."""
        self.query(key, t)
        self.force_state(key, state, t)

    def prune(self, t: float, center: Sequence[int], radius: int = 2, horizon: float | None = None) -> int:
        """Drop stale far-away records; returns how many were removed."""
        horizon = 50.0 / self.params.mu if horizon is None else horizon
        before = len(self)
        self.keys, self.state, self.stamp, self.copies = prune_arrays(
            *self.arrays, t - horizon, np.asarray(center, dtype=np.int64), radius
        )
        return before - len(self)
