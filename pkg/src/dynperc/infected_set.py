"""Infected-set bookkeeping and regeneration detection.

Every examined edge gets a copy added to the infected set (copy index = the
smallest index not currently present for that edge). Copies die at rate mu
each. Killing copy 1 of an edge resamples that edge; while an edge carries
any copy it is frozen, i.e. it is not refreshed by its own lazy clock. The
set emptying after having been nonempty marks a regeneration time.

Per-edge copy indices live in the environment's ``copies`` bitmask; the flat
arrays here give O(1) uniform selection and swap-removal of a copy::

    flat_key int64, flat_idx int64, imeta int64[1]   # imeta[0] = |I|
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .environment import EdgeKey, Environment, probe, query

__all__ = [
    "InfectedSet",
    "new_iset",
    "iset_needs_grow",
    "iset_grow",
    "iset_examine",
    "iset_death",
    "MAX_COPIES",
]

MAX_COPIES = 64


@njit(cache=True)
def new_iset(capacity):
    cap = max(capacity, 16)
    return np.zeros(cap, np.int64), np.zeros(cap, np.int64), np.zeros(1, np.int64)


@njit(cache=True, _nrt=False)
def iset_needs_grow(fk, imeta):
    return imeta[0] >= fk.shape[0]


@njit(cache=True)
def iset_grow(fk, fi, imeta):
    n = imeta[0]
    nk = np.zeros(2 * fk.shape[0], np.int64)
    ni = np.zeros(2 * fk.shape[0], np.int64)
    nk[:n] = fk[:n]
    ni[:n] = fi[:n]
    return nk, ni


@njit(cache=True, _nrt=False)
def iset_examine(keys, state, stamp, copies, meta, fk, fi, imeta, key, t, mu, p, u):
    """Add a copy of ``key`` and return the edge state the walker sees.

    An edge without copies is first brought current by a lazy query (using
    the uniform ``u``) and then frozen. Both tables need room for one more
    entry.
    """
    slot = probe(keys, key)
    if slot < 0 or copies[slot] == 0:
        s = query(keys, state, stamp, copies, meta, key, t, mu, p, u)
        if slot < 0:
            slot = probe(keys, key)
        copies[slot] = 1
        idx = 1
    else:
        mask = copies[slot]
        j = 0
        while (mask >> np.uint64(j)) & np.uint64(1):
            j += 1
        if j >= MAX_COPIES:
            raise OverflowError("more than 64 simultaneous copies of one edge")
        copies[slot] = mask | (np.uint64(1) << np.uint64(j))
        s = state[slot]
        idx = j + 1
    n = imeta[0]
    fk[n] = key
    fi[n] = idx
    imeta[0] = n + 1
    return s


@njit(cache=True, _nrt=False)
def iset_death(keys, state, stamp, copies, fk, fi, imeta, t, p, u_pick, u_state):
    """Remove the copy picked by ``u_pick``; returns its index.

    Removing copy 1 resamples the edge as ``u_state < p``; an edge left with
    no copies is unfrozen and restamped at ``t``.
    """
    n = imeta[0]
    if n == 0:
        raise ValueError("death event on an empty infected set")
    r = np.int64(u_pick * n)
    if r >= n:
        r = n - 1
    key = fk[r]
    idx = fi[r]
    fk[r] = fk[n - 1]
    fi[r] = fi[n - 1]
    imeta[0] = n - 1
    slot = probe(keys, key)
    mask = copies[slot] & ~(np.uint64(1) << np.uint64(idx - 1))
    copies[slot] = mask
    if idx == 1:
        state[slot] = u_state < p
        stamp[slot] = t
    if mask == 0:
        stamp[slot] = t
    return idx


class InfectedSet:
    """Python view of the infected set attached to an :class:`Environment`."""

    def __init__(self, capacity: int = 64):
        self.fk, self.fi, self.imeta = new_iset(capacity)
        self._since_regen = False

    @property
    def total(self) -> int:
        return int(self.imeta[0])

    def __len__(self) -> int:
        return self.total

    def copies(self, env: Environment, key: EdgeKey | int) -> set[int]:
        slot = probe(env.keys, env._key(key))
        if slot < 0:
            return set()
        mask = int(env.copies[slot])
        return {j + 1 for j in range(MAX_COPIES) if mask >> j & 1}

    def entries(self) -> list[tuple[int, int]]:
        n = self.total
        return list(zip(self.fk[:n].tolist(), self.fi[:n].tolist()))

    def on_examine(self, env: Environment, key: EdgeKey | int, t: float) -> bool:
        env.ensure_room()
        if iset_needs_grow(self.fk, self.imeta):
            self.fk, self.fi = iset_grow(self.fk, self.fi, self.imeta)
        u = env.rng.random()
        s = iset_examine(*env.arrays, self.fk, self.fi, self.imeta, env._key(key), float(t),
                         env.params.mu, env.params.p, u)
        self._since_regen = True
        return bool(s)

    def death(self, env: Environment, t: float) -> int:
        u_pick, u_state = env.rng.random(2)
        return int(iset_death(env.keys, env.state, env.stamp, env.copies, self.fk, self.fi, self.imeta,
                              float(t), env.params.p, u_pick, u_state))

    def is_regeneration(self, was_nonempty: bool | None = None) -> bool:
        """True iff the set is empty now and was populated since the last regeneration.

        Calling this with a True result resets the "since last regeneration"
        flag.
        """
        populated = self._since_regen if was_nonempty is None else was_nonempty
        if self.total == 0 and populated:
            self._since_regen = False
            return True
        return False
