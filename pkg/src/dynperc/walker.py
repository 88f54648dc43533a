"""Event-driven simulation of the lambda-biased walk on dynamical percolation.

Two modes:

* plain: attempts at rate 1 against the lazy environment, optionally with an
  independent Poisson inspection clock that records the states of the two
  edges adjacent to the walker along axis 0;
* regen: the same walk driven through the infected set, emitting one
  :class:`RegenerationBlocks` row per emptying of the set.

In regen mode the next event is drawn from the embedded chain: with |I| = n
the waiting time is Exp(1 + mu n) and the event is an attempt with
probability 1 / (1 + mu n), otherwise a death.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .analytic import Params
from .environment import EMPTY, edge_key, grow, needs_grow, new_store, prune_arrays, query
from .infected_set import iset_death, iset_examine, iset_grow, iset_needs_grow, new_iset

__all__ = [
    "WalkerState",
    "RegenerationBlocks",
    "OccupancySamples",
    "PlainRun",
    "sample_direction",
    "run_plain",
    "run_regen",
    "occupancy_fractions",
    "far_edge_marginal",
    "regen_edge_states",
    "MIN_OCCUPANCY_SAMPLES",
]

MIN_OCCUPANCY_SAMPLES = 1000


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True)
class WalkerState:
    pos: tuple[int, ...]
    t: float
    attempts: int
    successes: int
    backward_attempts: int
    orthogonal_attempts: int

    @property
    def forward_attempts(self) -> int:
        return self.attempts - self.backward_attempts - self.orthogonal_attempts


@dataclass(frozen=True)
class RegenerationBlocks:
    """Columns of i.i.d. regeneration blocks (one row per block)."""

    dt: np.ndarray
    dx: np.ndarray
    attempts: np.ndarray
    backward_attempts: np.ndarray
    orthogonal_attempts: np.ndarray

    def __len__(self) -> int:
        return int(self.dt.shape[0])

    def __getitem__(self, sl) -> "RegenerationBlocks":
        return RegenerationBlocks(
            self.dt[sl], self.dx[sl], self.attempts[sl], self.backward_attempts[sl], self.orthogonal_attempts[sl]
        )

    def aggregate(self, k: int) -> "RegenerationBlocks":
        """Concatenate k consecutive blocks; a trailing partial group is dropped."""
        if k < 1:
            raise ValueError("k must be >= 1")
        m = len(self) // k

        def agg(a: np.ndarray) -> np.ndarray:
            return a[: m * k].reshape(m, k).sum(axis=1)

        return RegenerationBlocks(
            agg(self.dt), agg(self.dx), agg(self.attempts), agg(self.backward_attempts), agg(self.orthogonal_attempts)
        )

    @classmethod
    def concat(cls, parts: list["RegenerationBlocks"]) -> "RegenerationBlocks":
        return cls(*(np.concatenate([getattr(b, f) for b in parts]) for f in
                     ("dt", "dx", "attempts", "backward_attempts", "orthogonal_attempts")))


@dataclass(frozen=True)
class OccupancySamples:
    """Inspection times and the (left, right) edge states seen at each."""

    t: np.ndarray
    left_open: np.ndarray
    right_open: np.ndarray

    def __len__(self) -> int:
        return int(self.t.shape[0])


@dataclass(frozen=True)
class PlainRun:
    state: WalkerState
    occupancy: OccupancySamples
    batch_positions: np.ndarray  # first coordinate at horizon * (b+1)/B
    edges_cached: int


def _direction_table(params: Params) -> tuple[float, float, float, int]:
    f, b, o = params.direction_probabilities()
    return f, f + b, o, 2 * (params.d - 1)


@njit(cache=True, _nrt=False)
def _direction(u, f, fb, o_each, n_orth):
    """Map a uniform to (axis, sign)."""
    if u < f:
        return 0, 1
    if u < fb or n_orth == 0:
        return 0, -1
    j = np.int64((u - fb) / o_each)
    if j >= n_orth:
        j = n_orth - 1
    return 1 + j // 2, 1 - 2 * (j % 2)


def sample_direction(params: Params, rng: np.random.Generator) -> tuple[int, int]:
    f, fb, o, n_orth = _direction_table(params)
    axis, sign = _direction(rng.random(), f, fb, max(o, 1e-300), n_orth)
    return int(axis), int(sign)


# Hot loops run in allocation-free "segments" that return a status code
# whenever the driver has to reallocate something; see environment.py for
# why the split matters.
_DONE, _GROW_TABLE, _GROW_OCC, _PRUNE, _GROW_ISET, _RESET = 0, 1, 2, 3, 4, 5


@njit(cache=True, _nrt=False)
def _plain_segment(mu, p, f, fb, o_each, n_orth, horizon, insp_rate, bdt, rng,
                   keys, state, stamp, copies, meta, pos, counts, clock, ivars,
                   bpos, occ_t, occ_l, occ_r, next_prune):
    # clock = (next attempt, next inspection); ivars = (batch index, inspections)
    ta = clock[0]
    ti = clock[1]
    b = ivars[0]
    nocc = ivars[1]
    nbatch = bpos.shape[0]
    status = _DONE
    while True:
        tn = min(ta, ti)
        while b < nbatch - 1 and (b + 1) * bdt < tn:
            bpos[b] = pos[0]
            b += 1
        if tn > horizon:
            break
        if needs_grow(keys, meta, 2):
            status = _GROW_TABLE
            break
        if ta <= ti:
            if counts[0] >= next_prune:
                status = _PRUNE
                break
            axis, sign = _direction(rng.random(), f, fb, o_each, n_orth)
            counts[0] += 1
            if axis == 0 and sign < 0:
                counts[2] += 1
            elif axis != 0:
                counts[3] += 1
            if query(keys, state, stamp, copies, meta, edge_key(pos, axis, sign), ta, mu, p, rng.random()):
                pos[axis] += sign
                counts[1] += 1
            ta += rng.standard_exponential()
        else:
            if nocc == occ_t.shape[0]:
                status = _GROW_OCC
                break
            occ_t[nocc] = ti
            occ_l[nocc] = query(keys, state, stamp, copies, meta, edge_key(pos, 0, -1), ti, mu, p, rng.random())
            occ_r[nocc] = query(keys, state, stamp, copies, meta, edge_key(pos, 0, 1), ti, mu, p, rng.random())
            nocc += 1
            ti += rng.standard_exponential() / insp_rate
    clock[0] = ta
    clock[1] = ti
    ivars[0] = b
    ivars[1] = nocc
    return status


@njit(cache=True)
def _plain_kernel(d, mu, p, f, fb, o_each, n_orth, horizon, insp_rate, nbatch, rng,
                  keys, state, stamp, copies, meta, prune_every, prune_age, prune_radius):
    pos = np.zeros(d, np.int64)
    counts = np.zeros(4, np.int64)  # attempts, successes, backward, orthogonal
    bpos = np.zeros(nbatch, np.int64)
    ivars = np.zeros(2, np.int64)
    clock = np.empty(2, np.float64)
    cap = 16
    if insp_rate > 0.0:
        cap = np.int64(insp_rate * horizon * 1.1) + 64
    occ_t = np.empty(cap, np.float64)
    occ_l = np.empty(cap, np.uint8)
    occ_r = np.empty(cap, np.uint8)
    clock[0] = rng.standard_exponential()
    clock[1] = np.inf
    if insp_rate > 0.0:
        clock[1] = rng.standard_exponential() / insp_rate
    next_prune = prune_every if prune_every > 0 else np.iinfo(np.int64).max
    while True:
        status = _plain_segment(mu, p, f, fb, o_each, n_orth, horizon, insp_rate, horizon / nbatch, rng,
                                keys, state, stamp, copies, meta, pos, counts, clock, ivars,
                                bpos, occ_t, occ_l, occ_r, next_prune)
        if status == _DONE:
            break
        if status == _GROW_TABLE:
            keys, state, stamp, copies = grow(keys, state, stamp, copies, meta)
        elif status == _PRUNE:
            keys, state, stamp, copies = prune_arrays(keys, state, stamp, copies, meta,
                                                      clock[0] - prune_age, pos, prune_radius)
            next_prune += prune_every
        elif status == _GROW_OCC:
            n = occ_t.shape[0]
            occ_t = np.concatenate((occ_t, np.empty(n, np.float64)))
            occ_l = np.concatenate((occ_l, np.empty(n, np.uint8)))
            occ_r = np.concatenate((occ_r, np.empty(n, np.uint8)))
    for b in range(ivars[0], nbatch):
        bpos[b] = pos[0]
    nocc = ivars[1]
    return pos, counts, bpos, occ_t[:nocc], occ_l[:nocc], occ_r[:nocc], meta[0]


def run_plain(
    params: Params,
    horizon: float,
    seed=None,
    inspection_rate: float = 0.0,
    batches: int = 10,
    prune: bool = False,
    prune_radius: int = 2,
) -> PlainRun:
    """Simulate the walk (no infected set) on [0, horizon].

    With ``prune`` the edge cache periodically drops unfrozen records older
    than 50/mu that lie farther than ``prune_radius`` from the walker; this
    is off by default because it is exact only up to e^{-50} per dropped
    record.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if inspection_rate < 0:
        raise ValueError("inspection_rate must be nonnegative")
    if batches < 1:
        raise ValueError("batches must be >= 1")
    rng = _rng(seed)
    f, fb, o, n_orth = _direction_table(params)
    prune_every = 1 << 16 if prune else 0
    pos, counts, bpos, ot, ol, orr, edges = _plain_kernel(
        params.d, params.mu, params.p, f, fb, max(o, 1e-300), n_orth, float(horizon),
        float(inspection_rate), int(batches), rng, *new_store(1024), prune_every, 50.0 / params.mu, prune_radius,
    )
    state = WalkerState(
        pos=tuple(int(c) for c in pos), t=float(horizon), attempts=int(counts[0]), successes=int(counts[1]),
        backward_attempts=int(counts[2]), orthogonal_attempts=int(counts[3]),
    )
    occ = OccupancySamples(ot, ol.astype(bool), orr.astype(bool))
    return PlainRun(state, occ, bpos, int(edges))


@njit(cache=True, _nrt=False)
def _clear(keys, meta):
    for i in range(keys.shape[0]):
        keys[i] = EMPTY
    meta[0] = 0


@njit(cache=True, _nrt=False)
def _regen_segment(mu, p, f, fb, o_each, n_orth, rng, keys, state, stamp, copies, meta,
                   fk, fi, imeta, pos, clock, ivars, dt, dx, att, back, orth, reset):
    # clock = (t, t at last regeneration); ivars = (blocks done, x at last regeneration)
    t = clock[0]
    nb = ivars[0]
    nblocks = dt.shape[0]
    status = _DONE
    while nb < nblocks:
        if needs_grow(keys, meta):
            status = _GROW_TABLE
            break
        if iset_needs_grow(fk, imeta):
            status = _GROW_ISET
            break
        rate = 1.0 + mu * imeta[0]
        t += rng.standard_exponential() / rate
        if rng.random() * rate < 1.0:
            axis, sign = _direction(rng.random(), f, fb, o_each, n_orth)
            att[nb] += 1
            if axis == 0 and sign < 0:
                back[nb] += 1
            elif axis != 0:
                orth[nb] += 1
            key = edge_key(pos, axis, sign)
            if iset_examine(keys, state, stamp, copies, meta, fk, fi, imeta, key, t, mu, p, rng.random()):
                pos[axis] += sign
        else:
            iset_death(keys, state, stamp, copies, fk, fi, imeta, t, p, rng.random(), rng.random())
            if imeta[0] == 0:
                dt[nb] = t - clock[1]
                dx[nb] = pos[0] - ivars[1]
                clock[1] = t
                ivars[1] = pos[0]
                nb += 1
                if reset:
                    if keys.shape[0] > 256:
                        status = _RESET
                        break
                    _clear(keys, meta)
    clock[0] = t
    ivars[0] = nb
    return status


@njit(cache=True)
def _regen_kernel(d, mu, p, f, fb, o_each, n_orth, nblocks, rng, keys, state, stamp, copies, meta, reset):
    dt = np.empty(nblocks, np.float64)
    dx = np.empty(nblocks, np.int64)
    att = np.zeros(nblocks, np.int64)
    back = np.zeros(nblocks, np.int64)
    orth = np.zeros(nblocks, np.int64)
    fk, fi, imeta = new_iset(64)
    pos = np.zeros(d, np.int64)
    clock = np.zeros(2, np.float64)
    ivars = np.zeros(2, np.int64)
    while True:
        status = _regen_segment(mu, p, f, fb, o_each, n_orth, rng, keys, state, stamp, copies, meta,
                                fk, fi, imeta, pos, clock, ivars, dt, dx, att, back, orth, reset)
        if status == _DONE:
            break
        if status == _GROW_TABLE:
            keys, state, stamp, copies = grow(keys, state, stamp, copies, meta)
        elif status == _GROW_ISET:
            fk, fi = iset_grow(fk, fi, imeta)
        elif status == _RESET:
            keys, state, stamp, copies, meta = new_store(64)
    return dt, dx, att, back, orth, pos, clock[0], keys, state


def run_regen(params: Params, blocks: int, seed=None, reset_at_regeneration: bool = True) -> RegenerationBlocks:
    """Simulate until ``blocks`` regenerations and return the per-block data.

    Starts from the product measure with an empty infected set, so every
    block (including the first) is an i.i.d. draw.

    Every edge examined during a block carries a copy until after its last
    examination, and the death of its index-1 copy resamples it, so when the
    set empties all examined edges are fresh Bernoulli(p) draws independent
    of the past. The edge cache is therefore discarded at each regeneration
    (``reset_at_regeneration``), which keeps memory bounded without changing
    the law.
    """
    if blocks < 1:
        raise ValueError("blocks must be >= 1")
    rng = _rng(seed)
    f, fb, o, n_orth = _direction_table(params)
    out = _regen_kernel(
        params.d, params.mu, params.p, f, fb, max(o, 1e-300), n_orth, int(blocks), rng,
        *new_store(64), bool(reset_at_regeneration),
    )
    return RegenerationBlocks(*out[:5])


def regen_edge_states(params: Params, blocks: int, seed=None) -> np.ndarray:
    """States of every edge examined so far, read at the last of ``blocks`` regenerations.

    Runs without cache resets; used to check that examined edges are
    Bernoulli(p) at regeneration times.
    """
    rng = _rng(seed)
    f, fb, o, n_orth = _direction_table(params)
    out = _regen_kernel(
        params.d, params.mu, params.p, f, fb, max(o, 1e-300), n_orth, int(blocks), rng, *new_store(64), False,
    )
    keys, state = out[7], out[8]
    return state[keys != EMPTY].astype(bool)


def occupancy_fractions(samples: OccupancySamples, burn_in: float = 100.0) -> np.ndarray:
    """Empirical law of (left, right) in the order (0,0), (1,0), (0,1), (1,1)."""
    keep = samples.t >= burn_in
    n = int(keep.sum())
    if n < MIN_OCCUPANCY_SAMPLES:
        raise ValueError(f"only {n} inspections after burn-in; need at least {MIN_OCCUPANCY_SAMPLES}")
    idx = samples.left_open[keep].astype(np.int64) + 2 * samples.right_open[keep].astype(np.int64)
    return np.bincount(idx, minlength=4) / n


@njit(cache=True)
def _far_edge_kernel(mu, p, t_end, i, reps, rng):
    pos = np.zeros(1, np.int64)
    opened = 0
    for _ in range(reps):
        keys, state, stamp, copies, meta = new_store(256)
        pos[0] = 0
        t = rng.standard_exponential()
        while t <= t_end:
            if needs_grow(keys, meta):
                keys, state, stamp, copies = grow(keys, state, stamp, copies, meta)
            if query(keys, state, stamp, copies, meta, edge_key(pos, 0, 1), t, mu, p, rng.random()):
                pos[0] += 1
            t += rng.standard_exponential()
        # relative edge e_i = {X + i - 1, X + i}
        pos[0] += i - 1
        if needs_grow(keys, meta):
            keys, state, stamp, copies = grow(keys, state, stamp, copies, meta)
        opened += query(keys, state, stamp, copies, meta, edge_key(pos, 0, 1), t_end, mu, p, rng.random())
    return opened


def far_edge_marginal(params: Params, i: int, reps: int, seed=None, t: float = 200.0) -> float:
    """Fraction of independent runs in which relative edge e_i is open at time t.

    Only defined for the one-dimensional totally asymmetric walk.
    """
    if params.d != 1 or not params.totally_asymmetric:
        raise ValueError("far-edge marginals need d = 1 and lambda = inf")
    if i < 1:
        raise ValueError("i must be >= 1")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    opened = _far_edge_kernel(params.mu, params.p, float(t), int(i), int(reps), _rng(seed))
    return opened / reps
