"""Two-walker coupled experiments on the one-dimensional lattice.

* :func:`disparity_run`: two totally asymmetric walkers on a shared
  environment that differs only at the edge {0,1}, whose initial states are
  coupled through one uniform so that the first walker never overtakes the
  second.
* :func:`gap_run`: the local configurations A/B/C/D seen when a biased walker
  X and its totally asymmetric companion Y split at a backward attempt; S is
  the extra time X needs to reach the site Y_{T-} + 1.
* :func:`event_decomposition`: classification of k-block super-blocks by
  their number of backward attempts.
* :func:`monotone_p_pair`: totally asymmetric walkers at p_low < p_high
  whose edges share refresh clocks and uniforms.

All walkers attempt right jumps on one shared rate-1 clock.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .analytic import Params, projection_chain
from .environment import EMPTY, edge_key, grow, needs_grow, new_store, probe, query
from .walker import RegenerationBlocks, _rng, run_regen

__all__ = [
    "CouplingViolation",
    "DisparityRun",
    "DisparityBatch",
    "GapRun",
    "SCENARIOS",
    "disparity_run",
    "disparity_batch",
    "gap_run",
    "gap_samples",
    "stationary_gap_samples",
    "event_decomposition",
    "classify_backward",
    "monotone_p_pair",
]

SCENARIOS = ("A", "B", "C", "D")
# (left edge {-1,0} open, right edge {0,1} open) at the split time
_SCENARIO_EDGES = {"A": (0, 1), "B": (1, 1), "C": (1, 0), "D": (0, 0)}


class CouplingViolation(AssertionError):
    """Raised when a coupled pair breaks its pathwise order."""


# ---------------------------------------------------------------- disparity


@dataclass(frozen=True)
class DisparityRun:
    p1: float
    p2: float
    horizon: float
    final_gap: int  # X_T - Y_T
    s_x: float
    s_y: float
    order_violation: bool


@dataclass(frozen=True)
class DisparityBatch:
    """Columns of many independent :class:`DisparityRun` replicas."""

    p1: float
    p2: float
    horizon: float
    final_gap: np.ndarray
    s_x: np.ndarray
    s_y: np.ndarray

    def __len__(self) -> int:
        return int(self.final_gap.shape[0])


@njit(cache=True)
def _disparity_kernel(mu, p, p1, p2, horizon, reps, rng):
    gap = np.empty(reps, np.int64)
    sx_out = np.empty(reps, np.float64)
    sy_out = np.empty(reps, np.float64)
    keys, state, stamp, copies, meta = new_store(256)
    px = np.zeros(1, np.int64)
    py = np.zeros(1, np.int64)
    special = edge_key(np.zeros(1, np.int64), 0, 1)
    for r in range(reps):
        if keys.shape[0] > 1024:
            keys, state, stamp, copies, meta = new_store(256)
        else:
            keys[:] = EMPTY
            meta[0] = 0
        u = rng.random()
        sx = u < p1
        sy = u < p2
        t01 = 0.0
        px[0] = 0
        py[0] = 0
        s_x = -1.0
        s_y = -1.0
        t = rng.standard_exponential()
        while t <= horizon or s_x < 0.0:
            if needs_grow(keys, meta, 2):
                keys, state, stamp, copies = grow(keys, state, stamp, copies, meta)
            kx = edge_key(px, 0, 1)
            ky = edge_key(py, 0, 1)
            if kx == special or ky == special:
                # shared refresh clock and shared new state for {0,1}
                v = rng.random()
                rr = -math.expm1(-mu * (t - t01))
                if v < rr:
                    sx = v < p * rr
                    sy = sx
                t01 = t
            if kx == special:
                ox = sx
            else:
                ox = query(keys, state, stamp, copies, meta, kx, t, mu, p, rng.random()) != 0
            if ky == special:
                oy = sy
            elif ky == kx:
                oy = ox
            else:
                oy = query(keys, state, stamp, copies, meta, ky, t, mu, p, rng.random()) != 0
            if ox:
                if kx == special:
                    s_x = t
                px[0] += 1
            if oy:
                if ky == special:
                    s_y = t
                py[0] += 1
            if px[0] > py[0]:
                return gap[:r], sx_out[:r], sy_out[:r], True
            if t <= horizon:
                gap[r] = px[0] - py[0]
            t += rng.standard_exponential()
        sx_out[r] = s_x
        sy_out[r] = s_y
    return gap, sx_out, sy_out, False


def _check_pair(p1: float, p2: float) -> None:
    if not (0.0 <= p1 <= p2 <= 1.0):
        raise ValueError("need 0 <= p1 <= p2 <= 1")


def disparity_batch(mu: float, p: float, p1: float, p2: float, horizon: float, reps: int, seed=None) -> DisparityBatch:
    """``reps`` independent coupled pairs; see :func:`disparity_run`.

    Raises :class:`CouplingViolation` on the first pair in which X overtakes Y.
    """
    Params(1, p, mu, math.inf)
    _check_pair(p1, p2)
    if not horizon > 0 or reps < 1:
        raise ValueError("horizon and reps must be positive")
    gap, sx, sy, bad = _disparity_kernel(mu, p, float(p1), float(p2), float(horizon), int(reps), _rng(seed))
    if bad:
        raise CouplingViolation(f"X overtook Y in coupled pair {len(gap)}")
    return DisparityBatch(p1, p2, float(horizon), gap, sx, sy)


def disparity_run(mu: float, p: float, p1: float, p2: float, horizon: float, seed=None) -> DisparityRun:
    """One coupled pair of totally asymmetric walkers started at the origin.

    Every edge except {0,1} is shared. The edge {0,1} starts open for both
    when U < p1, closed for both when U > p2 and open only for Y otherwise;
    it is refreshed on one shared clock with one shared new state. The
    order X <= Y is checked after every attempt. Crossing times of {0,1} are
    followed past ``horizon`` if needed; ``final_gap`` is read at ``horizon``.
    """
    b = disparity_batch(mu, p, p1, p2, horizon, 1, seed)
    return DisparityRun(p1, p2, float(horizon), int(b.final_gap[0]), float(b.s_x[0]), float(b.s_y[0]), False)


# ---------------------------------------------------------------- gap scenarios


@dataclass(frozen=True)
class GapRun:
    scenario: str
    s: float


@njit(cache=True)
def _gap_kernel(mu, p, codes, rng):
    """S for each planted scenario code (0..3 = A..D)."""
    out = np.empty(codes.shape[0], np.float64)
    keys, state, stamp, copies, meta = new_store(16)
    pos = np.zeros(1, np.int64)
    for r in range(codes.shape[0]):
        c = codes[r]
        if c == 3:
            out[r] = 0.0
            continue
        keys[:] = EMPTY
        meta[0] = 0
        left = c == 1 or c == 2
        right = c == 0 or c == 1
        # plant {-1,0} and {0,1} at the split time 0
        pos[0] = -1
        kl = edge_key(pos, 0, 1)
        query(keys, state, stamp, copies, meta, kl, 0.0, mu, p, 0.0)
        state[probe(keys, kl)] = left
        pos[0] = 0
        kr = edge_key(pos, 0, 1)
        query(keys, state, stamp, copies, meta, kr, 0.0, mu, p, 0.0)
        state[probe(keys, kr)] = right
        # positions right after the split
        x = np.int64(-1) if left else np.int64(0)
        y = np.int64(1) if right else np.int64(0)
        s1 = 0.0 if y == 1 else -1.0
        t = 0.0
        while x < 1:
            t += rng.standard_exponential()
            if y < 1:
                pos[0] = y
                if query(keys, state, stamp, copies, meta, edge_key(pos, 0, 1), t, mu, p, rng.random()):
                    y += 1
                    s1 = t
            pos[0] = x
            if query(keys, state, stamp, copies, meta, edge_key(pos, 0, 1), t, mu, p, rng.random()):
                x += 1
        out[r] = t - s1
    return out


def _codes(scenario: str, reps: int) -> np.ndarray:
    s = scenario.upper()
    if s not in _SCENARIO_EDGES:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of A, B, C, D")
    return np.full(reps, SCENARIOS.index(s), np.int64)


def gap_samples(scenario: str, mu: float, p: float, reps: int, seed=None) -> np.ndarray:
    """Independent draws of S for one planted scenario."""
    Params(1, p, mu, math.inf)
    if reps < 1:
        raise ValueError("reps must be >= 1")
    return _gap_kernel(mu, p, _codes(scenario, int(reps)), _rng(seed))


def gap_run(scenario: str, mu: float, p: float, seed=None) -> GapRun:
    """Plant one scenario and measure S.

    Right after the split, X stands at -1 if the left edge was open (else 0)
    and Y at 1 if the right edge was open (else 0). Both then attempt right
    jumps on one clock in a shared lazy environment. S is the time X needs
    to reach 1 minus the time Y needs to get there (zero for Y when it
    already jumped); D gives S = 0.
    """
    return GapRun(scenario.upper(), float(gap_samples(scenario, mu, p, 1, seed)[0]))


def stationary_gap_samples(mu: float, p: float, reps: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Scenarios drawn from the stationary law of (left, right) and their S.

    Returns (scenario codes 0..3 for A..D, S). The mean of S estimates the
    second-order constant of the one-dimensional speed expansion.
    """
    Params(1, p, mu, math.inf)
    rng = _rng(seed)
    x00, x10, x01, x11 = projection_chain(mu, p).stationary
    w = np.array([x01, x11, x10, x00])
    codes = rng.choice(4, size=int(reps), p=w / w.sum()).astype(np.int64)
    return codes, _gap_kernel(mu, p, codes, rng)


# ---------------------------------------------------------------- event decomposition


def classify_backward(blocks: RegenerationBlocks, k: int) -> tuple[float, float, float]:
    """Fractions of k-block super-blocks with 0, 1 and >= 2 backward attempts."""
    agg = blocks.aggregate(k)
    if len(agg) == 0:
        raise ValueError("fewer than k blocks")
    b = agg.backward_attempts
    n = len(agg)
    return float(np.sum(b == 0) / n), float(np.sum(b == 1) / n), float(np.sum(b >= 2) / n)


def event_decomposition(mu: float, p: float, lam: float, k: int, reps: int, seed=None) -> tuple[float, float, float]:
    """(P[E0], P[E1], P[E2+]) estimated from ``reps`` super-blocks of k regeneration blocks."""
    if k < 1 or reps < 1:
        raise ValueError("k and reps must be >= 1")
    if not lam >= 2.0:
        raise ValueError("event decomposition needs lambda >= 2")
    blocks = run_regen(Params(1, p, mu, lam), int(k) * int(reps), seed)
    return classify_backward(blocks, k)


# ---------------------------------------------------------------- monotone p coupling


@njit(cache=True)
def _p_pair_kernel(mu, p_lo, p_hi, horizon, rng):
    keys, _, stamp, _, meta = new_store(1024)
    uval = np.zeros(keys.shape[0], np.float64)
    pos = np.zeros(1, np.int64)
    x_lo = np.int64(0)
    x_hi = np.int64(0)
    n = 0
    t = rng.standard_exponential()
    while t <= horizon:
        if (meta[0] + 2) * 2 >= keys.shape[0]:
            nk = np.full(2 * keys.shape[0], EMPTY, np.int64)
            nt = np.zeros(nk.shape[0], np.float64)
            nu = np.zeros(nk.shape[0], np.float64)
            for j in range(keys.shape[0]):
                if keys[j] != EMPTY:
                    i = -1 - probe(nk, keys[j])
                    nk[i] = keys[j]
                    nt[i] = stamp[j]
                    nu[i] = uval[j]
            keys, stamp, uval = nk, nt, nu
        for w in range(2):
            pos[0] = x_lo if w == 0 else x_hi
            key = edge_key(pos, 0, 1)
            slot = probe(keys, key)
            if slot < 0:
                slot = -1 - slot
                keys[slot] = key
                stamp[slot] = t
                uval[slot] = rng.random()
                meta[0] += 1
            elif stamp[slot] < t:
                if rng.random() < -math.expm1(-mu * (t - stamp[slot])):
                    uval[slot] = rng.random()
                stamp[slot] = t
            if w == 0 and uval[slot] < p_lo:
                x_lo += 1
            elif w == 1 and uval[slot] < p_hi:
                x_hi += 1
        n += 1
        if x_lo > x_hi:
            return x_lo, x_hi, n, True
        t += rng.standard_exponential()
    return x_lo, x_hi, n, False


def monotone_p_pair(mu: float, p_low: float, p_high: float, horizon: float, seed=None) -> tuple[int, int]:
    """Final positions of totally asymmetric walkers at p_low <= p_high.

    Each edge carries one uniform U, redrawn at its (shared) refresh times;
    it is open for the walker at p iff U < p. Raises
    :class:`CouplingViolation` if the low-p walker ever gets ahead.
    """
    Params(1, p_low, mu, math.inf)
    Params(1, p_high, mu, math.inf)
    if p_low > p_high:
        raise ValueError("need p_low <= p_high")
    x_lo, x_hi, _, bad = _p_pair_kernel(mu, p_low, p_high, float(horizon), _rng(seed))
    if bad:
        raise CouplingViolation("low-p walker overtook the high-p walker")
    return int(x_lo), int(x_hi)
