from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numba import njit

from dynperc.analytic import Params, expected_tau1, projection_chain, tarwdp_speed
from dynperc.couplings import monotone_p_pair
from dynperc.estimators import batch_speed, regen_speed
from dynperc.walker import (
    MIN_OCCUPANCY_SAMPLES,
    OccupancySamples,
    RegenerationBlocks,
    _direction,
    _direction_table,
    far_edge_marginal,
    occupancy_fractions,
    regen_edge_states,
    run_plain,
    run_regen,
    sample_direction,
)

INF = math.inf


@njit(cache=True)
def _direction_counts(f, fb, o, n_orth, d, n, seed):
    np.random.seed(seed)
    counts = np.zeros((d, 2), np.int64)
    for _ in range(n):
        axis, sign = _direction(np.random.random(), f, fb, o, n_orth)
        counts[axis, 0 if sign > 0 else 1] += 1
    return counts


def _counts(params, n=1_000_000, seed=1):
    f, fb, o, n_orth = _direction_table(params)
    return _direction_counts(f, fb, max(o, 1e-300), n_orth, params.d, n, seed)


# ---------------------------------------------------------------- directions


def test_direction_symmetric_at_zero_bias():
    c = _counts(Params(1, 0.5, 1.0, 0.0))
    n = c.sum()
    assert abs(c[0, 0] / n - 0.5) <= 4 * math.sqrt(0.25 / n)


def test_direction_totally_asymmetric():
    rng = np.random.default_rng(0)
    assert all(sample_direction(Params(3, 0.5, 1.0, INF), rng) == (0, 1) for _ in range(1000))
    c = _counts(Params(2, 0.5, 1.0, INF), n=10_000)
    assert c[0, 0] == 10_000


def test_direction_ln2():
    c = _counts(Params(1, 0.5, 1.0, math.log(2)))
    n = c.sum()
    assert abs(c[0, 0] / n - 0.8) <= 4 * math.sqrt(0.16 / n)


@pytest.mark.parametrize("d,lam", [(2, 0.5), (3, 1.0), (4, 0.0)])
def test_direction_law_general(d, lam):
    prm = Params(d, 0.5, 1.0, lam)
    z = math.exp(lam) + math.exp(-lam) + 2 * d - 2
    c = _counts(prm, n=400_000, seed=d)
    n = c.sum()
    expect = np.full((d, 2), 1 / z)
    expect[0] = (math.exp(lam) / z, math.exp(-lam) / z)
    assert np.all(np.abs(c / n - expect) <= 4 * np.sqrt(expect * (1 - expect) / n))


# ---------------------------------------------------------------- plain mode


def test_all_open_moves_every_attempt():
    run = run_plain(Params(1, 1 - 1e-15, 1.0, INF), 1000.0, seed=1)
    st_ = run.state
    assert st_.successes == st_.attempts == st_.pos[0] == st_.forward_attempts


def test_closed_world_stays_put():
    for lam in (INF, 1.0, 0.0):
        run = run_plain(Params(2, 1e-12, 1.0, lam), 1000.0, seed=2)
        assert run.state.pos == (0, 0) and run.state.successes == 0


@settings(max_examples=40)
@given(d=st.integers(1, 3), lam=st.one_of(st.just(INF), st.floats(0.0, 4.0)), p=st.floats(0.05, 0.95),
       mu=st.floats(0.1, 5.0), seed=st.integers(0, 2**31))
def test_walker_state_invariants(d, lam, p, mu, seed):
    st_ = run_plain(Params(d, p, mu, lam), 300.0, seed=seed).state
    assert st_.successes <= st_.attempts
    assert sum(abs(c) for c in st_.pos) <= st_.successes
    assert st_.forward_attempts >= 0
    assert st_.forward_attempts + st_.backward_attempts + st_.orthogonal_attempts == st_.attempts
    if d == 1:
        assert st_.orthogonal_attempts == 0
    if lam == INF:
        assert st_.backward_attempts == st_.orthogonal_attempts == 0


def test_plain_deterministic():
    a = run_plain(Params(2, 0.5, 1.0, 1.0), 5000.0, seed=42, inspection_rate=0.5)
    b = run_plain(Params(2, 0.5, 1.0, 1.0), 5000.0, seed=42, inspection_rate=0.5)
    assert a.state == b.state
    np.testing.assert_array_equal(a.batch_positions, b.batch_positions)
    np.testing.assert_array_equal(a.occupancy.t, b.occupancy.t)


def test_plain_tarwdp_speed():
    run = run_plain(Params(1, 0.5, 1.0, INF), 1e6, seed=3, batches=20)
    est = batch_speed(run.batch_positions, 1e6)
    assert est.value == run.state.pos[0] / 1e6
    assert abs(est.value - 1 / 3) <= 4 * est.std_error


def test_attempt_count_is_poisson():
    prm = Params(1, 0.5, 1.0, INF)
    counts = np.array([run_plain(prm, 1e4, seed=s).state.attempts for s in range(1000)], dtype=float)
    n = len(counts)
    assert abs(counts.mean() - 1e4) <= 4 * math.sqrt(1e4 / n)
    # variance of the sample variance of a Poisson(T) sample is about 2 T^2 / n
    assert abs(counts.var(ddof=1) - 1e4) <= 4 * math.sqrt(2 * 1e8 / n)


def test_high_bias_matches_tarwdp_in_2d():
    prm = Params(2, 0.5, 1.0, 50.0)
    run = run_plain(prm, 2e5, seed=5)
    est = batch_speed(run.batch_positions, 2e5)
    assert abs(est.value - tarwdp_speed(1.0, 0.5)) <= 4 * est.std_error


def test_pruning_keeps_cache_bounded_and_speed():
    prm = Params(1, 0.5, 1.0, INF)
    full = run_plain(prm, 3e5, seed=6)
    pruned = run_plain(prm, 3e5, seed=6, prune=True)
    # pruning runs every 2^16 attempts, so about one interval of edges survives
    assert pruned.edges_cached < full.edges_cached / 5
    assert full.edges_cached <= full.state.attempts + 2
    est = batch_speed(pruned.batch_positions, 3e5)
    assert abs(est.value - 1 / 3) <= 4 * est.std_error


def test_run_plain_validation():
    prm = Params(1, 0.5, 1.0, INF)
    for kw in ({"horizon": 0.0}, {"horizon": 1.0, "inspection_rate": -1.0}, {"horizon": 1.0, "batches": 0}):
        with pytest.raises(ValueError):
            run_plain(prm, **kw)


# ---------------------------------------------------------------- occupancy


def test_occupancy_all_open():
    run = run_plain(Params(1, 1 - 1e-15, 1.0, INF), 2200.0, seed=7, inspection_rate=1.0)
    np.testing.assert_array_equal(occupancy_fractions(run.occupancy, 100.0), [0, 0, 0, 1])


def test_occupancy_needs_samples():
    s = OccupancySamples(np.linspace(0, 200, 500), np.zeros(500, bool), np.zeros(500, bool))
    with pytest.raises(ValueError):
        occupancy_fractions(s, 100.0)
    assert MIN_OCCUPANCY_SAMPLES == 1000


def test_occupancy_right_marginal():
    run = run_plain(Params(1, 0.5, 1.0, INF), 3e5, seed=8, inspection_rate=1.0)
    f = occupancy_fractions(run.occupancy, 100.0)
    assert f.sum() == pytest.approx(1.0)
    assert abs(f[2] + f[3] - 1 / 3) <= 0.003
    assert np.all(np.abs(f - projection_chain(1.0, 0.5).stationary) <= 0.01)


def test_far_edge_marginals():
    prm = Params(1, 0.5, 1.0, INF)
    n = 20_000
    m2 = far_edge_marginal(prm, 2, n, seed=9)
    assert abs(m2 - 0.5) <= 4 * math.sqrt(0.25 / n)
    m1 = far_edge_marginal(prm, 1, n, seed=10)
    assert abs(m1 - 1 / 3) <= 4 * math.sqrt(2 / 9 / n)
    assert far_edge_marginal(Params(1, 1 - 1e-15, 1.0, INF), 3, 200, seed=11) == 1.0
    with pytest.raises(ValueError):
        far_edge_marginal(Params(2, 0.5, 1.0, INF), 2, 10)
    with pytest.raises(ValueError):
        far_edge_marginal(Params(1, 0.5, 1.0, 3.0), 2, 10)
    with pytest.raises(ValueError):
        far_edge_marginal(prm, 0, 10)


# ---------------------------------------------------------------- regen mode


@pytest.mark.parametrize("mu", [0.5, 1.0, 2.0])
def test_regen_mean_block_length(mu):
    blocks = run_regen(Params(1, 0.5, mu, INF), 20_000, seed=12)
    n = len(blocks)
    assert n == 20_000
    assert abs(blocks.dt.mean() - expected_tau1(mu)) <= 4 * blocks.dt.std(ddof=1) / math.sqrt(n)
    assert np.all(blocks.dt > 0)


@settings(max_examples=20)
@given(d=st.integers(1, 3), lam=st.one_of(st.just(INF), st.floats(0.0, 4.0)), mu=st.floats(0.3, 3.0),
       seed=st.integers(0, 2**31))
def test_block_invariants(d, lam, mu, seed):
    b = run_regen(Params(d, 0.5, mu, lam), 200, seed=seed)
    assert np.all(np.abs(b.dx) <= b.attempts)
    assert np.all(b.attempts >= 1)  # a block starts with an attempt
    assert np.all(b.backward_attempts + b.orthogonal_attempts <= b.attempts)


def test_regen_speed_tarwdp():
    blocks = run_regen(Params(1, 0.5, 1.0, INF), 100_000, seed=13)
    est = regen_speed(blocks)
    assert abs(est.value - 1 / 3) <= 4 * est.std_error


def test_regen_and_plain_agree():
    prm = Params(1, 0.5, 1.0, 2.0)
    r = regen_speed(run_regen(prm, 100_000, seed=14))
    p = batch_speed(run_plain(prm, 3e5, seed=15, batches=30).batch_positions, 3e5)
    assert abs(r.value - p.value) <= 4 * math.hypot(r.std_error, p.std_error)


def test_regen_reset_does_not_change_law():
    prm = Params(1, 0.4, 0.7, 2.0)
    a = run_regen(prm, 40_000, seed=16, reset_at_regeneration=True)
    b = run_regen(prm, 40_000, seed=17, reset_at_regeneration=False)
    for col in ("dt", "dx"):
        x, y = getattr(a, col).astype(float), getattr(b, col).astype(float)
        z = (x.mean() - y.mean()) / math.sqrt(x.var() / len(x) + y.var() / len(y))
        assert abs(z) < 4


def test_regen_lag1_autocorrelation():
    dt = run_regen(Params(1, 0.5, 1.0, INF), 50_000, seed=18).dt
    c = np.corrcoef(dt[:-1], dt[1:])[0, 1]
    assert abs(c) <= 4 / math.sqrt(len(dt))


def test_examined_edges_fresh_at_regeneration():
    states = regen_edge_states(Params(1, 0.3, 1.0, 1.0), 30_000, seed=19)
    n = len(states)
    assert n > 1000
    assert abs(states.mean() - 0.3) <= 4 * math.sqrt(0.21 / n)


def test_aggregate_and_concat():
    b = run_regen(Params(1, 0.5, 1.0, 2.0), 103, seed=20)
    agg = b.aggregate(5)
    assert len(agg) == 20
    assert agg.dt[0] == pytest.approx(b.dt[:5].sum())
    assert agg.backward_attempts[-1] == b.backward_attempts[95:100].sum()
    both = RegenerationBlocks.concat([b[:50], b[50:]])
    np.testing.assert_array_equal(both.dx, b.dx)
    with pytest.raises(ValueError):
        b.aggregate(0)
    with pytest.raises(ValueError):
        run_regen(Params(1, 0.5, 1.0, 2.0), 0)


def test_regen_deterministic():
    a = run_regen(Params(2, 0.5, 1.0, 1.5), 500, seed=21)
    b = run_regen(Params(2, 0.5, 1.0, 1.5), 500, seed=21)
    np.testing.assert_array_equal(a.dt, b.dt)
    np.testing.assert_array_equal(a.dx, b.dx)


# ---------------------------------------------------------------- monotone coupling in p


@pytest.mark.parametrize("p", [0.2, 0.5, 0.8])
def test_monotone_in_p(p):
    for seed in range(20):
        lo, hi = monotone_p_pair(1.0, p, p + 0.1, 2000.0, seed=seed)
        assert lo <= hi
