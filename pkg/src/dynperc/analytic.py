"""Closed-form quantities for the biased random walk on dynamical percolation.

Everything here is a pure function of the model parameters. The simulation
modules use these values as oracles, so none of them touch random numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Params",
    "ProjectionChain",
    "STATE_ORDER",
    "SPEED_EXPANSION_MIN_LAMBDA",
    "z_lambda",
    "tarwdp_speed",
    "c_mu_p",
    "speed_expansion_1d",
    "projection_chain",
    "left_open_probability",
    "gamma_vs_exp",
    "expected_tau1",
    "gap_scenario_expectation",
    "gap_scenario_expectation_exact",
    "c_consistency_residual",
    "speed_disparity",
    "crossing_time_means",
    "critical_mu",
    "c1_coefficient",
    "p_e1_prediction",
]

# (left edge e_{-1}, right edge e_1) as (0/1, 0/1); rows of Q follow this order.
STATE_ORDER: tuple[tuple[int, int], ...] = ((0, 0), (1, 0), (0, 1), (1, 1))

# Below this bias the e^{-2 lambda} correction is no longer small compared
# with the leading term and the truncated expansion is not meaningful.
SPEED_EXPANSION_MIN_LAMBDA = 1.0


def _check_mu_p(mu: float, p: float) -> None:
    if not (0.0 < p < 1.0):
        raise ValueError("p must lie in (0,1)")
    if not (mu > 0.0) or math.isinf(mu):
        raise ValueError("mu must be a positive finite real")


@dataclass(frozen=True)
class Params:
    """Model parameters: dimension, open probability, update rate and bias.

    ``lam`` may be ``math.inf`` for the totally asymmetric walk.
    """

    d: int
    p: float
    mu: float
    lam: float

    def __post_init__(self) -> None:
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("d must be a positive integer")
        _check_mu_p(self.mu, self.p)
        if math.isnan(self.lam) or self.lam < 0.0:
            raise ValueError("lambda must be nonnegative (or inf)")

    @property
    def totally_asymmetric(self) -> bool:
        return math.isinf(self.lam)

    def direction_probabilities(self) -> tuple[float, float, float]:
        """Return (P[+e1], P[-e1], P[one fixed orthogonal direction])."""
        if self.totally_asymmetric:
            return 1.0, 0.0, 0.0
        # divide through by e^lam to stay finite for huge lam
        em2 = math.exp(-2.0 * self.lam)
        em1 = math.exp(-self.lam)
        norm = 1.0 + em2 + (2 * self.d - 2) * em1
        return 1.0 / norm, em2 / norm, em1 / norm


@dataclass(frozen=True)
class ProjectionChain:
    """Rate matrix and stationary law of the two edges adjacent to the walker."""

    rate_matrix: np.ndarray
    stationary: np.ndarray

    def marginal_right_open(self) -> float:
        return float(self.stationary[2] + self.stationary[3])

    def marginal_left_open(self) -> float:
        return float(self.stationary[1] + self.stationary[3])


def z_lambda(params: Params) -> float:
    if params.totally_asymmetric:
        raise ValueError("Z_lambda is undefined for lambda = inf")
    lam = params.lam
    return math.exp(lam) + math.exp(-lam) + 2 * params.d - 2


def tarwdp_speed(mu: float, p: float) -> float:
    """Speed of the totally asymmetric walk with rate-1 attempts."""
    _check_mu_p(mu, p)
    return mu * p / (mu + 1.0 - p)


def c_mu_p(mu: float, p: float) -> float:
    """Second-order constant of the one-dimensional speed expansion."""
    _check_mu_p(mu, p)
    num = 4 * mu**3 + 2 * (p + 5) * mu**2 + 8 * mu + 2 * (1 - p) ** 2
    den = (2 * mu + 1 + p) * (mu + 1 - p) * (mu + p + 1)
    return num / den


def speed_expansion_1d(mu: float, p: float, lam: float) -> float:
    """Two-term expansion of the d=1 speed around lambda = inf.

    The neglected remainder is O(e^{-4 lambda}). The value is returned for
    every finite ``lam`` but is only meaningful for
    ``lam >= SPEED_EXPANSION_MIN_LAMBDA``.
    """
    if math.isinf(lam) or math.isnan(lam):
        raise ValueError("lambda must be finite")
    v = tarwdp_speed(mu, p)
    return v - v * c_mu_p(mu, p) * math.exp(-2.0 * lam)


def projection_chain(mu: float, p: float) -> ProjectionChain:
    _check_mu_p(mu, p)
    q = np.array(
        [
            [-2 * mu * p, mu * p, mu * p, 0.0],
            [mu * (1 - p), -mu, 0.0, mu * p],
            [mu * (1 - p), 1 - p, -mu - 1, (mu + 1) * p],
            [0.0, (mu + 1) * (1 - p), mu * (1 - p), -(1 - p) * (2 * mu + 1)],
        ]
    )
    den = 2 * mu**2 - mu * p - p**2 + 3 * mu + 1
    x00 = (
        2 * mu**2 * p**2
        - mu * p**3
        - 4 * mu**2 * p
        + 5 * mu * p**2
        + 2 * mu**2
        - 7 * mu * p
        + p**2
        + 3 * mu
        - 2 * p
        + 1
    ) / den
    x10 = -(2 * mu**2 * p - mu * p**2 - 2 * mu**2 + 6 * mu * p - 5 * mu + 2 * p - 2) * p / den
    x01 = -mu * p * (2 * mu * p - p**2 - 2 * mu + 2 * p - 1) / den
    x11 = p**2 * mu * (2 * mu - p + 3) / den
    return ProjectionChain(rate_matrix=q, stationary=np.array([x00, x10, x01, x11]))


def left_open_probability(mu: float, p: float) -> float:
    """Stationary probability that the edge behind the walker is open."""
    _check_mu_p(mu, p)
    return p * (2 * mu**2 - 3 * mu * p + 5 * mu - 2 * p + 2) / (2 * mu**2 + (3 - p) * mu - p**2 + 1)


def gamma_vs_exp(n: int, mu: float) -> float:
    """P[Gamma(n, 1) < Exp(mu)]."""
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if not mu > 0:
        raise ValueError("mu must be a positive finite real")
    return (mu + 1.0) ** (-n)


def expected_tau1(mu: float) -> float:
    """Mean regeneration gap. Independent of lambda and p."""
    if not mu > 0:
        raise ValueError("mu must be a positive finite real")
    return math.exp(1.0 / mu)


def gap_scenario_expectation(scenario: str, mu: float, p: float) -> float:
    """Mean time shift between the coupled walkers for one local configuration."""
    _check_mu_p(mu, p)
    s = scenario.upper()
    if s == "A":
        return 1.0 / p
    if s == "B":
        return 1.0 / p + (mu**2 + 3 * mu - p + 3) / (p * (1 + mu) * (mu + p + 1))
    if s == "C":
        return (mu**2 + 2 * mu - p + 1) / (p * (1 + mu) * (mu + p + 1))
    if s == "D":
        return 0.0
    raise ValueError(f"unknown scenario {scenario!r}; expected one of A, B, C, D")


def gap_scenario_expectation_exact(scenario: str, mu: float, p: float) -> float:
    """Mean of S for one scenario from a first-step analysis.

    Differs from :func:`gap_scenario_expectation` for B and C: there the
    number of attempts spent on the first edge is correlated with the time
    they take, which changes the law of the second edge when X reaches it.
    A and D agree.
    """
    _check_mu_p(mu, p)
    s = scenario.upper()
    if s in ("A", "D"):
        return gap_scenario_expectation(s, mu, p)
    if s not in ("B", "C"):
        raise ValueError(f"unknown scenario {scenario!r}; expected one of A, B, C, D")
    m1 = 1.0 / (1.0 + mu)  # E[e^{-mu chi}], chi ~ Exp(1)
    m2 = 1.0 / (1.0 + 2.0 * mu)
    # E[e^{-mu S'}] for crossing one edge starting closed (phi0) or open (phi1)
    phi0 = p * (m1 - m2) / (1.0 - m2 - (1.0 - p) * (m1 - m2))
    phi1 = m2 + (m1 - m2) * (p + (1.0 - p) * phi0)
    g_open = 1.0 / p
    g_closed = (1.0 + mu) / (mu * p)
    # probability that the second edge is open when X reaches it
    if s == "B":
        p_open = phi1 + (1.0 - phi1) * p
        return g_open + p_open * g_open + (1.0 - p_open) * g_closed
    p_open = (1.0 - phi1) * p
    return g_open - p_open * (g_closed - g_open)


def c_consistency_residual(mu: float, p: float) -> float:
    """Stationary-weighted scenario mean minus the closed-form constant.

    Weights: A <-> (0,1), B <-> (1,1), C <-> (1,0), D <-> (0,0).
    """
    x00, x10, x01, x11 = projection_chain(mu, p).stationary
    weighted = (
        x01 * gap_scenario_expectation("A", mu, p)
        + x11 * gap_scenario_expectation("B", mu, p)
        + x10 * gap_scenario_expectation("C", mu, p)
    )
    return float(weighted - c_mu_p(mu, p))


def _check_p1_p2(p1: float, p2: float) -> None:
    if not (0.0 <= p1 < p2 <= 1.0):
        raise ValueError("need 0 <= p1 < p2 <= 1")


def speed_disparity(mu: float, p: float, p1: float, p2: float) -> float:
    """Long-run mean gap X - Y between walkers whose first edge is open w.p. p1 < p2."""
    _check_mu_p(mu, p)
    _check_p1_p2(p1, p2)
    return (p1 - p2) / (mu + 1.0 - p)


def crossing_time_means(mu: float, p: float, p1: float, p2: float) -> tuple[float, float]:
    """Mean times for the two walkers to cross the distinguished edge {0,1}."""
    _check_mu_p(mu, p)
    _check_p1_p2(p1, p2)
    return (mu + 1.0 - p1) / (mu * p), (mu + 1.0 - p2) / (mu * p)


def critical_mu(p: float) -> float:
    if not (0.0 < p < 1.0):
        raise ValueError("p must lie in (0,1)")
    return math.sqrt(p * (1.0 - p))


def c1_coefficient(d: int, mu: float, p: float) -> float:
    """First-order coefficient of v(2s) - v(s) in e^{-s}; positive means increasing."""
    if int(d) != d or d < 2:
        raise ValueError("c1 needs d >= 2 (no orthogonal directions in d = 1)")
    _check_mu_p(mu, p)
    return (2 * d - 2) * p * (mu**2 - p * (1 - p)) / (1 - p + mu) ** 2


def p_e1_prediction(mu: float, lam: float, k: int) -> float:
    """Leading-order probability of exactly one backward attempt in k blocks (d=1)."""
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    if not lam >= 1.0 or math.isinf(lam):
        raise ValueError("lambda must be finite and >= 1")
    return k * expected_tau1(mu) * math.exp(-2.0 * lam)
