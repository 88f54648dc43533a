"""Speed estimators, exponential fits in the bias and the dichotomy verdict."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal, NamedTuple, Sequence

import numpy as np

__all__ = [
    "SpeedEstimate",
    "FitResult",
    "SizeBias",
    "Verdict",
    "regen_speed",
    "jackknife_ratio_se",
    "batch_speed",
    "pool_estimates",
    "fit_exponential",
    "dichotomy_sign_test",
    "expected_verdict",
    "size_bias_diagnostic",
    "MIN_REGEN_BLOCKS",
    "MIN_BATCHES",
    "MIN_SIZE_BIAS_BLOCKS",
    "Z_THRESHOLD",
    "COND_LIMIT",
]

MIN_REGEN_BLOCKS = 30
MIN_BATCHES = 10
MIN_SIZE_BIAS_BLOCKS = 1000
Z_THRESHOLD = 3.0
COND_LIMIT = 1e10

Verdict = Literal["increasing", "decreasing", "inconclusive"]


@dataclass(frozen=True)
class SpeedEstimate:
    value: float
    std_error: float
    method: Literal["batch_means", "regeneration_ratio"]
    budget: int
    jackknife_error: float | None = None

    def z(self, target: float) -> float:
        """Standardized distance to ``target`` (inf if the error is zero and they differ)."""
        diff = self.value - target
        if self.std_error > 0:
            return diff / self.std_error
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)


@dataclass(frozen=True)
class FitResult:
    """value ~ a0 + a1 e^{-lam} + a2 e^{-2 lam}."""

    a0: float
    a1: float
    a2: float
    covariance: np.ndarray
    z_a1: float
    z_a2: float

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.a0, self.a1, self.a2])

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def predict(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        return self.a0 + self.a1 * np.exp(-lam) + self.a2 * np.exp(-2.0 * lam)


class SizeBias(NamedTuple):
    conditional_mean: float
    size_biased_mean: float


# ---------------------------------------------------------------- ratio estimator


def _dt_dx(blocks) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(blocks, "dt") and hasattr(blocks, "dx"):
        return np.asarray(blocks.dt, dtype=float), np.asarray(blocks.dx, dtype=float)
    arr = np.asarray(list(blocks), dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("blocks must expose dt/dx or be a sequence of (dt, dx) pairs")
    return arr[:, 0], arr[:, 1]


def jackknife_ratio_se(dt: np.ndarray, dx: np.ndarray) -> float:
    """Leave-one-out jackknife standard error of sum(dx) / sum(dt)."""
    n = dt.shape[0]
    loo = (dx.sum() - dx) / (dt.sum() - dt)
    return float(math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def regen_speed(blocks) -> SpeedEstimate:
    """Ratio estimator sum(dx) / sum(dt) over i.i.d. regeneration blocks.

    The standard error comes from the delta method; the jackknife value is
    attached for cross-checking.
    """
    dt, dx = _dt_dx(blocks)
    n = dt.shape[0]
    if n < MIN_REGEN_BLOCKS:
        raise ValueError(f"need at least {MIN_REGEN_BLOCKS} regeneration blocks, got {n}")
    tbar = dt.mean()
    if not tbar > 0:
        raise ValueError("block durations must have positive mean")
    r = dx.sum() / dt.sum()
    resid = dx - r * dt
    se = math.sqrt(np.sum(resid**2) / (n - 1) / n) / tbar
    attempts = getattr(blocks, "attempts", None)
    budget = int(np.sum(attempts)) if attempts is not None else n
    return SpeedEstimate(float(r), float(se), "regeneration_ratio", budget, jackknife_ratio_se(dt, dx))


# ---------------------------------------------------------------- batch means


def batch_speed(positions, horizon: float, budget: int | None = None) -> SpeedEstimate:
    """Batch-means estimate from positions at the B equally spaced batch ends.

    ``positions`` has shape (B,) for one trajectory started at 0, or (R, B)
    for R independent replicas; then all R*B batch means are pooled.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 1:
        pos = pos[None, :]
    if pos.ndim != 2:
        raise ValueError("positions must have shape (B,) or (R, B)")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    r, b = pos.shape
    if b < MIN_BATCHES:
        raise ValueError(f"need at least {MIN_BATCHES} batches, got {b}")
    inc = np.diff(pos, axis=1, prepend=0.0) / (horizon / b)
    value = float(pos[:, -1].mean() / horizon)
    m = r * b
    se = float(inc.std(ddof=1) / math.sqrt(m))
    return SpeedEstimate(value, se, "batch_means", int(budget) if budget is not None else m)


def pool_estimates(estimates: Sequence[SpeedEstimate]) -> SpeedEstimate:
    """Equal-weight mean of independent replica estimates of one speed."""
    if not estimates:
        raise ValueError("nothing to pool")
    v = np.array([e.value for e in estimates])
    s = np.array([e.std_error for e in estimates])
    k = len(estimates)
    return SpeedEstimate(
        float(v.mean()),
        float(math.sqrt(np.sum(s**2)) / k),
        estimates[0].method,
        int(sum(e.budget for e in estimates)),
    )


# ---------------------------------------------------------------- fitting


def fit_exponential(points: Iterable[tuple[float, float, float]]) -> FitResult:
    """Weighted least squares of value on (1, e^{-lam}, e^{-2 lam}) with weights 1/sigma^2."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be (lambda, value, sigma) triples")
    lam, y, sig = pts.T
    if not np.all(np.isfinite(lam)):
        raise ValueError("lambda values must be finite")
    if np.unique(lam).size < 3:
        raise ValueError("need at least 3 distinct lambda values")
    if not np.all(sig > 0):
        raise ValueError("all sigma must be positive")
    x = np.column_stack([np.ones_like(lam), np.exp(-lam), np.exp(-2.0 * lam)])
    w = 1.0 / sig**2
    xw = x * np.sqrt(w)[:, None]
    # conditioning of the column-equilibrated normal matrix
    scale = np.linalg.norm(xw, axis=0)
    if np.linalg.cond(xw / scale) ** 2 > COND_LIMIT:
        raise ValueError("design is too ill-conditioned; spread the lambda values further apart")
    normal = x.T @ (w[:, None] * x)
    cov = np.linalg.inv(normal)
    cov = 0.5 * (cov + cov.T)
    a = cov @ (x.T @ (w * y))
    se = np.sqrt(np.diag(cov))
    return FitResult(float(a[0]), float(a[1]), float(a[2]), cov, float(a[1] / se[1]), float(a[2] / se[2]))


def dichotomy_sign_test(fit: FitResult, mu: float | None = None, p: float | None = None) -> Verdict:
    """Monotonicity verdict from the sign of a1 (a1 = -c1; a1 < 0 means increasing).

    ``mu`` and ``p`` are accepted for the record only; compare with
    :func:`expected_verdict` to check a conclusive verdict.
    """
    if fit.z_a1 <= -Z_THRESHOLD:
        return "increasing"
    if fit.z_a1 >= Z_THRESHOLD:
        return "decreasing"
    return "inconclusive"


def expected_verdict(mu: float, p: float) -> Verdict:
    """Monotonicity predicted by the sign of mu^2 - p(1-p)."""
    s = mu * mu - p * (1.0 - p)
    if s > 0:
        return "increasing"
    if s < 0:
        return "decreasing"
    return "inconclusive"


# ---------------------------------------------------------------- size bias


def size_bias_diagnostic(blocks) -> SizeBias:
    """Mean block length given exactly one backward attempt, next to E[dt^2]/E[dt].

    The two agree when backward attempts are rare and arrive at a constant
    rate, since the tagged block is then length-biased.
    """
    dt = np.asarray(blocks.dt, dtype=float)
    tagged = np.asarray(blocks.backward_attempts) == 1
    n = int(tagged.sum())
    if n < MIN_SIZE_BIAS_BLOCKS:
        raise ValueError(f"need at least {MIN_SIZE_BIAS_BLOCKS} blocks with one backward attempt, got {n}")
    return SizeBias(float(dt[tagged].mean()), float(np.mean(dt**2) / dt.mean()))
