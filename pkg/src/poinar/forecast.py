"""Exact one-step predictive distributions and conditional-mean forecasts.

The one-step-ahead count is the thinned carry-over plus a Poisson innovation,
so its pmf is the convolution of a Binomial(y_T, alpha) with a
Poisson(lambda * theta) and its mean is alpha * y_T + lambda * theta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .model import MODE_COVARIATE
from .sampler import PosteriorDraws

# Truncation budgets: total probability mass left in the tail, and the bound
# on the tail's contribution to the mean (keeps pmf means exact to ~1e-12).
_TAIL_MASS = 1e-9
_TAIL_MEAN = 1e-12

SOURCE_PER_DRAW = "per-draw"
SOURCE_AVERAGED = "posterior-averaged"


@dataclass(frozen=True)
class ForecastDistribution:
    """Truncated pmf of a future count.

    ``pmf[y]`` is the probability of observing ``y`` for y in 0..y_max; the
    tail beyond y_max carries less than the truncation budget of 1e-9 mass.
    """

    pmf: np.ndarray
    y_max: int
    mean: float
    source: str = SOURCE_PER_DRAW

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float)
        if pmf.ndim != 1 or pmf.shape[0] != self.y_max + 1:
            raise ValueError("pmf must cover 0..y_max")
        if np.any(pmf < 0):
            raise ValueError("pmf entries must be nonnegative")
        if pmf.sum() < 1.0 - 1e-9:
            raise ValueError("truncated pmf is missing more than the tail budget")
        object.__setattr__(self, "pmf", pmf)

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf)

    def quantile(self, upsilon: float) -> int:
        return quantile(self, upsilon)

    def interval(self, lower: float, upper: float) -> tuple[int, int]:
        """Counts bracketing the given pair of quantile levels."""
        return self.quantile(lower), self.quantile(upper)


def conditional_mean_one_step(y_T: float, alpha: float, lam: float, theta_next: float) -> float:
    """One-step conditional mean alpha * y_T + lambda * theta."""
    return alpha * y_T + lam * theta_next


def conditional_mean_h_step(
    y_T: float, alpha: float, lam: float, theta: np.ndarray, future_months
) -> float:
    """h-step conditional mean, h being the number of future months given.

    alpha**h * y_T + lam * sum_{j=1..h} alpha**(h-j) * theta_{m_j}, where
    ``future_months[j-1]`` is the month (1..12) of week T+j.
    """
    months = np.atleast_1d(np.asarray(future_months, dtype=np.int64))
    h = months.shape[0]
    if h < 1:
        raise ValueError("need at least one future month")
    theta = np.asarray(theta, dtype=float)
    powers = alpha ** np.arange(h - 1, -1, -1, dtype=float)
    return float(alpha**h * y_T + lam * (powers @ theta[months - 1]))


def predictive_pmf(
    y_T: int, alpha: float, lam: float, theta_next: float, y_max: int | None = None
) -> ForecastDistribution:
    """Exact pmf of the one-step-ahead count given the current count.

    The truncation point starts at mean + 12*sqrt(mean) + y_T (or at the
    caller's ``y_max``) and is extended until both tail budgets hold.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"thinning probability must lie in [0, 1], got {alpha}")
    rate = lam * theta_next
    if rate < 0:
        raise ValueError("innovation rate must be nonnegative")
    y_T = int(y_T)
    mean_hint = alpha * y_T + rate
    m = int(math.ceil(mean_hint + 12.0 * math.sqrt(mean_hint))) + y_T
    if y_max is not None:
        m = max(int(y_max), y_T)
    m = max(m, y_T, 1)

    binom_part = sps.binom.pmf(np.arange(y_T + 1), y_T, alpha)
    while True:
        pois_part = sps.poisson.pmf(np.arange(m + 1), rate)
        pmf = np.convolve(binom_part, pois_part)[: m + 1]
        tail_mass = 1.0 - pmf.sum()
        # E[S; S > m] <= y_T P(P > m - y_T) + rate P(P >= m - y_T)
        tail_mean = y_T * sps.poisson.sf(m - y_T, rate) + rate * sps.poisson.sf(
            m - y_T - 1, rate
        )
        if tail_mass < _TAIL_MASS and tail_mean < _TAIL_MEAN:
            break
        m = int(m * 1.5) + 10

    mean = float(np.arange(m + 1) @ pmf)
    return ForecastDistribution(pmf=pmf, y_max=m, mean=mean, source=SOURCE_PER_DRAW)


def posterior_predictive(
    y_T: int,
    draws: PosteriorDraws,
    series: int,
    month: int,
    y_max: int | None = None,
    exposure: np.ndarray | None = None,
) -> ForecastDistribution:
    """Average the exact one-step pmf over the posterior draws.

    ``month`` is the calendar month (1..12) of the forecast week. In
    covariate mode the panel's exposure vector must be supplied so each
    draw's per-exposure rate can be scaled.
    """
    if len(draws) == 0:
        raise ValueError("no posterior draws to average over")
    if draws.mode == MODE_COVARIATE and exposure is None:
        raise ValueError("covariate-mode draws need the exposure vector")

    dists = []
    for state in draws:
        lam = state.phi_star[state.z[series]]
        if exposure is not None:
            lam *= exposure[series]
        dists.append(
            predictive_pmf(y_T, state.alpha[series], lam, state.theta[month - 1], y_max=y_max)
        )
    m = max(d.y_max for d in dists)
    acc = np.zeros(m + 1)
    for d in dists:
        acc[: d.y_max + 1] += d.pmf
    acc /= len(dists)
    mean = float(np.arange(m + 1) @ acc)
    return ForecastDistribution(pmf=acc, y_max=m, mean=mean, source=SOURCE_AVERAGED)


def quantile(dist: ForecastDistribution, upsilon: float) -> int:
    """Smallest count whose CDF reaches ``upsilon``; monotone in upsilon."""
    if not 0.0 < upsilon < 1.0:
        raise ValueError(f"quantile level must lie strictly in (0, 1), got {upsilon}")
    cdf = dist.cdf()
    if upsilon > cdf[-1]:
        raise ValueError("requested quantile lies beyond the truncation point")
    return int(np.searchsorted(cdf, upsilon, side="left"))
