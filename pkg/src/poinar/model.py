"""Generative machinery: binomial thinning, Poisson INAR(1) simulation, and
Dirichlet-process prior draws (stick-breaking and Chinese restaurant process).

All randomness is passed in explicitly as a ``numpy.random.Generator`` so every
operation is pure and reproducible given a seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .panel import N_MONTHS, CountPanel

MODE_PLAIN = "plain"
MODE_COVARIATE = "covariate"


@dataclass(frozen=True)
class Hyperparams:
    """Prior hyperparameters of the clustered INAR model.

    All Gamma distributions here are shape/rate parameterized: the collapsed
    membership weights and the conjugate rate updates only compose correctly
    under the rate convention.

    Attributes
    ----------
    eta1, eta2 : float
        Beta prior on the per-series thinning probabilities.
    xi1, xi2 : float
        Gamma prior on the monthly seasonal effects.
    gamma1, gamma2 : float
        Gamma base measure of the Dirichlet process over innovation rates
        (over per-exposure rates in covariate mode).
    a_tau, b_tau : float
        Gamma prior on the DP concentration parameter.
    mode : str
        ``"plain"`` models per-series rates directly; ``"covariate"`` factors
        each rate as exposure times a clustered per-exposure rate.
    """

    eta1: float = 1.0
    eta2: float = 1.0
    xi1: float = 1.0
    xi2: float = 1.0
    gamma1: float = 1.0
    gamma2: float = 0.1
    a_tau: float = 2.0
    b_tau: float = 4.0
    mode: str = MODE_PLAIN

    def __post_init__(self):
        for name in ("eta1", "eta2", "xi1", "xi2", "gamma1", "gamma2", "a_tau", "b_tau"):
            value = getattr(self, name)
            if not (value > 0 and np.isfinite(value)):
                raise ValueError(f"{name} must be a positive finite number, got {value}")
        if self.mode not in (MODE_PLAIN, MODE_COVARIATE):
            raise ValueError(f"mode must be 'plain' or 'covariate', got {self.mode!r}")

    @classmethod
    def default(cls, mode: str = MODE_PLAIN) -> "Hyperparams":
        """Mode-appropriate defaults: base measure Gamma(1, 0.1) for plain
        rates, Gamma(0.5, 0.5) for exposure-adjusted per-unit rates."""
        if mode == MODE_COVARIATE:
            return cls(gamma1=0.5, gamma2=0.5, mode=mode)
        return cls(mode=mode)


@dataclass
class ModelState:
    """One full parameter configuration of the clustered INAR model.

    Cluster labels are 0-based and contiguous: ``z`` takes values in
    ``0..K-1`` with no empty cluster, and ``phi_star[k]`` is the rate shared
    by cluster ``k`` (the per-exposure rate in covariate mode).

    ``innovations`` holds the imputed new-arrival counts; the first column is
    pinned to the first observations (the initial count is attributed wholly
    to innovation). It may be ``None`` for states restored from storage.
    """

    alpha: np.ndarray
    z: np.ndarray
    phi_star: np.ndarray
    theta: np.ndarray
    tau: float
    innovations: np.ndarray | None = None

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.z = np.asarray(self.z, dtype=np.int64)
        self.phi_star = np.asarray(self.phi_star, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        self.tau = float(self.tau)
        if self.innovations is not None:
            self.innovations = np.asarray(self.innovations, dtype=np.int64)

    @property
    def n_clusters(self) -> int:
        return self.phi_star.shape[0]

    @property
    def n_series(self) -> int:
        return self.z.shape[0]

    def series_rates(self, exposure: np.ndarray | None = None) -> np.ndarray:
        """Effective innovation rate of each series: phi*_{z_l}, scaled by
        exposure when given (covariate mode)."""
        rates = self.phi_star[self.z]
        if exposure is not None:
            rates = rates * np.asarray(exposure, dtype=float)
        return rates

    def copy(self) -> "ModelState":
        return ModelState(
            alpha=self.alpha.copy(),
            z=self.z.copy(),
            phi_star=self.phi_star.copy(),
            theta=self.theta.copy(),
            tau=self.tau,
            innovations=None if self.innovations is None else self.innovations.copy(),
        )

    def validate(self, panel: CountPanel | None = None):
        """Assert the structural invariants; used in debug sweeps."""
        L = self.n_series
        K = self.n_clusters
        if self.alpha.shape != (L,) or np.any((self.alpha < 0) | (self.alpha > 1)):
            raise AssertionError("alpha must be length L within [0, 1]")
        if np.any((self.z < 0) | (self.z >= K)):
            raise AssertionError("memberships must reference existing clusters")
        if len(np.unique(self.z)) != K:
            raise AssertionError("clusters must be contiguously indexed with no empties")
        if np.any(self.phi_star <= 0) or np.any(self.theta <= 0) or not self.tau > 0:
            raise AssertionError("rates, seasonals and concentration must be positive")
        if self.theta.shape != (N_MONTHS,):
            raise AssertionError("theta must have 12 entries")
        if panel is not None and self.innovations is not None:
            y = panel.counts
            eps = self.innovations
            if eps.shape != y.shape:
                raise AssertionError("innovations must match the panel shape")
            lo = np.maximum(0, y[:, 1:] - y[:, :-1])
            if np.any(eps[:, 1:] < lo) or np.any(eps[:, 1:] > y[:, 1:]):
                raise AssertionError("innovation support bounds violated")
            if np.any(eps[:, 0] != y[:, 0]):
                raise AssertionError("first-week innovations must equal the first counts")


def binomial_thin(x: int, alpha: float, rng: np.random.Generator) -> int:
    """Binomial thinning: the number of survivors among ``x`` independent
    Bernoulli(alpha) trials. Always between 0 and x."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"thinning probability must lie in [0, 1], got {alpha}")
    if x < 0:
        raise ValueError("cannot thin a negative count")
    return int(rng.binomial(int(x), alpha))


def stationary_mean(lam: float, alpha: float) -> float:
    """Marginal mean lambda / (1 - alpha) of a stationary INAR(1) with
    constant innovation rate."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("stationarity requires alpha in [0, 1)")
    return lam / (1.0 - alpha)


def simulate_poinar(
    lam: float,
    alpha: float,
    theta: np.ndarray,
    season_of: np.ndarray,
    T: int | None = None,
    y0: int | None = None,
    rng: np.random.Generator | None = None,
    return_innovations: bool = False,
):
    """Simulate one Poisson INAR(1) series with monthly innovation rates.

    Each step carries over a binomial thinning of the previous count and adds
    a Poisson(lam * theta_{s(t)}) innovation. When ``y0`` is omitted the
    first observation is drawn near stationarity, from
    Poisson(lam * theta_{s(1)} / (1 - alpha)).

    Returns the length-T count series; with ``return_innovations=True`` also
    returns the simulated innovations (first entry set to the first count).
    """
    if rng is None:
        rng = np.random.default_rng()
    if lam < 0:
        raise ValueError("innovation rate must be nonnegative")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"thinning probability must lie in [0, 1], got {alpha}")
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0):
        raise ValueError("seasonal effects must be strictly positive")
    season_of = np.asarray(season_of, dtype=np.int64)
    if T is None:
        T = season_of.shape[0]
    if season_of.shape[0] < T:
        raise ValueError("season_of must cover every simulated week")

    rates = lam * theta[season_of[:T] - 1]
    if y0 is None:
        if alpha >= 1.0:
            raise ValueError("alpha = 1 has no stationary start; pass y0 explicitly")
        y0 = int(rng.poisson(rates[0] / (1.0 - alpha)))

    y = np.empty(T, dtype=np.int64)
    eps = np.empty(T, dtype=np.int64)
    y[0] = y0
    eps[0] = y0
    innovations = rng.poisson(rates[1:]) if T > 1 else np.empty(0, dtype=np.int64)
    for t in range(1, T):
        carried = rng.binomial(y[t - 1], alpha)
        eps[t] = innovations[t - 1]
        y[t] = carried + eps[t]
    if return_innovations:
        return y, eps
    return y


def simulate_panel(
    cluster_rates: np.ndarray,
    memberships: np.ndarray,
    alpha,
    theta: np.ndarray,
    season_of: np.ndarray,
    rng: np.random.Generator,
    exposure: np.ndarray | None = None,
    series_ids: list[str] | None = None,
) -> tuple[CountPanel, ModelState]:
    """Simulate an L-series panel and keep its ground truth.

    Every series is an independent INAR(1) whose innovation rate is the rate
    of its cluster (times exposure when given), sharing the seasonal vector.

    Returns
    -------
    (CountPanel, ModelState)
        The simulated panel and the generating configuration, including the
        true innovations.
    """
    cluster_rates = np.asarray(cluster_rates, dtype=float)
    memberships = np.asarray(memberships, dtype=np.int64)
    if np.any((memberships < 0) | (memberships >= cluster_rates.shape[0])):
        raise ValueError("memberships must reference the given cluster rates")
    L = memberships.shape[0]
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (L,)).copy()
    season_of = np.asarray(season_of, dtype=np.int64)
    T = season_of.shape[0]
    if exposure is not None:
        exposure = np.asarray(exposure, dtype=float)
        if exposure.shape != (L,):
            raise ValueError("exposure must have one entry per series")

    counts = np.empty((L, T), dtype=np.int64)
    eps = np.empty((L, T), dtype=np.int64)
    for l in range(L):
        lam = cluster_rates[memberships[l]]
        if exposure is not None:
            lam *= exposure[l]
        counts[l], eps[l] = simulate_poinar(
            lam, alpha[l], theta, season_of, rng=rng, return_innovations=True
        )

    panel = CountPanel(
        counts=counts,
        season_of=season_of,
        exposure=exposure,
        series_ids=series_ids or [],
    )
    # tau has no ground-truth value for a fixed clustering; 1.0 is a placeholder.
    truth = ModelState(
        alpha=alpha,
        z=memberships,
        phi_star=cluster_rates,
        theta=np.asarray(theta, dtype=float),
        tau=1.0,
        innovations=eps,
    )
    return panel, truth


def crp_draw(n: int, tau: float, rng: np.random.Generator) -> np.ndarray:
    """Draw cluster memberships for ``n`` items from a Chinese restaurant
    process with concentration ``tau``.

    The first item opens cluster 0; item i+1 then opens a new cluster with
    probability tau / (i + tau) and joins an existing cluster k with
    probability n_k / (i + tau). Labels are 0-based in order of appearance.
    """
    if n < 1:
        raise ValueError("need at least one item")
    if not tau > 0:
        raise ValueError("concentration must be positive")
    z = np.empty(n, dtype=np.int64)
    sizes: list[int] = []
    for i in range(n):
        if i == 0:
            z[0] = 0
            sizes.append(1)
            continue
        u = rng.random() * (i + tau)
        acc = 0.0
        for k, nk in enumerate(sizes):
            acc += nk
            if u < acc:
                z[i] = k
                sizes[k] += 1
                break
        else:
            z[i] = len(sizes)
            sizes.append(1)
    return z


class StickWeights(NamedTuple):
    beta: np.ndarray
    leftover: float


def stick_breaking(tau: float, truncation: int, rng: np.random.Generator) -> StickWeights:
    """Draw the first ``truncation`` DP weights by stick breaking.

    beta_k = nu_k * prod_{l<k} (1 - nu_l) with nu_k ~ Beta(1, tau). The
    returned ``leftover`` is the unassigned stick mass 1 - sum(beta).
    """
    if truncation < 1:
        raise ValueError("truncation must be at least 1")
    if not tau > 0:
        raise ValueError("concentration must be positive")
    nu = rng.beta(1.0, tau, size=truncation)
    remaining = np.concatenate([[1.0], np.cumprod(1.0 - nu)])
    beta = nu * remaining[:-1]
    return StickWeights(beta=beta, leftover=float(remaining[-1]))


def crp_expected_clusters(n: int, tau: float) -> float:
    """Exact expected cluster count sum_{i=1}^n tau / (tau + i - 1)."""
    i = np.arange(n, dtype=float)
    return float(np.sum(tau / (tau + i)))
