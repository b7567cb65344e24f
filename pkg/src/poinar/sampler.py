"""Collapsed Gibbs sampler for the clustered Poisson INAR(1) model.

One sweep resamples, in order: the latent innovation counts, the cluster
memberships (with the cluster rates integrated out), the unique cluster
rates, the monthly seasonal effects, the per-series thinning probabilities,
and the DP concentration parameter.

In covariate mode every occurrence of the total seasonal mass attached to a
series is scaled by that series' exposure, so the same conjugate updates
cover both model variants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .model import MODE_COVARIATE, MODE_PLAIN, Hyperparams, ModelState
from .panel import N_MONTHS, CountPanel

INNOVATION_EXACT = "exact-enumeration"
INNOVATION_METROPOLIS = "metropolis-poisson"

# (1 - alpha) / alpha is undefined at the endpoints; the Beta posterior puts
# zero mass there, so clamping is numerically safe.
_ALPHA_EPS = 1e-12


class ConfigurationError(ValueError):
    """Raised when a sampler run is configured inconsistently with its data."""


@dataclass(frozen=True)
class SamplerConfig:
    """MCMC run settings.

    ``init_*`` pairs are the (shape-like, rate-like) parameters of the
    distributions the chain's starting values are drawn from; each series
    starts in its own cluster with its own rate draw.
    """

    n_iterations: int = 1000
    burn_in: int = 100
    thin_interval: int = 5
    n_chains: int = 1
    seed: int = 0
    hyper: Hyperparams = field(default_factory=Hyperparams)
    innovation_strategy: str = INNOVATION_EXACT
    metropolis_threshold: int = 30
    init_alpha: tuple[float, float] = (1.0, 1.0)
    init_theta: tuple[float, float] = (1.0, 1.0)
    init_tau: tuple[float, float] = (2.0, 4.0)
    init_phi: tuple[float, float] = (1.0, 1.0)
    validate_sweeps: bool = False

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be positive")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("burn_in must be smaller than n_iterations")
        if self.thin_interval < 1:
            raise ValueError("thin_interval must be at least 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if self.innovation_strategy not in (INNOVATION_EXACT, INNOVATION_METROPOLIS):
            raise ValueError(f"unknown innovation strategy {self.innovation_strategy!r}")

    @property
    def draws_per_chain(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thin_interval


def chain_rng(seed: int, chain_index: int = 0) -> np.random.Generator:
    """Per-chain random stream derived from the master seed.

    Chain ``c`` uses ``SeedSequence(entropy=seed, spawn_key=(1, c))``; stream
    key 1 is reserved for sampling (0 is used for simulation)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(1, chain_index))
    return np.random.default_rng(ss)


@dataclass
class PosteriorDraws:
    """Thinned post-burn-in parameter snapshots, tagged by chain and sweep."""

    states: list[ModelState]
    chain_index: np.ndarray
    iteration: np.ndarray
    mode: str = MODE_PLAIN

    def __post_init__(self):
        self.chain_index = np.asarray(self.chain_index, dtype=np.int64)
        self.iteration = np.asarray(self.iteration, dtype=np.int64)
        if not (len(self.states) == self.chain_index.shape[0] == self.iteration.shape[0]):
            raise ValueError("states, chain_index and iteration must align")

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    @property
    def chains(self) -> np.ndarray:
        return np.unique(self.chain_index)

    def cluster_counts(self) -> np.ndarray:
        return np.array([s.n_clusters for s in self.states], dtype=np.int64)

    def rate_sum_traces(self, exposure: np.ndarray | None = None) -> list[np.ndarray]:
        """Per-chain traces of the summed effective rates, a scalar functional
        that is invariant to cluster relabeling (used for convergence checks)."""
        totals = np.array([s.series_rates(exposure).sum() for s in self.states])
        return [totals[self.chain_index == c] for c in self.chains]

    @classmethod
    def concat(cls, parts: list["PosteriorDraws"]) -> "PosteriorDraws":
        if not parts:
            raise ValueError("no draws to concatenate")
        modes = {p.mode for p in parts}
        if len(modes) != 1:
            raise ValueError("cannot mix draws from different model modes")
        return cls(
            states=[s for p in parts for s in p.states],
            chain_index=np.concatenate([p.chain_index for p in parts]),
            iteration=np.concatenate([p.iteration for p in parts]),
            mode=parts[0].mode,
        )


@dataclass(frozen=True)
class SuffStats:
    """Sufficient statistics of the imputed innovations under a clustering.

    ``mass[l]`` is the seasonal mass a series multiplies its rate by over the
    whole panel: Theta in plain mode, exposure_l * Theta in covariate mode.
    ``U[k]`` sums ``mass`` over cluster members, so every conjugate update
    reads the same in both modes.
    """

    S: np.ndarray           # (L,) per-series innovation totals
    B: np.ndarray           # (K,) per-cluster innovation totals
    n: np.ndarray           # (K,) cluster sizes
    U: np.ndarray           # (K,) per-cluster summed seasonal mass
    R: np.ndarray           # (T,) per-week innovation totals
    theta_total: float      # Theta = sum_t theta_{s(t)}
    mass: np.ndarray        # (L,) per-series seasonal mass

    @classmethod
    def from_state(cls, state: ModelState, panel: CountPanel, mode: str = MODE_PLAIN) -> "SuffStats":
        if state.innovations is None:
            raise ValueError("state carries no innovations")
        eps = state.innovations
        theta_total = panel.season_summary().theta_total(state.theta)
        if mode == MODE_COVARIATE:
            if panel.exposure is None:
                raise ConfigurationError("covariate mode requires panel exposure")
            mass = panel.exposure * theta_total
        else:
            mass = np.full(panel.n_series, theta_total)
        S = eps.sum(axis=1).astype(float)
        K = state.n_clusters
        B = np.bincount(state.z, weights=S, minlength=K)
        n = np.bincount(state.z, minlength=K)
        U = np.bincount(state.z, weights=mass, minlength=K)
        return cls(
            S=S, B=B, n=n.astype(np.int64), U=U,
            R=eps.sum(axis=0).astype(float),
            theta_total=float(theta_total), mass=mass,
        )

    def held_out_totals(self, l: int, z: np.ndarray) -> np.ndarray:
        """A_j = sum of S over cluster j's members excluding series ``l``."""
        A = self.B.copy()
        A[z[l]] -= self.S[l]
        return A

    def validate(self):
        if not np.isclose(self.B.sum(), self.S.sum(), rtol=1e-9):
            raise AssertionError("cluster totals must sum to the series totals")
        if not np.isclose(self.R.sum(), self.S.sum(), rtol=1e-9):
            raise AssertionError("weekly totals must sum to the series totals")
        if self.n.sum() != self.S.shape[0] or np.any(self.n < 1):
            raise AssertionError("cluster sizes must be positive and sum to L")


# ---------------------------------------------------------------------------
# Step 1: latent innovations
# ---------------------------------------------------------------------------

def innovation_support(y_prev: int, y_curr: int) -> tuple[int, int]:
    """Feasible innovation range: max(0, y_curr - y_prev) .. y_curr."""
    return max(0, int(y_curr) - int(y_prev)), int(y_curr)


def innovation_pmf(y_prev: int, y_curr: int, alpha: float, rate: float) -> np.ndarray:
    """Exact conditional pmf of one innovation count over its support.

    The returned array aligns with ``range(lo, hi + 1)`` where
    ``(lo, hi) = innovation_support(y_prev, y_curr)``. The unnormalized weight
    of innovation e is
    ``(rate * (1 - alpha) / alpha)**e / (e! (y_curr-e)! (y_prev-y_curr+e)!)``.
    """
    if rate <= 0:
        raise ValueError("innovation rate must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"thinning probability must lie in [0, 1], got {alpha}")
    lo, hi = innovation_support(y_prev, y_curr)
    eps = np.arange(lo, hi + 1)
    a = min(max(alpha, _ALPHA_EPS), 1.0 - _ALPHA_EPS)
    log_c = np.log(rate) + np.log1p(-a) - np.log(a)
    logw = (
        eps * log_c
        - gammaln(eps + 1.0)
        - gammaln(y_curr - eps + 1.0)
        - gammaln(y_prev - y_curr + eps + 1.0)
    )
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def sample_innovation(
    y_prev: int, y_curr: int, alpha: float, rate: float, rng: np.random.Generator
) -> int:
    """Exact draw from the innovation conditional.

    Deterministic cases need no randomness: y_curr = 0 forces 0 and
    y_prev = 0 forces y_curr."""
    lo, hi = innovation_support(y_prev, y_curr)
    if lo == hi:
        return lo
    pmf = innovation_pmf(y_prev, y_curr, alpha, rate)
    u = rng.random()
    return lo + int(np.searchsorted(np.cumsum(pmf), u, side="right"))


class InnovationKernel:
    """Vectorized innovation update for weeks 2..T of one panel.

    Enumerating the support for every (series, week) cell at once is the
    sampler's hot loop, so the kernel preallocates its grid buffers (sized by
    the widest support in the panel) and reuses them across sweeps with
    in-place operations. With the Metropolis strategy, cells whose current
    count exceeds the threshold get a Poisson-proposal MH move instead of
    exact enumeration.
    """

    def __init__(self, counts: np.ndarray, strategy: str = INNOVATION_EXACT,
                 mh_threshold: int = 30):
        self.counts = counts
        self.strategy = strategy
        self.mh_threshold = mh_threshold
        self.lgam = gammaln(np.arange(int(counts.max()) + 2, dtype=float))
        self.yp = counts[:, :-1]
        self.yc = counts[:, 1:]
        self.lo = np.maximum(self.yc - self.yp, 0)
        width = np.minimum(self.yc, self.yp)

        active = width > 0
        if strategy == INNOVATION_METROPOLIS:
            self.mh_mask = active & (self.yc > mh_threshold)
            exact = active & ~self.mh_mask
        else:
            self.mh_mask = None
            exact = active
        # the active cells never change, so gather their geometry once
        self.rows, self.cols = np.nonzero(exact)
        self.base = self.lo[self.rows, self.cols]
        n = self.rows.size
        m = int(width[self.rows, self.cols].max()) + 1 if n else 0
        if n:
            w = width[self.rows, self.cols]
            valid = np.arange(m)[None, :] <= w[:, None]
            grid = (self.base[:, None] + np.arange(m)) * valid
            surv = (self.yc[self.rows, self.cols][:, None] - grid) * valid
            fail = (self.yp[self.rows, self.cols][:, None] - surv) * valid
            # log-factorial terms never change across sweeps; only the rate
            # term multiplies the support grid
            logw0 = -(self.lgam[grid + 1] + self.lgam[surv + 1] + self.lgam[fail + 1])
            logw0[~valid] = -np.inf
            self.grid0 = grid.astype(float)
            self.logw0 = logw0
        else:
            self.grid0 = np.zeros((0, 0))
            self.logw0 = np.zeros((0, 0))
        self._logw = np.empty_like(self.logw0)
        self._work = np.empty_like(self.logw0)
        self._below = np.empty(self.logw0.shape, dtype=bool)

    def __call__(self, eps: np.ndarray, alpha: np.ndarray, rates: np.ndarray,
                 rng: np.random.Generator) -> np.ndarray:
        """Draw a full innovation matrix given the current parameters.

        ``rates`` has shape (L, T-1): the innovation rate of series l at week
        t+1. The first-week column stays pinned to the first observations;
        single-point supports resolve deterministically.
        """
        a = np.clip(alpha, _ALPHA_EPS, 1.0 - _ALPHA_EPS)
        log_odds = np.log1p(-a) - np.log(a)

        new = np.empty_like(self.counts)
        new[:, 0] = self.counts[:, 0]
        tail = self.lo.copy()  # deterministic cells resolve to their support point

        n = self.rows.size
        if n:
            log_c = np.log(rates[self.rows, self.cols])
            log_c += log_odds[self.rows]
            logw, work = self._logw, self._work
            np.multiply(self.grid0, log_c[:, None], out=logw)
            logw += self.logw0
            np.subtract(logw, logw.max(axis=1, keepdims=True), out=logw)
            np.exp(logw, out=logw)
            np.cumsum(logw, axis=1, out=work)
            u = rng.random(n) * work[:, -1]
            np.less(work, u[:, None], out=self._below)
            tail[self.rows, self.cols] = self.base + self._below.sum(axis=1)

        if self.mh_mask is not None:
            rows, cols = np.nonzero(self.mh_mask)
            if rows.size:
                lgam = self.lgam
                cur = eps[rows, cols + 1]
                prop = rng.poisson(rates[rows, cols])
                lo_c = self.lo[rows, cols]
                yc_c = self.yc[rows, cols]
                diff = self.yp[rows, cols] - yc_c
                feasible = (prop >= lo_c) & (prop <= yc_c)
                p_safe = np.clip(prop, lo_c, yc_c)
                log_ratio = (
                    (p_safe - cur) * log_odds[rows]
                    + lgam[yc_c - cur + 1] + lgam[diff + cur + 1]
                    - lgam[yc_c - p_safe + 1] - lgam[diff + p_safe + 1]
                )
                accept = feasible & (np.log(rng.random(rows.size)) < log_ratio)
                tail[rows, cols] = np.where(accept, p_safe, cur)

        new[:, 1:] = tail
        return new


def _resample_innovations(
    counts: np.ndarray,
    eps: np.ndarray,
    alpha: np.ndarray,
    rates: np.ndarray,
    rng: np.random.Generator,
    strategy: str = INNOVATION_EXACT,
    mh_threshold: int = 30,
) -> np.ndarray:
    """One-shot innovation update (builds a throwaway kernel; tests only)."""
    kernel = InnovationKernel(counts, strategy=strategy, mh_threshold=mh_threshold)
    return kernel(eps, alpha, rates, rng)


# ---------------------------------------------------------------------------
# Step 2: memberships (cluster rates collapsed out)
# ---------------------------------------------------------------------------

def log_innovation_total_marginal(s_total, mass, shape, rate):
    """Log marginal likelihood of an innovation total with its rate
    integrated out.

    log of  integral Poisson(s_total | lam * mass) Gamma(lam | shape, rate) dlam,
    a negative binomial. Vectorizes over any argument."""
    s_total = np.asarray(s_total, dtype=float)
    log_denom = np.log(np.asarray(rate) + mass)
    return (
        gammaln(s_total + shape) - gammaln(shape) - gammaln(s_total + 1.0)
        + shape * (np.log(rate) - log_denom)
        + s_total * (np.log(mass) - log_denom)
    )


def _relabel_by_first_appearance(z, *cluster_arrays):
    _, first = np.unique(z, return_index=True)
    old_order = np.argsort(first)  # old labels in order of first appearance
    perm = np.empty(old_order.shape[0], dtype=np.int64)
    perm[old_order] = np.arange(old_order.shape[0])
    return perm[z], tuple(arr[old_order] for arr in cluster_arrays)


def sample_memberships(
    state: ModelState,
    panel: CountPanel,
    stats: SuffStats,
    hyper: Hyperparams,
    rng: np.random.Generator,
    order: np.ndarray | None = None,
) -> tuple[np.ndarray, SuffStats]:
    """One full sweep of collapsed membership updates.

    Each series in turn is removed from its cluster and reassigned: a new
    cluster is opened with weight tau * p_0 and existing cluster j is joined
    with weight n_j * p_j, where the p's are the collapsed marginal
    likelihoods of the series' innovation total. Emptied clusters are removed
    and labels are canonicalized by first appearance, so the returned stats
    carry compacted B, n and U; the cluster rates must be re-instantiated
    afterwards.
    """
    g1, g2 = hyper.gamma1, hyper.gamma2
    S, mass = stats.S, stats.mass
    z = state.z.copy()
    B = list(stats.B)
    n = list(stats.n)
    U = list(stats.U)
    log_tau = np.log(state.tau)
    if order is None:
        order = np.arange(z.shape[0])

    for l in order:
        k = z[l]
        n[k] -= 1
        B[k] -= S[l]
        U[k] -= mass[l]
        if n[k] == 0:
            del n[k], B[k], U[k]
            z[z > k] -= 1
        K = len(n)
        nb = np.asarray(B)
        nu = np.asarray(U)
        logw = np.empty(K + 1)
        logw[:K] = np.log(np.asarray(n, dtype=float)) + log_innovation_total_marginal(
            S[l], mass[l], nb + g1, nu + g2
        )
        logw[K] = log_tau + log_innovation_total_marginal(S[l], mass[l], g1, g2)
        logw -= logw.max()
        w = np.exp(logw)
        k_new = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
        if k_new == K:
            n.append(0)
            B.append(0.0)
            U.append(0.0)
        z[l] = k_new
        n[k_new] += 1
        B[k_new] += S[l]
        U[k_new] += mass[l]

    z, (B, n, U) = _relabel_by_first_appearance(
        z, np.asarray(B), np.asarray(n, dtype=np.int64), np.asarray(U)
    )
    new_stats = SuffStats(
        S=stats.S, B=B, n=n, U=U, R=stats.R,
        theta_total=stats.theta_total, mass=stats.mass,
    )
    return z, new_stats


# ---------------------------------------------------------------------------
# Steps 3-6: conjugate parameter updates
# ---------------------------------------------------------------------------

def sample_unique_rates(stats: SuffStats, hyper: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    """Draw each cluster rate from Gamma(B_k + gamma1, U_k + gamma2)."""
    shape = stats.B + hyper.gamma1
    rate = stats.U + hyper.gamma2
    return rng.gamma(shape, 1.0 / rate)


def sample_seasonals(
    stats: SuffStats,
    state: ModelState,
    panel: CountPanel,
    hyper: Hyperparams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw each monthly effect from its Gamma conditional.

    Months absent from the data contribute no likelihood; the formula then
    reduces to the Gamma(xi1, xi2) prior on its own.
    """
    month_eps = np.bincount(panel.season_of - 1, weights=stats.R, minlength=N_MONTHS)
    q = panel.season_summary().q
    # per-series effective rates: exposure (mass / Theta) times the cluster rate
    lam_sum = float(((stats.mass / stats.theta_total) * state.phi_star[state.z]).sum())
    shape = month_eps + hyper.xi1
    rate = q * lam_sum + hyper.xi2
    return rng.gamma(shape, 1.0 / rate)


def sample_thinnings(
    state: ModelState,
    panel: CountPanel,
    hyper: Hyperparams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw each thinning probability from its Beta conditional.

    The first parameter counts thinning survivors over weeks 2..T, the
    second counts thinned-away trials; only transitions contribute, so the
    innovation sums here run over t >= 2.
    """
    if state.innovations is None:
        raise ValueError("state carries no innovations")
    y = panel.counts
    eps_tail = state.innovations[:, 1:]
    survivors = (y[:, 1:] - eps_tail).sum(axis=1)
    removed = (y[:, :-1] - y[:, 1:] + eps_tail).sum(axis=1)
    return rng.beta(survivors + hyper.eta1, removed + hyper.eta2)


def concentration_mixture(
    K: int, L: int, kappa: float, a_tau: float, b_tau: float
) -> tuple[float, float, float, float]:
    """Components of the concentration update given the auxiliary draw:
    (mixture weight pi, upper shape, lower shape, common rate)."""
    rate = b_tau - np.log(kappa)
    odds = (a_tau + K - 1.0) / (L * rate)
    pi = odds / (1.0 + odds)
    return pi, a_tau + K, a_tau + K - 1.0, rate


def sample_concentration(
    K: int, L: int, tau_old: float, hyper: Hyperparams, rng: np.random.Generator
) -> float:
    """Two-stage concentration update: draw the auxiliary Beta(tau+1, L)
    variable, then tau from the implied two-component Gamma mixture."""
    if K < 1:
        raise ValueError("need at least one cluster")
    kappa = rng.beta(tau_old + 1.0, L)
    pi, shape_hi, shape_lo, rate = concentration_mixture(K, L, kappa, hyper.a_tau, hyper.b_tau)
    shape = shape_hi if rng.random() < pi else shape_lo
    return float(rng.gamma(shape, 1.0 / rate))


# ---------------------------------------------------------------------------
# Chain orchestration
# ---------------------------------------------------------------------------

def _initial_state(panel: CountPanel, config: SamplerConfig, rng: np.random.Generator) -> ModelState:
    L = panel.n_series
    a1, a2 = config.init_alpha
    t1, t2 = config.init_theta
    c1, c2 = config.init_tau
    p1, p2 = config.init_phi
    return ModelState(
        alpha=rng.beta(a1, a2, size=L),
        z=np.arange(L, dtype=np.int64),
        phi_star=rng.gamma(p1, 1.0 / p2, size=L),
        theta=rng.gamma(t1, 1.0 / t2, size=N_MONTHS),
        tau=float(rng.gamma(c1, 1.0 / c2)),
        innovations=None,
    )


def run_chain(
    panel: CountPanel,
    config: SamplerConfig,
    rng: np.random.Generator | None = None,
    chain_index: int = 0,
) -> PosteriorDraws:
    """Run one chain and return its thinned post-burn-in draws.

    Sweeps execute the six update steps in a fixed order; iteration i is
    recorded when i > burn_in and (i - burn_in) is a multiple of the thinning
    interval. Deterministic given the generator's seed.
    """
    hyper = config.hyper
    if hyper.mode == MODE_COVARIATE and panel.exposure is None:
        raise ConfigurationError("covariate mode requires an exposure vector")
    if rng is None:
        rng = chain_rng(config.seed, chain_index)

    counts = panel.counts
    L = panel.n_series
    month_idx = panel.season_of - 1
    exposure = panel.exposure if hyper.mode == MODE_COVARIATE else np.ones(L)
    kernel = InnovationKernel(
        counts,
        strategy=config.innovation_strategy,
        mh_threshold=config.metropolis_threshold,
    )

    state = _initial_state(panel, config, rng)
    eps = np.empty_like(counts)
    eps[:, 0] = counts[:, 0]
    eps[:, 1:] = np.maximum(counts[:, 1:] - counts[:, :-1], 0)
    state.innovations = eps

    states: list[ModelState] = []
    iterations: list[int] = []
    for it in range(1, config.n_iterations + 1):
        rates = (exposure * state.phi_star[state.z])[:, None] * state.theta[month_idx[1:]]
        state.innovations = kernel(state.innovations, state.alpha, rates, rng)
        stats = SuffStats.from_state(state, panel, mode=hyper.mode)
        state.z, stats = sample_memberships(state, panel, stats, hyper, rng)
        state.phi_star = sample_unique_rates(stats, hyper, rng)
        state.theta = sample_seasonals(stats, state, panel, hyper, rng)
        state.alpha = sample_thinnings(state, panel, hyper, rng)
        state.tau = sample_concentration(state.n_clusters, L, state.tau, hyper, rng)

        if config.validate_sweeps:
            state.validate(panel)
            stats.validate()

        if it > config.burn_in and (it - config.burn_in) % config.thin_interval == 0:
            states.append(state.copy())
            iterations.append(it)

    return PosteriorDraws(
        states=states,
        chain_index=np.full(len(states), chain_index),
        iteration=np.array(iterations),
        mode=hyper.mode,
    )


def run_chains(panel: CountPanel, config: SamplerConfig) -> list[PosteriorDraws]:
    """Run ``config.n_chains`` independent chains with derived per-chain
    seeds and individually drawn starting points."""
    return [
        run_chain(panel, config, chain_index=c)
        for c in range(config.n_chains)
    ]
