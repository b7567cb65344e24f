"""Correlated low-count time series via a clustered Poisson INAR(1) model.

Each series carries over a binomially thinned share of its previous count and
adds Poisson innovations whose rates share a Dirichlet-process clustering
across series and a monthly seasonal profile across time.
"""

__version__ = "0.1.0"

from .baselines import ClsEstimate, cls_fit, cls_forecast, spp_fit_forecast
from .diagnostics import (
    EvalReport,
    cluster_count_histogram,
    forecast_metrics,
    hamming_error,
    psrf,
    representative_assignment,
)
from .forecast import (
    ForecastDistribution,
    conditional_mean_h_step,
    conditional_mean_one_step,
    posterior_predictive,
    predictive_pmf,
    quantile,
)
from .harness import Scenario, benchmark_scenarios, run_study
from .model import (
    Hyperparams,
    ModelState,
    binomial_thin,
    crp_draw,
    simulate_panel,
    simulate_poinar,
    stationary_mean,
    stick_breaking,
)
from .panel import CountPanel, SeasonSummary
from .sampler import (
    PosteriorDraws,
    SamplerConfig,
    SuffStats,
    innovation_pmf,
    run_chain,
    run_chains,
    sample_concentration,
    sample_innovation,
    sample_memberships,
    sample_seasonals,
    sample_thinnings,
    sample_unique_rates,
)

__all__ = [
    "__version__",
    "CountPanel",
    "SeasonSummary",
    "Hyperparams",
    "ModelState",
    "binomial_thin",
    "simulate_poinar",
    "simulate_panel",
    "crp_draw",
    "stick_breaking",
    "stationary_mean",
    "SamplerConfig",
    "SuffStats",
    "PosteriorDraws",
    "innovation_pmf",
    "sample_innovation",
    "sample_memberships",
    "sample_unique_rates",
    "sample_seasonals",
    "sample_thinnings",
    "sample_concentration",
    "run_chain",
    "run_chains",
    "ForecastDistribution",
    "conditional_mean_one_step",
    "conditional_mean_h_step",
    "predictive_pmf",
    "posterior_predictive",
    "quantile",
    "ClsEstimate",
    "cls_fit",
    "cls_forecast",
    "spp_fit_forecast",
    "psrf",
    "hamming_error",
    "representative_assignment",
    "cluster_count_histogram",
    "forecast_metrics",
    "EvalReport",
    "Scenario",
    "benchmark_scenarios",
    "run_study",
]
