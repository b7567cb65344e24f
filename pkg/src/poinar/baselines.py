"""Per-series baseline estimators: conditional least squares and the
simple Poisson-process (series-average) predictor.

The CLS estimator minimizes the one-step squared prediction error
sum_t (y_t - alpha*y_{t-1} - lam*theta_{s(t)})^2 subject to the seasonal
effects summing to one, by cycling through the stationarity conditions of the
Lagrangian: a joint (lam, alpha) solve given theta, then the constrained
theta solve given (alpha, lam).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forecast import conditional_mean_h_step
from .panel import N_MONTHS

_THETA_FLOOR = 1e-8


class DegenerateSeriesError(ValueError):
    """Raised when a series carries no signal the CLS model can fit."""


@dataclass
class ClsEstimate:
    """CLS parameter estimates for one series.

    ``theta`` always sums to one. ``projected`` flags fits where a negative
    seasonal update had to be floored and renormalized.
    """

    alpha: float
    lam: float
    theta: np.ndarray
    sse: float
    iterations: int
    converged: bool
    projected: bool = False
    sse_trace: list[float] = field(default_factory=list)


def cls_sse(series, season_of, alpha: float, lam: float, theta) -> float:
    """One-step squared prediction error of the given parameters."""
    y = np.asarray(series, dtype=float)
    theta = np.asarray(theta, dtype=float)
    th = theta[np.asarray(season_of, dtype=np.int64)[1:] - 1]
    resid = y[1:] - alpha * y[:-1] - lam * th
    return float(resid @ resid)


def cls_fit(
    series,
    season_of,
    init: tuple[float, float, np.ndarray] | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
    record_sse: bool = False,
) -> ClsEstimate:
    """Fit one series by cyclic CLS updates.

    Parameters
    ----------
    series : sequence of int
        Counts of length T >= 14 and not identically zero.
    season_of : sequence of int
        Month (1..12) of each week.
    init : (alpha, lam, theta), optional
        Starting values; defaults to alpha=0.2, lam=mean(series) and a flat
        seasonal vector.
    tol : float
        Convergence threshold on the largest absolute parameter change.
    record_sse : bool
        Keep the SSE after every block update in ``sse_trace`` (each block is
        an exact coordinate minimizer, so the trace is nonincreasing except
        when a floor projection fires).
    """
    y = np.asarray(series, dtype=float)
    T = y.shape[0]
    if T < 14:
        raise ValueError("need at least 14 observations to identify the CLS model")
    if not np.any(y > 0):
        raise DegenerateSeriesError("series is identically zero")
    months = np.asarray(season_of, dtype=np.int64)
    if months.shape[0] != T:
        raise ValueError("season_of must cover every week")

    m_t = months[1:] - 1
    y_lag = y[:-1]
    y_cur = y[1:]
    n_i = np.bincount(m_t, minlength=N_MONTHS).astype(float)
    present = n_i > 0

    if init is None:
        alpha, lam = 0.2, float(y.mean())
        theta = np.full(N_MONTHS, 1.0 / N_MONTHS)
    else:
        alpha, lam = float(init[0]), float(init[1])
        theta = np.asarray(init[2], dtype=float).copy()

    s_y2 = float(y_lag @ y_lag)
    s_yy = float(y_cur @ y_lag)
    projected = False
    converged = False
    trace = [cls_sse(y, months, alpha, lam, theta)] if record_sse else []

    it = 0
    for it in range(1, max_iter + 1):
        alpha_old, lam_old, theta_old = alpha, lam, theta.copy()

        # joint (lam, alpha) minimizer given theta
        th_t = theta[m_t]
        s_th2 = float(th_t @ th_t)
        s_yth = float(y_cur @ th_t)
        s_lagth = float(y_lag @ th_t)
        denom = s_y2 * s_th2 - s_lagth**2
        if denom > 1e-12 * max(s_y2 * s_th2, 1.0):
            lam = (s_y2 * s_yth - s_yy * s_lagth) / denom
        if s_y2 > 0:
            alpha = (s_yy - lam * s_lagth) / s_y2
        if record_sse:
            trace.append(cls_sse(y, months, alpha, lam, theta))

        # constrained theta minimizer given (alpha, lam)
        if abs(lam) > 1e-12:
            d_i = np.bincount(m_t, weights=y_cur - alpha * y_lag, minlength=N_MONTHS)
            inv_n = np.where(present, 1.0 / np.where(present, n_i, 1.0), 0.0)
            c = 2.0 * lam / inv_n.sum() * (float((d_i * inv_n).sum()) - lam)
            theta = np.where(present, (2.0 * lam * d_i - c) / (2.0 * lam**2 * np.where(present, n_i, 1.0)), 0.0)
            if np.any(theta[present] < 0):
                theta[present] = np.maximum(theta[present], _THETA_FLOOR)
                theta[present] /= theta[present].sum()
                projected = True
        if record_sse:
            trace.append(cls_sse(y, months, alpha, lam, theta))

        delta = max(abs(alpha - alpha_old), abs(lam - lam_old), float(np.abs(theta - theta_old).max()))
        if delta < tol:
            converged = True
            break

    return ClsEstimate(
        alpha=alpha,
        lam=lam,
        theta=theta,
        sse=cls_sse(y, months, alpha, lam, theta),
        iterations=it,
        converged=converged,
        projected=projected,
        sse_trace=trace,
    )


def cls_forecast(est: ClsEstimate, y_T: float, future_months) -> float:
    """Plug the CLS estimates into the h-step conditional mean; pass a single
    month for a one-step forecast or a sequence for an h-step one."""
    return conditional_mean_h_step(y_T, est.alpha, est.lam, est.theta, future_months)


def spp_fit_forecast(series) -> float:
    """Constant-rate Poisson baseline: the predictor is the series average."""
    y = np.asarray(series, dtype=float)
    if y.shape[0] < 1:
        raise ValueError("need at least one observation")
    return float(y.mean())
