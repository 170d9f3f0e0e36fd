"""Observation model: zero-inflated negative binomial likelihoods on deaths and
cases, misreported-day marginalization, and the awaiting-confirmation pool."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import kernels
from .epi import Trajectory
from .ingest import ClinicalSeries

__all__ = [
    "ZinbParams",
    "CaseModelState",
    "zinb_log_pmf",
    "zinb_dispersion",
    "zinb_variance",
    "sample_zinb",
    "misreport_adjusted_means",
    "confirmation_step",
    "deaths_loglik",
    "cases_loglik",
]


@dataclass(frozen=True)
class ZinbParams:
    """Zero-inflation probability, dispersion scale, and mean-variance mixing."""

    theta: float
    kappa: float
    zeta: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.kappa <= 0.0:
            raise ValueError("kappa must be positive")
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError("zeta must lie in [0, 1]")


def zinb_dispersion(m: float, kappa: float, zeta: float) -> float:
    """NB2 dispersion phi(m) = kappa*m / (zeta*m + 1 - zeta).

    Gives var = m + m*(zeta*m + 1 - zeta)/kappa: linear in the mean at zeta=0
    (overdispersed-Poisson-like, var = m(1 + 1/kappa)) and quadratic at zeta=1
    (plain negative binomial, var = m + m^2/kappa).
    """
    return kappa * m / (zeta * m + (1.0 - zeta))


def zinb_variance(m: float, params: ZinbParams) -> float:
    """Variance of the non-inflated count component."""
    return m + m * (params.zeta * m + (1.0 - params.zeta)) / params.kappa


def zinb_log_pmf(d: int, m: float, params: ZinbParams) -> float:
    """Log probability of observing count d given mean m."""
    if m < 0:
        raise ValueError("mean must be nonnegative")
    return kernels.zinb_logpmf(int(d), float(m), params.theta, params.kappa, params.zeta)


def sample_zinb(m: float, params: ZinbParams, rng: np.random.Generator) -> int:
    """Draw one count (used by synthetic-data generators and MC checks)."""
    if rng.random() < params.theta:
        return 0
    if m <= 0:
        return 0
    phi = zinb_dispersion(m, params.kappa, params.zeta)
    # numpy negative_binomial: n successes, prob p, mean n(1-p)/p
    p = phi / (phi + m)
    return int(rng.negative_binomial(phi, p))


def misreport_adjusted_means(raw_means, theta: float, reported_positive) -> np.ndarray:
    """Condition each day's mean on the zero-run pattern behind it.

    A day at lag k behind the last positive-report day picks up
    sum_{j<k} theta^j * raw(t - j): counts from a misreported day surface on
    the first later day that reports accurately.
    """
    raw_means = np.asarray(raw_means, dtype=np.float64)
    if np.any(raw_means < 0):
        raise ValueError("raw means must be nonnegative")
    positive = np.asarray(reported_positive).astype(np.uint8)
    if positive.shape != raw_means.shape:
        raise ValueError("flag/mean length mismatch")
    return kernels.misreport_adjust(raw_means, positive, float(theta))


@dataclass
class CaseModelState:
    """Pool of infections awaiting confirmation and its observation pieces."""

    i_c: float  # persons awaiting confirmation
    tau: float  # 1/day confirmation rate
    car_by_week: np.ndarray
    sigma2_car: float = 1.0

    def __post_init__(self):
        if self.i_c < 0:
            raise ValueError("I_C must be nonnegative")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")

    @property
    def expected_cases(self) -> float:
        return self.tau * self.i_c


def confirmation_step(state: CaseModelState, nu: float, car: float) -> CaseModelState:
    """Advance the pool one day: decay by confirmation, add newly ascertained."""
    i_c = state.i_c * (1.0 - state.tau) + car * nu
    return CaseModelState(
        i_c=i_c, tau=state.tau, car_by_week=state.car_by_week, sigma2_car=state.sigma2_car
    )


def _window_check(traj: Trajectory, data: ClinicalSeries) -> int:
    n = len(data.deaths)
    if traj.n_days < n:
        raise ValueError(f"trajectory covers {traj.n_days} days < data window {n}")
    return n


def deaths_loglik(traj: Trajectory, data: ClinicalSeries, params: ZinbParams, mu: float) -> float:
    """ZINB log likelihood of the death series, plus the pre-window Poisson term.

    Raw day-t mean is N*mu*R_D(t); zero-run adjustment is recomputed here per
    call because theta is a sampled parameter.
    """
    n = _window_check(traj, data)
    deaths = np.asarray(data.deaths, dtype=np.int64)
    raw = traj.population * mu * traj.states[:n, 4]
    adj = kernels.misreport_adjust(raw, (deaths > 0).astype(np.uint8), params.theta)
    ll = kernels.zinb_loglik(deaths, adj, params.theta, params.kappa, params.zeta)
    lam = traj.population * (traj.states[0, 4] + traj.states[0, 5])
    ll += stats.poisson.logpmf(data.prior_cumulative_deaths, lam)
    return float(ll)


def cases_loglik(
    traj: Trajectory, case_state: CaseModelState, data: ClinicalSeries, params: ZinbParams
) -> float:
    """ZINB log likelihood of the case series through the confirmation pool."""
    n = _window_check(traj, data)
    cases = np.asarray(data.cases, dtype=np.int64)
    car_daily = np.repeat(case_state.car_by_week, 7)[:n]
    if car_daily.shape[0] != n:
        raise ValueError("CAR path does not cover the data window")
    m_c = kernels.case_means(traj.nu[:n], car_daily, case_state.tau, case_state.i_c)
    adj = kernels.misreport_adjust(m_c, (cases > 0).astype(np.uint8), params.theta)
    return float(kernels.zinb_loglik(cases, adj, params.theta, params.kappa, params.zeta))
