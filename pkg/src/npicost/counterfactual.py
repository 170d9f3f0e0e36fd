"""Simulate trajectories under arbitrary schedules conditional on posterior
draws (coefficients plus inferred residual shocks) and price them by Monte
Carlo, with common random numbers across policies."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .costs import CostBreakdown, infection_cost, policy_cost
from .epi import Trajectory
from .ingest import PolicySchedule
from .params import SCHOOL, EconParams, EpiParams
from .regression import COVARIATE_SCALES, RegionCoeffs, Stage2Result
from .stage1 import StageOneResult

__all__ = [
    "CounterfactualDraw",
    "PolicyOutcome",
    "build_draws",
    "simulate_policy",
    "expected_cost",
    "evaluate_named_policies",
    "named_schedules",
]


@dataclass
class CounterfactualDraw:
    """Everything one joint posterior draw needs to replay or rewrite history."""

    coeffs: np.ndarray  # (15,) regression coefficient vector
    phi: float
    sigma_eps: float
    nu_eps: float
    shocks: np.ndarray  # (W,) retained residual innovations
    init: np.ndarray  # (6,) day-0 compartments
    iota: float
    epi: EpiParams
    population: float
    fitted_log_r0: np.ndarray  # (W,) replay-canonical fitted path
    fitted_states: np.ndarray  # (n_days + 1, 6)

    @property
    def n_weeks(self) -> int:
        return self.shocks.shape[0]

    @property
    def n_days(self) -> int:
        return self.fitted_states.shape[0] - 1

    @property
    def region_coeffs(self) -> RegionCoeffs:
        return RegionCoeffs.from_vector(self.coeffs)


def build_draw(
    r0_by_week: np.ndarray,
    init: np.ndarray,
    iota: float,
    coeffs: np.ndarray,
    phi: float,
    sigma_eps: float,
    nu_eps: float,
    observed: PolicySchedule,
    epi: EpiParams,
    population: float,
    n_days: int | None = None,
) -> CounterfactualDraw:
    """Extract retained shocks for one draw against the observed schedule.

    The stored fitted path is the replay-canonical one (rebuilt through the
    same arithmetic simulate_policy uses), so replaying the observed schedule
    reproduces it bit for bit.
    """
    r0_by_week = np.asarray(r0_by_week, dtype=np.float64)
    n_days = n_days or 7 * r0_by_week.shape[0]
    epi_d = epi.with_iota(iota)
    shocks, states, r0_canon = kernels.extract_shocks(
        observed.u, coeffs, phi, np.log(r0_by_week), init,
        epi_d.delta, epi_d.gamma, epi_d.mu, iota, epi_d.r0_max,
        COVARIATE_SCALES, n_days,
    )
    return CounterfactualDraw(
        coeffs=np.asarray(coeffs, dtype=np.float64),
        phi=float(phi),
        sigma_eps=float(sigma_eps),
        nu_eps=float(nu_eps),
        shocks=shocks,
        init=np.asarray(init, dtype=np.float64),
        iota=float(iota),
        epi=epi_d,
        population=float(population),
        fitted_log_r0=np.log(r0_canon),
        fitted_states=states,
    )


def build_draws(
    stage1_draws,
    stage2: Stage2Result,
    region_index: int,
    observed: PolicySchedule,
    epi: EpiParams,
    seed: int = 0,
) -> list[CounterfactualDraw]:
    """Pair stage-one trajectory draws with stage-two coefficient draws."""
    if isinstance(stage1_draws, StageOneResult):
        stage1_draws = stage1_draws.draws
    rng = np.random.default_rng(seed)
    n2 = stage2.theta.shape[0]
    pick = rng.integers(0, n2, size=len(stage1_draws))
    out = []
    for d1, i2 in zip(stage1_draws, pick):
        out.append(
            build_draw(
                r0_by_week=d1.r0_by_week,
                init=d1.trajectory.states[0],
                iota=d1.iota,
                coeffs=stage2.region[i2, region_index],
                phi=float(stage2.phi[i2]),
                sigma_eps=float(stage2.sigma_eps[i2]),
                nu_eps=float(stage2.nu_eps[i2]),
                observed=observed,
                epi=epi,
                population=d1.trajectory.population,
                n_days=d1.trajectory.n_days,
            )
        )
    return out


def simulate_policy(
    draw: CounterfactualDraw,
    schedule: PolicySchedule,
    shock_mode: str = "retain",
    rng: np.random.Generator | None = None,
) -> Trajectory:
    """Week-by-week counterfactual: behavioral covariates feed back from the
    simulated path, the AR recursion adds this draw's shocks, and the weekly
    rate (capped at the prior bound) drives the SEIRD days."""
    if schedule.n_weeks != draw.n_weeks:
        raise ValueError("schedule does not cover the fitted horizon")
    if shock_mode == "retain":
        shocks = draw.shocks
    elif shock_mode == "resample":
        if rng is None:
            raise ValueError("resample mode needs an rng")
        shocks = draw.sigma_eps * rng.standard_t(draw.nu_eps, size=draw.n_weeks)
    else:
        raise ValueError(f"unknown shock mode {shock_mode!r}")
    epi = draw.epi
    states, nu_frac, r0w, _, _ = kernels.policy_simulate(
        schedule.u, draw.coeffs, draw.phi, shocks, draw.init,
        epi.delta, epi.gamma, epi.mu, draw.iota, epi.r0_max,
        COVARIATE_SCALES, draw.n_days,
    )
    return Trajectory(
        states=states, nu=draw.population * nu_frac, r0_by_week=r0w,
        population=draw.population,
    )


@dataclass
class PolicyOutcome:
    """Deaths and dollars for one schedule over a draw set."""

    schedule: PolicySchedule
    cost: CostBreakdown  # intervention components plus expected infection cost
    deaths_draws: np.ndarray  # (n_draws,) cumulative deaths over the window
    deaths_daily: np.ndarray  # (n_draws, n_days) expected reported deaths/day
    infections_draws: np.ndarray  # (n_draws,) total infections
    trajectories: list  # per-draw Trajectory (retained for downstream analyses)
    npi_weekly_cost: np.ndarray  # (n_weeks,)

    @property
    def expected_cost(self) -> float:
        return self.cost.total

    def deaths_quantiles(self, qs=(0.05, 0.5, 0.95)) -> np.ndarray:
        return np.quantile(self.deaths_draws, qs)

    def summary(self) -> dict:
        lo, med, hi = self.deaths_quantiles()
        return {
            "deaths_median": float(med),
            "deaths_q05": float(lo),
            "deaths_q95": float(hi),
            "expected_cost_per_capita": self.expected_cost,
            "cost_breakdown": self.cost.as_dict(),
        }


def expected_cost(
    schedule: PolicySchedule,
    draws: list[CounterfactualDraw],
    econ: EconParams,
    shock_mode: str = "retain",
    seed: int = 0,
) -> PolicyOutcome:
    """Monte Carlo policy cost: intervention terms plus the posterior-mean
    per-capita infection burden, with deaths summaries from the same draws."""
    if not draws:
        raise ValueError("need at least one draw")
    npi_cost, weekly = policy_cost(schedule, econ)
    iota_mean = float(np.mean([d.iota for d in draws]))
    c_nu = infection_cost(econ, iota_mean)
    rng = np.random.default_rng(seed)
    trajs = []
    infections = np.empty(len(draws))
    deaths = np.empty(len(draws))
    n_days = draws[0].n_days
    deaths_daily = np.empty((len(draws), n_days))
    for i, d in enumerate(draws):
        traj = simulate_policy(d, schedule, shock_mode, rng)
        trajs.append(traj)
        infections[i] = traj.nu.sum()
        deaths[i] = d.population * (traj.states[-1, 5] - traj.states[0, 5])
        deaths_daily[i] = traj.new_deaths(d.epi.mu)
    infection_component = c_nu * float(infections.mean()) / draws[0].population
    cost = replace(npi_cost, infection=infection_component)
    return PolicyOutcome(
        schedule=schedule,
        cost=cost,
        deaths_draws=deaths,
        deaths_daily=deaths_daily,
        infections_draws=infections,
        trajectories=trajs,
        npi_weekly_cost=weekly,
    )


def named_schedules(observed: PolicySchedule, oc: PolicySchedule | None = None) -> dict:
    """The standard comparison set: open, full lockdown, observed, observed
    without school closure, and (when available) the optimized schedule."""
    zeros = np.zeros_like(observed.u)
    ones = np.ones_like(observed.u)
    no_school = observed.u.copy()
    no_school[:, SCHOOL] = 0.0
    out = {
        "Open": replace(observed, u=zeros),
        "Full": replace(observed, u=ones),
        "Obs": observed,
        "Obs-school": replace(observed, u=no_school),
    }
    if oc is not None:
        out["OC"] = oc
    return out


def evaluate_named_policies(
    observed: PolicySchedule,
    draws: list[CounterfactualDraw],
    econ: EconParams,
    oc: PolicySchedule | None = None,
    shock_mode: str = "retain",
    seed: int = 0,
) -> dict:
    """PolicyOutcome per named policy, all on the same draw set."""
    return {
        name: expected_cost(sched, draws, econ, shock_mode, seed)
        for name, sched in named_schedules(observed, oc).items()
    }
