"""Infections averted, ICER, and the standardized ICER in cumulative and
weekly forms, relative to the fully open policy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .counterfactual import CounterfactualDraw, PolicyOutcome, expected_cost, named_schedules
from .costs import infection_cost
from .epi import Trajectory
from .ingest import PolicySchedule
from .params import EconParams

__all__ = ["SicerSeries", "infections_averted", "sicer", "icer_per_death_averted"]


@dataclass
class SicerSeries:
    """Break-even-normalized cost-effectiveness over a day window.

    Values above 1 mean the priced value of infections averted in the window
    exceeds the intervention spend there.
    """

    window: tuple
    nu_averted: np.ndarray  # (n_days_in_window,) posterior-median averted/day
    sicer_draws: np.ndarray  # per-draw dimensionless ratio
    icer_draws: np.ndarray  # per-draw USD per infection averted

    @property
    def sicer_median(self) -> float:
        return float(np.median(self.sicer_draws))

    def sicer_quantiles(self, qs=(0.25, 0.5, 0.75)) -> np.ndarray:
        return np.quantile(self.sicer_draws, qs)


def infections_averted(
    traj_policy: Trajectory,
    traj_open: Trajectory,
    population: float,
    use_open_infectious: bool = False,
) -> np.ndarray:
    """Daily infections averted: N * I(t) * (Re_open(t) - Re_policy(t)).

    I(t) comes from the policy trajectory unless use_open_infectious is set;
    each effective reproduction number comes from its own trajectory.
    """
    if traj_policy.n_days != traj_open.n_days:
        raise ValueError("trajectories must share the day grid")
    infectious = (traj_open if use_open_infectious else traj_policy).states[:-1, 2]
    return population * infectious * (traj_open.re - traj_policy.re)


def _window_weeks(window: tuple, n_days: int) -> tuple:
    t1, t2 = window
    if not (0 <= t1 <= t2 < n_days):
        raise ValueError(f"window {window} outside the {n_days}-day horizon")
    return int(t1), int(t2)


def sicer(
    schedule: PolicySchedule,
    draws: list[CounterfactualDraw],
    econ: EconParams,
    window: tuple | None = None,
    outcome: PolicyOutcome | None = None,
    open_outcome: PolicyOutcome | None = None,
    use_open_infectious: bool = False,
    shock_mode: str = "retain",
    seed: int = 0,
) -> SicerSeries:
    """Standardized ICER of a schedule against open over a day window.

    The intervention spend for the window sums the weekly cost terms of the
    full-history evaluation (ledgers threaded from week one), matching the
    convention that each week is priced conditional on the policy having run
    in all prior weeks.
    """
    if outcome is None:
        outcome = expected_cost(schedule, draws, econ, shock_mode, seed)
    if open_outcome is None:
        open_sched = named_schedules(schedule)["Open"]
        open_outcome = expected_cost(open_sched, draws, econ, shock_mode, seed)
    n_days = draws[0].n_days
    t1, t2 = _window_weeks(window or (0, n_days - 1), n_days)

    w1, w2 = t1 // 7, t2 // 7
    npi_window = float(outcome.npi_weekly_cost[w1 : w2 + 1].sum())
    if npi_window <= 0.0:
        raise ValueError(
            "intervention cost is zero over the window; the open policy cannot "
            "be its own comparator"
        )

    iota_mean = float(np.mean([d.iota for d in draws]))
    c_nu = infection_cost(econ, iota_mean)
    population = draws[0].population
    denom = npi_window * population

    n = len(draws)
    sicer_draws = np.empty(n)
    icer_draws = np.empty(n)
    averted = np.empty((n, t2 - t1 + 1))
    for i in range(n):
        nu_a = infections_averted(
            outcome.trajectories[i], open_outcome.trajectories[i], population,
            use_open_infectious,
        )[t1 : t2 + 1]
        averted[i] = nu_a
        total = float(nu_a.sum())
        sicer_draws[i] = c_nu * total / denom
        icer_draws[i] = denom / total if total != 0.0 else np.inf
    return SicerSeries(
        window=(t1, t2),
        nu_averted=np.median(averted, axis=0),
        sicer_draws=sicer_draws,
        icer_draws=icer_draws,
    )


def sicer_cumulative_series(
    schedule: PolicySchedule,
    draws: list[CounterfactualDraw],
    econ: EconParams,
    outcome: PolicyOutcome | None = None,
    open_outcome: PolicyOutcome | None = None,
    **kw,
) -> list[SicerSeries]:
    """SICER(1, t) at each week end, per the cumulative plots."""
    if outcome is None:
        outcome = expected_cost(schedule, draws, econ, kw.get("shock_mode", "retain"), kw.get("seed", 0))
    if open_outcome is None:
        open_sched = named_schedules(schedule)["Open"]
        open_outcome = expected_cost(open_sched, draws, econ, kw.get("shock_mode", "retain"), kw.get("seed", 0))
    n_days = draws[0].n_days
    out = []
    for w in range(schedule.n_weeks):
        t2 = min(7 * (w + 1), n_days) - 1
        out.append(
            sicer(schedule, draws, econ, window=(0, t2), outcome=outcome,
                  open_outcome=open_outcome, **kw)
        )
    return out


def sicer_weekly_series(
    schedule: PolicySchedule,
    draws: list[CounterfactualDraw],
    econ: EconParams,
    outcome: PolicyOutcome | None = None,
    open_outcome: PolicyOutcome | None = None,
    **kw,
) -> list[SicerSeries]:
    """Week-w SICER conditional on the policy having run in all prior weeks."""
    if outcome is None:
        outcome = expected_cost(schedule, draws, econ, kw.get("shock_mode", "retain"), kw.get("seed", 0))
    if open_outcome is None:
        open_sched = named_schedules(schedule)["Open"]
        open_outcome = expected_cost(open_sched, draws, econ, kw.get("shock_mode", "retain"), kw.get("seed", 0))
    n_days = draws[0].n_days
    out = []
    for w in range(schedule.n_weeks):
        t1 = 7 * w
        t2 = min(7 * (w + 1), n_days) - 1
        try:
            out.append(
                sicer(schedule, draws, econ, window=(t1, t2), outcome=outcome,
                      open_outcome=open_outcome, **kw)
            )
        except ValueError:
            out.append(None)  # week with zero intervention spend
    return out


def icer_per_death_averted(
    outcome: PolicyOutcome, baseline: PolicyOutcome, population: float
) -> np.ndarray:
    """Per-draw USD per death prevented relative to a baseline policy."""
    extra_cost = (outcome.cost.npi_total - baseline.cost.npi_total) * population
    deaths_averted = baseline.deaths_draws - outcome.deaths_draws
    with np.errstate(divide="ignore"):
        return np.where(deaths_averted != 0, extra_cost / deaths_averted, np.inf)
