"""Dollar-denominated cost function: per-infection cost plus per-week
per-intervention costs with history-dependent school, testing, and tracing
terms. All amounts are USD2020 per capita; no temporal discounting."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ingest import PolicySchedule
from .params import (
    DISTANCING_SIX,
    MASKS,
    SCHOOL,
    TESTING,
    TRACING,
    WORKPLACE,
    EconParams,
)

__all__ = [
    "CostBreakdown",
    "SchoolClosureLedger",
    "infection_cost",
    "school_cost_week",
    "workplace_cost_week",
    "distancing_cost_week",
    "mask_test_trace_cost_week",
    "policy_cost",
]

COMPONENTS = ("infection", "school", "workplace", "distancing", "mask", "test", "trace")

WEEKS_PER_YEAR = 52.0
SCHOOL_YEAR_WEEKS = 36.0  # 52 minus the usual 16 weeks of break
LEARNING_FREE_WEEKS = 16.0  # closure up to a year's breaks costs no learning
LEARNING_MAX_YEARS = 0.35
# linear decay horizon calibrated so the discrete weekly schedule accrues
# exactly the 0.35-school-year cap over a full year of closure
LEARNING_DECAY_WEEKS = 24.2
LEARNING_UNIT_YEARS = 0.33  # the GDP fractions are quoted per 0.33 school-years


@dataclass
class CostBreakdown:
    """Per-capita dollar decomposition of one policy evaluation."""

    infection: float = 0.0
    school: float = 0.0
    workplace: float = 0.0
    distancing: float = 0.0
    mask: float = 0.0
    test: float = 0.0
    trace: float = 0.0

    @property
    def total(self) -> float:
        return sum(getattr(self, k) for k in COMPONENTS)

    @property
    def npi_total(self) -> float:
        return self.total - self.infection

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in COMPONENTS}
        out["total"] = self.total
        return out

    def __add__(self, other: "CostBreakdown") -> "CostBreakdown":
        return CostBreakdown(**{k: getattr(self, k) + getattr(other, k) for k in COMPONENTS})


@dataclass(frozen=True)
class SchoolClosureLedger:
    """Cumulative closure history driving the learning-loss schedule."""

    cumulative_closure_weeks: float = 0.0
    accrued_loss_school_weeks: float = 0.0

    def __post_init__(self):
        if self.accrued_loss_school_weeks > LEARNING_MAX_YEARS * SCHOOL_YEAR_WEEKS + 1e-9:
            raise ValueError("accrued learning loss exceeds the 0.35 school-year cap")

    @property
    def accrued_loss_school_years(self) -> float:
        return self.accrued_loss_school_weeks / SCHOOL_YEAR_WEEKS


def infection_cost(econ: EconParams, iota_mean: float) -> float:
    """Average dollar cost of one infection.

    Life cost at the statistical-death value times the IFR, medical treatment,
    one week of sick-day productivity at median income, and the fear-driven
    voluntary-distancing employment drop over the infectious period.
    """
    if not 0.0 < iota_mean < 1.0:
        raise ValueError("mean IFR must lie in (0, 1)")
    life = econ.vscd * iota_mean
    productivity = econ.median_income / WEEKS_PER_YEAR
    fear = (
        econ.fear_emp_drop_per_milli_prev
        * 1000.0
        * econ.median_income
        * (econ.infectious_days / 365.0)
    )
    return life + econ.medical_cost + productivity + fear


def school_cost_week(
    u_school: float, ledger: SchoolClosureLedger, econ: EconParams
) -> tuple[float, SchoolClosureLedger]:
    """One week of school closure at strength u: direct absenteeism GDP loss
    plus learning loss once cumulative closure passes the free threshold.

    The per-week learning loss starts at one school-week and decays linearly
    to zero over LEARNING_DECAY_WEEKS of further closure, so the accrued total
    caps at 0.35 school-years.
    """
    direct = (econ.school_direct_gdp_frac / 4.0) * econ.gdp_per_capita * u_school
    past = ledger.cumulative_closure_weeks
    loss_weeks = 0.0
    if past >= LEARNING_FREE_WEEKS:
        j = past - LEARNING_FREE_WEEKS
        loss_weeks = u_school * max(0.0, 1.0 - j / LEARNING_DECAY_WEEKS)
    cap = LEARNING_MAX_YEARS * SCHOOL_YEAR_WEEKS
    loss_weeks = min(loss_weeks, cap - ledger.accrued_loss_school_weeks)
    loss_years = loss_weeks / SCHOOL_YEAR_WEEKS
    learning = econ.gdp_per_capita * econ.learning_loss_gdp_frac * (loss_years / LEARNING_UNIT_YEARS)
    new_ledger = SchoolClosureLedger(
        cumulative_closure_weeks=past + u_school,
        accrued_loss_school_weeks=ledger.accrued_loss_school_weeks + loss_weeks,
    )
    return direct + learning, new_ledger


def workplace_cost_week(u: float, econ: EconParams) -> float:
    """Employment-rate drop scenario times one week of median income."""
    return econ.workplace_emp_drop * u * econ.median_income / WEEKS_PER_YEAR


def distancing_cost_week(u_six, econ: EconParams) -> float:
    """The six blanket measures are priced as one bundle at their mean strength."""
    u_six = np.asarray(u_six, dtype=np.float64)
    if u_six.shape != (6,):
        raise ValueError("expected the six distancing-bundle strengths")
    if np.any(u_six < 0) or np.any(u_six > 1):
        raise ValueError("strengths must lie in [0, 1]")
    return econ.distancing_emp_drop * float(u_six.mean()) * econ.median_income / WEEKS_PER_YEAR


def mask_test_trace_cost_week(
    u_mask: float,
    u_test: float,
    u_trace: float,
    test_weeks_past: float,
    trace_weeks_past: float,
    econ: EconParams,
) -> tuple[float, float, float]:
    """Weekly mask/test/trace costs given cumulative past policy-weeks.

    Testing volume ramps linearly with past weeks under the testing policy
    (49 = 7 days times 7 days/week converts the daily-capacity slope to weekly
    volume); tracing capacity ramps linearly in cases interviewed per 100k.
    """
    mask = 7.0 * econ.mask_daily * u_mask
    weekly_tests_per_capita = 49.0 * econ.test_ramp_rate * test_weeks_past / 1e6
    test = econ.test_cost * weekly_tests_per_capita * u_test
    traced_per_capita = econ.trace_ramp * trace_weeks_past / 1e5
    trace = econ.trace_cost_per_case * traced_per_capita * u_trace
    return mask, test, trace


def policy_cost(schedule: PolicySchedule, econ: EconParams) -> tuple[CostBreakdown, np.ndarray]:
    """Total and per-week intervention costs of a schedule (infections excluded).

    Returns (totals, weekly) where weekly[w] holds the combined intervention
    cost of week w; the three history ledgers are threaded in week order.
    """
    u = schedule.u
    n_weeks = u.shape[0]
    ledger = SchoolClosureLedger()
    test_weeks = 0.0
    trace_weeks = 0.0
    totals = CostBreakdown()
    weekly = np.zeros(n_weeks)
    for w in range(n_weeks):
        school, ledger = school_cost_week(float(u[w, SCHOOL]), ledger, econ)
        workplace = workplace_cost_week(float(u[w, WORKPLACE]), econ)
        distancing = distancing_cost_week(u[w, list(DISTANCING_SIX)], econ)
        mask, test, trace = mask_test_trace_cost_week(
            float(u[w, MASKS]), float(u[w, TESTING]), float(u[w, TRACING]),
            test_weeks, trace_weeks, econ,
        )
        test_weeks += float(u[w, TESTING])
        trace_weeks += float(u[w, TRACING])
        week_cost = CostBreakdown(
            school=school, workplace=workplace, distancing=distancing,
            mask=mask, test=test, trace=trace,
        )
        totals = totals + week_cost
        weekly[w] = week_cost.total
    return totals, weekly
