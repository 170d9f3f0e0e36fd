"""Biological and monetary constants shared across the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

# Canonical order of the 11 intervention indicators. Every schedule matrix,
# coefficient vector, and cost routine indexes interventions in this order.
NPI_NAMES = (
    "school",
    "workplace",
    "events",
    "gatherings",
    "transit",
    "stay_home",
    "internal_movement",
    "info_campaigns",
    "testing",
    "tracing",
    "masks",
)
N_NPI = len(NPI_NAMES)

SCHOOL = NPI_NAMES.index("school")
WORKPLACE = NPI_NAMES.index("workplace")
TESTING = NPI_NAMES.index("testing")
TRACING = NPI_NAMES.index("tracing")
MASKS = NPI_NAMES.index("masks")
# The six blanket measures priced as one social-distancing bundle.
DISTANCING_SIX = tuple(
    NPI_NAMES.index(k)
    for k in ("events", "gatherings", "transit", "stay_home", "internal_movement", "info_campaigns")
)


@dataclass(frozen=True)
class EpiParams:
    """Disease progression constants (times in days) plus the region IFR."""

    iota: float
    delta_inv: float = 5.5
    gamma_inv: float = 5.0
    mu_inv: float = 10.5
    r0_max: float = 6.5
    report_to_death_mean: float = 8.053
    report_to_death_sd: float = 4.116

    def __post_init__(self):
        for name in ("delta_inv", "gamma_inv", "mu_inv", "r0_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.iota < 1.0:
            raise ValueError("iota must lie in (0, 1)")

    @property
    def delta(self) -> float:
        return 1.0 / self.delta_inv

    @property
    def gamma(self) -> float:
        return 1.0 / self.gamma_inv

    @property
    def mu(self) -> float:
        return 1.0 / self.mu_inv

    @property
    def tau_d(self) -> float:
        """Mean exposure-to-death time; the sum of the three stage durations."""
        return self.delta_inv + self.gamma_inv + self.mu_inv

    @property
    def beta_max(self) -> float:
        return self.gamma * self.r0_max

    def with_iota(self, iota: float) -> "EpiParams":
        return replace(self, iota=iota)


VSCD_SCENARIOS = {"low": 4.47e6, "high": 10.63e6}
LEARNING_SCENARIOS = {"low": 0.09, "high": 0.69}  # GDP fraction per 0.33 school-years
WORKPLACE_SCENARIOS = {"low": 0.02, "mid": 0.04, "high": 0.06}  # employment-rate drop

US_MEDIAN_INCOME = 35_980.0  # 2019 US median personal income, USD


@dataclass(frozen=True)
class EconParams:
    """Dollar-valued constants for one region and one cost scenario.

    All dollar amounts are USD2020 and, where per-period, per week. No
    temporal discounting is applied anywhere.
    """

    median_income: float
    gdp_per_capita: float
    test_ramp_rate: float  # additional daily tests per million population, per day
    vscd: float = VSCD_SCENARIOS["low"]
    medical_cost: float = 3_045.0
    learning_loss_gdp_frac: float = LEARNING_SCENARIOS["low"]
    school_direct_gdp_frac: float = 0.002  # of GDP per four weeks of full closure
    workplace_emp_drop: float = WORKPLACE_SCENARIOS["mid"]
    distancing_emp_drop: float = 0.04
    mask_daily: float = 0.32
    test_cost: float = 100.0
    trace_cost_per_case: float = 66.50
    trace_ramp: float = 4.72  # cases interviewed per 100k population per week, per week
    fear_emp_drop_per_milli_prev: float = 0.0042
    infectious_days: float = 5.0  # duration the fear-driven employment drop persists
    scenario: dict = field(default_factory=dict)

    def __post_init__(self):
        numeric = (
            "median_income", "gdp_per_capita", "test_ramp_rate", "vscd", "medical_cost",
            "learning_loss_gdp_frac", "school_direct_gdp_frac", "workplace_emp_drop",
            "distancing_emp_drop", "mask_daily", "test_cost", "trace_cost_per_case",
            "trace_ramp", "fear_emp_drop_per_milli_prev", "infectious_days",
        )
        for name in numeric:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def from_scenario(
        cls,
        median_income: float,
        gdp_per_capita: float,
        test_ramp_rate: float,
        vscd: str = "low",
        learning: str = "low",
        workplace: str = "mid",
        **overrides,
    ) -> "EconParams":
        """Build params from the named sensitivity-scenario selectors."""
        if vscd not in VSCD_SCENARIOS:
            raise ValueError(f"unknown vscd scenario {vscd!r}")
        if learning not in LEARNING_SCENARIOS:
            raise ValueError(f"unknown learning scenario {learning!r}")
        if workplace not in WORKPLACE_SCENARIOS:
            raise ValueError(f"unknown workplace scenario {workplace!r}")
        return cls(
            median_income=median_income,
            gdp_per_capita=gdp_per_capita,
            test_ramp_rate=test_ramp_rate,
            vscd=VSCD_SCENARIOS[vscd],
            learning_loss_gdp_frac=LEARNING_SCENARIOS[learning],
            workplace_emp_drop=WORKPLACE_SCENARIOS[workplace],
            scenario={"vscd": vscd, "learning": learning, "workplace": workplace},
            **overrides,
        )
