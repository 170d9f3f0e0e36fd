"""Parse and repair clinical, policy, and testing CSV feeds into model-ready series.

All functions are pure over their inputs; regions can be processed in parallel.
The canonical internal form is one JSON document per region (see
write_region_document for the schema).
"""

from __future__ import annotations

import datetime as dt
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .params import N_NPI, NPI_NAMES

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

# Ordinal ceilings and geographic-scope flags of the 11 tracked indicators.
# flagged=True means the feed carries a general/targeted flag for it.
INDICATOR_LEVELS: dict[str, int] = {
    "school": 3,
    "workplace": 3,
    "events": 2,
    "gatherings": 4,
    "transit": 2,
    "stay_home": 3,
    "internal_movement": 2,
    "info_campaigns": 2,
    "testing": 3,
    "tracing": 2,
    "masks": 4,
}
INDICATOR_FLAGGED: dict[str, bool] = {
    name: name not in ("testing", "tracing") for name in NPI_NAMES
}

CLINICAL_COLUMNS = {
    "date": "date",
    "cumulative_deaths": "cumulative_deaths",
    "cumulative_cases": "cumulative_cases",
    "region": "region",
}
POLICY_COLUMNS = {
    "date": "date",
    "indicator": "indicator",
    "level": "level",
    "flag": "flag",
    "region": "region",
}


@dataclass
class ClinicalSeries:
    """Daily death/case increments for one region's modeling window."""

    region_id: str
    dates: list  # contiguous datetime.date, one per modeled day
    deaths: np.ndarray  # nonnegative ints per day
    cases: np.ndarray
    prior_cumulative_deaths: int
    population: int

    def __post_init__(self):
        self.deaths = np.asarray(self.deaths, dtype=np.int64)
        self.cases = np.asarray(self.cases, dtype=np.int64)
        if np.any(self.deaths < 0) or np.any(self.cases < 0):
            raise ValueError("daily counts must be nonnegative after repair")
        if len(self.dates) != len(self.deaths) or len(self.deaths) != len(self.cases):
            raise ValueError("dates/deaths/cases lengths differ")
        for a, b in zip(self.dates, self.dates[1:]):
            if (b - a).days != 1:
                raise ValueError(f"dates not contiguous at {a} -> {b}")
        if self.population <= 0:
            raise ValueError("population must be positive")

    @property
    def n_days(self) -> int:
        return len(self.deaths)


@dataclass
class PolicySchedule:
    """Weekly strengths in [0, 1] for the 11 interventions, strictest = 1."""

    region_id: str
    week_starts: list  # datetime.date of each week's first day
    u: np.ndarray  # (n_weeks, 11)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.ndim != 2 or self.u.shape[1] != N_NPI:
            raise ValueError(f"u must be (weeks, {N_NPI})")
        if np.any(self.u < 0) or np.any(self.u > 1):
            raise ValueError("policy strengths must lie in [0, 1]")
        if len(self.week_starts) != self.u.shape[0]:
            raise ValueError("week_starts length != week count")

    @property
    def n_weeks(self) -> int:
        return self.u.shape[0]


@dataclass
class TestRamp:
    """Linear growth rate of daily testing capacity, per million per day."""

    region_id: str
    daily_rate_increase: float
    fit_r_squared: float

    def __post_init__(self):
        if self.daily_rate_increase <= 0:
            raise ValueError("test ramp rate must be positive")
        if not 0.0 <= self.fit_r_squared <= 1.0 + 1e-12:
            raise ValueError("R^2 outside [0, 1]")
        if self.fit_r_squared < 0.97:
            logger.warning(
                "test-ramp quadratic fit R^2=%.4f below 0.97 for %s",
                self.fit_r_squared,
                self.region_id,
            )


def repair_cumulative(cumulative, prior: float = 0) -> tuple[np.ndarray, int, float]:
    """Make a cumulative series non-decreasing by zeroing earlier incident counts.

    A day reporting a drop is taken as correct; whole prior days' increments
    are zeroed (most recent first) until the running total no longer exceeds
    it. Returns (daily increments, number of drop days repaired, adjusted
    prior cumulative). Idempotent, and increments always sum to
    final-cumulative minus the adjusted prior.
    """
    cum = np.asarray(cumulative, dtype=np.float64)
    daily = np.zeros(cum.shape[0], dtype=np.float64)
    running = float(prior)
    adjusted_prior = float(prior)
    repairs = 0
    for t in range(cum.shape[0]):
        inc = cum[t] - running
        if inc >= 0:
            daily[t] = inc
            running = cum[t]
            continue
        repairs += 1
        s = t - 1
        while running > cum[t] and s >= 0:
            running -= daily[s]
            daily[s] = 0.0
            s -= 1
        if running > cum[t]:
            logger.warning(
                "cumulative drop below the pre-window total (%s -> %s); lowering it",
                adjusted_prior,
                cum[t],
            )
            adjusted_prior -= running - cum[t]
            running = cum[t]
        daily[t] = cum[t] - running
        running = cum[t]
    return daily, repairs, adjusted_prior


def _parse_dates(raw: pd.Series) -> pd.Series:
    parsed = pd.to_datetime(raw, format="ISO8601", errors="coerce")
    if parsed.isna().any():
        row = int(np.flatnonzero(parsed.isna().to_numpy())[0])
        raise ValueError(f"malformed date {raw.iloc[row]!r} at row {row + 2}")
    return parsed.dt.date


def _load_csv(path, region: str, colmap: dict, required: tuple) -> pd.DataFrame:
    cols = dict(colmap)
    df = pd.read_csv(path)
    missing = [cols[k] for k in required if cols[k] not in df.columns]
    if missing:
        raise ValueError(f"missing columns {missing} in {path}")
    if cols["region"] in df.columns:
        df = df[df[cols["region"]].astype(str) == region]
        if df.empty:
            raise ValueError(f"no rows for region {region!r} in {path}")
    df = df.reset_index(drop=True)
    df["_date"] = _parse_dates(df[cols["date"]])
    return df.sort_values("_date").reset_index(drop=True)


def _reindex_daily(dates: pd.Series, values: pd.Series) -> tuple[list, np.ndarray]:
    """Fill any calendar gaps by carrying the last observation forward."""
    s = pd.Series(values.to_numpy(), index=pd.to_datetime(dates.to_numpy()))
    s = s[~s.index.duplicated(keep="last")]
    full = pd.date_range(s.index.min(), s.index.max(), freq="D")
    s = s.reindex(full).ffill().fillna(0.0)
    return [d.date() for d in full], s.to_numpy(dtype=np.float64)


MODEL_START_LEAD_DAYS = 21
MODEL_START_DEATHS = 1  # window starts 21 days before the first day with more


def load_clinical_series(
    path, region: str, population: int, colmap: dict | None = None
) -> ClinicalSeries:
    """Load and repair one region's cumulative deaths/cases feed.

    The modeling window opens MODEL_START_LEAD_DAYS before the first day whose
    repaired daily deaths exceed MODEL_START_DEATHS; deaths cumulated before
    the window become prior_cumulative_deaths.
    """
    cols = {**CLINICAL_COLUMNS, **(colmap or {})}
    df = _load_csv(path, region, cols, ("date", "cumulative_deaths", "cumulative_cases"))
    dates, cum_d = _reindex_daily(df["_date"], df[cols["cumulative_deaths"]])
    _, cum_c = _reindex_daily(df["_date"], df[cols["cumulative_cases"]])

    deaths, rep_d, prior0 = repair_cumulative(cum_d, prior=0)
    cases, rep_c, _ = repair_cumulative(cum_c, prior=0)
    if rep_d or rep_c:
        logger.info(
            "%s: repaired %d death and %d case cumulative drops", region, rep_d, rep_c
        )

    above = np.flatnonzero(deaths > MODEL_START_DEATHS)
    if above.size == 0:
        raise ValueError(f"{region}: no day with more than {MODEL_START_DEATHS} deaths")
    start = max(0, int(above[0]) - MODEL_START_LEAD_DAYS)
    prior = prior0 + float(deaths[:start].sum())
    return ClinicalSeries(
        region_id=region,
        dates=dates[start:],
        deaths=np.rint(deaths[start:]).astype(np.int64),
        cases=np.rint(cases[start:]).astype(np.int64),
        prior_cumulative_deaths=int(round(prior)),
        population=int(population),
    )


def ordinal_to_strength(level: int, max_level: int, targeted: bool) -> float:
    """Equally spaced ordinal levels on [0, 1]; a targeted measure sits a
    half-step below its general counterpart."""
    if max_level <= 0:
        raise ValueError("max_level must be positive")
    if level < 0 or level > max_level:
        raise ValueError(f"ordinal level {level} outside [0, {max_level}]")
    v = level / max_level
    if targeted and level > 0:
        v -= 0.5 / max_level
    return v


def daily_to_weekly(values: np.ndarray) -> np.ndarray:
    """Mean over 7-day weeks; a trailing partial week averages its actual days."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    n_weeks = (n + 6) // 7
    out = np.empty(n_weeks, dtype=np.float64)
    for w in range(n_weeks):
        out[w] = values[7 * w : min(7 * w + 7, n)].mean()
    return out


def load_policy_schedule(
    path,
    region: str,
    colmap: dict | None = None,
    start_date: dt.date | None = None,
    n_days: int | None = None,
    levels: dict | None = None,
) -> PolicySchedule:
    """Load a tidy (date, indicator, level, flag) feed into weekly strengths.

    flag=0 marks a targeted measure, anything else general; indicators without
    a flag column entry are treated as general. Days before an indicator's
    first record are 0; gaps carry the last value forward. Weeks are anchored
    at start_date (default: the feed's first day).
    """
    cols = {**POLICY_COLUMNS, **(colmap or {})}
    level_spec = {**INDICATOR_LEVELS, **(levels or {})}
    df = _load_csv(path, region, cols, ("date", "indicator", "level"))

    first = start_date or df["_date"].min()
    last = df["_date"].max()
    if n_days is None:
        n_days = (last - first).days + 1
    n_weeks = (n_days + 6) // 7
    u = np.zeros((n_weeks, N_NPI), dtype=np.float64)

    for k, name in enumerate(NPI_NAMES):
        sub = df[df[cols["indicator"]].astype(str) == name]
        if sub.empty:
            continue
        max_level = level_spec[name]
        vals = []
        for row_i, row in sub.iterrows():
            level = row[cols["level"]]
            if pd.isna(level) or float(level) != int(level):
                raise ValueError(f"unknown ordinal level {level!r} for {name} at row {row_i + 2}")
            flag = row.get(cols["flag"], 1)
            targeted = INDICATOR_FLAGGED[name] and not pd.isna(flag) and int(flag) == 0
            try:
                vals.append(ordinal_to_strength(int(level), max_level, targeted))
            except ValueError as exc:
                raise ValueError(f"{exc} for {name} at row {row_i + 2}") from exc
        s = pd.Series(vals, index=pd.to_datetime(sub["_date"].to_numpy()))
        s = s[~s.index.duplicated(keep="last")]
        full = pd.date_range(first, first + dt.timedelta(days=n_days - 1), freq="D")
        daily = s.reindex(full).ffill().fillna(0.0).to_numpy()
        u[:, k] = daily_to_weekly(daily)

    week_starts = [first + dt.timedelta(days=7 * w) for w in range(n_weeks)]
    return PolicySchedule(region_id=region, week_starts=week_starts, u=u)


def estimate_test_ramp(test_series, population: int, region: str = "") -> TestRamp:
    """Quadratic least-squares fit of cumulative tests against day index.

    Daily tests then grow linearly at twice the quadratic coefficient; the
    rate is reported per million population per day.
    """
    cum = np.asarray(test_series, dtype=np.float64)
    if cum.shape[0] < 10:
        raise ValueError("need at least 10 observations to fit the test ramp")
    if np.any(np.diff(cum) < 0):
        daily, repairs, _ = repair_cumulative(cum)
        logger.info("%s: repaired %d decreasing test-count days", region, repairs)
        cum = np.cumsum(daily)
    t = np.arange(cum.shape[0], dtype=np.float64)
    coeffs = np.polyfit(t, cum, 2)
    fitted = np.polyval(coeffs, t)
    ss_res = float(np.sum((cum - fitted) ** 2))
    ss_tot = float(np.sum((cum - cum.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    rate = 2.0 * coeffs[0] / (population / 1e6)
    return TestRamp(region_id=region, daily_rate_increase=rate, fit_r_squared=min(r2, 1.0))


@dataclass
class RegionData:
    """Everything the inference stages need for one region."""

    clinical: ClinicalSeries
    policy: PolicySchedule
    test_ramp: TestRamp
    iota_hat: float = 0.008
    iota_ci: tuple = (0.004, 0.012)  # 95% interval behind the IFR prior
    median_income: float = 35_980.0
    gdp_per_capita: float = 65_000.0

    @property
    def iota_sd(self) -> float:
        """Prior scale from the credible interval by the range-over-4 rule."""
        return (self.iota_ci[1] - self.iota_ci[0]) / 4.0

    @property
    def n_weeks(self) -> int:
        return (self.clinical.n_days + 6) // 7


def write_region_document(data: RegionData, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "region_id": data.clinical.region_id,
        "population": data.clinical.population,
        "start_date": data.clinical.dates[0].isoformat(),
        "deaths": data.clinical.deaths.tolist(),
        "cases": data.clinical.cases.tolist(),
        "prior_cumulative_deaths": data.clinical.prior_cumulative_deaths,
        "policy": {
            "week_starts": [d.isoformat() for d in data.policy.week_starts],
            "u": data.policy.u.tolist(),
            "npi_names": list(NPI_NAMES),
        },
        "test_ramp": {
            "daily_rate_increase": data.test_ramp.daily_rate_increase,
            "fit_r_squared": data.test_ramp.fit_r_squared,
        },
        "iota_hat": data.iota_hat,
        "iota_ci": list(data.iota_ci),
        "median_income": data.median_income,
        "gdp_per_capita": data.gdp_per_capita,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def read_region_document(path) -> RegionData:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported region document version {doc.get('format_version')}")
    start = dt.date.fromisoformat(doc["start_date"])
    n = len(doc["deaths"])
    clinical = ClinicalSeries(
        region_id=doc["region_id"],
        dates=[start + dt.timedelta(days=i) for i in range(n)],
        deaths=np.asarray(doc["deaths"], dtype=np.int64),
        cases=np.asarray(doc["cases"], dtype=np.int64),
        prior_cumulative_deaths=doc["prior_cumulative_deaths"],
        population=doc["population"],
    )
    policy = PolicySchedule(
        region_id=doc["region_id"],
        week_starts=[dt.date.fromisoformat(d) for d in doc["policy"]["week_starts"]],
        u=np.asarray(doc["policy"]["u"], dtype=np.float64),
    )
    ramp = TestRamp(
        region_id=doc["region_id"],
        daily_rate_increase=doc["test_ramp"]["daily_rate_increase"],
        fit_r_squared=doc["test_ramp"]["fit_r_squared"],
    )
    return RegionData(
        clinical=clinical,
        policy=policy,
        test_ramp=ramp,
        iota_hat=doc["iota_hat"],
        iota_ci=tuple(doc["iota_ci"]),
        median_income=doc["median_income"],
        gdp_per_capita=doc["gdp_per_capita"],
    )
