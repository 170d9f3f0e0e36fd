"""Minimize the policy cost over weekly schedules: multi-start derivative-free
pattern search with box constraints, plus the sensitivity grid."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .counterfactual import CounterfactualDraw, evaluate_named_policies, expected_cost, named_schedules
from .ingest import PolicySchedule
from .params import N_NPI, MASKS, TESTING, TRACING, WORKPLACE, EconParams

logger = logging.getLogger(__name__)

__all__ = ["OptimizationConfig", "ScenarioGrid", "OptimizationResult", "optimize", "pattern_search", "sensitivity_grid"]

PARAMETERIZATIONS = ("constant", "weekly", "reactive_workplace")


@dataclass
class OptimizationConfig:
    n_starts: int = 8
    parameterization: str = "reactive_workplace"
    max_evals: int = 4000
    tolerance: float = 0.01  # convergence on the objective, USD per capita
    seed: int = 0
    initial_step: float = 0.25
    min_step: float = 0.02

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("need at least one start")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")


@dataclass
class ScenarioGrid:
    vscd: tuple = ("low", "high")
    learning: tuple = ("low", "high")
    workplace: tuple = ("low", "mid", "high")
    model: tuple = ("i", "ii", "iii")

    def cells(self):
        return list(itertools.product(self.vscd, self.learning, self.workplace, self.model))


@dataclass
class OptimizationResult:
    schedule: PolicySchedule
    cost: float
    trace: list  # (eval_count, best_cost) milestones for audit
    n_evals: int
    budget_exhausted: bool = False
    start_costs: list = field(default_factory=list)


def pattern_search(
    objective,
    x0: np.ndarray,
    initial_step: float = 0.25,
    min_step: float = 0.02,
    max_evals: int = 2000,
    tolerance: float = 0.01,
) -> tuple[np.ndarray, float, list, int, bool]:
    """Coordinate-wise pattern search with shrinking steps on [0, 1]^d.

    The objective must be deterministic (common random numbers upstream).
    Returns (x_best, f_best, trace, n_evals, budget_exhausted).
    """
    x = np.clip(np.asarray(x0, dtype=np.float64), 0.0, 1.0)
    f = objective(x)
    n_evals = 1
    trace = [(n_evals, f)]
    step = initial_step
    exhausted = False
    while step >= min_step:
        improved_this_step = False
        f_at_step_start = f
        while True:
            improved = False
            for k in range(x.size):
                for delta in (step, -step):
                    if n_evals >= max_evals:
                        exhausted = True
                        return x, f, trace, n_evals, exhausted
                    cand = x.copy()
                    cand[k] = min(1.0, max(0.0, cand[k] + delta))
                    if cand[k] == x[k]:
                        continue
                    fc = objective(cand)
                    n_evals += 1
                    if fc < f:
                        x, f = cand, fc
                        trace.append((n_evals, f))
                        improved = True
                        improved_this_step = True
                        break
            if not improved:
                break
        if improved_this_step and f_at_step_start - f > tolerance:
            continue  # stay at this resolution while it pays
        step /= 2.0
    return x, f, trace, n_evals, exhausted


def _dimension(parameterization: str, n_weeks: int) -> int:
    if parameterization == "constant":
        return N_NPI
    if parameterization == "weekly":
        return N_NPI * n_weeks
    return (N_NPI - 1) + n_weeks  # constant per intervention, weekly workplace


def _to_schedule(x: np.ndarray, parameterization: str, template: PolicySchedule) -> PolicySchedule:
    n_weeks = template.n_weeks
    if parameterization == "constant":
        u = np.tile(x, (n_weeks, 1))
    elif parameterization == "weekly":
        u = x.reshape(n_weeks, N_NPI)
    else:
        u = np.empty((n_weeks, N_NPI))
        others = [k for k in range(N_NPI) if k != WORKPLACE]
        for i, k in enumerate(others):
            u[:, k] = x[i]
        u[:, WORKPLACE] = x[N_NPI - 1 :]
    return replace(template, u=np.clip(u, 0.0, 1.0))


def _from_schedule(sched: PolicySchedule, parameterization: str) -> np.ndarray:
    if parameterization == "constant":
        return sched.u.mean(axis=0)
    if parameterization == "weekly":
        return sched.u.ravel().copy()
    others = [k for k in range(N_NPI) if k != WORKPLACE]
    return np.concatenate([sched.u[:, others].mean(axis=0), sched.u[:, WORKPLACE]])


def _hand_starts(observed: PolicySchedule, parameterization: str, rng) -> list[np.ndarray]:
    """Open, Full, Obs, Obs-school, mask+test+trace-only, plus random fills."""
    d = _dimension(parameterization, observed.n_weeks)
    named = named_schedules(observed)
    starts = [
        np.zeros(d),
        np.ones(d),
        _from_schedule(named["Obs"], parameterization),
        _from_schedule(named["Obs-school"], parameterization),
    ]
    mtt = np.zeros((observed.n_weeks, N_NPI))
    mtt[:, [MASKS, TESTING, TRACING]] = 1.0
    starts.append(_from_schedule(replace(observed, u=mtt), parameterization))
    while len(starts) < 8:
        starts.append(rng.uniform(0.0, 1.0, d))
    return starts


def optimize(
    observed: PolicySchedule,
    draws: list[CounterfactualDraw],
    econ: EconParams,
    config: OptimizationConfig | None = None,
    objective=None,
) -> OptimizationResult:
    """Best-of-starts pattern search over schedules; keeps the cheapest policy.

    The default objective is the Monte Carlo expected cost on the fixed draw
    set (deterministic by common random numbers); pass a custom callable
    taking a PolicySchedule for toy problems.
    """
    config = config or OptimizationConfig()
    rng = np.random.default_rng(config.seed)

    if objective is None:
        def objective_fn(sched: PolicySchedule) -> float:
            return expected_cost(sched, draws, econ).expected_cost
    else:
        objective_fn = objective

    cache: dict = {}

    def f(x: np.ndarray) -> float:
        key = x.tobytes()
        if key not in cache:
            cache[key] = objective_fn(_to_schedule(x, config.parameterization, observed))
        return cache[key]

    starts = _hand_starts(observed, config.parameterization, rng)[: max(config.n_starts, 1)]
    best = None
    trace_all = []
    total_evals = 0
    exhausted_any = False
    start_costs = []
    per_start_budget = max(config.max_evals // len(starts), 50)
    for x0 in starts:
        start_costs.append(f(np.clip(x0, 0, 1)))
        x, fx, trace, n_evals, exhausted = pattern_search(
            f, x0, config.initial_step, config.min_step, per_start_budget, config.tolerance
        )
        total_evals += n_evals
        exhausted_any = exhausted_any or exhausted
        trace_all.extend([(total_evals, c) for _, c in trace])
        if best is None or fx < best[1]:
            best = (x, fx)
    if exhausted_any:
        logger.warning("optimizer evaluation budget exhausted; returning best-so-far")
    return OptimizationResult(
        schedule=_to_schedule(best[0], config.parameterization, observed),
        cost=best[1],
        trace=trace_all,
        n_evals=total_evals,
        budget_exhausted=exhausted_any,
        start_costs=start_costs,
    )


def sensitivity_grid(
    observed: PolicySchedule,
    draws_by_model: dict,
    econ_base: EconParams,
    grid: ScenarioGrid | None = None,
    config: OptimizationConfig | None = None,
) -> list[dict]:
    """One optimization plus named-policy table per scenario cell.

    draws_by_model maps a regression-model variant ('i'|'ii'|'iii') to its
    draw list; cell failures are isolated and reported, not raised.
    """
    grid = grid or ScenarioGrid()
    cells = grid.cells()
    if not cells:
        raise ValueError("empty scenario grid")
    results = []
    for vscd, learning, workplace, model in cells:
        cell = {"vscd": vscd, "learning": learning, "workplace": workplace, "model": model}
        try:
            draws = draws_by_model[model]
            econ = EconParams.from_scenario(
                median_income=econ_base.median_income,
                gdp_per_capita=econ_base.gdp_per_capita,
                test_ramp_rate=econ_base.test_ramp_rate,
                vscd=vscd, learning=learning, workplace=workplace,
            )
            opt = optimize(observed, draws, econ, config)
            table = evaluate_named_policies(observed, draws, econ, oc=opt.schedule)
            cell["optimal_mean_strength"] = opt.schedule.u.mean(axis=0).tolist()
            cell["optimal_cost"] = opt.cost
            cell["policies"] = {name: out.summary() for name, out in table.items()}
        except Exception as exc:  # isolate per-cell failures
            logger.exception("scenario cell failed: %s", cell)
            cell["error"] = str(exc)
        results.append(cell)
    return results
