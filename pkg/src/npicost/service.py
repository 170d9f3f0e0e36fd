"""Stateless HTTP service exposing evaluation, simulation, and optimization.

Artifacts load once at startup from ARTIFACT_DIR; requests never mutate them.
Endpoints live under /api/v1; optimization runs as an async job with polling.
"""

from __future__ import annotations

import os
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .artifacts import ArtifactStore, fingerprint
from .counterfactual import build_draws, expected_cost
from .icer import sicer_cumulative_series, sicer_weekly_series
from .ingest import PolicySchedule, RegionData
from .optimizer import OptimizationConfig, optimize
from .params import N_NPI, EconParams, EpiParams, NPI_NAMES

MAX_DRAWS = 100  # interactive latency bound per request


class ScenarioRequest(BaseModel):
    region_id: str
    schedule: list[list[float]]  # (n_weeks, 11) strengths in [0, 1]
    vscd: str = "low"
    learning: str = "low"
    workplace: str = "mid"
    draw_count: int = Field(default=MAX_DRAWS, ge=1, le=MAX_DRAWS)
    shock_mode: str = "retain"
    seed: int | None = None


class SeriesQuantiles(BaseModel):
    median: list[float]
    q05: list[float]
    q95: list[float]


class ScenarioResponse(BaseModel):
    region_id: str
    deaths_daily: SeriesQuantiles
    cumulative_deaths: SeriesQuantiles
    deaths_total: dict
    cost_breakdown: dict
    expected_cost_per_capita: float
    sicer_weekly: list[float | None]
    sicer_cumulative: list[float | None]
    fingerprint: str


class OptimizeRequest(BaseModel):
    region_id: str
    vscd: str = "low"
    learning: str = "low"
    workplace: str = "mid"
    parameterization: str = "reactive_workplace"
    max_evals: int = Field(default=1500, ge=100, le=20000)
    draw_count: int = Field(default=25, ge=1, le=MAX_DRAWS)
    seed: int | None = None


class RegionContext:
    """Immutable per-region bundle prepared at startup."""

    def __init__(self, data: RegionData, draws, stage1_meta: dict):
        self.data = data
        self.draws = draws
        self.stage1_meta = stage1_meta
        self.observed = data.policy

    def econ(self, vscd: str, learning: str, workplace: str) -> EconParams:
        return EconParams.from_scenario(
            median_income=self.data.median_income,
            gdp_per_capita=self.data.gdp_per_capita,
            test_ramp_rate=self.data.test_ramp.daily_rate_increase,
            vscd=vscd, learning=learning, workplace=workplace,
        )


def _quantiles(arr: np.ndarray) -> SeriesQuantiles:
    q = np.quantile(arr, [0.05, 0.5, 0.95], axis=0)
    return SeriesQuantiles(median=q[1].tolist(), q05=q[0].tolist(), q95=q[2].tolist())


def load_contexts(store: ArtifactStore, model_variant: str = "ii") -> dict:
    """Pair each region's document, stage-one draws, and stage-two coefficients."""
    contexts = {}
    stage2 = store.read_stage2(model_variant)
    for region in store.list_regions():
        try:
            data = store.read_region(region)
            s1_draws, meta = store.read_stage1(region)
        except FileNotFoundError:
            continue
        if region not in stage2.region_ids:
            continue
        region_index = stage2.region_ids.index(region)
        epi = EpiParams(iota=data.iota_hat)
        draws = build_draws(s1_draws, stage2, region_index, data.policy, epi, seed=0)
        contexts[region] = RegionContext(data, draws, meta)
    return contexts


def create_app(artifact_dir: str | None = None, model_variant: str = "ii") -> FastAPI:
    artifact_dir = artifact_dir or os.environ.get("ARTIFACT_DIR", "artifacts")
    default_seed = int(os.environ.get("DEFAULT_SEED", "0"))
    app = FastAPI(title="npicost what-if service", version=__version__)
    store = ArtifactStore(artifact_dir)
    contexts: dict = {}
    jobs: dict = {}

    @app.on_event("startup")
    def _load():
        contexts.update(load_contexts(store, model_variant))

    @app.get("/health")
    def health():
        return {"status": "ok", "regions": sorted(contexts), "version": __version__}

    @app.get("/api/v1/regions")
    def regions():
        return [
            {
                "region_id": r,
                "n_weeks": ctx.observed.n_weeks,
                "n_days": ctx.draws[0].n_days,
                "population": ctx.data.clinical.population,
                "npi_names": list(NPI_NAMES),
                "fingerprint": ctx.stage1_meta.get("fingerprint", ""),
            }
            for r, ctx in sorted(contexts.items())
        ]

    @app.get("/api/v1/regions/{region_id}/observed")
    def observed(region_id: str):
        ctx = contexts.get(region_id)
        if ctx is None:
            raise HTTPException(404, f"unknown region {region_id!r}")
        return {
            "region_id": region_id,
            "week_starts": [d.isoformat() for d in ctx.observed.week_starts],
            "schedule": ctx.observed.u.tolist(),
            "deaths": ctx.data.clinical.deaths.tolist(),
            "cases": ctx.data.clinical.cases.tolist(),
        }

    def _parse_schedule(ctx: RegionContext, matrix) -> PolicySchedule:
        try:
            u = np.asarray(matrix, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise HTTPException(400, f"malformed schedule: {exc}")
        if u.ndim != 2 or u.shape[1] != N_NPI:
            raise HTTPException(400, f"schedule must be (weeks, {N_NPI})")
        if u.shape[0] != ctx.observed.n_weeks:
            raise HTTPException(
                422, f"schedule has {u.shape[0]} weeks; region horizon is {ctx.observed.n_weeks}"
            )
        if np.any(~np.isfinite(u)) or np.any(u < 0) or np.any(u > 1):
            raise HTTPException(400, "schedule entries must lie in [0, 1]")
        return PolicySchedule(ctx.observed.region_id, ctx.observed.week_starts, u)

    def _evaluate(req: ScenarioRequest) -> ScenarioResponse:
        ctx = contexts.get(req.region_id)
        if ctx is None:
            raise HTTPException(404, f"unknown region {req.region_id!r}")
        schedule = _parse_schedule(ctx, req.schedule)
        try:
            econ = ctx.econ(req.vscd, req.learning, req.workplace)
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        seed = default_seed if req.seed is None else req.seed
        draws = ctx.draws[: req.draw_count]
        outcome = expected_cost(schedule, draws, econ, req.shock_mode, seed)
        cum = np.cumsum(outcome.deaths_daily, axis=1)
        open_is_baseline = bool(np.all(schedule.u == 0.0))
        if open_is_baseline:
            weekly = [None] * schedule.n_weeks
            cumulative = [None] * schedule.n_weeks
        else:
            weekly = [
                None if s is None else float(np.median(s.sicer_draws))
                for s in sicer_weekly_series(schedule, draws, econ, outcome=outcome,
                                             shock_mode=req.shock_mode, seed=seed)
            ]
            cumulative = [
                None if s is None else float(np.median(s.sicer_draws))
                for s in sicer_cumulative_series(schedule, draws, econ, outcome=outcome,
                                                 shock_mode=req.shock_mode, seed=seed)
            ]
        lo, med, hi = outcome.deaths_quantiles()
        fp = fingerprint(
            {
                "region": req.region_id,
                "schedule": schedule.u,
                "econ": [req.vscd, req.learning, req.workplace],
                "draws": req.draw_count,
                "mode": req.shock_mode,
                "seed": seed,
                "artifacts": ctx.stage1_meta.get("fingerprint", ""),
            }
        )
        return ScenarioResponse(
            region_id=req.region_id,
            deaths_daily=_quantiles(outcome.deaths_daily),
            cumulative_deaths=_quantiles(cum),
            deaths_total={"median": float(med), "q05": float(lo), "q95": float(hi)},
            cost_breakdown=outcome.cost.as_dict(),
            expected_cost_per_capita=outcome.expected_cost,
            sicer_weekly=weekly,
            sicer_cumulative=cumulative,
            fingerprint=fp,
        )

    @app.post("/api/v1/evaluate", response_model=ScenarioResponse)
    def evaluate(req: ScenarioRequest):
        return _evaluate(req)

    @app.post("/api/v1/optimize")
    def optimize_async(req: OptimizeRequest):
        ctx = contexts.get(req.region_id)
        if ctx is None:
            raise HTTPException(404, f"unknown region {req.region_id!r}")
        try:
            econ = ctx.econ(req.vscd, req.learning, req.workplace)
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        job_id = uuid.uuid4().hex
        jobs[job_id] = {"status": "running"}

        def run():
            try:
                cfg = OptimizationConfig(
                    parameterization=req.parameterization,
                    max_evals=req.max_evals,
                    seed=default_seed if req.seed is None else req.seed,
                )
                res = optimize(ctx.observed, ctx.draws[: req.draw_count], econ, cfg)
                jobs[job_id] = {
                    "status": "done",
                    "schedule": res.schedule.u.tolist(),
                    "cost": res.cost,
                    "n_evals": res.n_evals,
                    "budget_exhausted": res.budget_exhausted,
                }
            except Exception as exc:  # surface the failure to the poller
                jobs[job_id] = {"status": "error", "error": str(exc)}

        threading.Thread(target=run, daemon=True).start()
        return {"job_id": job_id, "status": "running"}

    @app.get("/api/v1/jobs/{job_id}")
    def job(job_id: str):
        if job_id not in jobs:
            raise HTTPException(404, "unknown job")
        return {"job_id": job_id, **jobs[job_id]}

    # serve the what-if frontend when a build exists
    frontend = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if frontend.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(frontend), html=True), name="ui")

    return app
