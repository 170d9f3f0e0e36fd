"""Pipeline driver: ingest feeds, fit both stages, evaluate and optimize
policies, run the sensitivity grid, export cost-effectiveness series, and
serve the what-if API."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .artifacts import ArtifactStore, fingerprint
from .params import NPI_NAMES, EconParams, EpiParams

logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
logger = logging.getLogger("npicost")


def _load_scenario(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    allowed = {"vscd", "learning", "workplace"}
    unknown = set(doc) - allowed
    if unknown:
        raise click.ClickException(f"unknown scenario keys {sorted(unknown)}; allowed: {sorted(allowed)}")
    return doc


def _econ_for(data, scenario: dict) -> EconParams:
    return EconParams.from_scenario(
        median_income=data.median_income,
        gdp_per_capita=data.gdp_per_capita,
        test_ramp_rate=data.test_ramp.daily_rate_increase,
        **scenario,
    )


def _region_draws(store: ArtifactStore, region: str, model: str):
    from .counterfactual import build_draws

    data = store.read_region(region)
    s1_draws, meta = store.read_stage1(region)
    stage2 = store.read_stage2(model)
    if region not in stage2.region_ids:
        raise click.ClickException(
            f"region {region!r} missing from stage-two draws; rerun `npicost fit-npi`"
        )
    epi = EpiParams(iota=data.iota_hat)
    draws = build_draws(s1_draws, stage2, stage2.region_ids.index(region), data.policy, epi)
    return data, draws, meta


@click.group()
@click.option("--artifacts", default="artifacts", show_default=True, help="artifact directory")
@click.pass_context
def main(ctx, artifacts):
    ctx.obj = ArtifactStore(artifacts)


@main.command()
@click.option("--region", required=True)
@click.option("--clinical", required=True, type=click.Path(exists=True), help="cumulative deaths/cases CSV")
@click.option("--policy", "policy_csv", required=True, type=click.Path(exists=True), help="tidy policy-levels CSV")
@click.option("--tests", "tests_csv", type=click.Path(exists=True), help="cumulative test counts CSV (date,cumulative_tests)")
@click.option("--population", required=True, type=int)
@click.option("--iota-hat", default=0.008, show_default=True, help="prior median IFR")
@click.option("--iota-ci", nargs=2, type=float, default=(0.004, 0.012), show_default=True)
@click.option("--median-income", default=35_980.0, show_default=True)
@click.option("--gdp-per-capita", default=65_000.0, show_default=True)
@click.option("--colmap", type=click.Path(exists=True), help="JSON file remapping CSV column names")
@click.pass_obj
def ingest(store, region, clinical, policy_csv, tests_csv, population, iota_hat, iota_ci,
           median_income, gdp_per_capita, colmap):
    """Parse and repair one region's feeds into the canonical document."""
    from .ingest import (RegionData, TestRamp, estimate_test_ramp,
                         load_clinical_series, load_policy_schedule)
    import pandas as pd

    cmap = json.load(open(colmap)) if colmap else {}
    series = load_clinical_series(clinical, region, population, cmap.get("clinical"))
    schedule = load_policy_schedule(
        policy_csv, region, cmap.get("policy"),
        start_date=series.dates[0], n_days=series.n_days,
    )
    if tests_csv:
        df = pd.read_csv(tests_csv)
        col = (cmap.get("tests") or {}).get("cumulative_tests", "cumulative_tests")
        ramp = estimate_test_ramp(df[col].to_numpy(), population, region)
    else:
        ramp = TestRamp(region_id=region, daily_rate_increase=20.0, fit_r_squared=1.0)
        logger.info("no test feed; using a mid-range capacity ramp of 20/million/day")
    data = RegionData(
        clinical=series, policy=schedule, test_ramp=ramp,
        iota_hat=iota_hat, iota_ci=tuple(iota_ci),
        median_income=median_income, gdp_per_capita=gdp_per_capita,
    )
    path = store.write_region(data)
    click.echo(f"wrote {path} ({series.n_days} days, {schedule.n_weeks} weeks)")


@main.command("fit-seird")
@click.option("--region", required=True)
@click.option("--chains", default=4, show_default=True)
@click.option("--iterations", default=2500, show_default=True)
@click.option("--warmup", default=1250, show_default=True)
@click.option("--draws", default=100, show_default=True, help="trajectory draws retained")
@click.option("--seed", default=0, show_default=True)
@click.pass_obj
def fit_seird(store, region, chains, iterations, warmup, draws, seed):
    """Stage one: fit the transmission model to one region's counts."""
    from .stage1 import StageOneConfig, sample_posterior

    data = store.read_region(region)
    cfg = StageOneConfig(
        iota_hat=data.iota_hat, iota_sd=data.iota_sd,
        n_chains=chains, n_iter=iterations, n_warmup=warmup,
        n_traj_draws=draws, seed=seed,
    )
    epi = EpiParams(iota=data.iota_hat)
    result = sample_posterior(data.clinical, epi, cfg)
    path = store.write_stage1(region, result, {"seed": seed})
    status = "converged" if result.converged else "NOT CONVERGED (flagged)"
    click.echo(f"wrote {path}; {status}")
    for name, diag in result.diagnostics.items():
        click.echo(f"  {name:14s} rhat={diag['rhat']:.3f} ess={diag['ess']:.0f}")


@main.command("fit-npi")
@click.option("--model", type=click.Choice(["i", "ii", "iii"]), default="ii", show_default=True)
@click.option("--regions", "region_list", help="comma-separated; default: all with stage-one draws")
@click.option("--draws-dir", default=None, help="override artifact directory for stage-one draws")
@click.option("--max-upstream-draws", default=25, show_default=True,
              help="stage-one trajectory draws propagated (the uncertainty mixture size)")
@click.option("--chains", default=2, show_default=True)
@click.option("--iterations", default=1200, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.pass_obj
def fit_npi(store, model, region_list, draws_dir, max_upstream_draws, chains, iterations, seed):
    """Stage two: pooled intervention-effect regression across regions."""
    from .regression import RegionRegressionData, Stage2Config, fit_hierarchical, lagged_covariates

    if draws_dir:
        store = ArtifactStore(draws_dir)
    regions = region_list.split(",") if region_list else store.list_regions()
    if not regions:
        raise click.ClickException("no regions ingested")
    per_draw = None
    for region in regions:
        data = store.read_region(region)
        s1_draws, _ = store.read_stage1(region)
        epi = EpiParams(iota=data.iota_hat)
        chosen = s1_draws[: max_upstream_draws]
        if per_draw is None:
            per_draw = [[] for _ in range(len(chosen))]
        for i, dr in enumerate(chosen):
            if i >= len(per_draw):
                break
            per_draw[i].append(
                RegionRegressionData(
                    region_id=region,
                    log_r0=np.log(dr.r0_by_week),
                    u=data.policy.u,
                    cov_lagged=lagged_covariates(dr.trajectory, epi.with_iota(dr.iota)),
                )
            )
    cfg = Stage2Config(model_variant=model, n_chains=chains, n_iter=iterations,
                       n_warmup=iterations // 2, seed=seed)
    result = fit_hierarchical(per_draw, cfg)
    path = store.write_stage2(result, {"seed": seed, "n_upstream": len(per_draw)})
    click.echo(f"wrote {path}; worst rhat {result.diagnostics.get('worst_rhat', float('nan')):.3f}")
    # data-driven stringency index: posterior-mean per-intervention shares
    from .regression import RegionCoeffs, stringency_weights

    rows = []
    for s, rid in enumerate(result.region_ids):
        med = np.median(result.region[:, s, :], axis=0)
        try:
            rho = stringency_weights(RegionCoeffs.from_vector(med, model))
            rows.append([rid] + [f"{v:.4f}" for v in rho])
        except ValueError:
            rows.append([rid] + ["nan"] * len(NPI_NAMES))
    out = Path(store.root) / "stage2" / model / "stringency_index.csv"
    with open(out, "w") as fh:
        fh.write("region," + ",".join(NPI_NAMES) + "\n")
        fh.writelines(",".join(r) + "\n" for r in rows)
    click.echo(f"wrote {out}")


@main.command()
@click.option("--region", required=True)
@click.option("--model", default="ii", show_default=True)
@click.option("--policy", "policy_name", default="all",
              type=click.Choice(["open", "full", "obs", "obs-school", "all"]))
@click.option("--scenario", type=click.Path(exists=True), help="JSON with vscd/learning/workplace selectors")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), help="write the table as CSV here")
@click.pass_obj
def evaluate(store, region, model, policy_name, scenario, seed, out):
    """Price the named policies for one region."""
    from .counterfactual import evaluate_named_policies, expected_cost, named_schedules

    data, draws, _ = _region_draws(store, region, model)
    econ = _econ_for(data, _load_scenario(scenario))
    key = {"open": "Open", "full": "Full", "obs": "Obs", "obs-school": "Obs-school"}.get(policy_name)
    if policy_name == "all":
        table = evaluate_named_policies(data.policy, draws, econ, seed=seed)
    else:
        sched = named_schedules(data.policy)[key]
        table = {key: expected_cost(sched, draws, econ, seed=seed)}
    lines = ["policy,deaths_median,deaths_q05,deaths_q95,expected_cost_per_capita"]
    for name, outcome in table.items():
        s = outcome.summary()
        lines.append(
            f"{name},{s['deaths_median']:.0f},{s['deaths_q05']:.0f},"
            f"{s['deaths_q95']:.0f},{s['expected_cost_per_capita']:.2f}"
        )
        click.echo(lines[-1])
    if out:
        Path(out).write_text("\n".join(lines) + "\n")


@main.command()
@click.option("--region", required=True)
@click.option("--model", default="ii", show_default=True)
@click.option("--scenario", type=click.Path(exists=True))
@click.option("--parameterization", default="reactive_workplace", show_default=True,
              type=click.Choice(["constant", "weekly", "reactive_workplace"]))
@click.option("--max-evals", default=2000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.pass_obj
def optimize(store, region, model, scenario, parameterization, max_evals, seed):
    """Derive the cost-optimal schedule for one region (cached by fingerprint)."""
    from .optimizer import OptimizationConfig
    from .optimizer import optimize as run_optimize

    data, draws, meta = _region_draws(store, region, model)
    sel = _load_scenario(scenario)
    econ = _econ_for(data, sel)
    cfg = OptimizationConfig(parameterization=parameterization, max_evals=max_evals, seed=seed)
    key = fingerprint({
        "region": region, "model": model, "scenario": sel, "seed": seed,
        "parameterization": parameterization, "max_evals": max_evals,
        "stage1": meta.get("fingerprint", ""),
    })
    cached = store.read_optimize(key)
    if cached:
        click.echo(f"cache hit {key}: cost {cached['cost']:.2f}")
        return
    res = run_optimize(data.policy, draws, econ, cfg)
    store.write_optimize(key, {
        "region": region, "model": model, "scenario": sel,
        "schedule": res.schedule.u.tolist(), "cost": res.cost,
        "n_evals": res.n_evals, "budget_exhausted": res.budget_exhausted,
    })
    click.echo(f"optimal cost {res.cost:.2f}/capita over {res.n_evals} evaluations (key {key})")
    click.echo("mean strengths: " + ", ".join(
        f"{n}={v:.2f}" for n, v in zip(NPI_NAMES, res.schedule.u.mean(axis=0))
    ))


@main.command()
@click.option("--region", required=True)
@click.option("--grid", "grid_kind", default="full", type=click.Choice(["full", "baseline"]),
              show_default=True)
@click.option("--max-evals", default=800, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
@click.pass_obj
def sensitivity(store, region, grid_kind, max_evals, seed, out):
    """Optimize and tabulate policies across the scenario grid."""
    from .optimizer import OptimizationConfig, ScenarioGrid, sensitivity_grid

    grid = ScenarioGrid() if grid_kind == "full" else ScenarioGrid(
        vscd=("low",), learning=("low",), workplace=("mid",), model=("ii",))
    data = store.read_region(region)
    draws_by_model = {}
    for model in set(grid.model):
        try:
            _, draws, _ = _region_draws(store, region, model)
            draws_by_model[model] = draws
        except (FileNotFoundError, click.ClickException):
            pass
    missing = [m for m in grid.model if m not in draws_by_model]
    if missing:
        raise click.ClickException(
            f"stage-two draws missing for models {missing}; run `npicost fit-npi --model <m>`"
        )
    econ = _econ_for(data, {})
    cfg = OptimizationConfig(max_evals=max_evals, seed=seed)
    cells = sensitivity_grid(data.policy, draws_by_model, econ, grid, cfg)
    click.echo(f"{len(cells)} cells")
    for c in cells:
        tag = f"{c['vscd']}/{c['learning']}/{c['workplace']}/model-{c['model']}"
        if "error" in c:
            click.echo(f"  {tag}: FAILED {c['error']}")
        else:
            school = c["optimal_mean_strength"][NPI_NAMES.index("school")]
            click.echo(f"  {tag}: cost {c['optimal_cost']:.0f}, school strength {school:.2f}")
    if out:
        Path(out).write_text(json.dumps(cells, indent=1))
        click.echo(f"wrote {out}")


@main.command()
@click.option("--region", required=True)
@click.option("--model", default="ii", show_default=True)
@click.option("--policy", "policy_name", default="obs",
              type=click.Choice(["full", "obs", "obs-school"]))
@click.option("--scenario", type=click.Path(exists=True))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(), help="CSV of weekly and cumulative series")
@click.pass_obj
def icer(store, region, model, policy_name, scenario, seed, out):
    """Standardized cost-effectiveness series for one policy vs open."""
    from .counterfactual import expected_cost, named_schedules
    from .icer import sicer_cumulative_series, sicer_weekly_series

    data, draws, _ = _region_draws(store, region, model)
    econ = _econ_for(data, _load_scenario(scenario))
    key = {"full": "Full", "obs": "Obs", "obs-school": "Obs-school"}[policy_name]
    sched = named_schedules(data.policy)[key]
    outcome = expected_cost(sched, draws, econ, seed=seed)
    weekly = sicer_weekly_series(sched, draws, econ, outcome=outcome, seed=seed)
    cumulative = sicer_cumulative_series(sched, draws, econ, outcome=outcome, seed=seed)
    lines = ["week,sicer_weekly_median,sicer_cumulative_median"]
    for w, (sw, sc) in enumerate(zip(weekly, cumulative)):
        wv = "" if sw is None else f"{np.median(sw.sicer_draws):.4f}"
        cv = "" if sc is None else f"{np.median(sc.sicer_draws):.4f}"
        lines.append(f"{w},{wv},{cv}")
    text = "\n".join(lines)
    click.echo(text if len(lines) < 30 else "\n".join(lines[:30] + ["..."]))
    if out:
        Path(out).write_text(text + "\n")


@main.command()
@click.option("--port", default=None, type=int, help="overrides PORT")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--model", default="ii", show_default=True)
@click.pass_obj
def serve(store, port, host, model):
    """Run the what-if HTTP service over the artifact directory."""
    import os

    import uvicorn

    from .service import create_app

    port = port or int(os.environ.get("PORT", "8000"))
    app = create_app(str(store.root), model)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
