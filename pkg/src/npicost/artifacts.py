"""Versioned on-disk artifacts connecting the pipeline stages.

Layout under an artifact directory:

    regions/<region>.json             ingest output, one document per region
    stage1/<region>/draws.json        joint posterior draws (scalars, weekly paths)
    stage1/<region>/trajectories.npz  packed per-draw state/flow arrays
    stage2/<model>/draws.npz          pooled and per-region coefficient draws
    optimize/<key>.json               cached optimization results by fingerprint

Files carry a format version and a fingerprint of the producing configuration,
so identical inputs and seeds reproduce byte-identical artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np

from .epi import Trajectory
from .ingest import RegionData, read_region_document, write_region_document
from .obs import ZinbParams
from .regression import Stage2Result
from .stage1 import StageOneDraw, StageOneResult

FORMAT_VERSION = 1


def fingerprint(payload) -> str:
    """Stable short hash of a JSON-serializable payload."""

    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if dataclasses.is_dataclass(o):
            return dataclasses.asdict(o)
        raise TypeError(f"not fingerprintable: {type(o)}")

    blob = json.dumps(payload, sort_keys=True, default=default).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class ArtifactStore:
    def __init__(self, root):
        self.root = Path(root)

    # -- regions ----------------------------------------------------------

    def region_path(self, region: str) -> Path:
        return self.root / "regions" / f"{region}.json"

    def write_region(self, data: RegionData) -> Path:
        path = self.region_path(data.clinical.region_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_region_document(data, path)
        return path

    def read_region(self, region: str) -> RegionData:
        path = self.region_path(region)
        if not path.exists():
            raise FileNotFoundError(
                f"no region document for {region!r}; run `npicost ingest` first"
            )
        return read_region_document(path)

    def list_regions(self) -> list:
        d = self.root / "regions"
        return sorted(p.stem for p in d.glob("*.json")) if d.exists() else []

    # -- stage one --------------------------------------------------------

    def write_stage1(self, region: str, result: StageOneResult, extra_meta: dict | None = None) -> Path:
        d = self.root / "stage1" / region
        d.mkdir(parents=True, exist_ok=True)
        draws = result.draws
        meta = {
            "format_version": FORMAT_VERSION,
            "region_id": region,
            "n_draws": len(draws),
            "converged": bool(result.converged),
            "diagnostics": {
                k: {kk: float(vv) for kk, vv in v.items()} for k, v in result.diagnostics.items()
            },
            "accept_rates": {k: float(v) for k, v in result.accept_rates.items()},
            "population": float(draws[0].trajectory.population),
            "n_days": int(draws[0].trajectory.n_days),
            "draws": [
                {
                    "iota": float(dr.iota),
                    "sigma2_r0": float(dr.sigma2_r0),
                    "sigma2_car": float(dr.sigma2_car),
                    "delay": float(dr.delay),
                    "i_c0": float(dr.i_c0),
                    "x0": dr.x0.tolist(),
                    "zinb_deaths": dataclasses.asdict(dr.zinb_deaths),
                    "zinb_cases": dataclasses.asdict(dr.zinb_cases),
                }
                for dr in draws
            ],
        }
        if extra_meta:
            meta.update(extra_meta)
        meta["fingerprint"] = fingerprint(
            {k: meta[k] for k in ("region_id", "n_draws", "population", "n_days")}
            | {"first_draw": meta["draws"][0] if meta["draws"] else {}}
        )
        with open(d / "draws.json", "w") as fh:
            json.dump(meta, fh)
        np.savez_compressed(
            d / "trajectories.npz",
            states=np.stack([dr.trajectory.states for dr in draws]),
            nu=np.stack([dr.trajectory.nu for dr in draws]),
            r0=np.stack([dr.r0_by_week for dr in draws]),
            car=np.stack([dr.car_by_week for dr in draws]),
        )
        return d / "draws.json"

    def read_stage1(self, region: str) -> tuple[list, dict]:
        """Rebuild the draw list (with trajectories) and the metadata dict."""
        d = self.root / "stage1" / region
        meta_path = d / "draws.json"
        if not meta_path.exists():
            raise FileNotFoundError(
                f"no stage-one draws for {region!r}; run `npicost fit-seird` first"
            )
        with open(meta_path) as fh:
            meta = json.load(fh)
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError("unsupported stage-one artifact version")
        arrs = np.load(d / "trajectories.npz")
        draws = []
        for i, rec in enumerate(meta["draws"]):
            traj = Trajectory(
                states=arrs["states"][i],
                nu=arrs["nu"][i],
                r0_by_week=arrs["r0"][i],
                population=meta["population"],
            )
            draws.append(
                StageOneDraw(
                    r0_by_week=arrs["r0"][i],
                    sigma2_r0=rec["sigma2_r0"],
                    iota=rec["iota"],
                    x0=np.asarray(rec["x0"]),
                    car_by_week=arrs["car"][i],
                    sigma2_car=rec["sigma2_car"],
                    delay=rec["delay"],
                    zinb_deaths=ZinbParams(**rec["zinb_deaths"]),
                    zinb_cases=ZinbParams(**rec["zinb_cases"]),
                    i_c0=rec["i_c0"],
                    trajectory=traj,
                )
            )
        return draws, meta

    # -- stage two --------------------------------------------------------

    def write_stage2(self, result: Stage2Result, extra_meta: dict | None = None) -> Path:
        d = self.root / "stage2" / result.model_variant
        d.mkdir(parents=True, exist_ok=True)
        meta = {
            "format_version": FORMAT_VERSION,
            "model_variant": result.model_variant,
            "region_ids": result.region_ids,
            "converged": bool(result.converged),
            "diagnostics": {"worst_rhat": float(result.diagnostics.get("worst_rhat", float("nan")))},
        }
        if extra_meta:
            meta.update(extra_meta)
        meta["fingerprint"] = fingerprint(
            {"model": result.model_variant, "n": int(result.theta.shape[0]),
             "theta_mean": result.theta.mean(axis=0)}
        )
        with open(d / "meta.json", "w") as fh:
            json.dump(meta, fh)
        np.savez_compressed(
            d / "draws.npz",
            theta=result.theta,
            region=result.region,
            lam=result.lam,
            phi=result.phi,
            sigma_eps=result.sigma_eps,
            nu_eps=result.nu_eps,
        )
        return d / "meta.json"

    def read_stage2(self, model_variant: str) -> Stage2Result:
        d = self.root / "stage2" / model_variant
        if not (d / "meta.json").exists():
            raise FileNotFoundError(
                f"no stage-two draws for model ({model_variant}); run `npicost fit-npi` first"
            )
        with open(d / "meta.json") as fh:
            meta = json.load(fh)
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError("unsupported stage-two artifact version")
        arrs = np.load(d / "draws.npz")
        return Stage2Result(
            model_variant=meta["model_variant"],
            theta=arrs["theta"],
            region=arrs["region"],
            lam=arrs["lam"],
            phi=arrs["phi"],
            sigma_eps=arrs["sigma_eps"],
            nu_eps=arrs["nu_eps"],
            region_ids=meta["region_ids"],
            diagnostics=meta.get("diagnostics", {}),
            converged=meta.get("converged", True),
        )

    # -- optimization cache -------------------------------------------------

    def optimize_cache_path(self, key: str) -> Path:
        d = self.root / "optimize"
        d.mkdir(parents=True, exist_ok=True)
        return d / f"{key}.json"

    def write_optimize(self, key: str, payload: dict) -> Path:
        path = self.optimize_cache_path(key)
        with open(path, "w") as fh:
            json.dump(payload, fh)
        return path

    def read_optimize(self, key: str) -> dict | None:
        path = self.optimize_cache_path(key)
        if not path.exists():
            return None
        with open(path) as fh:
            return json.load(fh)
