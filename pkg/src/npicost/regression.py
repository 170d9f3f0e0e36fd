"""Hierarchical log-linear regression of weekly transmission rates on
intervention schedules, with behavioral controls and AR(1) Student-t residuals.

Region coefficient vectors follow the kernels' layout: 11 intervention
effects (constrained nonpositive), then infection/removal/death behavioral
effects, then the log baseline rate. Pooling is a truncated multivariate
normal around global means; the truncation is normalized exactly via a
deterministic quasi-Monte Carlo orthant probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from . import kernels, mcmc
from .epi import Trajectory
from .params import N_NPI, EpiParams

__all__ = [
    "COVARIATE_SCALES",
    "RegionCoeffs",
    "PooledEffects",
    "RegionRegressionData",
    "Stage2Config",
    "Stage2Result",
    "behavioral_covariates",
    "lagged_covariates",
    "linear_predictor",
    "regression_loglik",
    "fit_hierarchical",
    "total_effect",
    "stringency_weights",
]

# Reporting units for the behavioral covariates: incident infections and
# removals per 10 population, deaths per 1,000.
COVARIATE_SCALES = np.array([10.0, 10.0, 1000.0])

N_COEF = N_NPI + 4  # 11 interventions + beta_I + beta_R + beta_D + log baseline
IX_BETA_I, IX_BETA_R, IX_BETA_D, IX_LOG_R0 = N_NPI, N_NPI + 1, N_NPI + 2, N_NPI + 3

MODEL_EXCLUDED = {"i": (IX_BETA_I, IX_BETA_R), "ii": (IX_BETA_I,), "iii": ()}


@dataclass
class RegionCoeffs:
    """One region's regression coefficients."""

    beta_u: np.ndarray  # (11,), each <= 0
    beta_i: float
    beta_r: float
    beta_d: float
    r0_baseline: float
    model_variant: str = "iii"

    def __post_init__(self):
        self.beta_u = np.asarray(self.beta_u, dtype=np.float64)
        if self.beta_u.shape != (N_NPI,):
            raise ValueError(f"beta_u must have {N_NPI} entries")
        if np.any(self.beta_u > 0):
            raise ValueError("intervention effects cannot be positive")
        if self.r0_baseline <= 0:
            raise ValueError("baseline reproduction number must be positive")
        excluded = MODEL_EXCLUDED[self.model_variant]
        if IX_BETA_I in excluded and self.beta_i != 0.0:
            raise ValueError(f"model ({self.model_variant}) forces beta_i = 0")
        if IX_BETA_R in excluded and self.beta_r != 0.0:
            raise ValueError(f"model ({self.model_variant}) forces beta_r = 0")

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.beta_u, [self.beta_i, self.beta_r, self.beta_d, math.log(self.r0_baseline)]]
        )

    @classmethod
    def from_vector(cls, vec, model_variant: str = "iii") -> "RegionCoeffs":
        vec = np.asarray(vec, dtype=np.float64)
        return cls(
            beta_u=vec[:N_NPI],
            beta_i=float(vec[IX_BETA_I]),
            beta_r=float(vec[IX_BETA_R]),
            beta_d=float(vec[IX_BETA_D]),
            r0_baseline=float(math.exp(vec[IX_LOG_R0])),
            model_variant=model_variant,
        )


@dataclass
class PooledEffects:
    """Global means and the random-effect covariance pieces."""

    theta: np.ndarray  # (15,)
    lam: np.ndarray  # (15,) scale part of V
    omega: np.ndarray  # (15, 15) correlation part of V
    phi: float
    sigma_eps: float
    nu_eps: float

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.lam = np.asarray(self.lam, dtype=np.float64)
        self.omega = np.asarray(self.omega, dtype=np.float64)
        if np.any(self.lam < 0):
            raise ValueError("lambda entries must be nonnegative")
        if not -1.0 < self.phi < 1.0:
            raise ValueError("AR(1) parameter must lie in (-1, 1)")
        if self.nu_eps <= 0 or self.sigma_eps <= 0:
            raise ValueError("residual scale and dof must be positive")

    @property
    def V(self) -> np.ndarray:
        return (self.lam[:, None] * self.omega) * self.lam[None, :]


def behavioral_covariates(traj: Trajectory, epi: EpiParams) -> np.ndarray:
    """Weekly incident fractions (infections, removals, deaths), one row per week."""
    return kernels.weekly_covariates(traj.states, epi.delta, epi.gamma, epi.mu, traj.n_days)


def lagged_covariates(traj: Trajectory, epi: EpiParams) -> np.ndarray:
    """Covariate rows aligned so row w feeds week w's predictor (week w-1 sums)."""
    cov = behavioral_covariates(traj, epi)
    out = np.zeros_like(cov)
    out[1:] = cov[:-1]
    return out


def linear_predictor(coeffs: RegionCoeffs, u_w, cov_prev) -> float:
    """Log predicted weekly rate; cov_prev holds raw previous-week fractions."""
    return kernels.weekly_log_predictor(
        coeffs.as_vector(), np.asarray(u_w, dtype=np.float64),
        np.asarray(cov_prev, dtype=np.float64), COVARIATE_SCALES,
    )


def _student_t_logpdf(x: np.ndarray, nu: float, sigma: float) -> np.ndarray:
    z = x / sigma
    return (
        math.lgamma((nu + 1) / 2)
        - math.lgamma(nu / 2)
        - 0.5 * math.log(nu * math.pi)
        - math.log(sigma)
        - (nu + 1) / 2 * np.log1p(z * z / nu)
    )


def ar1_residuals(log_r0: np.ndarray, log_pred: np.ndarray, phi: float) -> np.ndarray:
    """Innovations of the AR(1) residual recursion; week 1 is unconditional."""
    resid = log_r0 - log_pred
    eps = np.empty_like(resid)
    eps[0] = resid[0]
    eps[1:] = resid[1:] - phi * resid[:-1]
    return eps


def regression_loglik(
    log_r0,
    coeffs: RegionCoeffs,
    pooled: PooledEffects,
    u,
    cov_lagged,
) -> float:
    """Student-t likelihood of one region's weekly log-rate series."""
    log_r0 = np.asarray(log_r0, dtype=np.float64)
    if np.any(~np.isfinite(log_r0)):
        raise ValueError("log rates must be finite (positive input rates)")
    u = np.asarray(u, dtype=np.float64)
    cov_lagged = np.asarray(cov_lagged, dtype=np.float64)
    if not -1.0 < pooled.phi < 1.0:
        raise ValueError("AR(1) parameter outside (-1, 1)")
    vec = coeffs.as_vector()
    preds = _predict_series(vec, u, cov_lagged)
    eps = ar1_residuals(log_r0, preds, pooled.phi)
    return float(np.sum(_student_t_logpdf(eps, pooled.nu_eps, pooled.sigma_eps)))


def _predict_series(vec: np.ndarray, u: np.ndarray, cov_lagged: np.ndarray) -> np.ndarray:
    scaled = cov_lagged * COVARIATE_SCALES
    return vec[IX_LOG_R0] + u @ vec[:N_NPI] + scaled @ vec[N_NPI : N_NPI + 3]


def total_effect(coeffs: RegionCoeffs) -> tuple[float, float]:
    """Sum of intervention effects and the implied percent rate reduction."""
    alpha = float(coeffs.beta_u.sum())
    return alpha, 100.0 * (1.0 - math.exp(alpha))


def stringency_weights(coeffs: RegionCoeffs) -> np.ndarray:
    """Per-intervention shares of the total effect; a data-driven stringency index."""
    alpha = float(coeffs.beta_u.sum())
    if alpha == 0.0:
        raise ValueError("total effect is zero; weights undefined")
    return coeffs.beta_u / alpha


# ---------------------------------------------------------------------------
# deterministic orthant probability (Genz sequential conditioning on a fixed
# scrambling-free Sobol lattice)

_SOBOL_CACHE: dict = {}


def _sobol_points(dim: int, n: int = 2048) -> np.ndarray:
    key = (dim, n)
    if key not in _SOBOL_CACHE:
        pts = qmc.Sobol(dim, scramble=False).random(n)
        _SOBOL_CACHE[key] = np.clip((pts + 0.5) % 1.0, 1e-12, 1 - 1e-12)
    return _SOBOL_CACHE[key]


def orthant_log_prob_nonpositive(mu: np.ndarray, cov: np.ndarray, n_points: int = 2048) -> float:
    """log P(X <= 0 componentwise), X ~ N(mu, cov). Deterministic given inputs."""
    mu = np.asarray(mu, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    d = mu.shape[0]
    try:
        chol = np.linalg.cholesky(cov + 1e-12 * np.eye(d))
    except np.linalg.LinAlgError:
        return -math.inf
    b = -mu
    u = _sobol_points(d, n_points)
    n = u.shape[0]
    log_w = np.zeros(n)
    y = np.zeros((n, d))
    for i in range(d):
        resid = b[i] - y[:, :i] @ chol[i, :i] if i else np.full(n, b[i])
        e = ndtr(resid / chol[i, i])
        e = np.clip(e, 1e-300, 1.0)
        log_w += np.log(e)
        if i < d - 1:
            y[:, i] = ndtri(np.clip(u[:, i] * e, 1e-300, 1 - 1e-16))
    m = log_w.max()
    if not np.isfinite(m):
        return -math.inf
    return float(m + math.log(np.exp(log_w - m).mean()))


# ---------------------------------------------------------------------------
# hierarchical sampler


@dataclass
class RegionRegressionData:
    """One region's stage-two inputs for a single upstream trajectory draw."""

    region_id: str
    log_r0: np.ndarray  # (W,)
    u: np.ndarray  # (W, 11)
    cov_lagged: np.ndarray  # (W, 3) raw fractions feeding each week

    def __post_init__(self):
        self.log_r0 = np.asarray(self.log_r0, dtype=np.float64)
        self.u = np.asarray(self.u, dtype=np.float64)
        self.cov_lagged = np.asarray(self.cov_lagged, dtype=np.float64)
        W = self.log_r0.shape[0]
        if self.u.shape != (W, N_NPI) or self.cov_lagged.shape != (W, 3):
            raise ValueError("misaligned week grids")


@dataclass
class Stage2Config:
    model_variant: str = "ii"
    n_chains: int = 2
    n_iter: int = 1200
    n_warmup: int = 600
    seed: int = 0
    orthant_points: int = 2048
    # Stan-style bounds without renormalization (the reference implementation
    # idiom); True switches on the exact orthant-normalized density
    normalize_truncation: bool = False
    nu_bounds: tuple = (1.0, 500.0)
    rhat_limit: float = 1.05
    # calibration-harness priors: when set, the flat global-mean prior becomes
    # N(theta_prior_mean, theta_prior_sd^2) and the half-t(3, 2.5) scale priors
    # become half-normal(lam_prior_sd / sigma_prior_sd). Synthetic-recovery
    # tests draw truths from these same distributions, which makes nominal
    # interval coverage exact; production fits leave them None.
    theta_prior_mean: np.ndarray | None = None
    theta_prior_sd: np.ndarray | None = None
    lam_prior_sd: float | None = None
    sigma_prior_sd: float | None = None


@dataclass
class Stage2Result:
    model_variant: str
    theta: np.ndarray  # (n_draws, 15) pooled effects (excluded coords zero)
    region: np.ndarray  # (n_draws, S, 15)
    lam: np.ndarray  # (n_draws, d_active)
    phi: np.ndarray
    sigma_eps: np.ndarray
    nu_eps: np.ndarray
    region_ids: list
    diagnostics: dict = field(default_factory=dict)
    converged: bool = True

    def pooled_coeffs(self, draw: int) -> RegionCoeffs:
        return RegionCoeffs.from_vector(self.theta[draw], self.model_variant)

    def region_coeffs(self, draw: int, s: int) -> RegionCoeffs:
        return RegionCoeffs.from_vector(self.region[draw, s], self.model_variant)


class _HierarchicalModel:
    """Joint posterior over region effects, pooled effects, and covariance."""

    def __init__(self, regions: list[RegionRegressionData], config: Stage2Config):
        self.regions = regions
        self.config = config
        self.S = len(regions)
        excluded = MODEL_EXCLUDED[config.model_variant]
        self.active = np.array([j for j in range(N_COEF) if j not in excluded])
        self.d = self.active.size
        self.n_corr = self.d * (self.d - 1) // 2
        self.tril = np.tril_indices(self.d, -1)
        self._u_active = [r.u for r in regions]
        self._cov_scaled = [r.cov_lagged * COVARIATE_SCALES for r in regions]
        self._logr0 = [r.log_r0 for r in regions]

    # state is a dict of arrays, updated in place by the sampler

    def region_loglik(self, s: int, coef_active: np.ndarray, phi: float,
                      sigma_eps: float, nu_eps: float) -> float:
        vec = np.zeros(N_COEF)
        vec[self.active] = coef_active
        pred = (vec[IX_LOG_R0] + self._u_active[s] @ vec[:N_NPI]
                + self._cov_scaled[s] @ vec[N_NPI : N_NPI + 3])
        resid = self._logr0[s] - pred
        eps = np.empty_like(resid)
        eps[0] = resid[0]
        eps[1:] = resid[1:] - phi * resid[:-1]
        return float(np.sum(_student_t_logpdf(eps, nu_eps, sigma_eps)))

    def build_chol(self, lam: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Cholesky of V from scales and canonical partial correlations."""
        d = self.d
        L = np.zeros((d, d))
        L[0, 0] = 1.0
        zi = 0
        for i in range(1, d):
            rem = 1.0
            for j in range(i):
                L[i, j] = z[zi] * math.sqrt(rem)
                rem *= 1.0 - z[zi] ** 2
                zi += 1
            L[i, i] = math.sqrt(rem)
        return lam[:, None] * L

    def lkj_log_density(self, y: np.ndarray, z: np.ndarray, L_corr_diag: np.ndarray) -> float:
        """Uniform-over-correlations prior expressed in unconstrained space.

        Adds the tanh and CPC-to-Cholesky Jacobians to the density of the
        Cholesky factor, p(L) ∝ prod diag(L)^(d - i).
        """
        d = self.d
        lp = float(np.sum(np.log1p(-z * z)))  # tanh Jacobian
        zi = 0
        for i in range(1, d):
            for j in range(i):
                if j < i - 1:
                    lp += 0.5 * (i - 1 - j) * math.log1p(-z[zi] ** 2)
                zi += 1
            lp += (d - 1 - i) * math.log(L_corr_diag[i]) if L_corr_diag[i] > 0 else -math.inf
        return lp

    def mvn_terms(self, effects: np.ndarray, theta: np.ndarray, L_V: np.ndarray) -> float:
        """Sum over regions of log N(effect; theta, V) via the Cholesky."""
        diff = effects - theta  # (S, d)
        w = solve_triangular(L_V, diff.T, lower=True)
        logdet = float(np.sum(np.log(np.diag(L_V))))
        return float(-0.5 * np.sum(w * w) - self.S * (logdet + 0.5 * self.d * math.log(2 * math.pi)))

    def orthant(self, theta: np.ndarray, L_V: np.ndarray) -> float:
        if not self.config.normalize_truncation:
            return 0.0
        cov = L_V @ L_V.T
        return orthant_log_prob_nonpositive(
            theta[:N_NPI], cov[:N_NPI, :N_NPI], self.config.orthant_points
        )

    def lam_logprior(self, values: np.ndarray) -> float:
        values = np.asarray(values)
        if np.any(values < 0):
            return -math.inf
        sd = self.config.lam_prior_sd
        if sd is None:
            return float(np.sum(_student_t_logpdf(values, 3.0, 2.5))) + values.size * math.log(2.0)
        return float(
            np.sum(-0.5 * (values / sd) ** 2)
            - values.size * (math.log(sd) + 0.5 * math.log(2 * math.pi) - math.log(2.0))
        )

    def lam_logprior_one(self, v: float) -> float:
        sd = self.config.lam_prior_sd
        return _half_t_logpdf(v) if sd is None else _half_normal_logpdf(v, sd)

    def sigma_logprior(self, v: float) -> float:
        sd = self.config.sigma_prior_sd
        return _half_t_logpdf(v) if sd is None else _half_normal_logpdf(v, sd)

    def theta_logprior(self, theta: np.ndarray) -> float:
        if self.config.theta_prior_mean is None:
            return 0.0
        m0 = np.asarray(self.config.theta_prior_mean)[self.active]
        s0 = np.asarray(self.config.theta_prior_sd)[self.active]
        return float(np.sum(-0.5 * ((theta - m0) / s0) ** 2 - np.log(s0)))

    def theta_gibbs(self, effects: np.ndarray, L_V: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
        """Exact conditional draw of the global means (flat or normal prior)."""
        theta_bar = effects.mean(axis=0)
        if self.config.theta_prior_mean is None:
            return theta_bar + (L_V @ rng.standard_normal(self.d)) / math.sqrt(self.S)
        m0 = np.asarray(self.config.theta_prior_mean)[self.active]
        s0 = np.asarray(self.config.theta_prior_sd)[self.active]
        v_inv = np.linalg.inv(L_V @ L_V.T)
        prec = self.S * v_inv + np.diag(1.0 / s0**2)
        cov = np.linalg.inv(prec)
        mean = cov @ (self.S * (v_inv @ theta_bar) + m0 / s0**2)
        L = np.linalg.cholesky(cov)
        return mean + L @ rng.standard_normal(self.d)


def _half_t_logpdf(v: float, dof: float = 3.0, scale: float = 2.5) -> float:
    if v < 0:
        return -math.inf
    return float(_student_t_logpdf(np.array([v]), dof, scale)[0]) + math.log(2.0)


def _half_normal_logpdf(v: float, sd: float) -> float:
    if v < 0:
        return -math.inf
    return -0.5 * (v / sd) ** 2 - math.log(sd) - 0.5 * math.log(2 * math.pi) + math.log(2.0)


def sample_truncated_mvn_nonpositive(
    mu: np.ndarray,
    cov: np.ndarray,
    n_constrained: int,
    rng: np.random.Generator,
    sweeps: int = 80,
) -> np.ndarray:
    """Exact-distribution Gibbs draw from N(mu, cov) with the first
    n_constrained coordinates restricted to (-inf, 0].

    Rejection sampling dies when the mean sits above the boundary at small
    scale; coordinate-wise truncated-normal conditionals do not.
    """
    from scipy.stats import truncnorm

    mu = np.asarray(mu, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    d = mu.shape[0]
    prec = np.linalg.inv(cov + 1e-12 * np.eye(d))
    x = np.minimum(mu, -1e-6 * np.ones(d)) if n_constrained == d else mu.copy()
    x[:n_constrained] = np.minimum(x[:n_constrained], -1e-6)
    for _ in range(sweeps):
        for k in range(d):
            var_k = 1.0 / prec[k, k]
            others = np.delete(np.arange(d), k)
            mean_k = mu[k] - var_k * prec[k, others] @ (x[others] - mu[others])
            sd_k = math.sqrt(var_k)
            if k < n_constrained:
                beta = (0.0 - mean_k) / sd_k
                x[k] = float(truncnorm.rvs(-np.inf, beta, loc=mean_k, scale=sd_k, random_state=rng))
            else:
                x[k] = mean_k + sd_k * rng.standard_normal()
    return x


def sample_lkj_cpc(d: int, rng: np.random.Generator) -> np.ndarray:
    """Canonical partial correlations of a uniform (LKJ eta=1) correlation matrix.

    In the build_chol ordering, z_ij for column j is 2*Beta(b, b) - 1 with
    b = (d - j) / 2; the j=0 entries reproduce the known Beta(d/2, d/2)
    marginal of a single correlation.
    """
    z = []
    for i in range(1, d):
        for j in range(i):
            b = (d - j) / 2.0
            z.append(2.0 * rng.beta(b, b) - 1.0)
    return np.asarray(z)


def fit_hierarchical(
    region_draws: list[list[RegionRegressionData]],
    config: Stage2Config | None = None,
) -> Stage2Result:
    """Fit the pooled regression across regions, propagating upstream draws.

    region_draws[i] holds one RegionRegressionData per region for upstream
    trajectory draw i; each of the M draws gets its own (shorter) MCMC fit and
    the posteriors are pooled by concatenation.
    """
    config = config or Stage2Config()
    if config.normalize_truncation and config.theta_prior_mean is not None:
        raise ValueError("harness priors are only supported without truncation normalization")
    results = []
    for i, regions in enumerate(region_draws):
        results.append(_fit_single(regions, config, config.seed + 7919 * i))
    theta = np.concatenate([r.theta for r in results])
    region = np.concatenate([r.region for r in results])
    lam = np.concatenate([r.lam for r in results])
    phi = np.concatenate([r.phi for r in results])
    sigma_eps = np.concatenate([r.sigma_eps for r in results])
    nu_eps = np.concatenate([r.nu_eps for r in results])
    diagnostics = results[0].diagnostics if len(results) == 1 else {
        "n_fits": len(results),
        "worst_rhat": float(max(r.diagnostics.get("worst_rhat", math.nan) for r in results)),
    }
    return Stage2Result(
        model_variant=config.model_variant,
        theta=theta,
        region=region,
        lam=lam,
        phi=phi,
        sigma_eps=sigma_eps,
        nu_eps=nu_eps,
        region_ids=results[0].region_ids,
        diagnostics=diagnostics,
        converged=all(r.converged for r in results),
    )


def _fit_single(regions: list[RegionRegressionData], config: Stage2Config, seed: int) -> Stage2Result:
    model = _HierarchicalModel(regions, config)
    S, d = model.S, model.d
    rng = np.random.default_rng(seed)
    n_kept = config.n_iter - config.n_warmup

    chains_out = {k: [] for k in ("theta", "region", "lam", "phi", "sigma", "nu")}
    for chain in range(config.n_chains):
        crng = np.random.default_rng(seed + 104729 * (chain + 1))
        out = _run_hier_chain(model, config, crng, n_kept)
        for k, v in out.items():
            chains_out[k].append(v)

    # convergence on pooled scalars
    diagnostics = {"rhat": {}}
    worst = 1.0
    theta_chains = np.stack(chains_out["theta"])  # (chains, kept, d)
    lam_chains = np.stack(chains_out["lam"])
    for j in range(d):
        for label, series in ((f"theta[{j}]", theta_chains[:, :, j]),
                              (f"log_lam[{j}]", np.log(lam_chains[:, :, j]))):
            r = mcmc.split_rhat(series)
            diagnostics["rhat"][label] = r
            if np.isfinite(r):
                worst = max(worst, r)
    for name in ("phi", "sigma", "nu"):
        r = mcmc.split_rhat(np.stack(chains_out[name]))
        diagnostics["rhat"][name] = r
        if np.isfinite(r):
            worst = max(worst, r)
    diagnostics["worst_rhat"] = worst
    converged = worst <= config.rhat_limit

    def _expand(arr_active):
        out = np.zeros(arr_active.shape[:-1] + (N_COEF,))
        out[..., model.active] = arr_active
        return out

    theta = _expand(np.concatenate(chains_out["theta"]))
    region = _expand(np.concatenate(chains_out["region"]))
    return Stage2Result(
        model_variant=config.model_variant,
        theta=theta,
        region=region,
        lam=np.concatenate(chains_out["lam"]),
        phi=np.concatenate(chains_out["phi"]),
        sigma_eps=np.concatenate(chains_out["sigma"]),
        nu_eps=np.concatenate(chains_out["nu"]),
        region_ids=[r.region_id for r in regions],
        diagnostics=diagnostics,
        converged=converged,
    )


def _truncnorm_draw(mean: float, sd: float, lo: float, hi: float,
                    rng: np.random.Generator) -> float:
    """Inverse-CDF draw from a two-sided truncated normal."""
    a = ndtr((lo - mean) / sd)
    b = ndtr((hi - mean) / sd)
    u = a + rng.random() * (b - a)
    return mean + sd * float(ndtri(min(max(u, 1e-300), 1 - 1e-16)))


def _truncnorm_draw_upper(mean: float, sd: float, hi: float,
                          rng: np.random.Generator) -> float:
    """Draw from N(mean, sd^2) restricted to (-inf, hi]."""
    b = ndtr((hi - mean) / sd)
    u = rng.random() * b
    return mean + sd * float(ndtri(min(max(u, 1e-300), 1 - 1e-16)))


def _gibbs_truncated_mvn(
    mu: np.ndarray,
    prec: np.ndarray,
    n_constrained: int,
    x0: np.ndarray,
    rng: np.random.Generator,
    sweeps: int = 4,
) -> np.ndarray:
    """A few Gibbs sweeps targeting N(mu, prec^-1) with the first
    n_constrained coordinates restricted to (-inf, 0].

    Any sweep count leaves the conditional invariant; the caller supplies the
    current value so this composes into a larger Gibbs scheme.
    """
    d = mu.shape[0]
    x = x0.copy()
    x[:n_constrained] = np.minimum(x[:n_constrained], 0.0)
    for _ in range(sweeps):
        for k in range(d):
            var_k = 1.0 / prec[k, k]
            delta = x - mu
            delta[k] = 0.0
            mean_k = mu[k] - var_k * float(prec[k] @ delta)
            sd_k = math.sqrt(var_k)
            if k < n_constrained:
                x[k] = _truncnorm_draw_upper(mean_k, sd_k, 0.0, rng)
            else:
                x[k] = mean_k + sd_k * rng.standard_normal()
    return x


def _slice_1d(logf, x0: float, rng: np.random.Generator, w: float = 0.5,
              max_steps: int = 30) -> tuple[float, float]:
    """Univariate slice sampler with stepping out and shrinkage."""
    f0 = logf(x0)
    if not np.isfinite(f0):
        return x0, f0
    level = f0 + math.log(rng.random() + 1e-300)
    left = x0 - w * rng.random()
    right = left + w
    for _ in range(max_steps):
        if logf(left) <= level:
            break
        left -= w
    for _ in range(max_steps):
        if logf(right) <= level:
            break
        right += w
    for _ in range(60):
        x1 = left + rng.random() * (right - left)
        f1 = logf(x1)
        if f1 > level:
            return x1, f1
        if x1 < x0:
            left = x1
        else:
            right = x1
    return x0, f0


def _warm_start_effects(model: _HierarchicalModel, rng: np.random.Generator) -> np.ndarray:
    """Per-region bounded least squares on the log-rate series (plus jitter)."""
    from scipy.optimize import minimize

    S, d = model.S, model.d
    effects = np.empty((S, d))
    bounds = [(None, 0.0)] * N_NPI + [(None, None)] * (d - N_NPI)
    for s in range(S):
        x0 = np.zeros(d)
        x0[-1] = float(np.mean(model._logr0[s]))

        def nll(v):
            return -model.region_loglik(s, v, 0.0, 0.2, 10.0) + 0.5 * np.sum(v[:N_NPI] ** 2)

        res = minimize(nll, x0, method="L-BFGS-B", bounds=bounds, options={"maxiter": 150})
        effects[s] = res.x if np.isfinite(res.fun) else x0
        effects[s, :N_NPI] = np.minimum(effects[s, :N_NPI], 0.0) - 1e-4
        effects[s] += np.concatenate([
            -np.abs(rng.normal(0, 0.005, N_NPI)), rng.normal(0, 0.01, d - N_NPI)])
        effects[s, :N_NPI] = np.minimum(effects[s, :N_NPI], 0.0)
    return effects


def _run_hier_chain(model: _HierarchicalModel, config: Stage2Config,
                    rng: np.random.Generator, n_kept: int) -> dict:
    """Gibbs-with-augmentation chain for one hierarchical fit.

    Student-t residuals are represented as scale mixtures of normals, making
    the region-effect conditionals Gaussian (truncated on the intervention
    coordinates) and the AR parameter conjugate; covariance scales move by
    exact univariate slices plus an adaptive correlation block.
    """
    S, d = model.S, model.d
    n_iter, n_warmup = config.n_iter, config.n_warmup
    nu_lo, nu_hi = config.nu_bounds
    normalize = config.normalize_truncation
    W_s = [r.log_r0.shape[0] for r in model.regions]

    # design matrices: intervention columns, scaled behavioral columns, intercept
    X_s = []
    y_s = []
    for r in model.regions:
        cols = [r.u]
        scaled = r.cov_lagged * COVARIATE_SCALES
        keep = [j - N_NPI for j in model.active if N_NPI <= j < N_NPI + 3]
        cols.append(scaled[:, keep])
        cols.append(np.ones((r.log_r0.shape[0], 1)))
        X_s.append(np.concatenate(cols, axis=1))
        y_s.append(r.log_r0.copy())

    effects = _warm_start_effects(model, rng)
    theta = effects.mean(axis=0)
    lam = np.clip(effects.std(axis=0, ddof=1) if S > 1 else np.full(d, 0.1), 0.03, 1.0)
    z = np.zeros(model.n_corr)
    y_corr = np.zeros(model.n_corr)
    phi = 0.0
    sigma = 0.1
    nu = 4.0
    g_s = [np.ones(w) for w in W_s]

    corr_prop = mcmc._BlockState(mcmc.Block("corr", np.arange(max(model.n_corr, 1)), init_scale=0.05))
    L_V = model.build_chol(lam, z)
    log_z = model.orthant(theta, L_V)

    kept = {
        "theta": np.empty((n_kept, d)),
        "region": np.empty((n_kept, S, d)),
        "lam": np.empty((n_kept, d)),
        "phi": np.empty(n_kept),
        "sigma": np.empty(n_kept),
        "nu": np.empty(n_kept),
    }

    def ar_transform(X, y, phi_):
        Xt = X.copy()
        yt = y.copy()
        Xt[1:] = X[1:] - phi_ * X[:-1]
        yt[1:] = y[1:] - phi_ * y[:-1]
        return Xt, yt

    for it in range(n_iter):
        if it == n_warmup:
            corr_prop.freeze()

        v_inv = np.linalg.inv(L_V @ L_V.T + 1e-12 * np.eye(d))

        # -- region effects: exact truncated-Gaussian conditionals --
        for s in range(S):
            Xt, yt = ar_transform(X_s[s], y_s[s], phi)
            wts = 1.0 / (sigma * sigma * g_s[s])
            prec = (Xt.T * wts) @ Xt + v_inv
            rhs = (Xt.T * wts) @ yt + v_inv @ theta
            cov = np.linalg.inv(prec)
            mu = cov @ rhs
            effects[s] = _gibbs_truncated_mvn(mu, prec, N_NPI, effects[s], rng, sweeps=3)

        # -- mixture weights --
        for s in range(S):
            Xt, yt = ar_transform(X_s[s], y_s[s], phi)
            eps = yt - Xt @ effects[s]
            b = (nu + (eps / sigma) ** 2) / 2.0
            g_s[s] = b / rng.gamma((nu + 1.0) / 2.0, 1.0, size=eps.shape[0])

        # -- AR parameter: Gaussian in phi given weights, truncated to (-1, 1) --
        num = 0.0
        den = 0.0
        for s in range(S):
            r_resid = y_s[s] - X_s[s] @ effects[s]
            wts = 1.0 / (sigma * sigma * g_s[s][1:])
            num += float(np.sum(r_resid[1:] * r_resid[:-1] * wts))
            den += float(np.sum(r_resid[:-1] ** 2 * wts))
        if den > 1e-12:
            phi = _truncnorm_draw(num / den, math.sqrt(1.0 / den), -1.0, 1.0, rng)
        else:
            phi = rng.uniform(-1.0, 1.0)

        # -- residual scale and dof: slices on the closed-form conditionals --
        eps_all = []
        for s in range(S):
            Xt, yt = ar_transform(X_s[s], y_s[s], phi)
            eps_all.append(yt - Xt @ effects[s])
        quad = float(sum(np.sum(e * e / g) for e, g in zip(eps_all, g_s)))
        n_obs = sum(W_s)

        def logf_sigma(ylog):
            if not -12.0 < ylog < 4.0:
                return -math.inf
            sig = math.exp(ylog)
            return (-0.5 * quad / (sig * sig) - n_obs * ylog
                    + model.sigma_logprior(sig) + ylog)

        ylog, _ = _slice_1d(logf_sigma, math.log(sigma), rng, w=0.5)
        sigma = math.exp(ylog)

        g_flat = np.concatenate(g_s)
        sum_log_g = float(np.sum(np.log(g_flat)))
        sum_inv_g = float(np.sum(1.0 / g_flat))

        def logf_nu(ylog):
            nu_t = math.exp(ylog)
            if not nu_lo <= nu_t <= nu_hi:
                return -math.inf
            half = nu_t / 2.0
            return (n_obs * (half * math.log(half) - math.lgamma(half))
                    - (half + 1.0) * sum_log_g - half * sum_inv_g)

        ylog, _ = _slice_1d(logf_nu, math.log(nu), rng, w=0.7)
        nu = math.exp(ylog)

        # -- pooled means --
        if normalize:
            theta_bar = effects.mean(axis=0)
            prop_theta = theta_bar + (L_V @ rng.standard_normal(d)) / math.sqrt(S)
            log_z_new = model.orthant(prop_theta, L_V)
            if math.log(rng.random() + 1e-300) < S * (log_z - log_z_new):
                theta = prop_theta
                log_z = log_z_new
        else:
            theta = model.theta_gibbs(effects, L_V, rng)

        # -- covariance scales: exact univariate slices. With V = D(lam) C
        # D(lam), the quadratic form needs only the correlation Cholesky
        # inverse and row-scaled differences, so each slice eval is a small
        # matmul --
        L_corr = model.build_chol(np.ones(d), z)
        Lc_inv = solve_triangular(L_corr, np.eye(d), lower=True)
        diff_t = (effects - theta).T  # (d, S)
        for k in range(d):
            yk = math.log(lam[k])
            trial = lam.copy()

            def logf_lam(y):
                # terms constant in lam_k are dropped
                if not -12.0 < y < 3.0:
                    return -math.inf
                trial[k] = math.exp(y)
                w = Lc_inv @ (diff_t / trial[:, None])
                val = -0.5 * float(np.sum(w * w)) - S * y
                val += model.lam_logprior_one(trial[k]) + y
                if normalize:
                    val -= S * model.orthant(theta, model.build_chol(trial, z))
                return val

            y_new, _ = _slice_1d(logf_lam, yk, rng, w=0.7)
            lam[k] = math.exp(y_new)
        L_V = model.build_chol(lam, z)
        mvn = model.mvn_terms(effects, theta, L_V)
        log_z = model.orthant(theta, L_V)

        # -- correlation structure: adaptive Metropolis block --
        if model.n_corr:
            prop_y = corr_prop.propose(y_corr, rng)
            prop_z = np.tanh(prop_y)
            L_new = model.build_chol(lam, prop_z)
            mvn_new = model.mvn_terms(effects, theta, L_new)
            log_z_new = model.orthant(theta, L_new)
            lkj_new = model.lkj_log_density(prop_y, prop_z, np.diag(L_new) / lam)
            lkj_old = model.lkj_log_density(y_corr, z, np.diag(L_V) / lam)
            log_a = (mvn_new - S * log_z_new + lkj_new) - (mvn - S * log_z + lkj_old)
            a = 1.0 if log_a >= 0 else math.exp(max(log_a, -700))
            if np.isfinite(log_a) and math.log(rng.random() + 1e-300) < log_a:
                y_corr = prop_y
                z = prop_z
                L_V = L_new
                log_z = log_z_new
            corr_prop.adapt(y_corr, a if np.isfinite(log_a) else 0.0, it)

        if it >= n_warmup:
            k_it = it - n_warmup
            kept["theta"][k_it] = theta
            kept["region"][k_it] = effects
            kept["lam"][k_it] = lam
            kept["phi"][k_it] = phi
            kept["sigma"][k_it] = sigma
            kept["nu"][k_it] = nu

    return kept
