"""Adaptive random-walk Metropolis-within-Gibbs over parameter blocks.

Blocks carry Haario-style proposal covariances with a Robbins-Monro step-size
tune toward a target acceptance rate; adaptation freezes at the end of warmup.
Includes split-Rhat and autocorrelation-based effective sample size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Block",
    "ChainResult",
    "run_chain",
    "run_chains",
    "split_rhat",
    "ess",
    "mcse",
]


@dataclass
class Block:
    """A named coordinate block of the unconstrained parameter vector."""

    name: str
    idx: np.ndarray
    init_scale: float = 0.1
    target_accept: float | None = None  # default depends on dimension

    def __post_init__(self):
        self.idx = np.asarray(self.idx, dtype=np.int64)
        if self.target_accept is None:
            self.target_accept = 0.44 if self.idx.size == 1 else 0.234


class _BlockState:
    """Running proposal state for one block."""

    def __init__(self, block: Block):
        d = block.idx.size
        self.block = block
        self.log_scale = math.log(block.init_scale)
        self.mean = np.zeros(d)
        self.cov = np.eye(d)
        self.chol = np.eye(d)
        self.count = 0
        self.frozen = False

    def propose(self, x_block: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(x_block.size)
        return x_block + math.exp(self.log_scale) * (self.chol @ z)

    def adapt(self, x_block: np.ndarray, accept_prob: float, iteration: int) -> None:
        if self.frozen:
            return
        gamma = 1.0 / (iteration + 10) ** 0.6
        self.log_scale += gamma * (accept_prob - self.block.target_accept)
        self.count += 1
        w = 1.0 / self.count
        delta = x_block - self.mean
        self.mean += w * delta
        self.cov = (1 - w) * self.cov + w * np.outer(delta, delta)
        if self.count >= 20 and self.count % 25 == 0:
            d = x_block.size
            reg = self.cov + 1e-8 * np.eye(d)
            try:
                self.chol = np.linalg.cholesky((2.38**2 / d) * reg)
            except np.linalg.LinAlgError:
                pass

    def freeze(self) -> None:
        self.frozen = True


@dataclass
class ChainResult:
    samples: np.ndarray  # (n_kept, dim), post-warmup
    log_post: np.ndarray  # (n_kept,)
    accept_rates: dict = field(default_factory=dict)


def run_chain(
    log_post,
    x0: np.ndarray,
    blocks: list[Block],
    n_iter: int,
    n_warmup: int,
    seed: int,
    thin: int = 1,
    extra_moves: list | None = None,
) -> ChainResult:
    """One chain of blockwise adaptive random-walk Metropolis.

    extra_moves are model-specific reversible kernels run once per iteration
    after the blocks; each is called as move(x, lp, rng, frozen) and returns
    (x, lp, accepted). They handle their own step-size adaptation.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x0, dtype=np.float64)
    lp = log_post(x)
    if not np.isfinite(lp):
        raise ValueError("log posterior not finite at the initial point")
    states = [_BlockState(b) for b in blocks]
    extra_moves = extra_moves or []
    kept = []
    kept_lp = []
    n_acc = {b.name: 0 for b in blocks}
    n_try = {b.name: 0 for b in blocks}
    for mv in extra_moves:
        n_acc[mv.name] = 0
        n_try[mv.name] = 0
    for it in range(n_iter):
        if it == n_warmup:
            for st in states:
                st.freeze()
        for st in states:
            idx = st.block.idx
            prop = x.copy()
            prop[idx] = st.propose(x[idx], rng)
            lp_prop = log_post(prop)
            if math.isnan(lp_prop):
                lp_prop = -math.inf
            log_alpha = lp_prop - lp
            accept_prob = 1.0 if log_alpha >= 0 else math.exp(max(log_alpha, -745.0))
            n_try[st.block.name] += 1
            if np.isfinite(lp_prop) and math.log(rng.random() + 1e-300) < log_alpha:
                x = prop
                lp = lp_prop
                n_acc[st.block.name] += 1
            if np.isfinite(lp_prop):
                st.adapt(x[idx], accept_prob, it)
            else:
                st.adapt(x[idx], 0.0, it)
        for mv in extra_moves:
            x, lp, acc = mv(x, lp, rng, frozen=it >= n_warmup)
            n_try[mv.name] += 1
            n_acc[mv.name] += int(acc)
        if it >= n_warmup and (it - n_warmup) % thin == 0:
            kept.append(x.copy())
            kept_lp.append(lp)
    rates = {k: n_acc[k] / max(n_try[k], 1) for k in n_acc}
    return ChainResult(np.asarray(kept), np.asarray(kept_lp), rates)


def run_chains(
    log_post, x0s, blocks, n_iter, n_warmup, seed, thin: int = 1, extra_moves_factory=None
) -> list[ChainResult]:
    """Independent chains; each chain reseeds from the base seed.

    extra_moves_factory, when given, is called per chain to build fresh
    (stateful) move objects.
    """
    results = []
    for c, x0 in enumerate(x0s):
        moves = extra_moves_factory() if extra_moves_factory else None
        results.append(
            run_chain(log_post, x0, blocks, n_iter, n_warmup, seed + 1000 * c, thin, moves)
        )
    return results


def run_hmc_chain(
    logpost_grad,
    x0: np.ndarray,
    n_iter: int,
    n_warmup: int,
    seed: int,
    n_leapfrog: int = 10,
    target_accept: float = 0.8,
    extra_moves: list | None = None,
    thin: int = 1,
    reflect_lo: np.ndarray | None = None,
    reflect_hi: np.ndarray | None = None,
) -> ChainResult:
    """Hamiltonian chain with dual-averaged step size and diagonal mass.

    logpost_grad(x) returns (lp, grad). Step size adapts toward
    target_accept during warmup (Nesterov dual averaging); the mass matrix is
    refreshed from running sample variances. extra_moves run once per
    iteration, as in run_chain. reflect_lo/hi give hard-wall coordinates where
    the leapfrog bounces (billiard reflection) instead of crashing into the
    support boundary.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x0, dtype=np.float64)
    lp, grad = logpost_grad(x)
    if not np.isfinite(lp):
        raise ValueError("log posterior not finite at the initial point")
    dim = x.size
    extra_moves = extra_moves or []
    lo = np.full(dim, -np.inf) if reflect_lo is None else np.asarray(reflect_lo, dtype=np.float64)
    hi = np.full(dim, np.inf) if reflect_hi is None else np.asarray(reflect_hi, dtype=np.float64)
    reflective = np.any(np.isfinite(lo)) or np.any(np.isfinite(hi))

    def _reflect(xq, pq):
        for _ in range(10):
            below = xq < lo
            above = xq > hi
            if not (below.any() or above.any()):
                return True
            xq[below] = 2 * lo[below] - xq[below]
            pq[below] = -pq[below]
            xq[above] = 2 * hi[above] - xq[above]
            pq[above] = -pq[above]
        return False

    inv_mass = np.ones(dim)
    # dual averaging state
    eps = 0.1
    mu_da = math.log(10 * eps)
    log_eps_bar = 0.0
    h_bar = 0.0
    da_count = 0
    # running moments for the mass matrix
    w_count = 0
    w_mean = np.zeros(dim)
    w_m2 = np.zeros(dim)

    kept = []
    kept_lp = []
    n_acc = 0
    n_div = 0
    acc_extra = {mv.name: 0 for mv in extra_moves}

    for it in range(n_iter):
        frozen = it >= n_warmup
        step = eps * math.exp(0.1 * rng.standard_normal())
        p0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
        h0 = -lp + 0.5 * float(np.sum(p0 * p0 * inv_mass))
        xq = x.copy()
        pq = p0.copy()
        lpq, gq = lp, grad
        diverged = False
        for _ in range(n_leapfrog):
            pq = pq + 0.5 * step * gq
            xq = xq + step * inv_mass * pq
            if reflective and not _reflect(xq, pq):
                diverged = True
                break
            lpq, gq = logpost_grad(xq)
            if not np.isfinite(lpq):
                diverged = True
                break
            pq = pq + 0.5 * step * gq
        if diverged:
            accept_prob = 0.0
        else:
            h1 = -lpq + 0.5 * float(np.sum(pq * pq * inv_mass))
            log_alpha = h0 - h1
            accept_prob = 1.0 if log_alpha >= 0 else math.exp(max(log_alpha, -745.0))
            if math.log(rng.random() + 1e-300) < log_alpha:
                x, lp, grad = xq, lpq, gq
                n_acc += 1
        if diverged and frozen:
            n_div += 1

        if not frozen:
            da_count += 1
            frac = 1.0 / (da_count + 10)
            h_bar = (1 - frac) * h_bar + frac * (target_accept - accept_prob)
            log_eps = mu_da - math.sqrt(da_count) / 0.05 * h_bar
            w = da_count**-0.75
            log_eps_bar = w * log_eps + (1 - w) * log_eps_bar
            eps = math.exp(log_eps)
            if it >= n_warmup // 3:
                w_count += 1
                delta = x - w_mean
                w_mean += delta / w_count
                w_m2 += delta * (x - w_mean)
                if w_count >= 50 and w_count % 100 == 0:
                    var = w_m2 / (w_count - 1)
                    inv_mass = np.clip(var, 1e-8, None)
        if it == n_warmup - 1:
            eps = math.exp(log_eps_bar)

        moved = False
        for mv in extra_moves:
            x, lp, acc = mv(x, lp, rng, frozen=frozen)
            acc_extra[mv.name] += int(acc)
            moved = moved or acc
        if moved:
            lp, grad = logpost_grad(x)

        if frozen and (it - n_warmup) % thin == 0:
            kept.append(x.copy())
            kept_lp.append(lp)

    rates = {"hmc": n_acc / n_iter, "divergences": n_div}
    for mv in extra_moves:
        rates[mv.name] = acc_extra[mv.name] / n_iter
    return ChainResult(np.asarray(kept), np.asarray(kept_lp), rates)


def split_rhat(draws: np.ndarray) -> float:
    """Potential scale reduction on split half-chains.

    draws: (n_chains, n_draws) for one scalar.
    """
    draws = np.asarray(draws, dtype=np.float64)
    n_chains, n = draws.shape
    half = n // 2
    if half < 2:
        return math.nan
    segs = np.concatenate([draws[:, :half], draws[:, half : 2 * half]], axis=0)
    m, k = segs.shape
    chain_means = segs.mean(axis=1)
    chain_vars = segs.var(axis=1, ddof=1)
    w = chain_vars.mean()
    b = k * chain_means.var(ddof=1)
    if w <= 0:
        return 1.0 if b <= 1e-300 else math.inf
    var_plus = (k - 1) / k * w + b / k
    return math.sqrt(var_plus / w)


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    xc = x - x.mean()
    f = np.fft.rfft(xc, 2 * n)
    acov = np.fft.irfft(f * np.conjugate(f))[:n].real / n
    return acov


def ess(draws: np.ndarray) -> float:
    """Bulk effective sample size via Geyer's initial positive sequence."""
    draws = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    n_chains, n = draws.shape
    acovs = np.stack([_autocov(c) for c in draws])
    chain_var = acovs[:, 0].mean()
    if chain_var <= 1e-300:
        return float(n_chains * n)
    mean_acov = acovs.mean(axis=0)
    w = np.var(draws, axis=1, ddof=1).mean()
    b = np.var(draws.mean(axis=1), ddof=1) if n_chains > 1 else 0.0
    var_plus = w * (n - 1) / n + b
    rho = 1.0 - (w - mean_acov) / var_plus
    # sum consecutive pairs while positive
    tau = 1.0
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        tau += 2 * pair
        t += 2
    return float(n_chains * n / max(tau, 1e-12))


def mcse(draws: np.ndarray) -> float:
    """Monte Carlo standard error of the mean."""
    draws = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    return float(draws.std(ddof=1) / math.sqrt(max(ess(draws), 1.0)))
