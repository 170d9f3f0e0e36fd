"""Pure-Python/numpy reference implementations of the hot kernels.

Semantics here are the contract; the compiled backend must match bit-for-bit
(same operation order, scalar libm calls, no FMA contraction). Sequential
recursions are plain loops, which keeps this lane slow but exact.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import math

import numpy as np

BACKEND = "python"

# CPython ships its own lgamma; bind libm's so both lanes agree to the bit.
try:
    _libm = ctypes.CDLL(ctypes.util.find_library("m") or "libm.so.6")
    _lgamma = _libm.lgamma
    _lgamma.restype = ctypes.c_double
    _lgamma.argtypes = [ctypes.c_double]
except (OSError, AttributeError):  # pragma: no cover - platform dependent
    _lgamma = math.lgamma

_NEG_TOL = -1e-12


class DynamicsError(ValueError):
    """A compartment went negative beyond tolerance (beta too large for the day step)."""


def seird_step(state, beta, delta, gamma, mu, iota, day=None):
    """One forward-Euler day update of (S, E, I, R_S, R_D, D) fractions."""
    s, e, i, rs, rd, d = state
    inf_flow = beta * s * i
    s1 = s - inf_flow
    e1 = e + inf_flow - delta * e
    i1 = i + delta * e - gamma * i
    rs1 = rs + gamma * (1.0 - iota) * i
    rd1 = rd + gamma * iota * i - mu * rd
    d1 = d + mu * rd
    out = (s1, e1, i1, rs1, rd1, d1)
    for v in out:
        if v < _NEG_TOL:
            where = "" if day is None else f" at day {day}"
            raise DynamicsError(f"compartment went negative ({v:.3e}){where}; beta={beta:.4f}")
    return tuple(0.0 if v < 0.0 else v for v in out)


def seird_simulate(init, beta_daily, delta, gamma, mu, iota):
    """Run the daily SEIRD recursion.

    Returns (states, nu_frac): states has shape (n+1, 6) with states[0] == init,
    nu_frac[t] = beta(t) * S(t) * I(t) is the new-infection fraction incident
    on day t.
    """
    beta_daily = np.asarray(beta_daily, dtype=np.float64)
    n = beta_daily.shape[0]
    states = np.empty((n + 1, 6), dtype=np.float64)
    nu = np.empty(n, dtype=np.float64)
    cur = tuple(float(x) for x in init)
    states[0] = cur
    for t in range(n):
        b = beta_daily[t]
        nu[t] = b * cur[0] * cur[2]
        cur = seird_step(cur, b, delta, gamma, mu, iota, day=t)
        states[t + 1] = cur
    return states, nu


def misreport_adjust(raw_means, positive, theta):
    """Pile zero-run means onto later days, discounted by theta per day of lag.

    adjusted[t] = sum_j theta**j * raw[t-j], summing back to (and excluding)
    the most recent day with a positive report.
    """
    raw_means = np.asarray(raw_means, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.uint8)
    n = raw_means.shape[0]
    adj = np.empty(n, dtype=np.float64)
    for t in range(n):
        if t == 0 or positive[t - 1]:
            adj[t] = raw_means[t]
        else:
            adj[t] = raw_means[t] + theta * adj[t - 1]
    return adj


def _zinb_dispersion(m, kappa, zeta):
    # var = m + m*(zeta*m + 1 - zeta)/kappa: linear in m at zeta=0, quadratic at zeta=1
    return kappa * m / (zeta * m + (1.0 - zeta))


def zinb_logpmf(d, m, theta, kappa, zeta):
    """Log pmf of the zero-inflated mean-dispersion negative binomial."""
    if m <= 0.0:
        return 0.0 if d == 0 else -math.inf
    phi = _zinb_dispersion(m, kappa, zeta)
    log_ratio = math.log(phi / (phi + m))
    if d == 0:
        lp0 = phi * log_ratio
        if theta <= 0.0:
            return lp0
        return math.log(theta + (1.0 - theta) * math.exp(lp0))
    if theta >= 1.0:
        return -math.inf
    return (
        math.log(1.0 - theta)
        + _lgamma(d + phi)
        - _lgamma(phi)
        - _lgamma(d + 1.0)
        + phi * log_ratio
        + d * math.log(m / (phi + m))
    )


def zinb_loglik(counts, means, theta, kappa, zeta):
    """Sum of zinb_logpmf over a day series."""
    counts = np.asarray(counts)
    means = np.asarray(means, dtype=np.float64)
    total = 0.0
    for t in range(counts.shape[0]):
        lp = zinb_logpmf(int(counts[t]), float(means[t]), theta, kappa, zeta)
        if lp == -math.inf:
            return -math.inf
        total += lp
    return total


def case_means(nu, car_daily, tau, ic0):
    """Expected confirmed cases per day from the awaiting-confirmation pool.

    I_C(t+1) = I_C(t)(1 - tau) + CAR(t+1) * nu(t+1); the day-t mean is
    tau * I_C(t). nu is in persons/day; ic0 is the initial pool size.
    """
    nu = np.asarray(nu, dtype=np.float64)
    car_daily = np.asarray(car_daily, dtype=np.float64)
    n = nu.shape[0]
    out = np.empty(n, dtype=np.float64)
    ic = float(ic0)
    out[0] = tau * ic
    for t in range(1, n):
        ic = ic * (1.0 - tau) + car_daily[t] * nu[t]
        out[t] = tau * ic
    return out


def weekly_covariates(states, delta, gamma, mu, n_days):
    """Weekly incident fractions (infections, removals, deaths) from a state path.

    Week w sums delta*E(t), gamma*I(t), mu*R_D(t) over its days; the trailing
    week may be partial.
    """
    states = np.asarray(states, dtype=np.float64)
    n_weeks = (n_days + 6) // 7
    out = np.zeros((n_weeks, 3), dtype=np.float64)
    for w in range(n_weeks):
        it = 0.0
        rt = 0.0
        dt = 0.0
        for t in range(7 * w, min(7 * w + 7, n_days)):
            it += delta * states[t, 1]
            rt += gamma * states[t, 2]
            dt += mu * states[t, 4]
        out[w, 0] = it
        out[w, 1] = rt
        out[w, 2] = dt
    return out


def weekly_log_predictor(coeffs, u_w, cov, scales):
    """Log of the regression-predicted weekly transmission rate.

    coeffs layout: 11 intervention effects, then the infection/removal/death
    behavioral effects, then the log baseline rate. cov holds the previous
    week's raw incident fractions; scales converts them to reporting units.
    """
    p = float(coeffs[14])
    for k in range(11):
        p += coeffs[k] * u_w[k]
    p += coeffs[11] * (cov[0] * scales[0])
    p += coeffs[12] * (cov[1] * scales[1])
    p += coeffs[13] * (cov[2] * scales[2])
    return p


def _week_cov(states, delta, gamma, mu, start, stop):
    it = 0.0
    rt = 0.0
    dt = 0.0
    for t in range(start, stop):
        it += delta * states[t, 1]
        rt += gamma * states[t, 2]
        dt += mu * states[t, 4]
    return it, rt, dt


def _digamma(x):
    """Digamma via upward recurrence plus a 6-term asymptotic tail.

    Shared verbatim between lanes so gradients agree to the bit.
    """
    acc = 0.0
    while x < 6.0:
        acc -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    return acc + math.log(x) - 0.5 * inv - inv2 * (
        1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0)))


def _zinb_grad_day(d, m, theta, kappa, zeta):
    """Return (logpmf, dm, dtheta, dkappa, dzeta) for one observed count."""
    if m <= 0.0:
        return (0.0, 0.0, 0.0, 0.0, 0.0) if d == 0 else (-math.inf, 0.0, 0.0, 0.0, 0.0)
    s = zeta * m + (1.0 - zeta)
    phi = kappa * m / s
    dphi_dm = kappa * (1.0 - zeta) / (s * s)
    dphi_dkappa = m / s
    dphi_dzeta = -kappa * m * (m - 1.0) / (s * s)
    log_ratio = math.log(phi / (phi + m))
    if d == 0:
        lp0 = phi * log_ratio
        dlp0_dphi = log_ratio + 1.0 - phi / (phi + m)
        dlp0_dm = -phi / (phi + m)
        if theta <= 0.0:
            dm = dlp0_dm + dlp0_dphi * dphi_dm
            # d/dtheta of log(th+(1-th)e^lp0) at th=0 is e^{-lp0}-1, capped against overflow
            return (lp0, dm, math.expm1(min(-lp0, 700.0)),
                    dlp0_dphi * dphi_dkappa, dlp0_dphi * dphi_dzeta)
        e0 = math.exp(lp0)
        p0 = theta + (1.0 - theta) * e0
        w = (1.0 - theta) * e0 / p0
        dm = w * (dlp0_dm + dlp0_dphi * dphi_dm)
        return (math.log(p0), dm, (1.0 - e0) / p0,
                w * dlp0_dphi * dphi_dkappa, w * dlp0_dphi * dphi_dzeta)
    if theta >= 1.0:
        return (-math.inf, 0.0, 0.0, 0.0, 0.0)
    lp = (math.log(1.0 - theta)
          + _lgamma(d + phi) - _lgamma(phi) - _lgamma(d + 1.0)
          + phi * log_ratio + d * math.log(m / (phi + m)))
    dlp_dphi = (_digamma(d + phi) - _digamma(phi) + log_ratio
                + 1.0 - phi / (phi + m) - d / (phi + m))
    dlp_dm = -phi / (phi + m) + d * (1.0 / m - 1.0 / (phi + m))
    dm = dlp_dm + dlp_dphi * dphi_dm
    return (lp, dm, -1.0 / (1.0 - theta),
            dlp_dphi * dphi_dkappa, dlp_dphi * dphi_dzeta)


def stage1_logpost_grad(
    x, W, n_days,
    deaths, cases, pos_d, pos_c, dtilde, lgamma_dtilde,
    N, delta, gamma, mu, r0max, p,
    iota_hat, iota_sd, iota_lognorm,
    delay_mean, delay_sd, delay_lo, delay_hi, delay_lognorm,
    flat_lo, flat_hi,
    prior_only,
    want_grad=True,
):
    """Log posterior and its gradient for the region model, unconstrained space.

    Layout of x: z_r0[0:W], log_s2_r0, x0_sticks[4], logit_iota,
    z_car[W+6:2W+6], log_s2_car, logit_delay, logit_theta_d, logit_zeta_d,
    log_kappa_d, logit_theta_c, logit_zeta_c, log_kappa_c, log_ic0.
    flat_lo/flat_hi carry bounds for (s2_r0, s2_car, kappa_d, kappa_c, ic0).

    One reverse sweep through the misreport, confirmation-pool, and SEIRD
    recursions yields the exact gradient (compartment clamping excepted, a
    measure-zero event the Metropolis correction absorbs).
    """
    x = np.asarray(x, dtype=np.float64)
    dim = 2 * W + 15
    grad = np.zeros(dim)
    i_s2r, i_x0, i_iota = W, W + 1, W + 5
    i_car0, i_s2c = W + 6, 2 * W + 6
    i_delay, i_thd, i_zed, i_kad = 2 * W + 7, 2 * W + 8, 2 * W + 9, 2 * W + 10
    i_thc, i_zec, i_kac, i_ic0 = 2 * W + 11, 2 * W + 12, 2 * W + 13, 2 * W + 14
    neg_inf = (-math.inf, grad)

    for j, ix in enumerate((i_s2r, i_s2c, i_kad, i_kac, i_ic0)):
        if not flat_lo[j] <= x[ix] <= flat_hi[j]:
            return neg_inf

    lp = 0.0
    # walk paths in (0,1); logit Jacobians enter lp here, their z-gradient at the end
    q = np.empty(W)
    c = np.empty(W)
    for w in range(W):
        q[w] = _sigmoid_s(x[w])
        c[w] = _sigmoid_s(x[i_car0 + w])
        if not (0.0 < q[w] < 1.0 and 0.0 < c[w] < 1.0):
            return neg_inf
        lp += (math.log(q[w]) + math.log1p(-q[w])
               + math.log(c[w]) + math.log1p(-c[w]))
    g_q = np.zeros(W)
    g_c = np.zeros(W)

    s2r = math.exp(x[i_s2r])
    s2c = math.exp(x[i_s2c])
    g_s2r = 0.0
    g_s2c = 0.0
    for path, gpath, s2, which in ((q, g_q, s2r, 0), (c, g_c, s2c, 1)):
        for w in range(1, W):
            qp = path[w - 1]
            qw = path[w]
            a = s2 * qp
            b = s2 * (1.0 - qp)
            lq = math.log(qw)
            l1q = math.log1p(-qw)
            lp += (a - 1.0) * lq + (b - 1.0) * l1q - (
                _lgamma(a) + _lgamma(b) - _lgamma(a + b))
            psi_a = _digamma(a)
            psi_b = _digamma(b)
            psi_ab = _digamma(a + b)
            gpath[w] += (a - 1.0) / qw - (b - 1.0) / (1.0 - qw)
            gpath[w - 1] += s2 * (lq - l1q - psi_a + psi_b)
            ds2 = qp * lq + (1.0 - qp) * l1q - (qp * psi_a + (1.0 - qp) * psi_b - psi_ab)
            if which == 0:
                g_s2r += ds2
            else:
                g_s2c += ds2
    if not np.isfinite(lp):
        return neg_inf

    # stick-breaking simplex with Jacobian
    x0 = np.empty(5)
    zks = np.empty(4)
    rems = np.empty(4)
    rem = 1.0
    for k in range(4):
        zk = _sigmoid_s(x[i_x0 + k] - math.log(4 - k))
        zks[k] = zk
        rems[k] = rem
        x0[k] = rem * zk
        lp += math.log(zk) + math.log1p(-zk) + math.log(rem)
        rem -= x0[k]
    x0[4] = rem

    iota = _sigmoid_s(x[i_iota])
    lp += (-0.5 * ((iota - iota_hat) / iota_sd) ** 2 + iota_lognorm
           + math.log(iota) + math.log1p(-iota))
    g_iota = -(iota - iota_hat) / (iota_sd * iota_sd)

    e_del = _sigmoid_s(x[i_delay])
    delay = delay_lo + (delay_hi - delay_lo) * e_del
    lp += (-0.5 * ((delay - delay_mean) / delay_sd) ** 2 + delay_lognorm
           + math.log(delay_hi - delay_lo) + math.log(e_del) + math.log1p(-e_del))
    g_delay = -(delay - delay_mean) / (delay_sd * delay_sd)

    theta_d = _sigmoid_s(x[i_thd])
    zeta_d = _sigmoid_s(x[i_zed])
    kappa_d = math.exp(x[i_kad])
    theta_c = _sigmoid_s(x[i_thc])
    zeta_c = _sigmoid_s(x[i_zec])
    kappa_c = math.exp(x[i_kac])
    ic0 = math.exp(x[i_ic0])
    for v in (theta_d, zeta_d, theta_c, zeta_c):
        lp += math.log(v) + math.log1p(-v)  # Uniform(0,1) + logit Jacobian
    g_thd = 0.0
    g_zed = 0.0
    g_kad = 0.0
    g_thc = 0.0
    g_zec = 0.0
    g_kac = 0.0
    g_ic0 = 0.0

    if not prior_only:
        # ---- forward ----
        states = np.empty((n_days + 1, 6))
        nu = np.empty(n_days)
        beta_daily = np.empty(n_days)
        states[0, 0] = (1.0 - p) + p * x0[0]
        states[0, 1] = p * x0[1]
        states[0, 2] = p * x0[2]
        states[0, 3] = p * (x0[3] + x0[4]) * (1.0 - iota)
        states[0, 4] = p * x0[3] * iota
        states[0, 5] = p * x0[4] * iota
        for t in range(n_days):
            beta_daily[t] = gamma * (r0max * q[t // 7])
            st = states[t]
            f = beta_daily[t] * st[0] * st[2]
            nu[t] = f
            s1 = st[0] - f
            e1 = st[1] + f - delta * st[1]
            i1 = st[2] + delta * st[1] - gamma * st[2]
            rs1 = st[3] + gamma * (1.0 - iota) * st[2]
            rd1 = st[4] + gamma * iota * st[2] - mu * st[4]
            d1 = st[5] + mu * st[4]
            if min(s1, e1, i1, rs1, rd1, d1) < _NEG_TOL:
                return neg_inf
            states[t + 1] = (max(s1, 0.0), max(e1, 0.0), max(i1, 0.0),
                             max(rs1, 0.0), max(rd1, 0.0), max(d1, 0.0))

        tau = 1.0 / delay
        ic = np.empty(n_days)
        ic[0] = ic0
        for t in range(1, n_days):
            ic[t] = ic[t - 1] * (1.0 - tau) + c[t // 7] * (N * nu[t])

        raw_d = np.empty(n_days)
        adj_d = np.empty(n_days)
        m_c = np.empty(n_days)
        adj_c = np.empty(n_days)
        for t in range(n_days):
            raw_d[t] = N * mu * states[t, 4]
            adj_d[t] = raw_d[t] if (t == 0 or pos_d[t - 1]) else raw_d[t] + theta_d * adj_d[t - 1]
            m_c[t] = tau * ic[t]
            adj_c[t] = m_c[t] if (t == 0 or pos_c[t - 1]) else m_c[t] + theta_c * adj_c[t - 1]

        # ---- observation terms and their mean-adjoints ----
        g_adj_d = np.zeros(n_days)
        g_adj_c = np.zeros(n_days)
        for t in range(n_days):
            v, dm, dth, dka, dze = _zinb_grad_day(
                int(deaths[t]), adj_d[t], theta_d, kappa_d, zeta_d)
            if v == -math.inf:
                return neg_inf
            lp += v
            g_adj_d[t] += dm
            g_thd += dth
            g_kad += dka
            g_zed += dze
            v, dm, dth, dka, dze = _zinb_grad_day(
                int(cases[t]), adj_c[t], theta_c, kappa_c, zeta_c)
            if v == -math.inf:
                return neg_inf
            lp += v
            g_adj_c[t] += dm
            g_thc += dth
            g_kac += dka
            g_zec += dze

        lam = N * (states[0, 4] + states[0, 5])
        g_lam = 0.0
        if lam <= 0.0:
            if dtilde > 0:
                return neg_inf
        else:
            lp += dtilde * math.log(lam) - lam - lgamma_dtilde
            g_lam = dtilde / lam - 1.0
        if not np.isfinite(lp):
            return neg_inf
        if not want_grad:
            return float(lp), None

        # ---- reverse: misreport pile-up ----
        g_raw_d = np.zeros(n_days)
        g_m_c = np.zeros(n_days)
        for t in range(n_days - 1, -1, -1):
            g_raw_d[t] += g_adj_d[t]
            g_m_c[t] += g_adj_c[t]
            if t > 0 and not pos_d[t - 1]:
                g_thd += adj_d[t - 1] * g_adj_d[t]
                g_adj_d[t - 1] += theta_d * g_adj_d[t]
            if t > 0 and not pos_c[t - 1]:
                g_thc += adj_c[t - 1] * g_adj_c[t]
                g_adj_c[t - 1] += theta_c * g_adj_c[t]

        # ---- reverse: confirmation pool ----
        g_ic = np.zeros(n_days)
        g_tau = 0.0
        g_nu = np.zeros(n_days)
        for t in range(n_days - 1, 0, -1):
            g_ic[t] += tau * g_m_c[t]
            g_tau += ic[t] * g_m_c[t]
            g_ic[t - 1] += (1.0 - tau) * g_ic[t]
            g_tau -= ic[t - 1] * g_ic[t]
            g_c[t // 7] += (N * nu[t]) * g_ic[t]
            g_nu[t] += c[t // 7] * N * g_ic[t]
        g_ic[0] += tau * g_m_c[0]
        g_tau += ic[0] * g_m_c[0]
        g_ic0 += g_ic[0]
        g_delay += g_tau * (-1.0 / (delay * delay))

        # ---- reverse: SEIRD ----
        g_state = np.zeros(6)
        g_beta = np.zeros(n_days)
        for t in range(n_days - 1, -1, -1):
            g_state_new = np.zeros(6)
            a, b_, cc, r, qq, ee = g_state
            st = states[t]
            g_state_new[4] += N * mu * g_raw_d[t]  # raw death mean uses start-of-day R_D
            gf = -a + b_ + g_nu[t]
            g_state_new[0] += a + gf * beta_daily[t] * st[2]
            g_state_new[1] += b_ * (1.0 - delta) + cc * delta
            g_state_new[2] += (cc * (1.0 - gamma) + r * gamma * (1.0 - iota)
                               + qq * gamma * iota + gf * beta_daily[t] * st[0])
            g_state_new[3] += r
            g_state_new[4] += qq * (1.0 - mu) + ee * mu
            g_state_new[5] += ee
            g_iota += (-r * gamma * st[2]) + qq * gamma * st[2]
            g_beta[t] = gf * st[0] * st[2]
            g_state = g_state_new
        g_state[4] += N * g_lam
        g_state[5] += N * g_lam

        # weekly transmission chain: beta(t) = gamma * r0max * q[t // 7]
        for t in range(n_days):
            g_q[t // 7] += g_beta[t] * gamma * r0max

        # ---- initial state into simplex point and IFR ----
        gx0 = np.zeros(5)
        gx0[0] = p * g_state[0]
        gx0[1] = p * g_state[1]
        gx0[2] = p * g_state[2]
        gx0[3] = p * (1.0 - iota) * g_state[3] + p * iota * g_state[4]
        gx0[4] = p * (1.0 - iota) * g_state[3] + p * iota * g_state[5]
        g_iota += (-p * (x0[3] + x0[4]) * g_state[3]
                   + p * x0[3] * g_state[4] + p * x0[4] * g_state[5])

        # sticks: x_k = rem_k * z_k, rem_{k+1} = rem_k - x_k
        g_rem = gx0[4]
        for k in range(3, -1, -1):
            zk = zks[k]
            g_zk = rems[k] * (gx0[k] - g_rem)
            g_rem = zk * gx0[k] + (1.0 - zk) * g_rem
            grad[i_x0 + k] += g_zk * zk * (1.0 - zk)

    if not want_grad:
        return float(lp), None

    # stick-breaking Jacobian part of the prior (always on)
    g_rem_j = 0.0
    for k in range(3, -1, -1):
        zk = zks[k]
        # d/dzk of [log zk + log(1-zk)] plus rem-chain from later log(rem) terms
        g_zk_j = 1.0 / zk - 1.0 / (1.0 - zk) - rems[k] * g_rem_j
        g_rem_j = (1.0 / rems[k]) + (1.0 - zk) * g_rem_j
        grad[i_x0 + k] += g_zk_j * zk * (1.0 - zk)

    # chain everything through the logit/log transforms
    for w in range(W):
        grad[w] += g_q[w] * q[w] * (1.0 - q[w]) + (1.0 - 2.0 * q[w])
        grad[i_car0 + w] += g_c[w] * c[w] * (1.0 - c[w]) + (1.0 - 2.0 * c[w])
    grad[i_s2r] += g_s2r * s2r
    grad[i_s2c] += g_s2c * s2c
    grad[i_iota] += g_iota * iota * (1.0 - iota) + (1.0 - 2.0 * iota)
    grad[i_delay] += (g_delay * (delay_hi - delay_lo) * e_del * (1.0 - e_del)
                      + (1.0 - 2.0 * e_del))
    grad[i_thd] += g_thd * theta_d * (1.0 - theta_d) + (1.0 - 2.0 * theta_d)
    grad[i_zed] += g_zed * zeta_d * (1.0 - zeta_d) + (1.0 - 2.0 * zeta_d)
    grad[i_kad] += g_kad * kappa_d
    grad[i_thc] += g_thc * theta_c * (1.0 - theta_c) + (1.0 - 2.0 * theta_c)
    grad[i_zec] += g_zec * zeta_c * (1.0 - zeta_c) + (1.0 - 2.0 * zeta_c)
    grad[i_kac] += g_kac * kappa_c
    grad[i_ic0] += g_ic0 * ic0

    return float(lp), grad


def _sigmoid_s(v):
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def policy_simulate(u, coeffs, phi, shocks, init, delta, gamma, mu, iota, r0_max, scales, n_days):
    """Generate a trajectory under a schedule, feeding back behavioral covariates.

    Week by week: previous-week incident fractions from the simulated path so
    far enter the linear predictor; the AR residual recursion adds the given
    shocks; the implied weekly rate (capped at r0_max) drives seven SEIRD days.

    Returns (states, nu_frac, r0_weekly, log_pred, resid).
    """
    u = np.asarray(u, dtype=np.float64)
    shocks = np.asarray(shocks, dtype=np.float64)
    n_weeks = (n_days + 6) // 7
    if u.shape != (n_weeks, 11):
        raise ValueError(f"schedule shape {u.shape} != ({n_weeks}, 11)")
    if shocks.shape[0] != n_weeks:
        raise ValueError("shocks length != week count")
    states = np.empty((n_days + 1, 6), dtype=np.float64)
    nu = np.empty(n_days, dtype=np.float64)
    r0w = np.empty(n_weeks, dtype=np.float64)
    lpw = np.empty(n_weeks, dtype=np.float64)
    residw = np.empty(n_weeks, dtype=np.float64)
    states[0] = tuple(float(x) for x in init)
    cur = tuple(float(x) for x in init)
    resid_prev = 0.0
    for w in range(n_weeks):
        if w == 0:
            cov = (0.0, 0.0, 0.0)
        else:
            cov = _week_cov(states, delta, gamma, mu, 7 * (w - 1), 7 * w)
        lp = weekly_log_predictor(coeffs, u[w], cov, scales)
        if w == 0:
            resid = float(shocks[0])
        else:
            t_ar = phi * resid_prev
            resid = t_ar + shocks[w]
        log_r0 = lp + resid
        r0 = math.exp(log_r0)
        if r0 > r0_max:
            r0 = r0_max
        beta = gamma * r0
        for t in range(7 * w, min(7 * w + 7, n_days)):
            nu[t] = beta * cur[0] * cur[2]
            cur = seird_step(cur, beta, delta, gamma, mu, iota, day=t)
            states[t + 1] = cur
        r0w[w] = r0
        lpw[w] = lp
        residw[w] = resid
        resid_prev = resid
    return states, nu, r0w, lpw, residw


def extract_shocks(u, coeffs, phi, log_r0_target, init, delta, gamma, mu, iota, r0_max, scales, n_days):
    """Invert policy_simulate: recover the shocks that reproduce a fitted rate path.

    Runs the identical week loop, solving eps(w) = (target - lp) - phi*resid(w-1)
    and advancing the SEIRD with the replay-canonical rate, so a subsequent
    policy_simulate with the returned shocks is reproducible operation for
    operation.

    Returns (shocks, states, r0_canonical).
    """
    u = np.asarray(u, dtype=np.float64)
    log_r0_target = np.asarray(log_r0_target, dtype=np.float64)
    n_weeks = (n_days + 6) // 7
    if u.shape != (n_weeks, 11):
        raise ValueError(f"schedule shape {u.shape} != ({n_weeks}, 11)")
    if log_r0_target.shape[0] != n_weeks:
        raise ValueError("rate path length != week count")
    states = np.empty((n_days + 1, 6), dtype=np.float64)
    shocks = np.empty(n_weeks, dtype=np.float64)
    r0w = np.empty(n_weeks, dtype=np.float64)
    states[0] = tuple(float(x) for x in init)
    cur = tuple(float(x) for x in init)
    resid_prev = 0.0
    for w in range(n_weeks):
        if w == 0:
            cov = (0.0, 0.0, 0.0)
        else:
            cov = _week_cov(states, delta, gamma, mu, 7 * (w - 1), 7 * w)
        lp = weekly_log_predictor(coeffs, u[w], cov, scales)
        if w == 0:
            shocks[0] = log_r0_target[0] - lp
            resid = float(shocks[0])
        else:
            t_ar = phi * resid_prev
            shocks[w] = (log_r0_target[w] - lp) - t_ar
            resid = t_ar + shocks[w]
        log_r0 = lp + resid
        r0 = math.exp(log_r0)
        if r0 > r0_max:
            r0 = r0_max
        beta = gamma * r0
        for t in range(7 * w, min(7 * w + 7, n_days)):
            cur = seird_step(cur, beta, delta, gamma, mu, iota, day=t)
            states[t + 1] = cur
        r0w[w] = r0
        resid_prev = resid
    return shocks, states, r0w
