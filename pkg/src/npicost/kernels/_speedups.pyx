# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the reference kernels.

Every arithmetic expression mirrors kernels/_ref.py operation for operation
(and the extension is built with FMA contraction off), so results are
bit-identical to the pure-Python lane on the same libm.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expm1, lgamma, log, log1p

cnp.import_array()

BACKEND = "compiled"

cdef double _NEG_TOL = -1e-12
cdef double _INF = float("inf")


class DynamicsError(ValueError):
    """A compartment went negative beyond tolerance (beta too large for the day step)."""


cdef inline int _step(double* c, double beta, double delta, double gamma,
                      double mu, double iota) nogil:
    """Advance the six compartments one day in place. Returns 0, or 1 on a negative."""
    cdef double s = c[0], e = c[1], i = c[2], rs = c[3], rd = c[4], d = c[5]
    cdef double inf_flow = beta * s * i
    cdef double s1 = s - inf_flow
    cdef double e1 = e + inf_flow - delta * e
    cdef double i1 = i + delta * e - gamma * i
    cdef double rs1 = rs + gamma * (1.0 - iota) * i
    cdef double rd1 = rd + gamma * iota * i - mu * rd
    cdef double d1 = d + mu * rd
    if (s1 < _NEG_TOL or e1 < _NEG_TOL or i1 < _NEG_TOL or
            rs1 < _NEG_TOL or rd1 < _NEG_TOL or d1 < _NEG_TOL):
        return 1
    c[0] = 0.0 if s1 < 0.0 else s1
    c[1] = 0.0 if e1 < 0.0 else e1
    c[2] = 0.0 if i1 < 0.0 else i1
    c[3] = 0.0 if rs1 < 0.0 else rs1
    c[4] = 0.0 if rd1 < 0.0 else rd1
    c[5] = 0.0 if d1 < 0.0 else d1
    return 0


def seird_step(state, double beta, double delta, double gamma, double mu,
               double iota, day=None):
    cdef double c[6]
    cdef int k
    for k in range(6):
        c[k] = state[k]
    if _step(c, beta, delta, gamma, mu, iota):
        where = "" if day is None else f" at day {day}"
        raise DynamicsError(f"compartment went negative{where}; beta={beta:.4f}")
    return (c[0], c[1], c[2], c[3], c[4], c[5])


def seird_simulate(init, beta_daily, double delta, double gamma, double mu, double iota):
    cdef double[:] beta = np.ascontiguousarray(beta_daily, dtype=np.float64)
    cdef Py_ssize_t n = beta.shape[0]
    states_arr = np.empty((n + 1, 6), dtype=np.float64)
    nu_arr = np.empty(n, dtype=np.float64)
    cdef double[:, :] states = states_arr
    cdef double[:] nu = nu_arr
    cdef double c[6]
    cdef Py_ssize_t t
    cdef int k
    for k in range(6):
        c[k] = init[k]
        states[0, k] = c[k]
    for t in range(n):
        nu[t] = beta[t] * c[0] * c[2]
        if _step(c, beta[t], delta, gamma, mu, iota):
            raise DynamicsError(f"compartment went negative at day {t}; beta={beta[t]:.4f}")
        for k in range(6):
            states[t + 1, k] = c[k]
    return states_arr, nu_arr


def misreport_adjust(raw_means, positive, double theta):
    cdef double[:] raw = np.ascontiguousarray(raw_means, dtype=np.float64)
    cdef unsigned char[:] pos = np.ascontiguousarray(positive, dtype=np.uint8)
    cdef Py_ssize_t n = raw.shape[0]
    adj_arr = np.empty(n, dtype=np.float64)
    cdef double[:] adj = adj_arr
    cdef Py_ssize_t t
    for t in range(n):
        if t == 0 or pos[t - 1]:
            adj[t] = raw[t]
        else:
            adj[t] = raw[t] + theta * adj[t - 1]
    return adj_arr


cdef inline double _zinb_logpmf(long d, double m, double theta, double kappa,
                                double zeta) nogil:
    cdef double phi, log_ratio, lp0
    if m <= 0.0:
        return 0.0 if d == 0 else -_INF
    phi = kappa * m / (zeta * m + (1.0 - zeta))
    log_ratio = log(phi / (phi + m))
    if d == 0:
        lp0 = phi * log_ratio
        if theta <= 0.0:
            return lp0
        return log(theta + (1.0 - theta) * exp(lp0))
    if theta >= 1.0:
        return -_INF
    return (log(1.0 - theta)
            + lgamma(d + phi) - lgamma(phi) - lgamma(d + 1.0)
            + phi * log_ratio + d * log(m / (phi + m)))


def zinb_logpmf(long d, double m, double theta, double kappa, double zeta):
    return _zinb_logpmf(d, m, theta, kappa, zeta)


def zinb_loglik(counts, means, double theta, double kappa, double zeta):
    cdef long[:] cts = np.ascontiguousarray(counts, dtype=np.int64)
    cdef double[:] ms = np.ascontiguousarray(means, dtype=np.float64)
    cdef Py_ssize_t n = cts.shape[0]
    cdef double total = 0.0, lp
    cdef Py_ssize_t t
    for t in range(n):
        lp = _zinb_logpmf(cts[t], ms[t], theta, kappa, zeta)
        if lp == -_INF:
            return -_INF
        total += lp
    return total


def case_means(nu, car_daily, double tau, double ic0):
    cdef double[:] nuv = np.ascontiguousarray(nu, dtype=np.float64)
    cdef double[:] car = np.ascontiguousarray(car_daily, dtype=np.float64)
    cdef Py_ssize_t n = nuv.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[:] out = out_arr
    cdef double ic = ic0
    cdef Py_ssize_t t
    out[0] = tau * ic
    for t in range(1, n):
        ic = ic * (1.0 - tau) + car[t] * nuv[t]
        out[t] = tau * ic
    return out_arr


cdef inline double _digamma(double x) nogil:
    """Digamma via upward recurrence plus a 6-term asymptotic tail.

    Mirrors kernels/_ref.py exactly so gradients agree to the bit.
    """
    cdef double acc = 0.0
    cdef double inv, inv2
    while x < 6.0:
        acc -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    return acc + log(x) - 0.5 * inv - inv2 * (
        1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0)))


cdef inline double _sigmoid_s(double v) nogil:
    cdef double e
    if v >= 0:
        return 1.0 / (1.0 + exp(-v))
    e = exp(v)
    return e / (1.0 + e)


cdef inline int _zinb_grad_day(long d, double m, double theta, double kappa,
                               double zeta, double* out) nogil:
    """out = (logpmf, dm, dtheta, dkappa, dzeta); returns 1 on -inf."""
    cdef double s, phi, dphi_dm, dphi_dkappa, dphi_dzeta, log_ratio
    cdef double lp0, dlp0_dphi, dlp0_dm, e0, p0, w, lp, dlp_dphi, dlp_dm, cap
    out[1] = 0.0
    out[2] = 0.0
    out[3] = 0.0
    out[4] = 0.0
    if m <= 0.0:
        if d == 0:
            out[0] = 0.0
            return 0
        out[0] = -_INF
        return 1
    s = zeta * m + (1.0 - zeta)
    phi = kappa * m / s
    dphi_dm = kappa * (1.0 - zeta) / (s * s)
    dphi_dkappa = m / s
    dphi_dzeta = -kappa * m * (m - 1.0) / (s * s)
    log_ratio = log(phi / (phi + m))
    if d == 0:
        lp0 = phi * log_ratio
        dlp0_dphi = log_ratio + 1.0 - phi / (phi + m)
        dlp0_dm = -phi / (phi + m)
        if theta <= 0.0:
            cap = -lp0
            if cap > 700.0:
                cap = 700.0
            out[0] = lp0
            out[1] = dlp0_dm + dlp0_dphi * dphi_dm
            out[2] = expm1(cap)
            out[3] = dlp0_dphi * dphi_dkappa
            out[4] = dlp0_dphi * dphi_dzeta
            return 0
        e0 = exp(lp0)
        p0 = theta + (1.0 - theta) * e0
        w = (1.0 - theta) * e0 / p0
        out[0] = log(p0)
        out[1] = w * (dlp0_dm + dlp0_dphi * dphi_dm)
        out[2] = (1.0 - e0) / p0
        out[3] = w * dlp0_dphi * dphi_dkappa
        out[4] = w * dlp0_dphi * dphi_dzeta
        return 0
    if theta >= 1.0:
        out[0] = -_INF
        return 1
    lp = (log(1.0 - theta)
          + lgamma(d + phi) - lgamma(phi) - lgamma(d + 1.0)
          + phi * log_ratio + d * log(m / (phi + m)))
    dlp_dphi = (_digamma(d + phi) - _digamma(phi) + log_ratio
                + 1.0 - phi / (phi + m) - d / (phi + m))
    dlp_dm = -phi / (phi + m) + d * (1.0 / m - 1.0 / (phi + m))
    out[0] = lp
    out[1] = dlp_dm + dlp_dphi * dphi_dm
    out[2] = -1.0 / (1.0 - theta)
    out[3] = dlp_dphi * dphi_dkappa
    out[4] = dlp_dphi * dphi_dzeta
    return 0


def stage1_logpost_grad(
    x_in, Py_ssize_t W, Py_ssize_t n_days,
    deaths_in, cases_in, pos_d_in, pos_c_in, double dtilde, double lgamma_dtilde,
    double N, double delta, double gamma, double mu, double r0max, double p,
    double iota_hat, double iota_sd, double iota_lognorm,
    double delay_mean, double delay_sd, double delay_lo, double delay_hi,
    double delay_lognorm,
    flat_lo_in, flat_hi_in,
    int prior_only,
    int want_grad=True,
):
    """Compiled twin of the reference stage1_logpost_grad."""
    cdef double[:] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef long[:] deaths = np.ascontiguousarray(deaths_in, dtype=np.int64)
    cdef long[:] cases = np.ascontiguousarray(cases_in, dtype=np.int64)
    cdef unsigned char[:] pos_d = np.ascontiguousarray(pos_d_in, dtype=np.uint8)
    cdef unsigned char[:] pos_c = np.ascontiguousarray(pos_c_in, dtype=np.uint8)
    cdef double[:] flat_lo = np.ascontiguousarray(flat_lo_in, dtype=np.float64)
    cdef double[:] flat_hi = np.ascontiguousarray(flat_hi_in, dtype=np.float64)

    cdef Py_ssize_t dim = 2 * W + 15
    grad_arr = np.zeros(dim)
    cdef double[:] grad = grad_arr
    cdef Py_ssize_t i_s2r = W, i_x0 = W + 1, i_iota = W + 5
    cdef Py_ssize_t i_car0 = W + 6, i_s2c = 2 * W + 6
    cdef Py_ssize_t i_delay = 2 * W + 7, i_thd = 2 * W + 8, i_zed = 2 * W + 9
    cdef Py_ssize_t i_kad = 2 * W + 10, i_thc = 2 * W + 11, i_zec = 2 * W + 12
    cdef Py_ssize_t i_kac = 2 * W + 13, i_ic0 = 2 * W + 14

    cdef Py_ssize_t j, w, t, k
    cdef Py_ssize_t flat_ix[5]
    flat_ix[0] = i_s2r
    flat_ix[1] = i_s2c
    flat_ix[2] = i_kad
    flat_ix[3] = i_kac
    flat_ix[4] = i_ic0
    for j in range(5):
        if not (flat_lo[j] <= x[flat_ix[j]] <= flat_hi[j]):
            return -_INF, grad_arr

    cdef double lp = 0.0
    q_arr = np.empty(W)
    c_arr = np.empty(W)
    gq_arr = np.zeros(W)
    gc_arr = np.zeros(W)
    cdef double[:] q = q_arr
    cdef double[:] c = c_arr
    cdef double[:] g_q = gq_arr
    cdef double[:] g_c = gc_arr
    for w in range(W):
        q[w] = _sigmoid_s(x[w])
        c[w] = _sigmoid_s(x[i_car0 + w])
        if not (0.0 < q[w] < 1.0 and 0.0 < c[w] < 1.0):
            return -_INF, grad_arr
        lp += (log(q[w]) + log1p(-q[w])
               + log(c[w]) + log1p(-c[w]))

    cdef double s2r = exp(x[i_s2r])
    cdef double s2c = exp(x[i_s2c])
    cdef double g_s2r = 0.0, g_s2c = 0.0
    cdef double qp, qw, a, b, lq, l1q, psi_a, psi_b, psi_ab, ds2
    cdef int which
    for which in range(2):
        for w in range(1, W):
            if which == 0:
                qp = q[w - 1]
                qw = q[w]
                a = s2r * qp
                b = s2r * (1.0 - qp)
            else:
                qp = c[w - 1]
                qw = c[w]
                a = s2c * qp
                b = s2c * (1.0 - qp)
            lq = log(qw)
            l1q = log1p(-qw)
            lp += (a - 1.0) * lq + (b - 1.0) * l1q - (
                lgamma(a) + lgamma(b) - lgamma(a + b))
            psi_a = _digamma(a)
            psi_b = _digamma(b)
            psi_ab = _digamma(a + b)
            if which == 0:
                g_q[w] += (a - 1.0) / qw - (b - 1.0) / (1.0 - qw)
                g_q[w - 1] += s2r * (lq - l1q - psi_a + psi_b)
                g_s2r += qp * lq + (1.0 - qp) * l1q - (
                    qp * psi_a + (1.0 - qp) * psi_b - psi_ab)
            else:
                g_c[w] += (a - 1.0) / qw - (b - 1.0) / (1.0 - qw)
                g_c[w - 1] += s2c * (lq - l1q - psi_a + psi_b)
                g_s2c += qp * lq + (1.0 - qp) * l1q - (
                    qp * psi_a + (1.0 - qp) * psi_b - psi_ab)
    if not (lp == lp and lp != _INF and lp != -_INF):
        return -_INF, grad_arr

    cdef double x0[5]
    cdef double zks[4]
    cdef double rems[4]
    cdef double rem = 1.0, zk
    for k in range(4):
        zk = _sigmoid_s(x[i_x0 + k] - log(4.0 - k))
        zks[k] = zk
        rems[k] = rem
        x0[k] = rem * zk
        lp += log(zk) + log1p(-zk) + log(rem)
        rem -= x0[k]
    x0[4] = rem

    cdef double iota = _sigmoid_s(x[i_iota])
    lp += (-0.5 * ((iota - iota_hat) / iota_sd) ** 2 + iota_lognorm
           + log(iota) + log1p(-iota))
    cdef double g_iota = -(iota - iota_hat) / (iota_sd * iota_sd)

    cdef double e_del = _sigmoid_s(x[i_delay])
    cdef double delay = delay_lo + (delay_hi - delay_lo) * e_del
    lp += (-0.5 * ((delay - delay_mean) / delay_sd) ** 2 + delay_lognorm
           + log(delay_hi - delay_lo) + log(e_del) + log1p(-e_del))
    cdef double g_delay = -(delay - delay_mean) / (delay_sd * delay_sd)

    cdef double theta_d = _sigmoid_s(x[i_thd])
    cdef double zeta_d = _sigmoid_s(x[i_zed])
    cdef double kappa_d = exp(x[i_kad])
    cdef double theta_c = _sigmoid_s(x[i_thc])
    cdef double zeta_c = _sigmoid_s(x[i_zec])
    cdef double kappa_c = exp(x[i_kac])
    cdef double ic0 = exp(x[i_ic0])
    lp += log(theta_d) + log1p(-theta_d)
    lp += log(zeta_d) + log1p(-zeta_d)
    lp += log(theta_c) + log1p(-theta_c)
    lp += log(zeta_c) + log1p(-zeta_c)
    cdef double g_thd = 0.0, g_zed = 0.0, g_kad = 0.0
    cdef double g_thc = 0.0, g_zec = 0.0, g_kac = 0.0, g_ic0 = 0.0

    cdef double f, s1, e1, i1, rs1, rd1, d1, tau, lam, g_lam
    cdef double zout[5]
    cdef double gst[6]
    cdef double gst_new[6]
    cdef double ga, gb, gcc, gr, gqd, ge, gf
    cdef double g_tau = 0.0
    cdef double gx0[5]
    cdef double g_rem, g_zk, g_rem_j, g_zk_j
    cdef double[:, :] states
    cdef double[:] nu, beta_daily, icv, adjdv, adjcv
    cdef double[:] g_adj_d, g_adj_c, g_raw_d, g_m_c, g_icr, g_nu, g_beta

    if not prior_only:
        states_arr = np.empty((n_days + 1, 6))
        nu_arr = np.empty(n_days)
        beta_arr = np.empty(n_days)
        ic_arr = np.empty(n_days)
        rawd_arr = np.empty(n_days)
        adjd_arr = np.empty(n_days)
        mc_arr = np.empty(n_days)
        adjc_arr = np.empty(n_days)
        gadjd_arr = np.zeros(n_days)
        gadjc_arr = np.zeros(n_days)

        lp = _fwd_obs(x, q, c, lp, W, n_days, deaths, cases, pos_d, pos_c,
                      dtilde, lgamma_dtilde, N, delta, gamma, mu, r0max, p,
                      x0, iota, delay, theta_d, zeta_d, kappa_d,
                      theta_c, zeta_c, kappa_c, ic0,
                      states_arr, nu_arr, beta_arr, ic_arr, rawd_arr,
                      adjd_arr, mc_arr, adjc_arr, gadjd_arr, gadjc_arr,
                      &g_thd, &g_zed, &g_kad, &g_thc, &g_zec, &g_kac, &g_lam,
                      want_grad)
        if lp == -_INF:
            return -_INF, grad_arr
        if not want_grad:
            return lp, None
        tau = 1.0 / delay

        states = states_arr
        nu = nu_arr
        beta_daily = beta_arr
        icv = ic_arr
        adjdv = adjd_arr
        adjcv = adjc_arr
        g_adj_d = gadjd_arr
        g_adj_c = gadjc_arr

        # reverse: misreport pile-up
        grawd_arr = np.zeros(n_days)
        gmc_arr = np.zeros(n_days)
        g_raw_d = grawd_arr
        g_m_c = gmc_arr
        for t in range(n_days - 1, -1, -1):
            g_raw_d[t] += g_adj_d[t]
            g_m_c[t] += g_adj_c[t]
            if t > 0 and not pos_d[t - 1]:
                g_thd += adjdv[t - 1] * g_adj_d[t]
                g_adj_d[t - 1] += theta_d * g_adj_d[t]
            if t > 0 and not pos_c[t - 1]:
                g_thc += adjcv[t - 1] * g_adj_c[t]
                g_adj_c[t - 1] += theta_c * g_adj_c[t]

        # reverse: confirmation pool
        gicr_arr = np.zeros(n_days)
        gnu_arr = np.zeros(n_days)
        g_icr = gicr_arr
        g_nu = gnu_arr
        for t in range(n_days - 1, 0, -1):
            g_icr[t] += tau * g_m_c[t]
            g_tau += icv[t] * g_m_c[t]
            g_icr[t - 1] += (1.0 - tau) * g_icr[t]
            g_tau -= icv[t - 1] * g_icr[t]
            g_c[t // 7] += (N * nu[t]) * g_icr[t]
            g_nu[t] += c[t // 7] * N * g_icr[t]
        g_icr[0] += tau * g_m_c[0]
        g_tau += icv[0] * g_m_c[0]
        g_ic0 += g_icr[0]
        g_delay += g_tau * (-1.0 / (delay * delay))

        # reverse: SEIRD
        gbeta_arr = np.zeros(n_days)
        g_beta = gbeta_arr
        for k in range(6):
            gst[k] = 0.0
        for t in range(n_days - 1, -1, -1):
            ga = gst[0]
            gb = gst[1]
            gcc = gst[2]
            gr = gst[3]
            gqd = gst[4]
            ge = gst[5]
            for k in range(6):
                gst_new[k] = 0.0
            gst_new[4] += N * mu * g_raw_d[t]
            gf = -ga + gb + g_nu[t]
            gst_new[0] += ga + gf * beta_daily[t] * states[t, 2]
            gst_new[1] += gb * (1.0 - delta) + gcc * delta
            gst_new[2] += (gcc * (1.0 - gamma) + gr * gamma * (1.0 - iota)
                           + gqd * gamma * iota + gf * beta_daily[t] * states[t, 0])
            gst_new[3] += gr
            gst_new[4] += gqd * (1.0 - mu) + ge * mu
            gst_new[5] += ge
            g_iota += (-gr * gamma * states[t, 2]) + gqd * gamma * states[t, 2]
            g_beta[t] = gf * states[t, 0] * states[t, 2]
            for k in range(6):
                gst[k] = gst_new[k]
        gst[4] += N * g_lam
        gst[5] += N * g_lam

        for t in range(n_days):
            g_q[t // 7] += g_beta[t] * gamma * r0max

        gx0[0] = p * gst[0]
        gx0[1] = p * gst[1]
        gx0[2] = p * gst[2]
        gx0[3] = p * (1.0 - iota) * gst[3] + p * iota * gst[4]
        gx0[4] = p * (1.0 - iota) * gst[3] + p * iota * gst[5]
        g_iota += (-p * (x0[3] + x0[4]) * gst[3]
                   + p * x0[3] * gst[4] + p * x0[4] * gst[5])

        g_rem = gx0[4]
        for k in range(3, -1, -1):
            zk = zks[k]
            g_zk = rems[k] * (gx0[k] - g_rem)
            g_rem = zk * gx0[k] + (1.0 - zk) * g_rem
            grad[i_x0 + k] += g_zk * zk * (1.0 - zk)

    if not want_grad:
        return lp, None

    g_rem_j = 0.0
    for k in range(3, -1, -1):
        zk = zks[k]
        g_zk_j = 1.0 / zk - 1.0 / (1.0 - zk) - rems[k] * g_rem_j
        g_rem_j = (1.0 / rems[k]) + (1.0 - zk) * g_rem_j
        grad[i_x0 + k] += g_zk_j * zk * (1.0 - zk)

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

    return lp, grad_arr


cdef double _fwd_obs(double[:] x, double[:] q, double[:] c, double lp,
                     Py_ssize_t W, Py_ssize_t n_days,
                     long[:] deaths, long[:] cases,
                     unsigned char[:] pos_d, unsigned char[:] pos_c,
                     double dtilde, double lgamma_dtilde,
                     double N, double delta, double gamma, double mu,
                     double r0max, double p,
                     double* x0, double iota, double delay,
                     double theta_d, double zeta_d, double kappa_d,
                     double theta_c, double zeta_c, double kappa_c, double ic0,
                     double[:, :] states, double[:] nu, double[:] beta_daily,
                     double[:] icv, double[:] raw_d, double[:] adj_d,
                     double[:] m_c, double[:] adj_c,
                     double[:] g_adj_d, double[:] g_adj_c,
                     double* g_thd, double* g_zed, double* g_kad,
                     double* g_thc, double* g_zec, double* g_kac,
                     double* g_lam, int want_grad):
    """Forward pass: SEIRD, confirmation pool, pile-up means, observation terms."""
    cdef Py_ssize_t t
    cdef double f, s1, e1, i1, rs1, rd1, d1, tau, lam, mn
    cdef double out[5]
    states[0, 0] = (1.0 - p) + p * x0[0]
    states[0, 1] = p * x0[1]
    states[0, 2] = p * x0[2]
    states[0, 3] = p * (x0[3] + x0[4]) * (1.0 - iota)
    states[0, 4] = p * x0[3] * iota
    states[0, 5] = p * x0[4] * iota
    for t in range(n_days):
        beta_daily[t] = gamma * (r0max * q[t // 7])
        f = beta_daily[t] * states[t, 0] * states[t, 2]
        nu[t] = f
        s1 = states[t, 0] - f
        e1 = states[t, 1] + f - delta * states[t, 1]
        i1 = states[t, 2] + delta * states[t, 1] - gamma * states[t, 2]
        rs1 = states[t, 3] + gamma * (1.0 - iota) * states[t, 2]
        rd1 = states[t, 4] + gamma * iota * states[t, 2] - mu * states[t, 4]
        d1 = states[t, 5] + mu * states[t, 4]
        if (s1 < _NEG_TOL or e1 < _NEG_TOL or i1 < _NEG_TOL or
                rs1 < _NEG_TOL or rd1 < _NEG_TOL or d1 < _NEG_TOL):
            return -_INF
        states[t + 1, 0] = s1 if s1 > 0.0 else 0.0
        states[t + 1, 1] = e1 if e1 > 0.0 else 0.0
        states[t + 1, 2] = i1 if i1 > 0.0 else 0.0
        states[t + 1, 3] = rs1 if rs1 > 0.0 else 0.0
        states[t + 1, 4] = rd1 if rd1 > 0.0 else 0.0
        states[t + 1, 5] = d1 if d1 > 0.0 else 0.0

    tau = 1.0 / delay
    icv[0] = ic0
    for t in range(1, n_days):
        icv[t] = icv[t - 1] * (1.0 - tau) + c[t // 7] * (N * nu[t])

    for t in range(n_days):
        raw_d[t] = N * mu * states[t, 4]
        if t == 0 or pos_d[t - 1]:
            adj_d[t] = raw_d[t]
        else:
            adj_d[t] = raw_d[t] + theta_d * adj_d[t - 1]
        m_c[t] = tau * icv[t]
        if t == 0 or pos_c[t - 1]:
            adj_c[t] = m_c[t]
        else:
            adj_c[t] = m_c[t] + theta_c * adj_c[t - 1]

    for t in range(n_days):
        if _zinb_grad_day(deaths[t], adj_d[t], theta_d, kappa_d, zeta_d, out):
            return -_INF
        lp += out[0]
        g_adj_d[t] += out[1]
        g_thd[0] += out[2]
        g_kad[0] += out[3]
        g_zed[0] += out[4]
        if _zinb_grad_day(cases[t], adj_c[t], theta_c, kappa_c, zeta_c, out):
            return -_INF
        lp += out[0]
        g_adj_c[t] += out[1]
        g_thc[0] += out[2]
        g_kac[0] += out[3]
        g_zec[0] += out[4]

    lam = N * (states[0, 4] + states[0, 5])
    g_lam[0] = 0.0
    if lam <= 0.0:
        if dtilde > 0:
            return -_INF
    else:
        lp += dtilde * log(lam) - lam - lgamma_dtilde
        g_lam[0] = dtilde / lam - 1.0
    if not (lp == lp and lp != _INF and lp != -_INF):
        return -_INF
    return lp


cdef inline void _week_cov(double[:, :] states, double delta, double gamma,
                           double mu, Py_ssize_t start, Py_ssize_t stop,
                           double* cov) nogil:
    cdef double it = 0.0, rt = 0.0, dt = 0.0
    cdef Py_ssize_t t
    for t in range(start, stop):
        it += delta * states[t, 1]
        rt += gamma * states[t, 2]
        dt += mu * states[t, 4]
    cov[0] = it
    cov[1] = rt
    cov[2] = dt


def weekly_covariates(states, double delta, double gamma, double mu, Py_ssize_t n_days):
    cdef double[:, :] st = np.ascontiguousarray(states, dtype=np.float64)
    cdef Py_ssize_t n_weeks = (n_days + 6) // 7
    out_arr = np.zeros((n_weeks, 3), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef double cov[3]
    cdef Py_ssize_t w, stop
    for w in range(n_weeks):
        stop = 7 * w + 7
        if stop > n_days:
            stop = n_days
        _week_cov(st, delta, gamma, mu, 7 * w, stop, cov)
        out[w, 0] = cov[0]
        out[w, 1] = cov[1]
        out[w, 2] = cov[2]
    return out_arr


cdef inline double _predictor(double[:] coeffs, double[:] u_w, double* cov,
                              double[:] scales) nogil:
    cdef double p = coeffs[14]
    cdef int k
    for k in range(11):
        p += coeffs[k] * u_w[k]
    p += coeffs[11] * (cov[0] * scales[0])
    p += coeffs[12] * (cov[1] * scales[1])
    p += coeffs[13] * (cov[2] * scales[2])
    return p


def weekly_log_predictor(coeffs, u_w, cov, scales):
    cdef double[:] cf = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef double[:] uw = np.ascontiguousarray(u_w, dtype=np.float64)
    cdef double[:] sc = np.ascontiguousarray(scales, dtype=np.float64)
    cdef double cv[3]
    cv[0] = cov[0]
    cv[1] = cov[1]
    cv[2] = cov[2]
    return _predictor(cf, uw, cv, sc)


def policy_simulate(u, coeffs, double phi, shocks, init, double delta, double gamma,
                    double mu, double iota, double r0_max, scales, Py_ssize_t n_days):
    cdef double[:, :] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[:] cf = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef double[:] sh = np.ascontiguousarray(shocks, dtype=np.float64)
    cdef double[:] sc = np.ascontiguousarray(scales, dtype=np.float64)
    cdef Py_ssize_t n_weeks = (n_days + 6) // 7
    if uv.shape[0] != n_weeks or uv.shape[1] != 11:
        raise ValueError(f"schedule shape ({uv.shape[0]}, {uv.shape[1]}) != ({n_weeks}, 11)")
    if sh.shape[0] != n_weeks:
        raise ValueError("shocks length != week count")
    states_arr = np.empty((n_days + 1, 6), dtype=np.float64)
    nu_arr = np.empty(n_days, dtype=np.float64)
    r0w_arr = np.empty(n_weeks, dtype=np.float64)
    lpw_arr = np.empty(n_weeks, dtype=np.float64)
    residw_arr = np.empty(n_weeks, dtype=np.float64)
    cdef double[:, :] states = states_arr
    cdef double[:] nu = nu_arr
    cdef double[:] r0w = r0w_arr
    cdef double[:] lpw = lpw_arr
    cdef double[:] residw = residw_arr
    cdef double c[6]
    cdef double cov[3]
    cdef double resid_prev = 0.0, resid, t_ar, lp, log_r0, r0, beta
    cdef Py_ssize_t w, t, stop
    cdef int k
    for k in range(6):
        c[k] = init[k]
        states[0, k] = c[k]
    for w in range(n_weeks):
        if w == 0:
            cov[0] = 0.0
            cov[1] = 0.0
            cov[2] = 0.0
        else:
            _week_cov(states, delta, gamma, mu, 7 * (w - 1), 7 * w, cov)
        lp = _predictor(cf, uv[w], cov, sc)
        if w == 0:
            resid = sh[0]
        else:
            t_ar = phi * resid_prev
            resid = t_ar + sh[w]
        log_r0 = lp + resid
        r0 = exp(log_r0)
        if r0 > r0_max:
            r0 = r0_max
        beta = gamma * r0
        stop = 7 * w + 7
        if stop > n_days:
            stop = n_days
        for t in range(7 * w, stop):
            nu[t] = beta * c[0] * c[2]
            if _step(c, beta, delta, gamma, mu, iota):
                raise DynamicsError(f"compartment went negative at day {t}; beta={beta:.4f}")
            for k in range(6):
                states[t + 1, k] = c[k]
        r0w[w] = r0
        lpw[w] = lp
        residw[w] = resid
        resid_prev = resid
    return states_arr, nu_arr, r0w_arr, lpw_arr, residw_arr


def extract_shocks(u, coeffs, double phi, log_r0_target, init, double delta,
                   double gamma, double mu, double iota, double r0_max, scales,
                   Py_ssize_t n_days):
    cdef double[:, :] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[:] cf = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef double[:] target = np.ascontiguousarray(log_r0_target, dtype=np.float64)
    cdef double[:] sc = np.ascontiguousarray(scales, dtype=np.float64)
    cdef Py_ssize_t n_weeks = (n_days + 6) // 7
    if uv.shape[0] != n_weeks or uv.shape[1] != 11:
        raise ValueError(f"schedule shape ({uv.shape[0]}, {uv.shape[1]}) != ({n_weeks}, 11)")
    if target.shape[0] != n_weeks:
        raise ValueError("rate path length != week count")
    states_arr = np.empty((n_days + 1, 6), dtype=np.float64)
    shocks_arr = np.empty(n_weeks, dtype=np.float64)
    r0w_arr = np.empty(n_weeks, dtype=np.float64)
    cdef double[:, :] states = states_arr
    cdef double[:] shocks = shocks_arr
    cdef double[:] r0w = r0w_arr
    cdef double c[6]
    cdef double cov[3]
    cdef double resid_prev = 0.0, resid, t_ar, lp, log_r0, r0, beta
    cdef Py_ssize_t w, t, stop
    cdef int k
    for k in range(6):
        c[k] = init[k]
        states[0, k] = c[k]
    for w in range(n_weeks):
        if w == 0:
            cov[0] = 0.0
            cov[1] = 0.0
            cov[2] = 0.0
        else:
            _week_cov(states, delta, gamma, mu, 7 * (w - 1), 7 * w, cov)
        lp = _predictor(cf, uv[w], cov, sc)
        if w == 0:
            shocks[0] = target[0] - lp
            resid = shocks[0]
        else:
            t_ar = phi * resid_prev
            shocks[w] = (target[w] - lp) - t_ar
            resid = t_ar + shocks[w]
        log_r0 = lp + resid
        r0 = exp(log_r0)
        if r0 > r0_max:
            r0 = r0_max
        beta = gamma * r0
        stop = 7 * w + 7
        if stop > n_days:
            stop = n_days
        for t in range(7 * w, stop):
            if _step(c, beta, delta, gamma, mu, iota):
                raise DynamicsError(f"compartment went negative at day {t}; beta={beta:.4f}")
            for k in range(6):
                states[t + 1, k] = c[k]
        r0w[w] = r0
        resid_prev = resid
    return shocks_arr, states_arr, r0w_arr
