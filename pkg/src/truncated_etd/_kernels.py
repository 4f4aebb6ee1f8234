"""Compiled inner loops for the tabular runners.

These mirror the pure-Python reference path in :mod:`truncated_etd.agents`
step for step (same uniforms, same sampling convention, same update order);
the test-suite checks the two against each other.
"""

import numpy as np
from numba import njit

TRACE_ONE = 0
TRACE_FULL = 1
TRACE_HARD = 2
TRACE_SOFT = 3
TRACE_COMBINED = 4

DIVERGENCE_NORM = 1e10


@njit(cache=True)
def _draw(cdf, u):
    k = 0
    m = cdf.shape[0]
    while k < m - 1 and cdf[k] <= u:
        k += 1
    return k


@njit(cache=True)
def _horner(rhos, ints, start, count, cap, decay, control):
    # ring positions start, start+1, ... (mod cap) run oldest -> newest
    f = 0.0
    prev = 0.0
    for j in range(count):
        k = (start + j) % cap
        if control:
            f = ints[k] + decay * rhos[k] * f
        else:
            f = ints[k] + decay * prev * f
            prev = rhos[k]
    return f


@njit(cache=True)
def _project(w, radius):
    nrm = np.sqrt(np.sum(w * w))
    if nrm > radius:
        w *= radius / nrm


@njit(cache=True)
def predict_kernel(
    X, cdf_mu, cdf_p, cdf_p0, rho_table, reward, interest, gamma,
    u0, U, mode, n, decay, alpha, alpha_lambda, radius, w0, eval_steps,
):
    """Algorithms 1/2 and their OffPolicyTD / ETD(0) / ETD(0, beta) variants.

    Returns the weights after each requested number of updates and the step
    at which the run diverged (-1 if it did not).
    """
    T = U.shape[0]
    K = X.shape[1]
    w = w0.copy()
    out = np.empty((eval_steps.shape[0], K))
    cap = n + 1 if (mode == TRACE_HARD or mode == TRACE_COMBINED) else 1
    rhos = np.zeros(cap)
    ints = np.zeros(cap)
    head = 0
    count = 0
    f_run = 0.0
    prev_rho = 0.0
    diverged_at = -1
    e = 0
    s = _draw(cdf_p0, u0)
    for t in range(T):
        a = _draw(cdf_mu[s], U[t, 0])
        s2 = _draw(cdf_p[s, a], U[t, 1])
        rho = rho_table[s, a]
        i_t = interest[s]
        if mode == TRACE_ONE:
            F = 1.0
        elif mode == TRACE_FULL or mode == TRACE_SOFT:
            f_run = i_t + decay * prev_rho * f_run
            F = f_run
        else:
            rhos[head] = rho
            ints[head] = i_t
            head = (head + 1) % cap
            if count < cap:
                count += 1
            start = (head - count) % cap
            F = _horner(rhos, ints, start, count, cap, decay, False)
        prev_rho = rho
        if alpha_lambda > 0.0:
            lr = 1.0 / (2.0 * alpha_lambda * (t + 1))
        else:
            lr = alpha
        v = 0.0
        v2 = 0.0
        for k in range(K):
            v += X[s, k] * w[k]
            v2 += X[s2, k] * w[k]
        delta = reward[s, a] + gamma * v2 - v
        scale = lr * F * rho * delta
        for k in range(K):
            w[k] += scale * X[s, k]
        if radius < np.inf:
            _project(w, radius)
        nrm = np.sqrt(np.sum(w * w))
        if not np.isfinite(nrm) or nrm > DIVERGENCE_NORM:
            diverged_at = t
            break
        s = s2
        while e < eval_steps.shape[0] and eval_steps[e] == t + 1:
            out[e] = w
            e += 1
    if diverged_at >= 0:
        # undo the offending update: keep the last finite weights
        if e > 0:
            last = out[e - 1].copy()
        else:
            last = w0.copy()
        while e < eval_steps.shape[0]:
            out[e] = last
            e += 1
    return out, diverged_at


@njit(cache=True)
def _policy_row(Xsa, s, n_actions, w, base, eps, tau, out):
    # eps * base + (1 - eps) * softmax(q / tau), max-subtracted
    mx = -np.inf
    for a in range(n_actions):
        q = 0.0
        for k in range(w.shape[0]):
            q += Xsa[s * n_actions + a, k] * w[k]
        out[a] = q / tau
        if out[a] > mx:
            mx = out[a]
    z = 0.0
    for a in range(n_actions):
        out[a] = np.exp(out[a] - mx)
        z += out[a]
    for a in range(n_actions):
        out[a] = eps * base[s, a] + (1.0 - eps) * out[a] / z


@njit(cache=True)
def control_kernel(
    Xsa, n_actions, cdf_p, cdf_p0, reward, interest_sa, gamma,
    b_base, b_eps, b_tau, t_base, t_eps, t_tau,
    u0, U, mode, n, decay, recompute, alpha, alpha_lambda, radius, w0, eval_steps,
):
    """Algorithms 3 (``recompute=True``) and 4 on a tabular MDP."""
    T = U.shape[0]
    K = Xsa.shape[1]
    w = w0.copy()
    out = np.empty((eval_steps.shape[0], K))
    truncated = mode == TRACE_HARD or mode == TRACE_COMBINED
    cap = n + 1 if truncated else 1
    rhos = np.zeros(cap)
    ints = np.zeros(cap)
    hist_s = np.zeros(cap, dtype=np.int64)
    hist_a = np.zeros(cap, dtype=np.int64)
    head = 0
    count = 0
    f_run = 0.0
    mu_row = np.empty(n_actions)
    pi_row = np.empty(n_actions)
    cdf = np.empty(n_actions)
    diverged_at = -1
    e = 0

    s = _draw(cdf_p0, u0[0])
    _policy_row(Xsa, s, n_actions, w, b_base, b_eps, b_tau, mu_row)
    a = _draw(np.cumsum(mu_row), u0[1])
    for t in range(T):
        r = reward[s, a]
        s2 = _draw(cdf_p[s, a], U[t, 0])
        _policy_row(Xsa, s2, n_actions, w, b_base, b_eps, b_tau, mu_row)
        acc = 0.0
        for b in range(n_actions):
            acc += mu_row[b]
            cdf[b] = acc
        a2 = _draw(cdf, U[t, 1])

        _policy_row(Xsa, s, n_actions, w, b_base, b_eps, b_tau, mu_row)
        _policy_row(Xsa, s, n_actions, w, t_base, t_eps, t_tau, pi_row)
        rho = pi_row[a] / mu_row[a]
        i_t = interest_sa[s * n_actions + a]
        if mode == TRACE_ONE:
            F = 1.0
        elif not truncated:
            f_run = i_t + decay * rho * f_run
            F = f_run
        else:
            rhos[head] = rho
            ints[head] = i_t
            hist_s[head] = s
            hist_a[head] = a
            head = (head + 1) % cap
            if count < cap:
                count += 1
            start = (head - count) % cap
            if recompute:
                for j in range(count - 1):
                    k = (start + j) % cap
                    sk = hist_s[k]
                    ak = hist_a[k]
                    _policy_row(Xsa, sk, n_actions, w, b_base, b_eps, b_tau, mu_row)
                    _policy_row(Xsa, sk, n_actions, w, t_base, t_eps, t_tau, pi_row)
                    rhos[k] = pi_row[ak] / mu_row[ak]
            F = _horner(rhos, ints, start, count, cap, decay, True)

        if alpha_lambda > 0.0:
            lr = 1.0 / (2.0 * alpha_lambda * (t + 1))
        else:
            lr = alpha
        _policy_row(Xsa, s2, n_actions, w, t_base, t_eps, t_tau, pi_row)
        expected = 0.0
        for b in range(n_actions):
            q = 0.0
            for k in range(K):
                q += Xsa[s2 * n_actions + b, k] * w[k]
            expected += pi_row[b] * q
        q_sa = 0.0
        row = s * n_actions + a
        for k in range(K):
            q_sa += Xsa[row, k] * w[k]
        delta = r + gamma * expected - q_sa
        scale = lr * F * delta
        for k in range(K):
            w[k] += scale * Xsa[row, k]
        if radius < np.inf:
            _project(w, radius)
        nrm = np.sqrt(np.sum(w * w))
        if not np.isfinite(nrm) or nrm > DIVERGENCE_NORM:
            diverged_at = t
            break
        s = s2
        a = a2
        while e < eval_steps.shape[0] and eval_steps[e] == t + 1:
            out[e] = w
            e += 1
    if diverged_at >= 0:
        if e > 0:
            last = out[e - 1].copy()
        else:
            last = w0.copy()
        while e < eval_steps.shape[0]:
            out[e] = last
            e += 1
    return out, diverged_at
