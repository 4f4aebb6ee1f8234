"""Independent Monte-Carlo oracles shared by the test modules.

Every sample is a fresh trajectory started from the behavior stationary
distribution, so sample means have honest i.i.d. standard errors.
"""

import numpy as np

from truncated_etd.mdp import state_transition_matrix, stationary_distribution


def stationary_windows(mdp, mu, length, count, rng, actions_from=None):
    """``count`` independent behavior trajectories of ``length`` transitions.

    Returns ``states`` with shape ``(count, length + 1)`` and ``actions``
    with shape ``(count, length)``; ``states[:, 0]`` is drawn from ``d_mu``.
    ``actions_from`` (an ``S x A`` matrix) replaces ``mu`` for action draws.
    """
    d = stationary_distribution(state_transition_matrix(mdp, mu))
    cdf_mu = np.cumsum(mu.probs if actions_from is None else actions_from, axis=1)
    cdf_p = np.cumsum(mdp.transition, axis=2)
    S, A = mdp.n_states, mdp.n_actions
    states = np.empty((count, length + 1), dtype=np.int64)
    actions = np.empty((count, length), dtype=np.int64)
    states[:, 0] = rng.choice(S, size=count, p=d)
    for k in range(length):
        u = rng.random((count, 2))
        s = states[:, k]
        a = (u[:, [0]] >= cdf_mu[s]).sum(axis=1).clip(max=A - 1)
        actions[:, k] = a
        states[:, k + 1] = (u[:, [1]] >= cdf_p[s, a]).sum(axis=1).clip(max=S - 1)
    return states, actions


def grouped_mean_se(values, groups, size):
    mean = np.zeros(size)
    se = np.full(size, np.inf)
    for g in range(size):
        v = values[groups == g]
        if v.size > 1:
            mean[g] = v.mean()
            se[g] = v.std(ddof=1) / np.sqrt(v.size)
    return mean, se


def mc_emphasis(mdp, mu, pi, n, count, rng, control=False, interest=None):
    """Monte-Carlo ``E[F_{t,n} | S_t]`` (or ``| S_t, A_t`` with ``control``).

    The window covers steps ``t - n .. t``; the trace is evaluated by the
    explicit sum over ``j`` with the ratio products written out.
    """
    S, A = mdp.n_states, mdp.n_actions
    states, actions = stationary_windows(mdp, mu, n + 1, count, rng)
    rho = (pi.probs / mu.probs)[states[:, :-1], actions]
    if control:
        idx = states[:, :-1] * A + actions
        i = np.ones(S * A) if interest is None else np.asarray(interest)
    else:
        idx = states[:, :-1]
        i = np.ones(S) if interest is None else np.asarray(interest)
    g = mdp.discount
    t = n
    F = np.zeros(count)
    for j in range(n + 1):
        if control:
            prod = np.prod(rho[:, t - j + 1:t + 1], axis=1)
        else:
            prod = np.prod(rho[:, t - j:t], axis=1)
        F += g**j * prod * i[idx[:, t - j]]
    return grouped_mean_se(F, idx[:, t], S * A if control else S)


def ratio_mean_se(num, den, groups, size):
    """Self-normalised ``sum(num) / sum(den)`` per group with delta-method SE."""
    mean = np.zeros(size)
    se = np.full(size, np.inf)
    for g in range(size):
        sel = groups == g
        k = sel.sum()
        if k > 1:
            # means over all samples, so the group indicator stays inside the ratio
            n_bar, d_bar = num[sel].sum() / groups.size, den[sel].sum() / groups.size
            r = n_bar / d_bar
            resid = np.where(sel, num - r * den, 0.0)
            mean[g] = r
            se[g] = resid.std(ddof=1) / np.sqrt(groups.size) / d_bar
    return mean, se


def mc_emphasis_mixture(mdp, mu, pi, n, count, rng, control=False, interest=None):
    """Importance-sampled ``E[F_{t,n} | S_t]`` (or ``| S_t, A_t``).

    Actions are drawn from the defensive mixture ``q = (mu + pi) / 2`` and
    reweighted by ``prod mu / q``.  Every per-step weight is at most 2, so the
    estimator keeps a finite variance even when ``pi / mu`` products are
    heavy-tailed, which is where the plain sample mean's standard error stops
    being trustworthy at practical sample sizes.
    """
    S, A = mdp.n_states, mdp.n_actions
    q = 0.5 * (mu.probs + pi.probs)
    states, actions = stationary_windows(mdp, mu, n + 1, count, rng, actions_from=q)
    s_a = states[:, :-1], actions
    rho = (pi.probs / mu.probs)[s_a]
    weight = np.prod((mu.probs / q)[s_a], axis=1)
    if control:
        idx = states[:, :-1] * A + actions
        i = np.ones(S * A) if interest is None else np.asarray(interest)
    else:
        idx = states[:, :-1]
        i = np.ones(S) if interest is None else np.asarray(interest)
    g = mdp.discount
    t = n
    F = np.zeros(count)
    for j in range(n + 1):
        if control:
            prod = np.prod(rho[:, t - j + 1:t + 1], axis=1)
        else:
            prod = np.prod(rho[:, t - j:t], axis=1)
        F += g**j * prod * i[idx[:, t - j]]
    return ratio_mean_se(weight * F, weight, idx[:, t], S * A if control else S)
