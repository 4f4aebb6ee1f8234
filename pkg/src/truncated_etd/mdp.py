"""Finite MDPs, tabular policies and the Markov chains they induce."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PROB_TOL = 1e-12
STATIONARY_TOL = 1e-12
ZERO_MASS = 1e-14


class NotErgodicError(ValueError):
    """Raised when a chain has no strictly positive stationary distribution."""


def _as_readonly(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _check_stochastic(rows, name, tol=PROB_TOL):
    if np.any(rows < 0):
        raise ValueError(f"{name} has negative entries")
    err = np.max(np.abs(rows.sum(axis=-1) - 1.0))
    if err > tol:
        raise ValueError(f"{name} rows do not sum to 1 (max deviation {err:.3e})")


@dataclass(frozen=True)
class TabularMdp:
    """Finite discounted MDP with deterministic rewards ``r(s, a)``.

    ``transition[s, a, s']`` is ``p(s'|s, a)``.
    """

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    initial_dist: np.ndarray

    def __post_init__(self):
        p = _as_readonly(self.transition)
        r = _as_readonly(self.reward)
        p0 = _as_readonly(self.initial_dist)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {p.shape}")
        if r.shape != p.shape[:2]:
            raise ValueError(f"reward shape {r.shape} does not match (S, A) = {p.shape[:2]}")
        if p0.shape != (p.shape[0],):
            raise ValueError(f"initial_dist shape {p0.shape} does not match S = {p.shape[0]}")
        _check_stochastic(p, "transition")
        _check_stochastic(p0, "initial_dist")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial_dist", p0)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "discount": self.discount,
            "initial_dist": self.initial_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        missing = {"transition", "reward", "discount", "initial_dist"} - set(doc)
        if missing:
            raise ValueError(f"MDP document missing fields: {sorted(missing)}")
        mdp = cls(
            transition=doc["transition"],
            reward=doc["reward"],
            discount=doc["discount"],
            initial_dist=doc["initial_dist"],
        )
        for key, actual in (("n_states", mdp.n_states), ("n_actions", mdp.n_actions)):
            if key in doc and int(doc[key]) != actual:
                raise ValueError(f"{key}={doc[key]} disagrees with array shapes ({actual})")
        return mdp


def load_mdp(path) -> TabularMdp:
    """Read an MDP from a JSON document (see :meth:`TabularMdp.to_dict`)."""
    return TabularMdp.from_dict(json.loads(Path(path).read_text()))


def save_mdp(mdp: TabularMdp, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=2))


@dataclass(frozen=True)
class TabularPolicy:
    """Row-stochastic matrix ``probs[s, a] = pi(a|s)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = _as_readonly(self.probs)
        if p.ndim != 2:
            raise ValueError(f"policy must be a matrix (S, A), got shape {p.shape}")
        _check_stochastic(p, "policy")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def shape(self):
        return self.probs.shape

    def covers(self, other: "TabularPolicy") -> bool:
        """True if ``self`` puts positive mass wherever ``other`` does."""
        return bool(np.all((other.probs == 0) | (self.probs > 0)))


@dataclass(frozen=True)
class InterestFunction:
    """Strictly positive weighting over states or state-action pairs."""

    values: np.ndarray

    def __post_init__(self):
        v = _as_readonly(self.values)
        if v.ndim != 1 or not np.all(v > 0):
            raise ValueError("interest must be a strictly positive vector")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, size: int, value: float = 1.0) -> "InterestFunction":
        return cls(np.full(size, float(value)))


def _check_policy(mdp: TabularMdp, policy: TabularPolicy):
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy shape {policy.shape} does not match MDP (S, A) = "
            f"{(mdp.n_states, mdp.n_actions)}"
        )


def state_transition_matrix(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """``P_pi(s, s') = sum_a pi(a|s) p(s'|s, a)``."""
    _check_policy(mdp, policy)
    return np.einsum("sa,sat->st", policy.probs, mdp.transition)


def state_action_transition_matrix(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """``P_pi((s, a), (s', a')) = p(s'|s, a) pi(a'|s')``, pairs flattened as ``s * A + a``."""
    _check_policy(mdp, policy)
    S, A = mdp.n_states, mdp.n_actions
    return np.einsum("sat,tb->satb", mdp.transition, policy.probs).reshape(S * A, S * A)


def reward_vector(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """``r_pi(s) = sum_a pi(a|s) r(s, a)``."""
    _check_policy(mdp, policy)
    return np.einsum("sa,sa->s", policy.probs, mdp.reward)


def value_function(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    P = state_transition_matrix(mdp, policy)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * P, reward_vector(mdp, policy))


def action_value_function(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """Flattened ``q_pi`` solving ``q = r + gamma P_pi q`` over state-action pairs."""
    P = state_action_transition_matrix(mdp, policy)
    n = P.shape[0]
    return np.linalg.solve(np.eye(n) - mdp.discount * P, mdp.reward.reshape(-1))


def is_primitive(transition: np.ndarray) -> bool:
    """Irreducible and aperiodic, i.e. some power of ``P`` is entrywise positive.

    Uses Wielandt's bound: a primitive n x n matrix has ``P^k > 0`` for
    ``k = (n - 1)^2 + 1``, reached here by repeated boolean squaring.
    """
    B = np.asarray(transition) > 0
    n = B.shape[0]
    k = 1
    target = (n - 1) ** 2 + 1
    while k < target:
        B = (B.astype(np.int64) @ B.astype(np.int64)) > 0
        k *= 2
    return bool(B.all())


def stationary_distribution(
    transition: np.ndarray, tol: float = STATIONARY_TOL, max_iter: int = 1_000_000
) -> np.ndarray:
    """Invariant distribution ``d`` with ``d^T P = d^T`` of an ergodic chain.

    Power iteration first; if it has not converged after ``max_iter`` steps
    the dense system ``(P^T - I) d = 0, sum(d) = 1`` is solved directly.

    Raises
    ------
    NotErgodicError
        If the chain is reducible or periodic, or the resulting vector has
        (numerically) zero entries.
    """
    P = np.asarray(transition, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"transition must be square, got shape {P.shape}")
    _check_stochastic(P, "transition", tol=1e-10)
    if not is_primitive(P):
        raise NotErgodicError("chain is reducible or periodic")
    n = P.shape[0]

    d = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = d @ P
        if np.max(np.abs(nxt - d)) < tol:
            d = nxt
            break
        d = nxt
    if np.max(np.abs(d @ P - d)) >= 1e-10 * max(1.0, d.sum()):
        M = np.vstack([P.T - np.eye(n), np.ones((1, n))])
        rhs = np.zeros(n + 1)
        rhs[-1] = 1.0
        d = np.linalg.lstsq(M, rhs, rcond=None)[0]
    d = d / d.sum()
    if np.min(d) < ZERO_MASS:
        raise NotErgodicError(
            f"stationary distribution has zero entries (min {np.min(d):.3e}); chain is not ergodic"
        )
    if np.max(np.abs(d @ P - d)) >= 1e-10:
        raise NotErgodicError("failed to find an invariant distribution")
    return d


def state_action_stationary(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """``d(s, a) = d(s) pi(a|s)`` flattened as ``s * A + a``."""
    d = stationary_distribution(state_transition_matrix(mdp, policy))
    return (d[:, None] * policy.probs).reshape(-1)


def sample_index(cdf_row: np.ndarray, u: float) -> int:
    """Inverse-CDF draw; ``u`` uniform on [0, 1)."""
    idx = int(np.searchsorted(cdf_row, u, side="right"))
    return min(idx, cdf_row.shape[0] - 1)


def sample_step(mdp: TabularMdp, policy: TabularPolicy, state: int, rng: np.random.Generator):
    """One interaction step from ``state``: returns ``(action, reward, next_state)``.

    Consumes exactly two uniforms from ``rng`` (action, then next state), the
    same convention the batch runners use.
    """
    if not 0 <= state < mdp.n_states:
        raise IndexError(f"state {state} out of range [0, {mdp.n_states})")
    u_a, u_s = rng.random(2)
    action = sample_index(np.cumsum(policy.probs[state]), u_a)
    next_state = sample_index(np.cumsum(mdp.transition[state, action]), u_s)
    return action, float(mdp.reward[state, action]), next_state


def random_mdp(
    n_states: int,
    n_actions: int,
    rng: np.random.Generator,
    discount: float = 0.9,
    concentration: float = 1.0,
) -> TabularMdp:
    """Dirichlet-random MDP; every transition row has full support, so any
    policy induces an ergodic chain."""
    p = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    p = np.maximum(p, 1e-3)
    p /= p.sum(axis=-1, keepdims=True)
    r = rng.normal(size=(n_states, n_actions))
    return TabularMdp(p, r, discount, np.full(n_states, 1.0 / n_states))


def random_policy(
    n_states: int, n_actions: int, rng: np.random.Generator, floor: float = 0.05
) -> TabularPolicy:
    probs = rng.dirichlet(np.ones(n_actions), size=n_states)
    probs = floor / n_actions + (1.0 - floor) * probs
    return TabularPolicy(probs / probs.sum(axis=1, keepdims=True))
