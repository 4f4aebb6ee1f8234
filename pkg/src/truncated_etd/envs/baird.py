"""Baird's seven-state counterexample.

States are 0-indexed here: states 0..5 are the "upper" states and state 6
is the lower state that ``solid`` always leads to.
"""

import numpy as np

from ..mdp import TabularMdp, TabularPolicy

N_STATES = 7
DASHED = 0
SOLID = 1
ACTIONS = ("dashed", "solid")
GAMMA = 0.99
N_FEATURES = 8


def baird_mdp(discount: float = GAMMA) -> TabularMdp:
    p = np.zeros((N_STATES, 2, N_STATES))
    p[:, DASHED, :6] = 1.0 / 6.0
    p[:, SOLID, 6] = 1.0
    return TabularMdp(
        transition=p,
        reward=np.zeros((N_STATES, 2)),
        discount=discount,
        initial_dist=np.full(N_STATES, 1.0 / N_STATES),
    )


def baird_features() -> np.ndarray:
    """Canonical 7x8 feature matrix: ``2 e_s + e_8`` for the upper states,
    ``e_7 + 2 e_8`` for the lower one.  Rank 7, so not full column rank."""
    X = np.zeros((N_STATES, N_FEATURES))
    for s in range(6):
        X[s, s] = 2.0
        X[s, 7] = 1.0
    X[6, 6] = 1.0
    X[6, 7] = 2.0
    return X


def baird_initial_weights() -> np.ndarray:
    w = np.ones(N_FEATURES)
    w[6] = 10.0
    return w


def baird_action_features() -> np.ndarray:
    """State-action features: the state feature placed in the action's block
    of a 16-dimensional vector.  Rows are ordered ``s * 2 + a``."""
    X = baird_features()
    Xsa = np.zeros((N_STATES * 2, 2 * N_FEATURES))
    for s in range(N_STATES):
        for a in range(2):
            Xsa[s * 2 + a, a * N_FEATURES:(a + 1) * N_FEATURES] = X[s]
    return Xsa


def baird_action_initial_weights() -> np.ndarray:
    return np.tile(baird_initial_weights(), 2)


def behavior_policy() -> TabularPolicy:
    """``mu(solid|s) = 1/7``, ``mu(dashed|s) = 6/7`` in every state."""
    probs = np.empty((N_STATES, 2))
    probs[:, DASHED] = 6.0 / 7.0
    probs[:, SOLID] = 1.0 / 7.0
    return TabularPolicy(probs)


def target_policy(p_dashed: float) -> TabularPolicy:
    if not 0.0 <= p_dashed <= 1.0:
        raise ValueError(f"p_dashed must lie in [0, 1], got {p_dashed}")
    probs = np.empty((N_STATES, 2))
    probs[:, DASHED] = p_dashed
    probs[:, SOLID] = 1.0 - p_dashed
    return TabularPolicy(probs)


def baird_env(discount: float = GAMMA):
    """``(mdp, features, initial_weights)`` for the prediction setting."""
    return baird_mdp(discount), baird_features(), baird_initial_weights()
