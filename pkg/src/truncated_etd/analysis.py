"""Closed-form quantities behind truncated emphatic TD on tabular MDPs.

Everything here is computed from a :class:`Chain`: the behavior
stationary distribution ``d``, the target transition matrix ``P``, the
expected reward ``r`` and the interest ``i``.  The prediction chain lives on
states; the control overload lives on state-action pairs (flattened as
``s * A + a``) with ``P((s, a), (s', a')) = p(s'|s, a) pi(a'|s')`` and
``d(s, a) = d_mu(s) mu(a|s)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .mdp import (
    TabularMdp,
    TabularPolicy,
    state_action_stationary,
    state_action_transition_matrix,
    state_transition_matrix,
    stationary_distribution,
)

ND_TOL = 1e-12
RANK_TOL = 1e-10


class SingularUpdateError(np.linalg.LinAlgError):
    """The expected update matrix is singular, so no unique fixed point exists."""


@dataclass(frozen=True)
class Chain:
    d: np.ndarray
    P: np.ndarray
    r: np.ndarray
    i: np.ndarray
    gamma: float

    @property
    def size(self) -> int:
        return self.d.shape[0]


def _interest_values(interest, size):
    if interest is None:
        return np.ones(size)
    values = np.asarray(getattr(interest, "values", interest), dtype=float)
    if values.ndim == 0:
        values = np.full(size, float(values))
    if values.shape != (size,):
        raise ValueError(f"interest has shape {values.shape}, expected ({size},)")
    if np.any(values <= 0):
        raise ValueError("interest must be strictly positive")
    return values


def build_chain(
    mdp: TabularMdp,
    behavior: TabularPolicy,
    target: TabularPolicy,
    interest=None,
    control: bool = False,
) -> Chain:
    """Assemble ``(d_mu, P_pi, r_pi, i)`` for the prediction or control setting."""
    if not behavior.covers(target):
        raise ValueError("behavior policy does not cover the target policy")
    if control:
        d = state_action_stationary(mdp, behavior)
        P = state_action_transition_matrix(mdp, target)
        r = mdp.reward.reshape(-1).astype(float)
        if np.any(d <= 0):
            raise ValueError("control analysis needs mu(a|s) > 0 everywhere")
    else:
        d = stationary_distribution(state_transition_matrix(mdp, behavior))
        P = state_transition_matrix(mdp, target)
        r = np.einsum("sa,sa->s", target.probs, mdp.reward)
    return Chain(d, P, r, _interest_values(interest, d.shape[0]), mdp.discount)


def _features(chain: Chain, features):
    if features is None:
        return np.eye(chain.size)
    X = np.asarray(getattr(features, "matrix", features), dtype=float)
    if X.ndim != 2 or X.shape[0] != chain.size:
        raise ValueError(f"features need {chain.size} rows, got shape {X.shape}")
    return X


# emphasis ------------------------------------------------------------------

def truncated_emphasis_of(chain: Chain, n: int) -> np.ndarray:
    """``m_n = sum_{j<=n} gamma^j D^-1 (P^T)^j D i`` by repeated products."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    term = chain.d * chain.i
    total = term.copy()
    for _ in range(n):
        term = chain.gamma * (chain.P.T @ term)
        total += term
    return total / chain.d


def emphasis_limit_of(chain: Chain) -> np.ndarray:
    """``m = D^-1 (I - gamma P^T)^-1 D i``."""
    y = np.linalg.solve(np.eye(chain.size) - chain.gamma * chain.P.T, chain.d * chain.i)
    return y / chain.d


def truncated_emphasis(mdp, behavior, target, interest=None, n: int = 0, control=False):
    return truncated_emphasis_of(build_chain(mdp, behavior, target, interest, control), n)


def emphasis_limit(mdp, behavior, target, interest=None, control=False):
    return emphasis_limit_of(build_chain(mdp, behavior, target, interest, control))


def emphasis_sequence(chain: Chain, n_max: int) -> np.ndarray:
    """Rows ``m_0, ..., m_{n_max}``."""
    out = np.empty((n_max + 1, chain.size))
    term = chain.d * chain.i
    total = term.copy()
    out[0] = total
    for n in range(1, n_max + 1):
        term = chain.gamma * (chain.P.T @ term)
        total = total + term
        out[n] = total
    return out / chain.d


def emphasis_bounds(chain: Chain, n: int, m: Optional[np.ndarray] = None):
    """Right-hand sides of the emphasis bounds at truncation ``n``.

    Returns ``(bound_l1, bound_inf)`` with
    ``||m_n - m||_1 <= gamma^{n+1} (d_max / d_min) ||m||_1`` and
    ``||f_n - f||_inf <= gamma^{n+1} (d_max^2 / d_min) ||m||_1``.
    """
    m = emphasis_limit_of(chain) if m is None else m
    dmax, dmin = chain.d.max(), chain.d.min()
    g = chain.gamma ** (n + 1)
    m1 = np.abs(m).sum()
    return g * dmax / dmin * m1, g * dmax**2 / dmin * m1


# expected updates ----------------------------------------------------------

def expected_update_of(chain: Chain, features=None, n: Optional[int] = None):
    """``A_n = X^T D_{f_n} (gamma P - I) X`` and ``b_n = X^T D_{f_n} r``.

    ``n=None`` uses the untruncated emphasis.
    """
    X = _features(chain, features)
    m = emphasis_limit_of(chain) if n is None else truncated_emphasis_of(chain, n)
    f = chain.d * m
    A = X.T @ (f[:, None] * ((chain.gamma * chain.P - np.eye(chain.size)) @ X))
    b = X.T @ (f * chain.r)
    return A, b


def expected_update(mdp, behavior, target, interest=None, features=None, n=None, control=False):
    return expected_update_of(build_chain(mdp, behavior, target, interest, control), features, n)


def fixed_point(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``w = -A^{-1} b``.

    Raises
    ------
    SingularUpdateError
        If ``A`` is singular (it is then not negative definite either).
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.linalg.matrix_rank(A, tol=RANK_TOL * max(1.0, np.abs(A).max())) < A.shape[0]:
        raise SingularUpdateError(
            "expected update matrix is singular; it is not negative definite, "
            "so the fixed point is not unique"
        )
    w = np.linalg.solve(A, -b)
    if np.linalg.norm(A @ w + b) > 1e-9 * (1.0 + np.linalg.norm(b)):
        raise SingularUpdateError("expected update matrix is too ill-conditioned to solve")
    return w


def symmetric_part(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def is_negative_definite(M, tol: float = ND_TOL) -> bool:
    """``x^T M x < 0`` for all ``x != 0``, i.e. the largest eigenvalue of
    ``(M + M^T) / 2`` is below ``-tol``."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"need a square matrix, got shape {M.shape}")
    return bool(np.linalg.eigvalsh(symmetric_part(M)).max() < -tol)


# truncation thresholds -----------------------------------------------------

def emphatic_lambda_min(chain: Chain, m: Optional[np.ndarray] = None) -> float:
    """Smallest eigenvalue of ``(D_f (I - gamma P) + (I - gamma P^T) D_f) / 2``."""
    m = emphasis_limit_of(chain) if m is None else m
    f = chain.d * m
    M = f[:, None] * (np.eye(chain.size) - chain.gamma * chain.P)
    return float(np.linalg.eigvalsh(symmetric_part(M)).min())


def emphatic_kappa(chain: Chain, m: Optional[np.ndarray] = None) -> float:
    """``min_s d(s) i(s) / f(s)``, which equals ``min_s i(s) / m(s)``."""
    m = emphasis_limit_of(chain) if m is None else m
    return float(np.min(chain.i / m))


def nd_ratio(chain: Chain, m=None) -> float:
    """Right-hand side ``c`` of the negative-definiteness condition ``gamma^{n+1} < c``."""
    m = emphasis_limit_of(chain) if m is None else m
    d = chain.d
    op = np.linalg.norm(chain.gamma * chain.P - np.eye(chain.size), 2)
    return emphatic_lambda_min(chain, m) * d.min() / (d.max() ** 2 * op * np.abs(m).sum())


def contraction_ratio(chain: Chain, m=None) -> float:
    """Right-hand side ``c`` of the contraction condition ``gamma^{n+1} < c``."""
    m = emphasis_limit_of(chain) if m is None else m
    d = chain.d
    op = np.linalg.norm(np.eye(chain.size) - chain.gamma * chain.P.T, np.inf)
    return (emphatic_kappa(chain, m) * d.min() * np.min(chain.i * d)
            / (d.max() ** 2 * op * np.abs(m).sum()))


def _log_threshold(ratio: float, gamma: float) -> float:
    """``ln(ratio) / ln(gamma) - 1``: the real ``n`` at which ``gamma^{n+1} = ratio``."""
    if gamma == 0.0:
        return -math.inf
    if ratio <= 0:
        return math.inf
    return math.log(ratio) / math.log(gamma) - 1.0


def smallest_n(ratio: float, gamma: float) -> int:
    """Smallest integer ``n >= 0`` with ``gamma^{n+1} < ratio``."""
    if gamma == 0.0:
        return 0 if ratio > 0 else -1
    x = _log_threshold(ratio, gamma)
    if not math.isfinite(x):
        raise ValueError("condition can never hold (non-positive right-hand side)")
    n = max(0, math.floor(x) + 1)
    # guard against rounding in the logarithms
    while n > 0 and gamma**n < ratio:
        n -= 1
    while not gamma ** (n + 1) < ratio:
        n += 1
    return n


def selection_helpers(chain: Chain):
    """``(n1, n2)``: the real-valued thresholds of the two truncation conditions."""
    m = emphasis_limit_of(chain)
    return (_log_threshold(nd_ratio(chain, m), chain.gamma),
            _log_threshold(contraction_ratio(chain, m), chain.gamma))


def selection_helpers_n1_n2(mdp, behavior, target, interest=None, control=False):
    return selection_helpers(build_chain(mdp, behavior, target, interest, control))


def sampled_sup_n1_n2(mdp, policy_pairs: Iterable, interest=None, control=True):
    """Max of ``n1`` and of ``n2`` over finitely many ``(mu, pi)`` pairs.

    This under-approximates the supremum over the full policy sets.
    """
    best1 = best2 = -math.inf
    for mu, pi in policy_pairs:
        n1, n2 = selection_helpers_n1_n2(mdp, mu, pi, interest, control)
        best1, best2 = max(best1, n1), max(best2, n2)
    return best1, best2


def first_negative_definite(chain: Chain, features=None, n_max: int = 10_000) -> int:
    """Smallest ``n <= n_max`` with ``A_n`` negative definite, or ``-1``."""
    X = _features(chain, features)
    G = (chain.gamma * chain.P - np.eye(chain.size)) @ X
    term = chain.d * chain.i
    f = term.copy()
    for n in range(n_max + 1):
        if n > 0:
            term = chain.gamma * (chain.P.T @ term)
            f = f + term
        if is_negative_definite(X.T @ (f[:, None] * G)):
            return n
    return -1


def min_n_negative_definite_of(chain: Chain, features=None):
    """``(n_bound, n_actual)``: the sufficient bound and the smallest ``n`` that
    actually gives a negative definite ``A_n`` (searched up to ``n_bound``)."""
    n_bound = smallest_n(nd_ratio(chain), chain.gamma)
    return n_bound, first_negative_definite(chain, features, n_bound)


def min_n_negative_definite(mdp, behavior, target, interest=None, features=None, control=False):
    return min_n_negative_definite_of(build_chain(mdp, behavior, target, interest, control), features)


def min_n_contraction_of(chain: Chain):
    """``(n_bound, kappa)`` for the contraction condition."""
    m = emphasis_limit_of(chain)
    return smallest_n(contraction_ratio(chain, m), chain.gamma), emphatic_kappa(chain, m)


def min_n_contraction(mdp, behavior, target, interest=None, control=False):
    return min_n_contraction_of(build_chain(mdp, behavior, target, interest, control))


# projected Bellman operator ------------------------------------------------

def projection_matrix(features, weights) -> np.ndarray:
    """``X (X^T D X)^{-1} X^T D``: orthogonal projection onto span(X) in ``||.||_D``."""
    X = np.asarray(getattr(features, "matrix", features), dtype=float)
    f = np.asarray(weights, dtype=float)
    if np.any(f <= 0):
        raise ValueError("projection weights must be strictly positive")
    if np.linalg.matrix_rank(X, tol=RANK_TOL) < X.shape[1]:
        raise ValueError("features are rank deficient")
    G = X.T @ (f[:, None] * X)
    return X @ np.linalg.solve(G, X.T * f)


def weighted_norm(v, weights) -> np.ndarray:
    """``sqrt(sum_s f(s) v(s)^2)`` along axis 0."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(weights, dtype=float)
    return np.sqrt(np.einsum("s,s...->...", w, v**2))


def bellman_operator(chain: Chain, v) -> np.ndarray:
    """``T v = r + gamma P v`` (columns of ``v`` are treated independently)."""
    v = np.asarray(v, dtype=float)
    r = chain.r if v.ndim == 1 else chain.r[:, None]
    return r + chain.gamma * (chain.P @ v)


def empirical_contraction(chain: Chain, features, n: int, pairs: int = 10_000, rng=None) -> float:
    """Largest observed ``||Pi T v1 - Pi T v2||_{f_n} / ||v1 - v2||_{f_n}`` over
    random Gaussian pairs."""
    rng = np.random.default_rng(0) if rng is None else rng
    X = _features(chain, features)
    f = chain.d * truncated_emphasis_of(chain, n)
    Pi = projection_matrix(X, f)
    V1 = rng.normal(size=(chain.size, pairs))
    V2 = rng.normal(size=(chain.size, pairs))
    num = weighted_norm(Pi @ (bellman_operator(chain, V1) - bellman_operator(chain, V2)), f)
    return float(np.max(num / weighted_norm(V1 - V2, f)))


def contraction_modulus(chain: Chain, features, n: int) -> float:
    """Exact Lipschitz constant of ``Pi_{f_n} T`` in ``||.||_{f_n}``."""
    X = _features(chain, features)
    f = chain.d * truncated_emphasis_of(chain, n)
    Pi = projection_matrix(X, f)
    root = np.sqrt(f)
    return float(np.linalg.norm(root[:, None] * (Pi @ (chain.gamma * chain.P)) / root, 2))


def true_values(chain: Chain) -> np.ndarray:
    return np.linalg.solve(np.eye(chain.size) - chain.gamma * chain.P, chain.r)


def performance_bound(chain: Chain, features, n: int):
    """``(error, bound)`` for ``||X w_n - v||_{f_n} <= ||Pi v - v||_{f_n} / sqrt(1 - gamma)``."""
    X = _features(chain, features)
    f = chain.d * truncated_emphasis_of(chain, n)
    v = true_values(chain)
    w = fixed_point(*expected_update_of(chain, X, n))
    Pi = projection_matrix(X, f)
    return float(weighted_norm(X @ w - v, f)), float(weighted_norm(Pi @ v - v, f) / math.sqrt(1 - chain.gamma))


# report --------------------------------------------------------------------

@dataclass
class EmphasisReport:
    n: int
    gamma: float
    control: bool
    m_n: np.ndarray
    m: np.ndarray
    f_n: np.ndarray
    f: np.ndarray
    bound_l1: float
    bound_inf: float
    lambda_min: float
    kappa: float
    A_n: np.ndarray
    b_n: np.ndarray
    w_star_n: Optional[np.ndarray]
    negative_definite: bool
    min_n_nd: int
    min_n_nd_actual: int
    min_n_contract: int
    n1: float
    n2: float

    _ARRAYS = ("m_n", "m", "f_n", "f", "A_n", "b_n", "w_star_n")

    def to_dict(self) -> dict:
        doc = asdict(self)
        for key in self._ARRAYS:
            if doc[key] is not None:
                doc[key] = np.asarray(doc[key]).tolist()
        return doc

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, doc: dict) -> "EmphasisReport":
        doc = dict(doc)
        for key in cls._ARRAYS:
            if doc.get(key) is not None:
                doc[key] = np.array(doc[key], dtype=float)
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "EmphasisReport":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def emphasis_report_of(chain: Chain, features=None, n: int = 0, control: bool = False) -> EmphasisReport:
    X = _features(chain, features)
    m = emphasis_limit_of(chain)
    m_n = truncated_emphasis_of(chain, n)
    bound_l1, bound_inf = emphasis_bounds(chain, n, m)
    A, b = expected_update_of(chain, X, n)
    try:
        w = fixed_point(A, b)
    except SingularUpdateError:
        w = None
    n_bound, n_actual = min_n_negative_definite_of(chain, X)
    n_contract, kappa = min_n_contraction_of(chain)
    n1, n2 = selection_helpers(chain)
    return EmphasisReport(
        n=n,
        gamma=chain.gamma,
        control=control,
        m_n=m_n,
        m=m,
        f_n=chain.d * m_n,
        f=chain.d * m,
        bound_l1=float(bound_l1),
        bound_inf=float(bound_inf),
        lambda_min=emphatic_lambda_min(chain, m),
        kappa=kappa,
        A_n=A,
        b_n=b,
        w_star_n=w,
        negative_definite=is_negative_definite(A),
        min_n_nd=n_bound,
        min_n_nd_actual=n_actual,
        min_n_contract=n_contract,
        n1=n1,
        n2=n2,
    )


def emphasis_report(mdp, behavior, target, interest=None, features=None, n=0, control=False):
    chain = build_chain(mdp, behavior, target, interest, control)
    return emphasis_report_of(chain, features, n, control)
