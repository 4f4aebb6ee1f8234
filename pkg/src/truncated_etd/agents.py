"""Linear learners: truncated emphatic TD for prediction and truncated
emphatic expected SARSA for control.

Each algorithm is available as a single-step update (``prediction_step``,
``expected_sarsa_step``) and as a seeded runner (``run_prediction``,
``run_control``).  The runners have two interchangeable backends: a
pure-Python loop built from the single-step functions and
:class:`~truncated_etd.traces.TraceEngine`, and a compiled loop in
:mod:`truncated_etd._kernels`.  Both consume the same uniforms, so a given
seed produces the same trajectory on either.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .mdp import (
    InterestFunction,
    TabularMdp,
    TabularPolicy,
    action_value_function,
    sample_index,
    state_action_stationary,
    state_transition_matrix,
    stationary_distribution,
    value_function,
)
from .traces import (
    CONTROL,
    PREDICTION,
    TraceConfig,
    TraceEngine,
    trace_window_recompute,
)

DIVERGENCE_NORM = _kernels.DIVERGENCE_NORM
RANK_TOL = 1e-10

OFF_POLICY_TD = "off_policy_td"
ETD0 = "etd0"
TRUNCATED_ETD = "truncated_etd"
ETD_BETA = "etd_beta"
PROJECTED_TRUNCATED_ETD = "projected_truncated_etd"
TE_EXPECTED_SARSA = "truncated_emphatic_expected_sarsa"
PTE_EXPECTED_SARSA = "projected_truncated_emphatic_expected_sarsa"

PREDICTION_ALGORITHMS = (OFF_POLICY_TD, ETD0, TRUNCATED_ETD, ETD_BETA, PROJECTED_TRUNCATED_ETD)
CONTROL_ALGORITHMS = (TE_EXPECTED_SARSA, PTE_EXPECTED_SARSA)


class FeatureMap:
    """Feature matrix with rows indexed by state or by state-action pair.

    Full column rank is checked on construction.  Baird's counterexample uses
    more features than states, so that check can be switched off with
    ``require_full_rank=False``; the rank is still recorded.
    """

    def __init__(self, matrix, require_full_rank: bool = True):
        X = np.array(matrix, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"feature matrix must be 2-d, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("feature matrix has non-finite entries")
        self.rank = int(np.linalg.matrix_rank(X, tol=RANK_TOL))
        if require_full_rank and self.rank < X.shape[1]:
            raise ValueError(
                f"feature matrix must have full column rank: rank {self.rank} < {X.shape[1]} columns"
            )
        X.setflags(write=False)
        self.matrix = X

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]

    @property
    def full_rank(self) -> bool:
        return self.rank == self.matrix.shape[1]

    def __getitem__(self, idx):
        return self.matrix[idx]

    @classmethod
    def tabular(cls, n_rows: int) -> "FeatureMap":
        return cls(np.eye(n_rows))


def _as_matrix(features) -> np.ndarray:
    return features.matrix if isinstance(features, FeatureMap) else np.asarray(features, dtype=float)


def is_diverged(w) -> bool:
    nrm = float(np.linalg.norm(w))
    return not np.isfinite(nrm) or nrm > DIVERGENCE_NORM


@dataclass(frozen=True)
class SoftmaxPolicySpec:
    """``eps * base + (1 - eps) * softmax(q / tau)`` per state.

    ``base=None`` means the uniform policy.  ``eps=1`` gives a fixed policy
    that ignores the weights.
    """

    temperature: float = 1.0
    epsilon: float = 0.0
    base: Optional[TabularPolicy] = None

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")

    @classmethod
    def fixed(cls, policy: TabularPolicy) -> "SoftmaxPolicySpec":
        return cls(temperature=1.0, epsilon=1.0, base=policy)

    def base_probs(self, n_states: int, n_actions: int) -> np.ndarray:
        if self.base is None:
            return np.full((n_states, n_actions), 1.0 / n_actions)
        if self.base.shape != (n_states, n_actions):
            raise ValueError(f"base policy shape {self.base.shape} != {(n_states, n_actions)}")
        return self.base.probs

    def probs(self, q: np.ndarray, base_row: Optional[np.ndarray] = None) -> np.ndarray:
        """Action distribution for one state given its action values ``q``."""
        z = np.asarray(q, dtype=float) / self.temperature
        z = np.exp(z - z.max())
        soft = z / z.sum()
        if self.epsilon == 0.0:
            return soft
        if base_row is None:
            base_row = np.full(soft.shape, 1.0 / soft.shape[0])
        return self.epsilon * base_row + (1.0 - self.epsilon) * soft


def softmax_policy_from_weights(
    weights, features, spec: SoftmaxPolicySpec, n_states: int, n_actions: int
) -> TabularPolicy:
    """Per-state softmax over ``q(s, .) = x(s, .)^T w`` mixed with ``spec.base``."""
    X = _as_matrix(features)
    q = (X @ np.asarray(weights, dtype=float)).reshape(n_states, n_actions) / spec.temperature
    q = np.exp(q - q.max(axis=1, keepdims=True))
    soft = q / q.sum(axis=1, keepdims=True)
    probs = spec.epsilon * spec.base_probs(n_states, n_actions) + (1.0 - spec.epsilon) * soft
    return TabularPolicy(probs / probs.sum(axis=1, keepdims=True))


def project_ball(w, radius: Optional[float]) -> np.ndarray:
    """Euclidean projection onto ``{w : ||w|| <= radius}``; ``None`` means no projection."""
    w = np.asarray(w, dtype=float)
    if radius is None or not np.isfinite(radius):
        return w
    if radius <= 0:
        raise ValueError(f"projection radius must be > 0, got {radius}")
    nrm = np.linalg.norm(w)
    return w * (radius / nrm) if nrm > radius else w


def prediction_step(w, x, x_next, reward, gamma, trace, rho, alpha, radius=None):
    """One update ``w + alpha F rho (r + gamma x'^T w - x^T w) x``, optionally projected.

    Returns ``(new_w, td_error)``.
    """
    td_error = reward + gamma * float(np.dot(x_next, w)) - float(np.dot(x, w))
    new_w = w + (alpha * trace * rho * td_error) * x
    return project_ball(new_w, radius), td_error


def expected_sarsa_step(w, x_sa, next_features, next_probs, reward, gamma, trace, alpha,
                        radius=None, terminal=False):
    """Emphatic expected-SARSA update.

    ``next_features`` is the ``(A, K)`` block of state-action features at the
    next state and ``next_probs`` the target policy there.  A terminal next
    state contributes no bootstrap term.
    """
    if terminal:
        expected = 0.0
    else:
        expected = float(np.dot(next_probs, np.asarray(next_features) @ w))
    td_error = reward + gamma * expected - float(np.dot(x_sa, w))
    new_w = w + (alpha * trace * td_error) * x_sa
    return project_ball(new_w, radius), td_error


@dataclass(frozen=True)
class AgentConfig:
    """Algorithm choice plus its hyperparameters.

    ``n=None`` on the control algorithms means no truncation (ETD(0)-style
    control); ``beta`` selects the soft-truncated variant instead.  With
    ``alpha_lambda`` set, the step size is ``1 / (2 alpha_lambda (t + 1))``
    and ``learning_rate`` is ignored.
    """

    algorithm: str
    learning_rate: float = 0.01
    n: Optional[int] = None
    beta: Optional[float] = None
    projection_radius: Optional[float] = None
    alpha_lambda: Optional[float] = None
    interest: float | Sequence[float] = 1.0
    incremental_trace: bool = False

    def __post_init__(self):
        algo = self.algorithm
        if algo not in PREDICTION_ALGORITHMS + CONTROL_ALGORITHMS:
            raise ValueError(f"unknown algorithm {algo!r}")
        if self.alpha_lambda is None and not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.alpha_lambda is not None and not self.alpha_lambda > 0:
            raise ValueError(f"alpha_lambda must be > 0, got {self.alpha_lambda}")
        if self.projection_radius is not None and not self.projection_radius > 0:
            raise ValueError(f"projection_radius must be > 0, got {self.projection_radius}")
        if algo in (TRUNCATED_ETD, PROJECTED_TRUNCATED_ETD, TE_EXPECTED_SARSA) and self.n is None:
            raise ValueError(f"{algo} needs a truncation length n")
        if algo == ETD_BETA and self.beta is None:
            raise ValueError("etd_beta needs beta")
        if algo == TE_EXPECTED_SARSA and self.beta is not None:
            raise ValueError("ratio recomputation is defined for hard truncation only")
        if self.n is not None and (int(self.n) != self.n or self.n < 0):
            raise ValueError(f"n must be a non-negative integer, got {self.n}")

    @property
    def is_control(self) -> bool:
        return self.algorithm in CONTROL_ALGORITHMS

    @property
    def recompute_ratios(self) -> bool:
        return self.algorithm == TE_EXPECTED_SARSA

    @property
    def radius(self) -> Optional[float]:
        if self.algorithm in (PROJECTED_TRUNCATED_ETD, PTE_EXPECTED_SARSA):
            return self.projection_radius
        return None

    def step_size(self, t: int) -> float:
        if self.alpha_lambda is not None:
            return 1.0 / (2.0 * self.alpha_lambda * (t + 1))
        return self.learning_rate

    def trace_config(self, gamma: float) -> Optional[TraceConfig]:
        """Trace used by this algorithm; ``None`` means the constant trace 1."""
        algo = self.algorithm
        indexing = CONTROL if self.is_control else PREDICTION
        if algo == OFF_POLICY_TD:
            return None
        if algo == ETD0:
            return TraceConfig.full(gamma, indexing)
        if algo == ETD_BETA:
            return TraceConfig.soft(self.beta, gamma, indexing)
        if self.beta is not None:
            if self.n is None:
                return TraceConfig.soft(self.beta, gamma, indexing)
            return TraceConfig.combined(self.beta, self.n, gamma, indexing)
        if self.n is None:
            return TraceConfig.full(gamma, indexing)
        incremental = self.incremental_trace and indexing == PREDICTION
        return TraceConfig.hard(self.n, gamma, indexing, incremental=incremental)

    def interest_vector(self, size: int) -> np.ndarray:
        if np.isscalar(self.interest):
            return InterestFunction.constant(size, float(self.interest)).values
        values = InterestFunction(self.interest).values
        if values.shape != (size,):
            raise ValueError(f"interest has length {values.shape[0]}, expected {size}")
        return values

    def label(self) -> str:
        parts = [self.algorithm]
        if self.n is not None:
            parts.append(f"n={self.n}")
        elif self.algorithm in (ETD0,) or (self.is_control and self.beta is None):
            parts.append("n=inf")
        if self.beta is not None:
            parts.append(f"beta={self.beta}")
        return ",".join(parts)

    def to_dict(self) -> dict:
        d = asdict(self)
        if not np.isscalar(self.interest):
            d["interest"] = list(map(float, self.interest))
        return d


def _kernel_trace_args(cfg: Optional[TraceConfig]):
    if cfg is None:
        return _kernels.TRACE_ONE, 0, 1.0
    code = {
        "full": _kernels.TRACE_FULL,
        "hard": _kernels.TRACE_HARD,
        "soft": _kernels.TRACE_SOFT,
        "combined": _kernels.TRACE_COMBINED,
    }[cfg.mode]
    return code, int(cfg.n or 0), float(cfg.decay)


def evaluation_steps(total_steps: int, eval_points: int) -> np.ndarray:
    """Evenly spaced update counts ``T k / E`` for ``k = 1..E``."""
    if eval_points < 1 or total_steps < eval_points:
        raise ValueError(f"need 1 <= eval_points <= steps, got {eval_points} and {total_steps}")
    return np.array([total_steps * k // eval_points for k in range(1, eval_points + 1)], dtype=np.int64)


@dataclass
class RunRecord:
    """Metric curve of one seeded run."""

    fingerprint: str
    seed: int
    metric: str
    steps: np.ndarray
    values: np.ndarray
    diverged: bool
    final_weights: np.ndarray
    initial_value: float = float("nan")
    config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def write(self, csv_path) -> Path:
        """Write ``step,value`` CSV plus a ``.json`` metadata sidecar."""
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["step,value"]
        lines += [f"{int(s)},{float(v)!r}" for s, v in zip(self.steps, self.values)]
        csv_path.write_text("\n".join(lines) + "\n")
        meta = {
            "fingerprint": self.fingerprint,
            "seed": int(self.seed),
            "metric": self.metric,
            "diverged": bool(self.diverged),
            "initial_value": float(self.initial_value),
            "final_weights": [float(x) for x in self.final_weights],
            "config": self.config,
        }
        csv_path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return csv_path

    @classmethod
    def read(cls, csv_path) -> "RunRecord":
        csv_path = Path(csv_path)
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        return cls(
            fingerprint=meta["fingerprint"],
            seed=meta["seed"],
            metric=meta["metric"],
            steps=data[:, 0].astype(np.int64),
            values=data[:, 1],
            diverged=meta["diverged"],
            final_weights=np.array(meta["final_weights"]),
            initial_value=meta.get("initial_value", float("nan")),
            config=meta.get("config", {}),
        )


def fingerprint(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def weighted_rms(err: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sqrt(np.sum(weights * err**2)))


def prediction_error(w, X, v_true, d) -> float:
    """RMSVE ``||X w - v_pi||_d``."""
    return weighted_rms(X @ w - v_true, d)


def _check_prediction_inputs(mdp, mu, pi, X):
    if not mu.covers(pi) or np.any(mu.probs <= 0):
        raise ValueError("behavior policy must give every action positive probability")
    if X.shape[0] != mdp.n_states:
        raise ValueError(f"feature matrix has {X.shape[0]} rows, MDP has {mdp.n_states} states")


def simulate_prediction(
    mdp: TabularMdp,
    behavior: TabularPolicy,
    target: TabularPolicy,
    features,
    config: AgentConfig,
    steps: int,
    seed: int,
    w0=None,
    eval_steps=None,
    backend: str = "numba",
):
    """Run an emphatic TD learner (or a baseline); returns ``(weights, diverged_at)``.

    ``weights[k]`` holds ``w`` after ``eval_steps[k]`` updates; after a
    divergence the last finite snapshot is repeated.
    """
    if config.is_control:
        raise ValueError(f"{config.algorithm} is a control algorithm")
    X = _as_matrix(features)
    _check_prediction_inputs(mdp, behavior, target, X)
    K = X.shape[1]
    w0 = np.zeros(K) if w0 is None else np.array(w0, dtype=float)
    eval_steps = evaluation_steps(steps, 100 if steps >= 100 else steps) if eval_steps is None \
        else np.asarray(eval_steps, dtype=np.int64)
    interest = config.interest_vector(mdp.n_states)
    rho_table = target.probs / behavior.probs
    rng = np.random.default_rng(seed)
    u0 = rng.random()
    U = rng.random((steps, 2))
    tcfg = config.trace_config(mdp.discount)
    radius = config.radius
    if backend == "numba":
        mode, n, decay = _kernel_trace_args(tcfg)
        return _kernels.predict_kernel(
            X, np.cumsum(behavior.probs, axis=1), np.cumsum(mdp.transition, axis=2),
            np.cumsum(mdp.initial_dist), rho_table, mdp.reward, interest, mdp.discount,
            u0, U, mode, n, decay, float(config.learning_rate),
            float(config.alpha_lambda or 0.0), np.inf if radius is None else float(radius),
            w0, eval_steps,
        )
    if backend != "python":
        raise ValueError(f"unknown backend {backend!r}")

    engine = TraceEngine(tcfg) if tcfg is not None else None
    cdf_mu = np.cumsum(behavior.probs, axis=1)
    cdf_p = np.cumsum(mdp.transition, axis=2)
    out = np.empty((len(eval_steps), K))
    w = w0.copy()
    e = 0
    diverged_at = -1
    s = sample_index(np.cumsum(mdp.initial_dist), u0)
    for t in range(steps):
        a = sample_index(cdf_mu[s], U[t, 0])
        s2 = sample_index(cdf_p[s, a], U[t, 1])
        rho = rho_table[s, a]
        F = 1.0 if engine is None else engine.push(rho, interest[s])
        w, _ = prediction_step(w, X[s], X[s2], mdp.reward[s, a], mdp.discount, F, rho,
                               config.step_size(t), radius)
        if is_diverged(w):
            diverged_at = t
            break
        s = s2
        while e < len(eval_steps) and eval_steps[e] == t + 1:
            out[e] = w
            e += 1
    if diverged_at >= 0:
        last = out[e - 1].copy() if e > 0 else w0.copy()
        out[e:] = last
    return out, diverged_at


def run_prediction(
    mdp: TabularMdp,
    behavior: TabularPolicy,
    target: TabularPolicy,
    features,
    config: AgentConfig,
    steps: int,
    seed: int,
    w0=None,
    eval_points: int = 100,
    backend: str = "numba",
) -> RunRecord:
    """Seeded prediction run; the metric is RMSVE weighted by ``d_mu``."""
    X = _as_matrix(features)
    eval_steps = evaluation_steps(steps, eval_points)
    W, diverged_at = simulate_prediction(
        mdp, behavior, target, X, config, steps, seed, w0=w0, eval_steps=eval_steps, backend=backend
    )
    d_mu = stationary_distribution(state_transition_matrix(mdp, behavior))
    v_pi = value_function(mdp, target)
    w0 = np.zeros(X.shape[1]) if w0 is None else np.asarray(w0, dtype=float)
    values = np.array([prediction_error(w, X, v_pi, d_mu) for w in W])
    doc = {"config": config.to_dict(), "steps": steps, "eval_points": eval_points}
    return RunRecord(
        fingerprint=fingerprint(doc),
        seed=seed,
        metric="rmsve",
        steps=eval_steps,
        values=values,
        diverged=diverged_at >= 0,
        final_weights=W[-1].copy(),
        initial_value=prediction_error(w0, X, v_pi, d_mu),
        config=doc,
        extras={"weights": W, "diverged_at": diverged_at},
    )


def _policy_rows(Xsa, s, n_actions, w, spec, base):
    q = Xsa[s * n_actions:(s + 1) * n_actions] @ w
    return spec.probs(q, base[s])


def simulate_control(
    mdp: TabularMdp,
    behavior: SoftmaxPolicySpec,
    target: SoftmaxPolicySpec,
    features,
    config: AgentConfig,
    steps: int,
    seed: int,
    w0=None,
    eval_steps=None,
    backend: str = "numba",
):
    """Run emphatic expected SARSA on a tabular MDP; returns ``(weights, diverged_at)``."""
    if not config.is_control:
        raise ValueError(f"{config.algorithm} is a prediction algorithm")
    Xsa = _as_matrix(features)
    S, A = mdp.n_states, mdp.n_actions
    if Xsa.shape[0] != S * A:
        raise ValueError(f"state-action features need {S * A} rows, got {Xsa.shape[0]}")
    K = Xsa.shape[1]
    w0 = np.zeros(K) if w0 is None else np.array(w0, dtype=float)
    eval_steps = evaluation_steps(steps, min(100, steps)) if eval_steps is None \
        else np.asarray(eval_steps, dtype=np.int64)
    interest = config.interest_vector(S * A)
    b_base = behavior.base_probs(S, A)
    t_base = target.base_probs(S, A)
    rng = np.random.default_rng(seed)
    u0 = rng.random(2)
    U = rng.random((steps, 2))
    tcfg = config.trace_config(mdp.discount)
    radius = config.radius
    if backend == "numba":
        mode, n, decay = _kernel_trace_args(tcfg)
        return _kernels.control_kernel(
            Xsa, A, np.cumsum(mdp.transition, axis=2), np.cumsum(mdp.initial_dist), mdp.reward,
            interest, mdp.discount,
            np.ascontiguousarray(b_base), float(behavior.epsilon), float(behavior.temperature),
            np.ascontiguousarray(t_base), float(target.epsilon), float(target.temperature),
            u0, U, mode, n, decay, config.recompute_ratios, float(config.learning_rate),
            float(config.alpha_lambda or 0.0), np.inf if radius is None else float(radius),
            w0, eval_steps,
        )
    if backend != "python":
        raise ValueError(f"unknown backend {backend!r}")

    recompute = config.recompute_ratios
    engine = TraceEngine(tcfg) if (tcfg is not None and not recompute) else None
    window = deque(maxlen=(config.n + 1) if recompute else 1)
    cdf_p = np.cumsum(mdp.transition, axis=2)
    out = np.empty((len(eval_steps), K))
    w = w0.copy()
    e = 0
    diverged_at = -1
    s = sample_index(np.cumsum(mdp.initial_dist), u0[0])
    a = sample_index(np.cumsum(_policy_rows(Xsa, s, A, w, behavior, b_base)), u0[1])
    for t in range(steps):
        r = mdp.reward[s, a]
        s2 = sample_index(cdf_p[s, a], U[t, 0])
        a2 = sample_index(np.cumsum(_policy_rows(Xsa, s2, A, w, behavior, b_base)), U[t, 1])

        def ratio(sk, ak):
            return (_policy_rows(Xsa, sk, A, w, target, t_base)[ak]
                    / _policy_rows(Xsa, sk, A, w, behavior, b_base)[ak])

        rho = ratio(s, a)
        i_t = interest[s * A + a]
        if tcfg is None:
            F = 1.0
        elif recompute:
            window.append((s, a, i_t))
            F = trace_window_recompute(
                [(ratio(sk, ak), ik) for sk, ak, ik in window], tcfg.decay, CONTROL
            )
        else:
            F = engine.push(rho, i_t)
        pi_next = _policy_rows(Xsa, s2, A, w, target, t_base)
        w, _ = expected_sarsa_step(
            w, Xsa[s * A + a], Xsa[s2 * A:(s2 + 1) * A], pi_next, r, mdp.discount, F,
            config.step_size(t), radius,
        )
        if is_diverged(w):
            diverged_at = t
            break
        s, a = s2, a2
        while e < len(eval_steps) and eval_steps[e] == t + 1:
            out[e] = w
            e += 1
    if diverged_at >= 0:
        last = out[e - 1].copy() if e > 0 else w0.copy()
        out[e:] = last
    return out, diverged_at


def control_error(w, mdp: TabularMdp, features, behavior: SoftmaxPolicySpec,
                  target: SoftmaxPolicySpec) -> float:
    """``||X w - q_{pi_w}||`` weighted by the state-action distribution of ``mu_w``."""
    Xsa = _as_matrix(features)
    S, A = mdp.n_states, mdp.n_actions
    pi_w = softmax_policy_from_weights(w, Xsa, target, S, A)
    mu_w = softmax_policy_from_weights(w, Xsa, behavior, S, A)
    q = action_value_function(mdp, pi_w)
    d = state_action_stationary(mdp, mu_w)
    return weighted_rms(Xsa @ w - q, d)


def run_control(
    mdp: TabularMdp,
    behavior: SoftmaxPolicySpec,
    target: SoftmaxPolicySpec,
    features,
    config: AgentConfig,
    steps: int,
    seed: int,
    w0=None,
    eval_points: int = 100,
    backend: str = "numba",
) -> RunRecord:
    """Seeded control run on a tabular MDP.

    The metric is the action-value error of the current estimate against the
    exact ``q`` of the current target policy; weight norms are kept in
    ``extras["weight_norm"]``.
    """
    Xsa = _as_matrix(features)
    eval_steps = evaluation_steps(steps, eval_points)
    W, diverged_at = simulate_control(
        mdp, behavior, target, Xsa, config, steps, seed, w0=w0, eval_steps=eval_steps,
        backend=backend,
    )
    w0 = np.zeros(Xsa.shape[1]) if w0 is None else np.asarray(w0, dtype=float)
    values = np.array([control_error(w, mdp, Xsa, behavior, target) for w in W])
    doc = {
        "config": config.to_dict(),
        "steps": steps,
        "eval_points": eval_points,
        "behavior": {"temperature": behavior.temperature, "epsilon": behavior.epsilon},
        "target": {"temperature": target.temperature, "epsilon": target.epsilon},
    }
    return RunRecord(
        fingerprint=fingerprint(doc),
        seed=seed,
        metric="q_error",
        steps=eval_steps,
        values=values,
        diverged=diverged_at >= 0,
        final_weights=W[-1].copy(),
        initial_value=control_error(w0, mdp, Xsa, behavior, target),
        config=doc,
        extras={"weights": W, "weight_norm": np.linalg.norm(W, axis=1), "diverged_at": diverged_at},
    )


def _episode_return(env, features, target: SoftmaxPolicySpec, w, rng) -> float:
    obs = env.reset(rng)
    total = 0.0
    while True:
        probs = target.probs(features(obs) @ w)
        a = sample_index(np.cumsum(probs), rng.random())
        obs, r, terminated, truncated = env.step(a)
        total += r
        if terminated or truncated:
            return total


def evaluate_policy(env, features, target: SoftmaxPolicySpec, w, episodes: int, rng) -> float:
    """Mean undiscounted return of the target policy ``pi_w`` over ``episodes``."""
    return float(np.mean([_episode_return(env, features, target, w, rng) for _ in range(episodes)]))


def run_episodic_control(
    env,
    features,
    behavior: SoftmaxPolicySpec,
    target: SoftmaxPolicySpec,
    config: AgentConfig,
    steps: int,
    seed: int,
    eval_every: int = 5000,
    eval_episodes: int = 10,
    w0=None,
) -> RunRecord:
    """Emphatic expected SARSA on an episodic environment with state-action features.

    ``features(obs)`` returns the ``(A, K)`` feature block of an observation.
    The trace restarts with every episode and a terminal transition does not
    bootstrap (a time-limit cut does).  Every ``eval_every`` training steps the
    target policy is rolled out for ``eval_episodes`` episodes on a separate
    random stream; the metric is the mean return.
    """
    if not config.is_control:
        raise ValueError(f"{config.algorithm} is a prediction algorithm")
    if steps < eval_every:
        raise ValueError(f"steps={steps} is shorter than eval_every={eval_every}")
    A = env.n_actions
    K = features.n_features
    w = np.zeros(K) if w0 is None else np.array(w0, dtype=float)
    rng = np.random.default_rng(seed)
    eval_rng = np.random.default_rng([seed, 1])
    tcfg = config.trace_config(env.discount)
    recompute = config.recompute_ratios
    radius = config.radius
    i_const = float(config.interest) if np.isscalar(config.interest) else None
    if i_const is None:
        raise ValueError("episodic environments take a constant interest")

    def rows(phi, spec):
        return spec.probs(phi @ w)

    eval_env = type(env)()
    initial = evaluate_policy(eval_env, features, target, w, eval_episodes, eval_rng)
    steps_out, values = [], []
    diverged = False
    episodes = 0
    t = 0
    while t < steps and not diverged:
        obs = env.reset(rng)
        episodes += 1
        engine = TraceEngine(tcfg) if (tcfg is not None and not recompute) else None
        window = deque(maxlen=(config.n + 1) if recompute else 1)
        phi = features(obs)
        a = sample_index(np.cumsum(rows(phi, behavior)), rng.random())
        while t < steps:
            obs2, r, terminated, truncated = env.step(a)
            phi2 = features(obs2)
            a2 = sample_index(np.cumsum(rows(phi2, behavior)), rng.random())
            rho = rows(phi, target)[a] / rows(phi, behavior)[a]
            if tcfg is None:
                F = 1.0
            elif recompute:
                window.append((phi, a))
                F = trace_window_recompute(
                    [(rows(p, target)[b] / rows(p, behavior)[b], i_const) for p, b in window],
                    tcfg.decay, CONTROL,
                )
            else:
                F = engine.push(rho, i_const)
            w, _ = expected_sarsa_step(
                w, phi[a], phi2, rows(phi2, target), r, env.discount, F,
                config.step_size(t), radius, terminal=terminated,
            )
            t += 1
            if is_diverged(w):
                diverged = True
                break
            if t % eval_every == 0:
                steps_out.append(t)
                values.append(evaluate_policy(eval_env, features, target, w, eval_episodes, eval_rng))
            if terminated or truncated:
                break
            phi, a = phi2, a2
    # a diverged run keeps its last evaluation for the remaining points
    while len(steps_out) < steps // eval_every:
        steps_out.append((len(steps_out) + 1) * eval_every)
        values.append(values[-1] if values else initial)
    doc = {
        "config": config.to_dict(),
        "steps": steps,
        "eval_every": eval_every,
        "eval_episodes": eval_episodes,
        "behavior": {"temperature": behavior.temperature, "epsilon": behavior.epsilon},
        "target": {"temperature": target.temperature, "epsilon": target.epsilon},
    }
    return RunRecord(
        fingerprint=fingerprint(doc),
        seed=seed,
        metric="return",
        steps=np.array(steps_out, dtype=np.int64),
        values=np.array(values),
        diverged=diverged,
        final_weights=w.copy(),
        initial_value=initial,
        config=doc,
        extras={"episodes": episodes},
    )


def random_policy_return(env, episodes: int, seed: int) -> float:
    """Mean return of the uniform-random policy."""
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(episodes):
        env.reset(rng)
        done = False
        while not done:
            _, r, terminated, truncated = env.step(int(rng.integers(env.n_actions)))
            total += r
            done = terminated or truncated
    return total / episodes
