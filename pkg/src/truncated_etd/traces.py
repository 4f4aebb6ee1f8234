"""Followon traces: full, hard-truncated, soft (beta) and combined.

Two indexing conventions are supported and must be chosen explicitly:

``prediction``
    ``F_t = i_t + g * rho_{t-1} * F_{t-1}``  (ratio lags one step)
``control``
    ``F_t = i_t + g * rho_t * F_{t-1}``      (ratio of the current pair)

where ``g`` is ``gamma`` for the full and hard modes and ``beta`` for the
soft and combined modes.  Hard truncation at length ``n`` keeps only the
``n + 1`` most recent interest terms.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

FULL = "full"
HARD = "hard"
SOFT = "soft"
COMBINED = "combined"
MODES = (FULL, HARD, SOFT, COMBINED)

PREDICTION = "prediction"
CONTROL = "control"
INDEXINGS = (PREDICTION, CONTROL)

GUARD = 1e-12


@dataclass(frozen=True)
class TraceConfig:
    mode: str
    gamma: float
    indexing: str
    n: Optional[int] = None
    beta: Optional[float] = None
    incremental: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown trace mode {self.mode!r}; expected one of {MODES}")
        if self.indexing not in INDEXINGS:
            raise ValueError(f"unknown indexing {self.indexing!r}; expected one of {INDEXINGS}")
        if self.mode in (HARD, COMBINED):
            if self.n is None or int(self.n) != self.n or self.n < 0:
                raise ValueError(f"{self.mode} mode needs an integer n >= 0, got {self.n}")
        if self.mode in (SOFT, COMBINED):
            if self.beta is None or not 0.0 < self.beta < 1.0:
                raise ValueError(f"{self.mode} mode needs beta in (0, 1), got {self.beta}")
        if self.incremental and self.mode != HARD:
            raise ValueError("the incremental update is only defined for hard truncation")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")

    @property
    def decay(self) -> float:
        """Per-step discount applied inside the trace."""
        return self.beta if self.mode in (SOFT, COMBINED) else self.gamma

    @property
    def truncated(self) -> bool:
        return self.mode in (HARD, COMBINED)

    @classmethod
    def full(cls, gamma, indexing=PREDICTION):
        return cls(FULL, gamma, indexing)

    @classmethod
    def hard(cls, n, gamma, indexing=PREDICTION, incremental=False):
        return cls(HARD, gamma, indexing, n=n, incremental=incremental)

    @classmethod
    def soft(cls, beta, gamma, indexing=PREDICTION):
        return cls(SOFT, gamma, indexing, beta=beta)

    @classmethod
    def combined(cls, beta, n, gamma, indexing=PREDICTION):
        return cls(COMBINED, gamma, indexing, n=n, beta=beta)


def trace_window_recompute(
    pairs: Sequence[Tuple[float, float]], gamma: float, indexing: str = PREDICTION
) -> float:
    """Horner evaluation of a truncated trace over ``(rho_k, i_k)`` pairs.

    ``pairs`` runs oldest to newest and ends with the current step; older
    steps are treated as zero.  Stateless, so callers that re-derive the
    historical ratios (e.g. from updated weights) can pass them in directly.
    """
    f = 0.0
    prev_rho = 0.0
    if indexing == PREDICTION:
        for rho, interest in pairs:
            f = interest + gamma * prev_rho * f
            prev_rho = rho
    elif indexing == CONTROL:
        for rho, interest in pairs:
            f = interest + gamma * rho * f
    else:
        raise ValueError(f"unknown indexing {indexing!r}")
    return f


def direct_sum(pairs: Sequence[Tuple[float, float]], gamma: float, n: Optional[int], indexing: str):
    """Explicit double-loop evaluation of ``sum_j gamma^j (prod rho) i_{t-j}``.

    Used as the reference for the recursive forms; ``n=None`` sums the full
    history.
    """
    t = len(pairs) - 1
    rhos = [p[0] for p in pairs]
    ints = [p[1] for p in pairs]
    horizon = t if n is None else min(n, t)
    total = 0.0
    for j in range(horizon + 1):
        prod = 1.0
        if indexing == PREDICTION:
            ks = range(t - j, t)
        else:
            ks = range(t - j + 1, t + 1)
        for k in ks:
            prod *= rhos[k]
        total += gamma**j * prod * ints[t - j]
    return total


class TraceEngine:
    """Stateful followon-trace computer for one run.

    ``push(rho_t, i_t)`` is called once per time step and returns the trace
    for that step under the configured mode and indexing.
    """

    def __init__(self, config: TraceConfig):
        self.config = config
        cap = None
        if config.truncated:
            # the incremental path needs the pair that drops out of the window
            cap = config.n + 2 if config.incremental else config.n + 1
        self.ring = deque(maxlen=cap)
        self.running_f = 0.0
        self.prev_rho = 0.0
        self.delta = 0.0
        self.step_count = 0
        self.fallbacks = 0
        self.resyncs = 0

    def reset(self):
        self.ring.clear()
        self.running_f = 0.0
        self.prev_rho = 0.0
        self.delta = 0.0
        self.step_count = 0

    def push(self, rho: float, interest: float) -> float:
        cfg = self.config
        if cfg.incremental:
            return self.push_incremental(rho, interest)
        self.step_count += 1
        if cfg.truncated:
            self.ring.append((rho, interest))
            return trace_window_recompute(self.ring, cfg.decay, cfg.indexing)
        ratio = self.prev_rho if cfg.indexing == PREDICTION else rho
        self.running_f = interest + cfg.decay * ratio * self.running_f
        self.prev_rho = rho
        return self.running_f

    def push_incremental(self, rho: float, interest: float) -> float:
        """O(1) hard-truncated update (prediction indexing).

        ``F_{t,n} = i_t + gamma rho_{t-1} F_{t-1,n} - Delta_t`` with
        ``Delta_t = gamma^{n+1} rho_{t-n-1:t-1} i_{t-n-1}``, the term that
        leaves the window.  ``Delta`` is carried by the ratio recursion

            Delta_t = Delta_{t-1} * rho_{t-1} i_{t-n-1} / (rho_{t-n-2} i_{t-n-2})

        and recomputed from the stored window whenever that denominator is
        below ``GUARD`` (including the first steps, where it is zero).  Both
        ``F`` and ``Delta`` are also refreshed from the window every ``n + 1``
        steps.
        """
        cfg = self.config
        if cfg.mode != HARD or cfg.indexing != PREDICTION:
            raise ValueError("incremental path supports hard truncation with prediction indexing")
        n, g = cfg.n, cfg.gamma
        ring = self.ring
        t = self.step_count
        evicted = ring[0] if len(ring) == ring.maxlen else None
        ring.append((rho, interest))
        self.step_count += 1

        if t < n + 1:
            delta = 0.0
        else:
            # ring[0] is step t-n-1, ring[-2] is step t-1, evicted is step t-n-2
            denom = evicted[0] * evicted[1] if evicted is not None else 0.0
            if self.delta != 0.0 and abs(denom) >= GUARD:
                delta = self.delta * ring[-2][0] * ring[0][1] / denom
            else:
                delta = g ** (n + 1) * ring[0][1]
                for k in range(len(ring) - 1):
                    delta *= ring[k][0]
                if t > n + 1:
                    self.fallbacks += 1
        self.running_f = interest + g * self.prev_rho * self.running_f - delta
        self.delta = delta
        self.prev_rho = rho
        if self.step_count % (n + 1) == 0:
            # rounding error in running_f is multiplied by gamma * rho every
            # step and never leaves the recursion; resyncing once per window
            # bounds its growth at O(1) amortised cost
            window = list(ring)[-(n + 1):]
            self.running_f = trace_window_recompute(window, g, PREDICTION)
            if len(ring) == ring.maxlen:
                self.delta = g ** (n + 1) * ring[0][1]
                for k in range(len(ring) - 1):
                    self.delta *= ring[k][0]
            self.resyncs += 1
        return self.running_f


def trace_stream(config: TraceConfig, stream: Iterable[Tuple[float, float]]):
    """Trace values for a whole ``(rho, i)`` stream."""
    engine = TraceEngine(config)
    return [engine.push(r, i) for r, i in stream]
