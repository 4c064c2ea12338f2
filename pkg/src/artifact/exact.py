"""Exact decoding-failure probabilities for random codes on the two-state channel.

The receiver knows the state sequence and ranks codewords by the weighted
distance ``gamma d_1 + d_2``, where ``d_s`` counts disagreements on the
positions sent in state ``s``. ``gamma`` is the log-likelihood ratio of the
two states for maximum-likelihood decoding and 1 for minimum distance.

Given ``n_1`` symbols in state 1 and channel errors ``(e_1, e_2)``, each of
the ``M - 1`` independent uniform competitors lands in the ball
``gamma d_1 + d_2 <= gamma e_1 + e_2 + nu`` with probability ``V / 2^N``.
Decoding fails when at least one does (ties count as failures):
``1 - (1 - V/2^N)^(M-1)``. Shrinking the radius by ``nu`` instead gives an
upper bound on undetected errors for a decoder with safety margin ``nu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special, stats

from .bounds import CodeParams
from .channel import FscSpec
from .occupation import discrete_occupancy_law

BOUNDARY_RTOL = 1e-12


@dataclass(frozen=True)
class DecoderRule:
    """Distance weight ``gamma`` for state-1 positions and safety margin ``nu``."""

    gamma: float
    nu: float = 0.0

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.nu < 0:
            raise ValueError("margin must be nonnegative")

    @classmethod
    def ml(cls, eps1: float, eps2: float, nu: float = 0.0) -> "DecoderRule":
        return cls(ml_gamma(eps1, eps2), nu)

    @classmethod
    def md(cls, nu: float = 0.0) -> "DecoderRule":
        return cls(1.0, nu)


@dataclass(frozen=True)
class ExactFailureMatrix:
    """Per ``(i, j)``: failure probability and undetected-error upper bound."""

    failure: np.ndarray
    undetected: np.ndarray
    code: CodeParams
    rule: DecoderRule

    def averaged(self, initial_law: np.ndarray, part: str = "failure") -> float:
        return float(np.asarray(initial_law) @ getattr(self, part).sum(axis=1))


def ml_gamma(eps1: float, eps2: float) -> float:
    """Maximum-likelihood weight ``ln(eps1/(1-eps1)) / ln(eps2/(1-eps2))``."""
    if eps1 <= 0.0:
        raise ValueError("a noiseless state has unbounded likelihood weight")
    if not eps1 <= eps2 < 0.5:
        raise ValueError("need 0 < eps1 <= eps2 < 1/2")
    return math.log(eps1 / (1.0 - eps1)) / math.log(eps2 / (1.0 - eps2))


def _log_binom(n, k):
    return special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)


def _radius(d):
    return d + BOUNDARY_RTOL * np.maximum(1.0, np.abs(d))


def log_volume_count(n1: int, n2: int, d: float, gamma: float) -> float:
    """Log of ``sum C(n1, a) C(n2, c)`` over ``gamma a + c <= d`` (``-inf`` if empty)."""
    a = np.arange(n1 + 1)[:, None]
    c = np.arange(n2 + 1)[None, :]
    inside = gamma * a + c <= _radius(d)
    if not inside.any():
        return -math.inf
    logs = (_log_binom(n1, a) + _log_binom(n2, c))[inside]
    return float(special.logsumexp(logs))


def volume_count(n1: int, n2: int, d: float, gamma: float) -> float:
    return math.exp(log_volume_count(n1, n2, d, gamma))


def _failure_from_fraction(q, code: CodeParams):
    """``1 - (1 - q)^(M-1)`` with ``M - 1 = expm1(N R)`` kept in log-safe form."""
    m1 = math.expm1(code.log_M)
    with np.errstate(divide="ignore"):
        return -np.expm1(m1 * np.log1p(-np.minimum(q, 1.0)))


def conditional_failure(n1: int, n2: int, e1: int, e2: int, code: CodeParams, rule: DecoderRule,
                        undetected: bool = False) -> float:
    """Failure probability given the channel type and error counts.

    With ``undetected=True`` the ball radius is ``gamma e1 + e2 - nu`` and the
    result bounds the undetected-error probability instead.
    """
    if not (0 <= e1 <= n1 and 0 <= e2 <= n2) or n1 + n2 != code.N:
        raise ValueError("inconsistent type or error counts")
    sign = -1.0 if undetected else 1.0
    logV = log_volume_count(n1, n2, rule.gamma * e1 + e2 + sign * rule.nu, rule.gamma)
    q = math.exp(logV - code.N * math.log(2.0))
    assert q <= 1.0 + 1e-12
    return float(_failure_from_fraction(q, code))


class _BallTable:
    """Ball probabilities ``V / 2^N`` for every type of one block length and weight.

    For each ``n1`` the pair costs ``gamma a + c`` are sorted once with their
    probabilities ``C(n1, a) C(n2, c) / 2^N``; a ball query is then a
    ``searchsorted`` into the cumulative sum.
    """

    def __init__(self, N: int, gamma: float):
        self.N, self.gamma = N, gamma
        self._sorted: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _cum(self, n1: int):
        if n1 not in self._sorted:
            n2 = self.N - n1
            p1 = stats.binom.pmf(np.arange(n1 + 1), n1, 0.5)
            p2 = stats.binom.pmf(np.arange(n2 + 1), n2, 0.5)
            cost = (self.gamma * np.arange(n1 + 1)[:, None] + np.arange(n2 + 1)[None, :]).ravel()
            weight = (p1[:, None] * p2[None, :]).ravel()
            order = np.argsort(cost, kind="stable")
            cum = np.concatenate([[0.0], np.cumsum(weight[order])])
            self._sorted[n1] = (cost[order], cum)
        return self._sorted[n1]

    @lru_cache(maxsize=4096)
    def fractions(self, n1: int, offset: float) -> np.ndarray:
        """``q[e1, e2]`` for radius ``gamma e1 + e2 + offset``."""
        cost, cum = self._cum(n1)
        n2 = self.N - n1
        d = self.gamma * np.arange(n1 + 1)[:, None] + np.arange(n2 + 1)[None, :] + offset
        idx = np.searchsorted(cost, _radius(d), side="right")
        return np.minimum(cum[idx], 1.0)


_TABLES: dict[tuple[int, float], _BallTable] = {}


def _table(N: int, gamma: float) -> _BallTable:
    key = (N, gamma)
    if key not in _TABLES:
        _TABLES[key] = _BallTable(N, gamma)
    return _TABLES[key]


def _average_over_types(spec: FscSpec, code: CodeParams, rule: DecoderRule, offset: float,
                        law: np.ndarray | None = None) -> np.ndarray:
    if spec.num_states != 2 or not spec.is_discrete:
        raise ValueError("exact probabilities need a two-state channel with discrete dynamics")
    P = spec.dynamics.matrix
    N = code.N
    if law is None:
        law = discrete_occupancy_law(P[0, 1], P[1, 0], N).table
    eps1, eps2 = spec.crossover
    table = _table(N, rule.gamma)
    out = np.zeros((2, 2))
    for n1 in range(N + 1):
        w = law[n1]
        if not w.any():
            continue
        n2 = N - n1
        p1 = stats.binom.pmf(np.arange(n1 + 1), n1, eps1)
        p2 = stats.binom.pmf(np.arange(n2 + 1), n2, eps2)
        fail = _failure_from_fraction(table.fractions(n1, float(offset)), code)
        out += (p1 @ fail @ p2) * w
    return np.clip(out, 0.0, None)


def failure_matrix_exact(spec: FscSpec, code: CodeParams, rule: DecoderRule,
                         law: np.ndarray | None = None) -> np.ndarray:
    """``P(decoding failure, S_N = j | S_0 = i)`` averaged over types and error counts."""
    return _average_over_types(spec, code, rule, rule.nu, law)


def undetected_matrix_exact(spec: FscSpec, code: CodeParams, rule: DecoderRule,
                            law: np.ndarray | None = None) -> np.ndarray:
    """Upper bound on ``P(undetected error, S_N = j | S_0 = i)`` for margin ``rule.nu``."""
    return _average_over_types(spec, code, rule, -rule.nu, law)


def exact_failure(spec: FscSpec, code: CodeParams, rule: DecoderRule) -> ExactFailureMatrix:
    P = spec.dynamics.matrix
    law = discrete_occupancy_law(P[0, 1], P[1, 0], code.N).table
    return ExactFailureMatrix(
        failure_matrix_exact(spec, code, rule, law),
        undetected_matrix_exact(spec, code, rule, law),
        code, rule,
    )
