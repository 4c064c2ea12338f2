"""Queue of packets served by coded transmissions over a Markov channel.

Time advances one codeword (``N`` channel uses) per step. Packets arrive as
a Poisson stream, ``Poisson(lambda N)`` per step, and carry geometric
lengths in bits. A codeword that decodes finishes the head-of-line packet
with probability ``rho_r = 1 - (1 - p_geo)^(R_bits N)``. The pair
(queue length, channel state) is an M/G/1-type chain: it moves down at most
one level and up by any number. It is solved with the ``G`` matrix and
Ramaswami's recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .channel import stationary_distribution


class UnstableQueueError(RuntimeError):
    """Raised when the mean drift is nonnegative or the solver fails to converge."""


@dataclass(frozen=True)
class TrafficSpec:
    """Arrival rate ``lam`` (packets per channel use) and geometric length parameter ``p_geo``."""

    lam: float
    p_geo: float

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError("arrival rate must be nonnegative")
        if not 0.0 < self.p_geo <= 1.0:
            raise ValueError("p_geo must lie in (0, 1]")


@dataclass(frozen=True)
class SuccessMatrix:
    """``s[c, d] = P(decoding succeeds, next state d | current state c)``."""

    s: np.ndarray
    channel: np.ndarray
    provenance: str = "exact"

    @classmethod
    def from_failure(cls, channel: np.ndarray, failure: np.ndarray, provenance: str = "exact",
                     tol: float = 1e-12) -> "SuccessMatrix":
        s = np.asarray(channel) - np.asarray(failure)
        if np.any(s < -tol):
            raise ValueError("failure probabilities exceed the channel transition probabilities")
        return cls(np.clip(s, 0.0, None), np.asarray(channel, dtype=float), provenance)

    def mean_success(self) -> float:
        pi = stationary_distribution(self.channel)
        return float(pi @ self.s.sum(axis=1))


@dataclass(frozen=True)
class QueueBlocks:
    """Level-independent blocks of the queue chain.

    ``up[0]`` is the local block and ``up[i]`` moves up by ``i``; ``down``
    moves down by one. ``boundary_up[0]`` is the local block at the empty
    level.
    """

    down: np.ndarray
    up: tuple[np.ndarray, ...]
    boundary_up: tuple[np.ndarray, ...]
    rho_r: float
    arrivals: np.ndarray
    lam_N: float
    success: SuccessMatrix

    @property
    def local(self) -> np.ndarray:
        return self.up[0]


@dataclass(frozen=True)
class StationaryLevels:
    """Level vectors ``pi[q]`` (one entry per channel state) and the truncated mass."""

    levels: np.ndarray
    residual: float


def completion_probability(p_geo: float, R_bits: float, N: int) -> float:
    """Probability that one decoded codeword finishes a geometric-length packet."""
    if p_geo >= 1.0:
        return 1.0
    return -math.expm1(R_bits * N * math.log1p(-p_geo))


def build_blocks(success: SuccessMatrix, traffic: TrafficSpec, rho_r: float, N: int,
                 tol: float = 1e-14) -> QueueBlocks:
    """Transition blocks of the queue chain.

    With ``a_i`` the Poisson arrival probabilities and ``P`` the per-codeword
    channel transition:

    * up by ``i``:  ``a_i (P - rho_r s) + a_{i+1} rho_r s``;
    * down by one:  ``a_0 rho_r s``;
    * empty level, local: ``a_0 P + a_1 rho_r s``; other empty-level blocks as above.
    """
    if not 0.0 < rho_r <= 1.0:
        raise ValueError("rho_r must lie in (0, 1]")
    P, s = success.channel, success.s
    lam_N = traffic.lam * N
    i_max = 1 if lam_N == 0 else int(stats.poisson.isf(tol, lam_N)) + 2
    a = stats.poisson.pmf(np.arange(i_max + 2), lam_N)
    sr = rho_r * s
    up = tuple(a[i] * (P - sr) + a[i + 1] * sr for i in range(i_max + 1))
    if any(np.any(B < -1e-15) for B in up):
        raise ValueError("negative transition block: success matrix inconsistent with channel")
    boundary = (a[0] * P + a[1] * sr,) + up[1:]
    return QueueBlocks(a[0] * sr, up, boundary, rho_r, a, lam_N, success)


def stability_drift(blocks: QueueBlocks) -> float:
    """Mean level change per step away from the boundary; negative means stable."""
    return blocks.lam_N - blocks.rho_r * blocks.success.mean_success()


def solve_g_matrix(blocks: QueueBlocks, tol: float = 1e-13, max_iter: int = 100_000) -> np.ndarray:
    """Minimal nonnegative solution of ``G = sum_k A_k G^k`` with ``A_0 = down``, ``A_{k+1} = up[k]``.

    Iterates ``G <- (I - A_1)^{-1} (A_0 + sum_{k>=2} A_k G^k)`` from ``G = 0``.
    """
    drift = stability_drift(blocks)
    A = (blocks.down,) + blocks.up
    S = len(blocks.down)
    inv = np.linalg.inv(np.eye(S) - A[1])
    G = np.zeros((S, S))
    for _ in range(max_iter):
        acc = A[0].copy()
        Gk = G @ G
        for Ak in A[2:]:
            acc += Ak @ Gk
            Gk = Gk @ G
        G_new = inv @ acc
        if np.abs(G_new - G).max() < tol:
            return G_new
        G = G_new
    raise UnstableQueueError(f"G iteration did not converge (drift {drift:.6g})")


def _tail_sums(blocks_seq, G: np.ndarray) -> list[np.ndarray]:
    """``S_j = sum_{l >= j} blocks_seq[l] G^(l - j)`` by a backward Horner pass."""
    out = [None] * len(blocks_seq)
    acc = np.zeros_like(G)
    for j in range(len(blocks_seq) - 1, -1, -1):
        acc = blocks_seq[j] + acc @ G
        out[j] = acc
    return out


def stationary_levels(blocks: QueueBlocks, G: np.ndarray | None = None, q_max: int | None = None,
                      tol: float = 1e-10, hard_cap: int = 100_000) -> StationaryLevels:
    """Level-wise stationary law by Ramaswami's recursion.

    ``pi_0`` is the stationary vector of the censored boundary matrix
    ``L_hat + S_hat_1 (I - S_0)^{-1} B`` scaled by the total mass, and
    ``pi_j = (pi_0 S_hat_j + sum_{k=1}^{j-1} pi_k S_{j-k}) (I - S_0)^{-1}``.
    Levels are added until the untracked mass falls below ``tol``, or up to
    ``q_max`` when it is given.
    """
    if stability_drift(blocks) >= 0:
        raise UnstableQueueError(f"queue is unstable (drift {stability_drift(blocks):.6g})")
    if G is None:
        G = solve_g_matrix(blocks)
    S = len(G)
    I = np.eye(S)
    # Index 0 of these is the local block; index j moves up by j.
    Sj = _tail_sums(blocks.up, G)
    Shat = _tail_sums(blocks.boundary_up, G)
    inv0 = np.linalg.inv(I - Sj[0])
    K = blocks.boundary_up[0] + (Shat[1] if len(Shat) > 1 else 0.0) @ inv0 @ blocks.down
    pi0 = stationary_distribution(_as_stochastic(K))
    S_total = sum(Sj)
    Shat_total = sum(Shat[1:]) if len(Shat) > 1 else np.zeros((S, S))
    upper_mass = Shat_total @ np.linalg.solve(I - S_total, np.ones(S))
    pi0 = pi0 / (pi0.sum() + pi0 @ upper_mass)
    levels = [pi0]
    total = pi0.sum()
    n_blocks = len(Sj)
    cap = q_max if q_max is not None else hard_cap
    j = 0
    while j < cap and 1.0 - total > tol:
        j += 1
        acc = pi0 @ Shat[j] if j < n_blocks else np.zeros(S)
        for k in range(max(1, j - n_blocks + 1), j):
            acc = acc + levels[k] @ Sj[j - k]
        levels.append(np.clip(acc @ inv0, 0.0, None))
        total += levels[-1].sum()
    return StationaryLevels(np.array(levels), max(0.0, 1.0 - total))


def _as_stochastic(K: np.ndarray) -> np.ndarray:
    return K / K.sum(axis=1, keepdims=True)


def tail_probability(levels: StationaryLevels, q: int, max_residual: float = 1e-8) -> float:
    """``P(queue length > q)``."""
    if q < 0:
        return 1.0
    if q >= len(levels.levels) - 1 and levels.residual > max_residual:
        raise ValueError("levels truncated below the threshold; increase q_max")
    return float(max(0.0, 1.0 - levels.levels[: q + 1].sum()))


@dataclass(frozen=True)
class QueueResult:
    tail: float
    drift: float
    residual: float
    stable: bool


def queue_tail(success: SuccessMatrix, traffic: TrafficSpec, R_bits: float, N: int, threshold: int,
               tol: float = 1e-10) -> QueueResult:
    """Tail ``P(Q > threshold)``; an unstable queue reports tail 1."""
    rho_r = completion_probability(traffic.p_geo, R_bits, N)
    blocks = build_blocks(success, traffic, rho_r, N)
    drift = stability_drift(blocks)
    if drift >= 0:
        return QueueResult(1.0, drift, 0.0, False)
    levels = stationary_levels(blocks, tol=tol)
    return QueueResult(tail_probability(levels, threshold), drift, levels.residual, True)


QUEUE_CSV_HEADER = ["N", "R_bits", "margin_kind", "margin_value", "threshold", "tail_probability", "drift", "residual"]
