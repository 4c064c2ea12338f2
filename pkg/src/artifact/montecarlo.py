"""Brute-force and simulation oracles.

These routines share no code with the analytic modules beyond the data
types. Enumeration replaces the closed-form occupancy law, literal random
codebooks replace the ball-counting formula, and Lindley's recursion
replaces the matrix-analytic queue solver.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .channel import FscSpec
from .exact import BOUNDARY_RTOL, DecoderRule
from .occupation import DiscreteOccupancyLaw
from .queueing import SuccessMatrix, TrafficSpec


@dataclass(frozen=True)
class SimConfig:
    """Seed, trial count and an optional stream index; equal configs replay identically."""

    seed: int = 20240601
    trials: int = 100_000
    stream: int = 0
    batch: int = 100_000

    def rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(self.stream, *key)))


@dataclass(frozen=True)
class Estimate:
    value: np.ndarray
    stderr: np.ndarray
    trials: int


def enumerate_occupancy_exact(alpha: float, beta: float, N: int) -> DiscreteOccupancyLaw:
    """Joint law of visits to state 1 among ``s_0..s_{N-1}`` and ``s_N`` by summing over all paths."""
    if N > 14:
        raise ValueError("enumeration is limited to N <= 14")
    P = np.array([[1.0 - alpha, alpha], [beta, 1.0 - beta]])
    table = np.zeros((N + 1, 2, 2))
    for i in range(2):
        for tail in itertools.product((0, 1), repeat=N):
            path = (i,) + tail
            prob = 1.0
            for a, b in zip(path, path[1:]):
                prob *= P[a, b]
            visits = sum(1 for s in path[:-1] if s == 0)
            table[visits, i, path[-1]] += prob
    return DiscreteOccupancyLaw(N, table)


def _markov_paths(P: np.ndarray, start: int, length: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` paths of ``length + 1`` states from ``start``; column 0 is the start."""
    states = np.empty((n, length + 1), dtype=np.int64)
    states[:, 0] = start
    cum = np.cumsum(P, axis=1)
    u = rng.random((n, length))
    for t in range(length):
        states[:, t + 1] = (u[:, t][:, None] > cum[states[:, t]]).sum(axis=1)
    return np.minimum(states, len(P) - 1)


def simulate_random_code_failure(spec: FscSpec, N: int, M: int, rule: DecoderRule,
                                 config: SimConfig) -> tuple[Estimate, Estimate]:
    """Monte Carlo failure and undetected-error frequencies per ``(i, j)``.

    Every trial draws a channel path from state ``i``, an ``M``-word uniform
    codebook, sends word 0 with state-dependent bit flips, and scores words by
    ``gamma d_1 + d_2``. A competitor scoring at most the sent word's score
    plus ``nu`` is a failure; one scoring at most the sent word's score
    minus ``nu`` counts toward the undetected-error bound.
    """
    if spec.num_states != 2 or not spec.is_discrete:
        raise ValueError("simulation covers two-state discrete channels")
    P = spec.dynamics.matrix
    eps = np.array(spec.crossover)
    fail = np.zeros((2, 2))
    und = np.zeros((2, 2))
    for i in range(2):
        rng = config.rng(i)
        done = 0
        while done < config.trials:
            n = min(config.batch, config.trials - done)
            path = _markov_paths(P, i, N, n, rng)
            sym_states = path[:, :N]
            flips = rng.random((n, N)) < eps[sym_states]
            received = flips.astype(np.int8)  # word 0 sent
            book = rng.integers(0, 2, size=(n, M, N), dtype=np.int8)
            book[:, 0, :] = 0
            weight = np.where(sym_states == 0, rule.gamma, 1.0)
            score = ((book != received[:, None, :]) * weight[:, None, :]).sum(axis=2)
            sent = score[:, :1]
            rivals = score[:, 1:]
            hi = sent + rule.nu
            lo = sent - rule.nu
            is_fail = (rivals <= hi + BOUNDARY_RTOL * np.maximum(1, np.abs(hi))).any(axis=1)
            is_und = (rivals <= lo + BOUNDARY_RTOL * np.maximum(1, np.abs(lo))).any(axis=1)
            final = path[:, N]
            for j in range(2):
                fail[i, j] += np.count_nonzero(is_fail & (final == j))
                und[i, j] += np.count_nonzero(is_und & (final == j))
            done += n
    T = config.trials

    def est(counts):
        p = counts / T
        return Estimate(p, np.sqrt(p * (1.0 - p) / T), T)

    return est(fail), est(und)


# ---------------------------------------------------------------------------
# queue simulation
# ---------------------------------------------------------------------------


def _two_state_trace(P: np.ndarray, steps: int, rng: np.random.Generator, start: int = 0) -> np.ndarray:
    """Per-step states of a two-state chain, built from geometric sojourn times."""
    out = np.empty(steps + 1, dtype=np.int8)
    pos, state = 0, start
    while pos <= steps:
        leave = P[state, 1 - state]
        run = rng.geometric(leave) if leave > 0 else steps + 1
        out[pos: pos + run] = state
        pos += run
        state = 1 - state
    return out


def _lindley(x: np.ndarray, q0: int) -> np.ndarray:
    """``Q_t = max(Q_{t-1} + x_t, 0)`` from ``Q_0 = q0`` in closed form."""
    s = np.cumsum(x)
    floor = np.minimum(np.minimum.accumulate(s), -q0)
    return s - floor


@dataclass(frozen=True)
class QueueSimResult:
    tail: np.ndarray  # tail[q] = P(Q > q)
    stderr: np.ndarray
    steps: int


@dataclass(frozen=True)
class DominanceReport:
    exact_tail: np.ndarray
    bound_tail: np.ndarray
    steps: int
    violations: int


def _success_ratio(success: SuccessMatrix) -> np.ndarray:
    P = success.channel
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(P > 0, success.s / P, 0.0)


def _simulate_paths(rules: list[SuccessMatrix], traffic: TrafficSpec, rho_r: float, N: int,
                    steps: int, config: SimConfig, q_max: int, warmup: int, chunk: int = 1_000_000):
    """Run coupled queues driven by one channel trace and one set of uniforms."""
    P = rules[0].channel
    if any(not np.allclose(r.channel, P) for r in rules):
        raise ValueError("coupled queues must share the channel transition matrix")
    rng = config.rng(0)
    trace = _two_state_trace(P, steps, rng)
    ratios = [_success_ratio(r) for r in rules]
    q = [0] * len(rules)
    counts = [np.zeros(q_max + 2, dtype=np.int64) for _ in rules]
    batch_tails = [[] for _ in rules]
    violations = 0
    lam_N = traffic.lam * N
    for start in range(0, steps, chunk):
        stop = min(steps, start + chunk)
        c, d = trace[start:stop], trace[start + 1: stop + 1]
        arrivals = rng.poisson(lam_N, stop - start)
        u = rng.random(stop - start)
        done = rng.random(stop - start) < rho_r
        paths = []
        for k, ratio in enumerate(ratios):
            served = (u < ratio[c, d]) & done
            path = _lindley(arrivals - served.astype(np.int64), q[k])
            q[k] = int(path[-1])
            paths.append(path)
            keep = path[max(0, warmup - start):] if start < warmup else path
            hist = np.bincount(np.minimum(keep, q_max + 1), minlength=q_max + 2)
            counts[k] += hist
            if keep.size:
                batch_tails[k].append(1.0 - np.cumsum(hist)[: q_max + 1] / keep.size)
        for a, b in zip(paths, paths[1:]):
            violations += int(np.count_nonzero(b < a))
    results = []
    for k in range(len(rules)):
        total = counts[k].sum()
        tail = 1.0 - np.cumsum(counts[k])[: q_max + 1] / total
        bt = np.array(batch_tails[k])
        se = bt.std(axis=0, ddof=1) / np.sqrt(len(bt)) if len(bt) > 1 else np.full(q_max + 1, np.nan)
        results.append((tail, se))
    return results, violations


def simulate_queue(success: SuccessMatrix, traffic: TrafficSpec, rho_r: float, N: int, steps: int,
                   config: SimConfig, q_max: int = 10, warmup: int = 10_000,
                   chunk: int = 100_000) -> QueueSimResult:
    """Time-averaged tail ``P(Q > q)`` of Lindley's recursion, with batch-means standard errors."""
    (res,), _ = _simulate_paths([success], traffic, rho_r, N, steps, config, q_max, warmup, chunk)
    return QueueSimResult(res[0], res[1], steps)


def coupled_dominance_experiment(exact_rule: SuccessMatrix, bound_rule: SuccessMatrix, traffic: TrafficSpec,
                                 rho_r: float, N: int, steps: int, config: SimConfig,
                                 q_max: int = 10, warmup: int = 0) -> DominanceReport:
    """Drive both queues with common arrivals, channel trace and decode uniforms.

    A step succeeds under a rule when a shared uniform falls below that
    rule's conditional success probability. Since the bound rule's success
    probabilities are no larger, its queue must never be shorter.

    Raises
    ------
    AssertionError
        If the bound-driven queue is ever shorter than the exact-driven one.
    """
    if np.any(bound_rule.s > exact_rule.s + 1e-15):
        raise ValueError("bound rule must not succeed more often than the exact rule")
    (ex, bd), violations = _simulate_paths([exact_rule, bound_rule], traffic, rho_r, N, steps, config,
                                           q_max, warmup)
    if violations:
        raise AssertionError(f"pathwise dominance violated at {violations} steps")
    return DominanceReport(ex[0], bd[0], steps, violations)
