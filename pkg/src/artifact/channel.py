"""Finite-state channel descriptions and their Markov dynamics.

A channel is a set of binary-symmetric states, one crossover probability per
state, plus either a per-symbol transition matrix ``P`` or a continuous-time
generator ``Q``. In the rare-transition regime the generator lives on the
time scale of one codeword, so the per-symbol matrix is ``exp(Q / N)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

ROW_TOL = 1e-12


class ChannelError(ValueError):
    """Raised for malformed channel parameters."""


@dataclass(frozen=True)
class DiscreteDynamics:
    """Per-symbol transition matrix ``P`` (row-stochastic)."""

    matrix: np.ndarray
    kind: Literal["discrete"] = field(default="discrete", init=False)

    def __post_init__(self) -> None:
        P = np.array(self.matrix, dtype=float)
        _check_stochastic(P)
        P.setflags(write=False)
        object.__setattr__(self, "matrix", P)


@dataclass(frozen=True)
class ContinuousDynamics:
    """Generator ``Q`` of a continuous-time chain over one codeword."""

    matrix: np.ndarray
    kind: Literal["continuous"] = field(default="continuous", init=False)

    def __post_init__(self) -> None:
        Q = np.array(self.matrix, dtype=float)
        _check_generator(Q)
        Q.setflags(write=False)
        object.__setattr__(self, "matrix", Q)


Dynamics = DiscreteDynamics | ContinuousDynamics


@dataclass(frozen=True)
class FscSpec:
    """Finite-state channel with binary-symmetric states.

    Attributes
    ----------
    crossover : tuple of float
        Strictly increasing crossover probabilities, each in ``[0, 1/2]``.
    dynamics : DiscreteDynamics or ContinuousDynamics
        State process.
    """

    crossover: tuple[float, ...]
    dynamics: Dynamics

    def __post_init__(self) -> None:
        eps = tuple(float(e) for e in self.crossover)
        object.__setattr__(self, "crossover", eps)
        if any(not 0.0 <= e <= 0.5 for e in eps):
            raise ChannelError(f"crossover probabilities must lie in [0, 1/2]: {eps}")
        if any(a >= b for a, b in zip(eps, eps[1:])):
            raise ChannelError(f"crossover probabilities must be strictly increasing: {eps}")
        if self.dynamics.matrix.shape != (len(eps), len(eps)):
            raise ChannelError("dynamics matrix does not match the number of states")

    @property
    def num_states(self) -> int:
        return len(self.crossover)

    @property
    def is_discrete(self) -> bool:
        return isinstance(self.dynamics, DiscreteDynamics)

    def to_json(self) -> str:
        doc = {
            "states": self.num_states,
            "crossover": list(self.crossover),
            "dynamics": {"kind": self.dynamics.kind, "matrix": self.dynamics.matrix.tolist()},
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FscSpec":
        doc = json.loads(text)
        dyn = doc["dynamics"]
        kinds = {"discrete": DiscreteDynamics, "continuous": ContinuousDynamics}
        if dyn["kind"] not in kinds:
            raise ChannelError(f"unknown dynamics kind {dyn['kind']!r}")
        spec = cls(tuple(doc["crossover"]), kinds[dyn["kind"]](dyn["matrix"]))
        if doc.get("states", spec.num_states) != spec.num_states:
            raise ChannelError("'states' disagrees with the crossover list")
        return spec


@dataclass(frozen=True)
class UniformizedChain:
    """``A = I + Q / sigma`` with ``sigma = max |Q_kk|``; ``degenerate`` when ``Q = 0``."""

    A: np.ndarray
    sigma: float
    degenerate: bool = False


def _check_stochastic(P: np.ndarray) -> None:
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ChannelError("transition matrix must be square")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > ROW_TOL):
        raise ChannelError("transition matrix must be nonnegative with unit row sums")


def _check_generator(Q: np.ndarray) -> None:
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ChannelError("generator must be square")
    off = Q - np.diag(np.diag(Q))
    if np.any(off < 0) or np.any(np.abs(Q.sum(axis=1)) > ROW_TOL):
        raise ChannelError("generator must have nonnegative off-diagonals and zero row sums")


def build_gilbert_elliott(alpha: float, beta: float, eps1: float, eps2: float) -> FscSpec:
    """Two-state channel with ``P = [[1-alpha, alpha], [beta, 1-beta]]``."""
    if not (0.0 < alpha < 1.0 and 0.0 < beta < 1.0):
        raise ChannelError("alpha and beta must lie in (0, 1)")
    if not eps1 < eps2:
        raise ChannelError("the good state must have the smaller crossover (eps1 < eps2)")
    P = [[1.0 - alpha, alpha], [beta, 1.0 - beta]]
    return FscSpec((eps1, eps2), DiscreteDynamics(P))


def gilbert_elliott_generator(mu: float, xi: float) -> np.ndarray:
    """Two-state generator leaving state 1 at rate ``mu`` and state 2 at rate ``xi``."""
    return np.array([[-mu, mu], [xi, -xi]], dtype=float)


def expm_taylor(M: np.ndarray, terms: int = 24) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a truncated Taylor kernel."""
    M = np.asarray(M, dtype=float)
    norm = np.abs(M).sum(axis=1).max() if M.size else 0.0
    squarings = max(0, math.ceil(math.log2(norm / 0.25))) if norm > 0.25 else 0
    X = M / 2.0**squarings
    result = np.eye(len(M))
    term = np.eye(len(M))
    for k in range(1, terms + 1):
        term = term @ X / k
        result = result + term
    for _ in range(squarings):
        result = result @ result
    return result


def transition_matrix_from_generator(Q: np.ndarray, N: int) -> np.ndarray:
    """Per-symbol transition matrix ``exp(Q / N)`` for block length ``N``."""
    Q = np.asarray(Q, dtype=float)
    _check_generator(Q)
    if N < 1:
        raise ChannelError("block length must be positive")
    return expm_taylor(Q / N)


def sampled_two_state(mu: float, xi: float, N: float) -> tuple[float, float]:
    """Closed-form ``(alpha, beta)`` of ``exp(Q / N)`` for the two-state generator."""
    total = mu + xi
    if total == 0.0:
        return 0.0, 0.0
    decay = -math.expm1(-total / N)
    return mu / total * decay, xi / total * decay


def generator_from_discrete(alpha: float, beta: float, N: int) -> tuple[float, float]:
    """Invert the sampled two-state chain: rates ``(mu, xi)`` with ``exp(Q/N)`` giving ``(alpha, beta)``."""
    s = alpha + beta
    if not 0.0 < s < 1.0:
        raise ChannelError("alpha + beta must lie in (0, 1)")
    total = -N * math.log1p(-s)
    return alpha / s * total, beta / s * total


GeneratorConversion = Literal["log", "linear", "fixed"]


def block_generator_rates(
    alpha: float,
    beta: float,
    N: int,
    conversion: GeneratorConversion = "log",
    fixed_rates: tuple[float, float] | None = None,
) -> tuple[float, float]:
    """Map per-symbol ``(alpha, beta)`` to per-codeword rates ``(mu, xi)``.

    Parameters
    ----------
    conversion : {"log", "linear", "fixed"}
        ``"log"`` inverts ``exp(Q/N)`` exactly, ``"linear"`` uses ``(N alpha, N beta)``,
        ``"fixed"`` returns ``fixed_rates`` whatever the block length.
    """
    if conversion == "log":
        return generator_from_discrete(alpha, beta, N)
    if conversion == "linear":
        return N * alpha, N * beta
    if conversion == "fixed":
        if fixed_rates is None:
            raise ChannelError("'fixed' conversion needs explicit rates")
        return float(fixed_rates[0]), float(fixed_rates[1])
    raise ChannelError(f"unknown conversion {conversion!r}")


def uniformize(Q: np.ndarray) -> UniformizedChain:
    Q = np.asarray(Q, dtype=float)
    _check_generator(Q)
    sigma = float(np.max(np.abs(np.diag(Q)))) if Q.size else 0.0
    if sigma == 0.0:
        return UniformizedChain(np.eye(len(Q)), 0.0, degenerate=True)
    A = np.eye(len(Q)) + Q / sigma
    return UniformizedChain(np.clip(A, 0.0, None), sigma)


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Stationary law of an irreducible row-stochastic matrix."""
    P = np.asarray(P, dtype=float)
    _check_stochastic(P)
    S = len(P)
    reach = (P > 0).astype(int) + np.eye(S, dtype=int)
    closure = np.linalg.matrix_power(reach, max(S - 1, 1)) > 0
    if not closure.all():
        raise ChannelError("transition matrix is reducible; stationary law is not unique")
    # Replace one balance equation with the normalization constraint.
    M = P.T - np.eye(S)
    M[-1, :] = 1.0
    rhs = np.zeros(S)
    rhs[-1] = 1.0
    pi = np.linalg.solve(M, rhs)
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


def binary_entropy(p: float) -> float:
    if p in (0.0, 1.0):
        return 0.0
    return -(p * math.log2(p) + (1.0 - p) * math.log2(1.0 - p))


def state_law(spec: FscSpec) -> np.ndarray:
    """Stationary state law of a channel, for either kind of dynamics."""
    if spec.is_discrete:
        return stationary_distribution(spec.dynamics.matrix)
    chain = uniformize(spec.dynamics.matrix)
    if chain.degenerate:
        raise ChannelError("frozen generator has no unique stationary law")
    return stationary_distribution(chain.A)


def csi_capacity(spec: FscSpec) -> float:
    """Capacity in bits per channel use when the receiver knows the state."""
    pi = state_law(spec)
    return 1.0 - float(sum(p * binary_entropy(e) for p, e in zip(pi, spec.crossover)))
