"""Random-coding upper bounds on decoding failure over finite-state channels.

All bounds share the per-state exponent ``b_i(rho)`` of a binary-symmetric
state under uniform inputs. For a state sequence with type ``(n_1/N, ...)``
the conditional failure probability is at most
``min{1, exp(-N (sum_i (n_i/N) b_i(rho) - rho R))}``, and each bound here
averages that quantity over a different description of the state process:

* ``gallager_matrix_bound`` keeps one ``rho`` inside the average and sums
  over paths with a matrix product;
* ``type_sum_bound`` averages over the exact law of visit counts;
* ``rare_transition_bound`` averages over the limiting continuous law of
  occupation fractions.

A nonnegative margin ``tau`` trades undetected errors for detected failures:
the undetected bound uses the exponent shifted by ``(1 - v) tau`` and the
failure bound the exponent shifted by ``-v tau``, with ``0 <= v <= rho``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from scipy import integrate, optimize

from .channel import FscSpec
from .occupation import (
    ContinuousOccupancyLaw,
    DiscreteOccupancyLaw,
    weighted_cdf_matrix,
)

LN2 = math.log(2.0)

BoundKind = Literal[
    "gallager_matrix", "type_sum", "rare_transition", "undetected_bound", "error_bound_with_margin"
]


@dataclass(frozen=True)
class CodeParams:
    """Block length ``N`` and rate ``R_bits`` in information bits per code bit.

    ``M = 2**(N R_bits)`` codewords, kept as ``log_M`` in nats. ``N R_bits``
    need not be an integer; ``is_integral`` reports whether it is.
    """

    N: int
    R_bits: float

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError("block length must be positive")
        if not 0.0 < self.R_bits < 1.0:
            raise ValueError("rate must lie in (0, 1) bits per code bit")

    @property
    def R(self) -> float:
        """Rate in nats per code bit."""
        return self.R_bits * LN2

    @property
    def log_M(self) -> float:
        return self.N * self.R

    @property
    def info_bits(self) -> float:
        return self.N * self.R_bits

    @property
    def is_integral(self) -> bool:
        return abs(self.info_bits - round(self.info_bits)) < 1e-9


@dataclass(frozen=True)
class FailureBoundMatrix:
    """Bounds on ``P(failure, S_N = j | S_0 = i)``; ``rho_star`` may be per entry."""

    kind: BoundKind
    values: np.ndarray
    code: CodeParams
    rho_star: np.ndarray | float
    v_star: np.ndarray | float | None = None
    tau: float = 0.0

    def averaged(self, initial_law: np.ndarray) -> float:
        """Unconditional bound: initial state drawn from ``initial_law``, final state summed."""
        return float(np.asarray(initial_law) @ self.values.sum(axis=1))

    def csv_rows(self) -> list[list[str]]:
        S = self.values.shape[0]
        rho = np.broadcast_to(np.asarray(self.rho_star, dtype=float), (S, S))
        v = np.broadcast_to(np.asarray(np.nan if self.v_star is None else self.v_star, dtype=float), (S, S))
        rows = []
        for i in range(S):
            for j in range(S):
                rows.append([
                    self.kind, str(self.code.N), f"{self.code.R_bits:.12g}", f"{rho[i, j]:.12g}",
                    "" if np.isnan(v[i, j]) else f"{v[i, j]:.12g}", f"{self.tau:.12g}",
                    str(i + 1), str(j + 1), f"{self.values[i, j]:.12g}",
                ])
        return rows


BOUND_CSV_HEADER = ["kind", "N", "R_bits", "rho_star", "v_star", "tau", "i", "j", "value"]


# ---------------------------------------------------------------------------
# exponents
# ---------------------------------------------------------------------------


def state_exponent_b(eps: float, rho: float) -> float:
    """``-ln[2^-rho (eps^(1/(1+rho)) + (1-eps)^(1/(1+rho)))^(1+rho)]``."""
    s = 1.0 / (1.0 + rho)
    inner = eps**s + (1.0 - eps) ** s
    return rho * LN2 - (1.0 + rho) * math.log(inner)


def state_exponents(spec: FscSpec, rho: float) -> np.ndarray:
    return np.array([state_exponent_b(e, rho) for e in spec.crossover])


def _e0_single(input_dist: np.ndarray, W: np.ndarray, rho: float) -> float:
    # W[x, y] = P(y | x)
    inner = (input_dist[:, None] * W ** (1.0 / (1.0 + rho))).sum(axis=0)
    return -math.log((inner ** (1.0 + rho)).sum())


def gallager_e0n(spec: FscSpec, input_dist, rho: float, type_counts) -> float:
    """Type-averaged Gallager function ``sum_i (n_i / N) E_0(rho; state i)``.

    Each state is a binary-symmetric channel; ``input_dist`` is the input law
    over ``{0, 1}``. For uniform inputs this reduces to ``sum (n_i/N) b_i``.
    """
    q = np.asarray(input_dist, dtype=float)
    counts = np.asarray(type_counts, dtype=float)
    if q.shape != (2,) or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-12:
        raise ValueError("input distribution must be a probability vector over {0, 1}")
    if counts.shape != (spec.num_states,) or np.any(counts < 0) or counts.sum() <= 0:
        raise ValueError("type counts must be nonnegative, one per state")
    N = counts.sum()
    total = 0.0
    for n_i, eps in zip(counts, spec.crossover):
        W = np.array([[1.0 - eps, eps], [eps, 1.0 - eps]])
        total += n_i / N * _e0_single(q, W, rho)
    return total


# ---------------------------------------------------------------------------
# fixed-rho bounds
# ---------------------------------------------------------------------------


def gallager_matrix_bound(spec: FscSpec, code: CodeParams, rho: float) -> np.ndarray:
    """``min{1, [A^N]_ij e^(rho N R)}`` with ``A_ij = P_ij exp(-b_i(rho))``.

    The product is formed after factoring out ``exp(-N min_i b_i)`` so that
    long blocks neither underflow nor overflow.
    """
    if not spec.is_discrete:
        raise ValueError("matrix bound needs per-symbol discrete dynamics")
    P = spec.dynamics.matrix
    b = state_exponents(spec, rho)
    shift = b.min()
    A = P * np.exp(-(b - shift))[:, None]
    AN = np.linalg.matrix_power(A, code.N)
    with np.errstate(divide="ignore"):
        log_val = np.log(AN) - code.N * shift + rho * code.log_M
    return np.exp(np.minimum(log_val, 0.0))


def _capped(exponent: np.ndarray) -> np.ndarray:
    """``min{1, exp(-exponent)}``."""
    return np.exp(-np.maximum(exponent, 0.0))


def type_sum_bound(
    law: DiscreteOccupancyLaw, spec: FscSpec, code: CodeParams, rho: float, shift: float = 0.0
) -> np.ndarray:
    """Average of the capped type bound over the exact law of visits to state 1.

    ``shift`` is added to the per-symbol exponent (used by the margin bounds).
    """
    if spec.num_states != 2:
        raise ValueError("type sum over visit counts is implemented for two states")
    b1, b2 = state_exponents(spec, rho)
    N = law.N
    frac = np.arange(N + 1) / N
    w = frac * b1 + (1.0 - frac) * b2
    g = _capped(N * (w - rho * code.R + shift))
    return np.einsum("m,mij->ij", g, law.table)


class _ContinuousAverager:
    """Expectations of ``min{1, exp(-N (a r + c))}`` under a continuous occupancy law.

    The integrand is smooth except for the kink where the exponent crosses
    zero. The unit interval is cut into equal panels with Gauss-Legendre
    nodes, and the panel holding the kink is split there, so each piece is
    smooth.
    """

    def __init__(self, law: ContinuousOccupancyLaw, panels: int = 128, order: int = 16):
        self.law = law
        x, wts = np.polynomial.legendre.leggauss(order)
        self.x, self.wts = (x + 1.0) / 2.0, wts / 2.0
        self.edges = np.linspace(0.0, 1.0, panels + 1)
        h = np.diff(self.edges)
        self.nodes = (self.edges[:-1, None] + h[:, None] * self.x[None, :])
        self.weights = h[:, None] * self.wts[None, :]
        self.dens = np.stack([
            np.stack([law.density(self.nodes, i, j) for j in range(2)], axis=-1) for i in range(2)
        ], axis=-2)  # (panels, order, 2, 2)

    def expect(self, N: int, slope: float, offset: float) -> np.ndarray:
        g = _capped(N * (slope * self.nodes + offset))
        panel_vals = np.einsum("po,po,poij->pij", g, self.weights, self.dens)
        out = panel_vals.sum(axis=0)
        if slope != 0.0:
            kink = -offset / slope
            if 0.0 < kink < 1.0:
                p = min(int(np.searchsorted(self.edges, kink, side="right")) - 1, len(self.edges) - 2)
                out -= panel_vals[p]
                for lo, hi in ((self.edges[p], kink), (kink, self.edges[p + 1])):
                    if hi > lo:
                        r = lo + (hi - lo) * self.x
                        gr = _capped(N * (slope * r + offset))
                        dens = np.array([[self.law.density(r, i, j) for j in range(2)] for i in range(2)])
                        out += np.einsum("o,o,ijo->ij", gr, (hi - lo) * self.wts, dens)
        for i, j in ((0, 0), (1, 1)):
            loc, weight = self.law.atom(i, j)
            out[i, j] += _capped(N * (slope * loc + offset)) * weight
        return out


_AVERAGERS: dict[tuple[float, float], _ContinuousAverager] = {}


def _averager(law: ContinuousOccupancyLaw) -> _ContinuousAverager:
    key = (law.mu, law.xi)
    if key not in _AVERAGERS:
        _AVERAGERS[key] = _ContinuousAverager(law)
    return _AVERAGERS[key]


def rare_transition_bound(
    cont_law: ContinuousOccupancyLaw, spec: FscSpec, code: CodeParams, rho: float, shift: float = 0.0
) -> np.ndarray:
    """Capped type bound averaged over the continuous occupancy law (two states)."""
    if spec.num_states != 2:
        raise ValueError("use rare_transition_bound_general for more than two states")
    b1, b2 = state_exponents(spec, rho)
    return _averager(cont_law).expect(code.N, b1 - b2, b2 - rho * code.R + shift)


def rare_transition_bound_quad(
    cont_law: ContinuousOccupancyLaw, spec: FscSpec, code: CodeParams, rho: float, shift: float = 0.0
) -> np.ndarray:
    """Same as ``rare_transition_bound`` with adaptive quadrature (slow reference)."""
    b1, b2 = state_exponents(spec, rho)
    N, offset, slope = code.N, b2 - rho * code.R + shift, b1 - b2
    g = lambda r: float(_capped(N * (slope * r + offset)))
    kink = -offset / slope
    pts = [kink] if 0.0 < kink < 1.0 else None
    out = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            out[i, j] = integrate.quad(
                lambda r: g(r) * cont_law.density(r, i, j), 0.0, 1.0,
                points=pts, epsabs=1e-13, epsrel=1e-10, limit=200,
            )[0]
            at = cont_law.atom(i, j)
            if at is not None:
                out[i, j] += g(at[0]) * at[1]
    return out


def rare_transition_bound_general(
    Q: np.ndarray, spec: FscSpec, code: CodeParams, rho: float, shift: float = 0.0, tol: float = 1e-10
) -> np.ndarray:
    """Rare-transition bound for any number of states via the weighted-occupancy CDF.

    With ``g(w) = min{1, exp(-N (w - rho R + shift))}`` nonincreasing,
    ``E[g(W)] = g(b_1) G(b_1) + int N exp(-N (w - rho R + shift)) G(w) dw``
    over ``w`` between ``max(b_S, rho R - shift)`` and ``b_1``.
    """
    b = state_exponents(spec, rho)
    G = weighted_cdf_matrix(Q, b, tol=tol)
    N, thr = code.N, rho * code.R - shift
    out = float(_capped(N * (b[0] - thr))) * G.transition
    lo = max(b[-1], thr)
    if lo < b[0]:
        pts = [p for p in b[1:-1] if lo < p < b[0]]
        edges = [lo, *sorted(pts), b[0]]
        for a, c in zip(edges, edges[1:]):
            out = out + integrate.quad_vec(
                lambda w: N * math.exp(-N * (w - thr)) * G(w), a, c, epsabs=1e-12, epsrel=1e-10
            )[0]
    return np.minimum(out, G.transition)


# ---------------------------------------------------------------------------
# rho optimization
# ---------------------------------------------------------------------------


def optimize_rho(bound_fn: Callable[[float], float], grid_step: float = 0.01,
                 lo: float = 0.0, hi: float = 1.0, xatol: float = 1e-5) -> tuple[float, float]:
    """Minimize a scalar bound over ``rho in [lo, hi]``.

    Coarse grid search, then bounded Brent refinement on the bracket around
    the best grid point.
    """
    n = max(1, int(round((hi - lo) / grid_step)))
    grid = np.linspace(lo, hi, n + 1)
    vals = np.array([bound_fn(r) for r in grid])
    k = int(np.argmin(vals))
    best_r, best_v = float(grid[k]), float(vals[k])
    a, c = grid[max(k - 1, 0)], grid[min(k + 1, n)]
    if c > a and np.ptp(vals) > 0:
        res = optimize.minimize_scalar(bound_fn, bounds=(a, c), method="bounded", options={"xatol": xatol})
        if res.fun < best_v:
            best_r, best_v = float(res.x), float(res.fun)
    return best_r, best_v


def optimize_rho_v(bound_fn: Callable[[float, float], float], grid_step: float = 0.01) -> tuple[float, float, float]:
    """Minimize ``bound_fn(rho, v)`` over the triangle ``0 <= v <= rho <= 1`` by nested search."""
    def inner(rho: float) -> float:
        if rho == 0.0:
            return bound_fn(0.0, 0.0)
        return optimize_rho(lambda v: bound_fn(rho, v), grid_step=max(grid_step, rho / 10), hi=rho)[1]

    rho, val = optimize_rho(inner, grid_step)
    v = optimize_rho(lambda v: bound_fn(rho, v), grid_step=max(grid_step, rho / 10), hi=rho)[0] if rho else 0.0
    return rho, v, val


def optimize_entrywise(matrix_fn: Callable[[float], np.ndarray], grid_step: float = 0.01,
                       xatol: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """Minimize every entry of a matrix-valued bound separately over ``rho in [0, 1]``.

    Returns ``(rho_star, values)``, both matrices.
    """
    n = max(1, int(round(1.0 / grid_step)))
    grid = np.linspace(0.0, 1.0, n + 1)
    stack = np.array([matrix_fn(r) for r in grid])
    S = stack.shape[1]
    rho_star = np.zeros((S, S))
    values = np.zeros((S, S))
    for i in range(S):
        for j in range(S):
            col = stack[:, i, j]
            k = int(np.argmin(col))
            rho_star[i, j], values[i, j] = grid[k], col[k]
            a, c = grid[max(k - 1, 0)], grid[min(k + 1, n)]
            if np.ptp(col) > 0:
                res = optimize.minimize_scalar(lambda r: matrix_fn(r)[i, j], bounds=(a, c),
                                               method="bounded", options={"xatol": xatol})
                if res.fun < values[i, j]:
                    rho_star[i, j], values[i, j] = res.x, res.fun
    return rho_star, values


def optimized_bound(kind: BoundKind, matrix_fn: Callable[[float], np.ndarray], code: CodeParams,
                    rho: float | None = None, grid_step: float = 0.01) -> FailureBoundMatrix:
    """Evaluate at a fixed ``rho`` or optimize ``rho`` per entry when ``rho`` is None."""
    if rho is not None:
        return FailureBoundMatrix(kind, matrix_fn(rho), code, rho)
    rho_star, values = optimize_entrywise(matrix_fn, grid_step)
    return FailureBoundMatrix(kind, values, code, rho_star)


# ---------------------------------------------------------------------------
# margin bounds
# ---------------------------------------------------------------------------


Form = Literal["continuous", "discrete"]


@dataclass(frozen=True)
class MarginBounds:
    undetected: FailureBoundMatrix
    failure: FailureBoundMatrix


def _shifted_bound(form: Form, law, spec: FscSpec, code: CodeParams) -> Callable[[float, float], np.ndarray]:
    if form == "continuous":
        return lambda rho, shift: rare_transition_bound(law, spec, code, rho, shift)
    return lambda rho, shift: type_sum_bound(law, spec, code, rho, shift)


def undetected_and_error_bounds(
    law: ContinuousOccupancyLaw | DiscreteOccupancyLaw,
    spec: FscSpec,
    code: CodeParams,
    tau: float,
    target: float | None = None,
    grid_step: float = 0.01,
) -> MarginBounds:
    """Undetected-error and failure bounds for margin ``tau >= 0``.

    The undetected bound uses exponent ``w - rho R + (1 - v) tau`` and the
    failure bound ``w - rho R - v tau``, minimized over ``0 <= v <= rho <= 1``.
    Each bound is a monotone function of an exponent shift that is linear in
    ``v``, so the minimum over ``v`` sits at an endpoint ``v = 0`` or ``v = rho``;
    only those two candidates are evaluated.

    Without ``target`` each entry's bounds are minimized independently. With
    ``target``, both bounds of an entry share one ``(rho*, v*)``: the one with
    the smallest failure bound among those meeting ``undetected <= target``,
    or the smallest undetected bound when none does.
    """
    if tau < 0:
        raise ValueError("margin must be nonnegative")
    form: Form = "continuous" if isinstance(law, ContinuousOccupancyLaw) else "discrete"
    fn = _shifted_bound(form, law, spec, code)

    def candidates(rho: float):
        # (v, undetected, failure) at both ends of the admissible v range
        out = []
        for v in {0.0, rho}:
            out.append((v, fn(rho, (1.0 - v) * tau), fn(rho, -v * tau)))
        return out

    def best_und(rho: float) -> np.ndarray:
        return np.minimum.reduce([u for _, u, _ in candidates(rho)])

    def best_fail(rho: float) -> np.ndarray:
        return np.minimum.reduce([f for _, _, f in candidates(rho)])

    if target is None:
        rho_u, und = optimize_entrywise(best_und, grid_step)
        rho_f, fail = optimize_entrywise(best_fail, grid_step)
        v_u = np.zeros_like(rho_u) if tau > 0 else rho_u.copy()
        v_f = np.zeros_like(rho_f) if tau > 0 else rho_f.copy()
        return MarginBounds(
            FailureBoundMatrix("undetected_bound", und, code, rho_u, v_u, tau),
            FailureBoundMatrix("error_bound_with_margin", fail, code, rho_f, v_f, tau),
        )

    # Joint choice on the rho grid, refined only through the grid itself.
    n = max(1, int(round(1.0 / grid_step)))
    rows = [(rho, v, u, f) for rho in np.linspace(0.0, 1.0, n + 1) for v, u, f in candidates(rho)]
    S = spec.num_states
    und, fail = np.ones((S, S)), np.ones((S, S))
    rho_star, v_star = np.zeros((S, S)), np.zeros((S, S))
    for i in range(S):
        for j in range(S):
            feasible = [r for r in rows if r[2][i, j] <= target]
            pick = min(feasible, key=lambda r: r[3][i, j]) if feasible else min(rows, key=lambda r: r[2][i, j])
            rho_star[i, j], v_star[i, j] = pick[0], pick[1]
            und[i, j], fail[i, j] = pick[2][i, j], pick[3][i, j]
    return MarginBounds(
        FailureBoundMatrix("undetected_bound", und, code, rho_star, v_star, tau),
        FailureBoundMatrix("error_bound_with_margin", fail, code, rho_star, v_star, tau),
    )


def max_undetected_bound(law, spec: FscSpec, code: CodeParams, tau: float, grid_step: float = 0.01) -> float:
    """``max_ij`` of the undetected bound, each entry minimized over ``(rho, v)``.

    The undetected exponent shift ``(1 - v) tau`` is largest at ``v = 0``.
    """
    fn = _shifted_bound("continuous" if isinstance(law, ContinuousOccupancyLaw) else "discrete", law, spec, code)
    _, und = optimize_entrywise(lambda rho: fn(rho, tau), grid_step)
    return float(und.max())
