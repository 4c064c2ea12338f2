"""Occupation-time laws of channel state processes.

Three views of the same quantity are provided:

* the exact joint law of (visits to state 1, final state) for a two-state
  chain observed over ``N`` symbols, in hypergeometric closed form;
* the limiting continuous law of the fraction of time in state 1 for a
  two-state generator over a unit interval, with Bessel-function densities
  and point masses for paths that never jump;
* for any number of states, the matrix CDF of the reward-weighted
  occupation sum ``W = sum_i b_i eta_i``, computed through uniformization.

Visits are counted over the states ``s_0, ..., s_{N-1}`` that govern the
``N`` transmitted symbols, so a chain started in state 1 always has at least
one visit to state 1.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from .channel import uniformize


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------


def gauss_2f1_terminating(a: int, b: int, c: float, z: float) -> float:
    """Terminating Gauss hypergeometric series ``2F1(a, b; c; z)``.

    At least one of ``a``, ``b`` must be a nonpositive integer. Terms are
    accumulated with ``math.fsum``.
    """
    stops = [-int(p) for p in (a, b) if float(p).is_integer() and p <= 0]
    if not stops:
        raise ValueError("series does not terminate: need a or b a nonpositive integer")
    if float(c).is_integer() and c <= 0 and -c < min(stops):
        raise ValueError("c is a pole of the series")
    terms = [1.0]
    t = 1.0
    for k in range(min(stops)):
        t *= (a + k) * (b + k) / ((c + k) * (k + 1)) * z
        terms.append(t)
    return math.fsum(terms)


def _log_2f1_unit_c(n1: int, n2: int, z: float) -> float:
    """``log 2F1(-n1, -n2; 1; z)`` for ``z >= 0`` (all terms positive)."""
    if n1 == 0 or n2 == 0 or z == 0.0:
        return 0.0
    k = np.arange(min(n1, n2) + 1)
    logterms = (
        special.gammaln(n1 + 1) - special.gammaln(n1 - k + 1) - special.gammaln(k + 1)
        + special.gammaln(n2 + 1) - special.gammaln(n2 - k + 1) - special.gammaln(k + 1)
        + k * math.log(z)
    )
    return float(special.logsumexp(logterms))


def bessel_i(order: int, x):
    """Modified Bessel function ``I_0`` or ``I_1`` by its power series.

    Works elementwise on arrays; the series has positive terms, so summing
    until the next term is below ``1e-17`` of the partial sum gives full
    double precision for moderate ``x``.
    """
    if order not in (0, 1):
        raise ValueError("only orders 0 and 1 are supported")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("argument must be nonnegative")
    q = (x / 2.0) ** 2
    term = np.ones_like(x) if order == 0 else x / 2.0
    total = term.copy()
    k = 0
    while True:
        k += 1
        term = term * q / (k * (k + order))
        total = total + term
        if np.all(term <= 1e-17 * total):
            break
    return total if total.ndim else float(total)


# ---------------------------------------------------------------------------
# discrete two-state law
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteOccupancyLaw:
    """``table[m, i, j] = P(N_1 = m, S_N = j | S_0 = i)`` (0-based state indices)."""

    N: int
    table: np.ndarray

    def to_csv(self) -> str:
        return _law_csv("m", "probability", (
            (m, i + 1, j + 1, self.table[m, i, j])
            for m in range(self.N + 1) for i in range(2) for j in range(2)
        ))


def _law_csv(var: str, value: str, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([var, "initial", "final", value])
    for x, i, j, v in rows:
        w.writerow([x if isinstance(x, int) else f"{x:.12g}", i, j, f"{v:.12g}"])
    return buf.getvalue()


def discrete_occupancy_law(alpha: float, beta: float, N: int) -> DiscreteOccupancyLaw:
    """Joint law of visits to state 1 and the final state for ``N`` symbols.

    Uses the closed form in terms of ``2F1(.,.;1;lam)`` with
    ``lam = alpha beta / ((1-alpha)(1-beta))``; the power prefactors and the
    hypergeometric factors are combined in the log domain.
    """
    if not (0.0 < alpha < 1.0 and 0.0 < beta < 1.0) or N < 1:
        raise ValueError("need 0 < alpha, beta < 1 and N >= 1")
    la, lb = math.log1p(-alpha), math.log1p(-beta)
    lam = alpha * beta / ((1.0 - alpha) * (1.0 - beta))
    table = np.zeros((N + 1, 2, 2))

    def F(n1: int, n2: int) -> float:
        return _log_2f1_unit_c(n1, n2, lam)

    def diff(l_big: float, l_small: float) -> float:
        # exp(l_big) - exp(l_small) as a log, guarding exact cancellation
        return l_big + math.log(-math.expm1(l_small - l_big)) if l_small < l_big else -math.inf

    for m in range(1, N):
        base = m * la + (N - m) * lb
        table[m, 0, 0] = math.exp(base + diff(F(N - m, m), F(N - m - 1, m)))
        table[m, 0, 1] = math.exp((m - 1) * la + (N - m) * lb + math.log(alpha) + F(N - m, m - 1))
        table[m, 1, 0] = math.exp(m * la + (N - m - 1) * lb + math.log(beta) + F(N - m - 1, m))
        table[m, 1, 1] = math.exp(base + diff(F(N - m, m), F(N - m, m - 1)))
    # Extremal counts: never leaving the initial state, or leaving it only at the last step.
    table[N, 0, 0] = math.exp(N * la)
    table[N, 0, 1] = math.exp((N - 1) * la) * alpha
    table[0, 1, 1] = math.exp(N * lb)
    table[0, 1, 0] = math.exp((N - 1) * lb) * beta
    return DiscreteOccupancyLaw(N, table)


# ---------------------------------------------------------------------------
# continuous two-state law
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuousOccupancyLaw:
    """Law of the fraction ``r`` of a unit interval spent in state 1, jointly with the final state.

    The generator leaves state 1 at rate ``mu`` and state 2 at rate ``xi``.
    Paths that never jump put point masses ``exp(-mu)`` at ``r = 1`` for
    ``(1 -> 1)`` and ``exp(-xi)`` at ``r = 0`` for ``(2 -> 2)``.
    """

    mu: float
    xi: float

    def atom(self, i: int, j: int) -> tuple[float, float] | None:
        """``(location, weight)`` of the point mass for pair ``(i, j)``, if any."""
        if (i, j) == (0, 0):
            return 1.0, math.exp(-self.mu)
        if (i, j) == (1, 1):
            return 0.0, math.exp(-self.xi)
        return None

    def density(self, r, i: int, j: int):
        """Absolutely continuous part of the joint density on ``(0, 1)``."""
        r = np.asarray(r, dtype=float)
        mu, xi = self.mu, self.xi
        z = 2.0 * np.sqrt(mu * xi * r * (1.0 - r))
        pre = np.exp(-mu * r - xi * (1.0 - r))
        if (i, j) == (0, 1):
            out = mu * pre * bessel_i(0, z)
        elif (i, j) == (1, 0):
            out = xi * pre * bessel_i(0, z)
        else:
            # sqrt(mu xi r/(1-r)) I1(z) = mu xi r * (I1(z)/(z/2)); the ratio is smooth in r
            num = r if (i, j) == (0, 0) else 1.0 - r
            out = pre * mu * xi * num * _i1_over_half(z)
        return out if out.ndim else float(out)

    def total_mass(self, i: int, j: int) -> float:
        """``P(S_f = j | S_i = i)``: atom plus integrated density."""
        rate = self.mu + self.xi
        stay = (self.xi + self.mu * math.exp(-rate)) / rate if i == 0 else (self.mu + self.xi * math.exp(-rate)) / rate
        return stay if i == j else 1.0 - stay

    def cdf(self, r: float, i: int, j: int) -> float:
        """``P(eta_1 <= r, S_f = j | S_i = i)`` by adaptive quadrature."""
        if r < 0.0:
            return 0.0
        if r >= 1.0:
            return self.total_mass(i, j)
        val = integrate.quad(self.density, 0.0, r, args=(i, j), epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        at = self.atom(i, j)
        if at is not None and at[0] <= r:
            val += at[1]
        return val

    def to_csv(self, grid: np.ndarray) -> str:
        return _law_csv("r", "density", (
            (float(r), i + 1, j + 1, self.density(r, i, j))
            for r in grid for i in range(2) for j in range(2)
        ))


def _i1_over_half(z):
    """``I_1(z) / (z/2)``, equal to 1 at ``z = 0``."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z > 0
    out[nz] = bessel_i(1, z[nz]) / (z[nz] / 2.0)
    return out


def continuous_occupancy_law(mu: float, xi: float) -> ContinuousOccupancyLaw:
    if mu <= 0 or xi <= 0:
        raise ValueError("rates must be positive")
    return ContinuousOccupancyLaw(float(mu), float(xi))


def kolmogorov_distance(discrete: DiscreteOccupancyLaw, continuous: ContinuousOccupancyLaw) -> float:
    """Largest gap between the joint CDFs of ``N_1 / N`` and ``eta_1`` over all ``(i, j)``."""
    N = discrete.N
    worst = 0.0
    for i in range(2):
        for j in range(2):
            steps = np.cumsum(discrete.table[:, i, j])
            # The continuous CDF is monotone, so checking both sides of every jump suffices.
            cont = [continuous.cdf(m / N, i, j) for m in range(N + 1)]
            for m in range(N + 1):
                left = steps[m - 1] if m else 0.0
                cont_left = cont[m] - _atom_at(continuous, i, j, m / N)
                worst = max(worst, abs(steps[m] - cont[m]), abs(left - cont_left))
    return worst


def _atom_at(law: ContinuousOccupancyLaw, i: int, j: int, r: float) -> float:
    at = law.atom(i, j)
    return at[1] if at is not None and at[0] == r else 0.0


# ---------------------------------------------------------------------------
# weighted occupation sum, any number of states
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightedOccupancyCdf:
    """Matrix CDF ``G(w)[i, j] = P(W <= w, S_f = j | S_i = i)`` of ``W = sum_k b_k eta_k``.

    Built by uniformizing the generator: given ``n`` Poisson jumps, the CDF on
    each interval ``[b_k, b_{k-1}]`` is a degree-``n`` Bernstein polynomial in
    ``(w - b_k) / (b_{k-1} - b_k)`` whose coefficient matrices obey two-term
    recurrences in the Bernstein index.
    """

    b: np.ndarray
    sigma: float
    poisson: np.ndarray
    coeffs: tuple  # coeffs[n][k] has shape (n+1, S, S) for k = 1 .. S-1 (interval [b_{k+1}, b_k])
    transition: np.ndarray
    tol: float

    def __call__(self, w: float) -> np.ndarray:
        b = self.b
        S = len(b)
        if w >= b[0]:
            return self.transition.copy()
        if w < b[-1]:
            return np.zeros((S, S))
        # interval index k (0-based) with b[k+1] <= w < b[k]
        k = int(np.searchsorted(-b, -w, side="left")) - 1
        y = (w - b[k + 1]) / (b[k] - b[k + 1])
        G = np.zeros((S, S))
        for n, weight in enumerate(self.poisson):
            basis = stats.binom.pmf(np.arange(n + 1), n, y)
            G += weight * np.tensordot(basis, self.coeffs[n][k], axes=1)
        return G


def weighted_cdf_matrix(Q: np.ndarray, b, w: float | None = None, tol: float = 1e-10):
    """Matrix CDF of the reward-weighted occupation sum over a unit interval.

    Parameters
    ----------
    Q : ndarray
        Generator over the unit interval.
    b : sequence of float
        Strictly decreasing state rewards ``b_1 > ... > b_S``.
    w : float, optional
        Evaluation point. If omitted the reusable evaluator is returned.
    tol : float
        Poisson tail mass discarded by truncating the number of jumps.

    Returns
    -------
    ndarray or WeightedOccupancyCdf
    """
    b = np.asarray(b, dtype=float)
    if np.any(np.diff(b) >= 0):
        raise ValueError("weights must be strictly decreasing")
    chain = uniformize(Q)
    A, sigma = chain.A, chain.sigma
    S = len(b)
    n_max = int(stats.poisson.isf(tol, sigma)) + 1 if sigma > 0 else 0
    while sigma > 0 and stats.poisson.sf(n_max, sigma) >= tol:
        n_max += 1
    poisson = stats.poisson.pmf(np.arange(n_max + 1), sigma)

    # C[k] for interval k (0-based: [b[k+1], b[k]]): array (n+1, S, S).
    # n = 0: no jumps, W = b_c, so the CDF on the interval is 1 for states below it.
    C_prev = [np.zeros((1, S, S)) for _ in range(S - 1)]
    for k in range(S - 1):
        for c in range(k + 1, S):
            C_prev[k][0, c, c] = 1.0
    coeffs = [C_prev]
    An = np.eye(S)
    for n in range(1, n_max + 1):
        An = An @ A
        AC = [np.einsum("ce,led->lcd", A, Ck) for Ck in C_prev]  # (A C(n-1, l))
        C_new = [np.zeros((n + 1, S, S)) for _ in range(S - 1)]
        # Rows whose reward is at or below the interval: run downward from the top end.
        # The CDF is continuous across b_k for those rows, so the top of interval k
        # equals the bottom of interval k-1, and A^n above b_1.
        for k in range(S - 1):
            lo, hi = b[k + 1], b[k]
            for c in range(k + 1, S):
                top = An[c] if k == 0 else C_new[k - 1][0, c]
                C_new[k][n, c] = top
                wa = (lo - b[c]) / (hi - b[c])
                wb = (hi - lo) / (hi - b[c])
                for l in range(n, 0, -1):
                    C_new[k][l - 1, c] = wa * C_new[k][l, c] + wb * AC[k][l - 1, c]
        # Rows whose reward is above the interval: run upward from the bottom end,
        # which is zero below b_S and otherwise the top of interval k+1.
        for k in range(S - 2, -1, -1):
            lo, hi = b[k + 1], b[k]
            for c in range(0, k + 1):
                bottom = np.zeros(S) if k == S - 2 else C_new[k + 1][n, c]
                C_new[k][0, c] = bottom
                wa = (b[c] - hi) / (b[c] - lo)
                wb = (hi - lo) / (b[c] - lo)
                for l in range(0, n):
                    C_new[k][l + 1, c] = wa * C_new[k][l, c] + wb * AC[k][l, c]
        coeffs.append(C_new)
        C_prev = C_new
    transition = sum(p * np.linalg.matrix_power(A, n) for n, p in enumerate(poisson))
    G = WeightedOccupancyCdf(b, sigma, poisson, tuple(coeffs), transition, tol)
    return G if w is None else G(w)
