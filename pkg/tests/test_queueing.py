import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from artifact.queueing import (
    QueueBlocks,
    SuccessMatrix,
    TrafficSpec,
    build_blocks,
    completion_probability,
    queue_tail,
    solve_g_matrix,
    stability_drift,
    stationary_levels,
)

P = np.array([[0.7, 0.3], [0.45, 0.55]])
FAIL = np.array([[0.02, 0.05], [0.1, 0.2]])


def _success(P=P, F=FAIL):
    return SuccessMatrix.from_failure(P, F)


def _blocks_by_outcomes(success, lam_N, rho_r, max_up):
    """Level change ``k`` and next state from a sum over arrivals, decode outcome and completion."""
    P, s = success.channel, success.s
    out = {k: np.zeros((2, 2)) for k in range(-1, max_up + 1)}
    for arrivals in range(max_up + 2):
        pa = stats.poisson.pmf(arrivals, lam_N)
        for c in range(2):
            for d in range(2):
                for decoded, p_dec in ((True, s[c, d]), (False, P[c, d] - s[c, d])):
                    for done, p_done in ((True, rho_r), (False, 1 - rho_r)):
                        if not decoded and done:
                            continue  # completion needs a decoded codeword
                        weight = p_dec * (p_done if decoded else 1.0)
                        k = arrivals - (1 if decoded and done else 0)
                        if k <= max_up:
                            out[k][c, d] += pa * weight
    return out


def test_blocks_against_outcome_sum():
    success = _success()
    blocks = build_blocks(success, TrafficSpec(0.02, 0.1), 0.35, 10)
    ref = _blocks_by_outcomes(success, 0.2, 0.35, len(blocks.up) - 1)
    np.testing.assert_allclose(blocks.down, ref[-1], atol=1e-15)
    for k, B in enumerate(blocks.up):
        np.testing.assert_allclose(B, ref[k], atol=1e-15)
    total = blocks.down + sum(blocks.up)
    np.testing.assert_allclose(total.sum(axis=1), 1.0, atol=1e-12)
    # the empty level cannot go down: that mass stays local
    np.testing.assert_allclose(blocks.boundary_up[0], blocks.up[0] + blocks.down)


def _truncated_chain_tail(success, traffic, rho_r, N, levels=400):
    """Stationary law of the level-truncated chain by a dense linear solve."""
    blocks = build_blocks(success, traffic, rho_r, N)
    S = 2
    T = np.zeros((levels * S, levels * S))
    for q in range(levels):
        rows = slice(q * S, (q + 1) * S)
        seq = blocks.boundary_up if q == 0 else blocks.up
        if q > 0:
            T[rows, (q - 1) * S: q * S] += blocks.down
        for k, B in enumerate(seq):
            tgt = min(q + k, levels - 1)
            T[rows, tgt * S: (tgt + 1) * S] += B
    A = T.T - np.eye(len(T))
    A[-1] = 1.0
    rhs = np.zeros(len(T))
    rhs[-1] = 1.0
    pi = np.linalg.solve(A, rhs).reshape(levels, S)
    return 1.0 - np.cumsum(pi.sum(axis=1))


@settings(max_examples=10)
@given(st.floats(0.002, 0.05), st.floats(0.05, 0.9))
def test_tail_matches_truncated_chain(lam, p_geo):
    N, R = 10, 0.5
    success = _success()
    traffic = TrafficSpec(lam, p_geo)
    rho_r = completion_probability(p_geo, R, N)
    blocks = build_blocks(success, traffic, rho_r, N)
    if stability_drift(blocks) > -0.05:
        return  # near-critical queues need far more levels than the dense oracle can hold
    ref = _truncated_chain_tail(success, traffic, rho_r, N)
    for q in (0, 1, 5):
        assert queue_tail(success, traffic, R, N, q).tail == pytest.approx(ref[q], rel=1e-7, abs=1e-12)


def test_g_matrix_is_stochastic_and_fixed_point():
    blocks = build_blocks(_success(), TrafficSpec(0.02, 0.3), completion_probability(0.3, 0.5, 10), 10)
    G = solve_g_matrix(blocks)
    np.testing.assert_allclose(G.sum(axis=1), 1.0, atol=1e-10)
    A = (blocks.down,) + blocks.up
    rhs = sum(Ak @ np.linalg.matrix_power(G, k) for k, Ak in enumerate(A))
    np.testing.assert_allclose(rhs, G, atol=1e-11)


def test_scalar_queue_closed_form():
    # One channel state, at most one arrival with prob a, service with prob s: a birth-death chain.
    a, s = 0.2, 0.5
    blocks = QueueBlocks(
        down=np.array([[(1 - a) * s]]),
        up=(np.array([[a * s + (1 - a) * (1 - s)]]), np.array([[a * (1 - s)]])),
        boundary_up=(np.array([[1 - a]]), np.array([[a]])),
        rho_r=1.0, arrivals=np.array([1 - a, a]), lam_N=a,
        success=SuccessMatrix(np.array([[s]]), np.array([[1.0]])),
    )
    levels = stationary_levels(blocks, tol=1e-14).levels[:, 0]
    r = a * (1 - s) / ((1 - a) * s)
    pi0 = 1.0 / (1.0 + a / ((1 - a) * s) / (1 - r))
    expected = [pi0] + [pi0 * a / ((1 - a) * s) * r ** (q - 1) for q in range(1, 6)]
    np.testing.assert_allclose(levels[:6], expected, rtol=1e-10)


def test_unstable_queue_reports_tail_one():
    res = queue_tail(_success(), TrafficSpec(0.5, 0.01), 0.5, 10, 5)
    assert not res.stable and res.tail == 1.0 and res.drift > 0


@given(st.floats(0.05, 0.9))
def test_tail_monotone_in_packet_length(p):
    t = lambda pg: queue_tail(_success(), TrafficSpec(0.02, pg), 0.5, 10, 3).tail
    assert t(p) >= t(min(1.0, p * 1.2)) - 1e-12


def test_success_matrix_validation():
    with pytest.raises(ValueError):
        SuccessMatrix.from_failure(P, P + 0.01)
    with pytest.raises(ValueError):
        TrafficSpec(0.1, 0.0)
    assert completion_probability(0.01, 0.5, 170) == pytest.approx(1 - 0.99**85)
    assert completion_probability(1.0, 0.5, 10) == 1.0
    assert math.isclose(_success().mean_success(), float(np.array([0.6, 0.4]) @ (P - FAIL).sum(axis=1)))
