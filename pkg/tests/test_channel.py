import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from artifact.channel import (
    ChannelError,
    ContinuousDynamics,
    DiscreteDynamics,
    FscSpec,
    block_generator_rates,
    build_gilbert_elliott,
    csi_capacity,
    expm_taylor,
    generator_from_discrete,
    gilbert_elliott_generator,
    sampled_two_state,
    stationary_distribution,
    state_law,
    transition_matrix_from_generator,
    uniformize,
)

probs = st.floats(0.001, 0.999)
rates = st.floats(0.01, 50.0)


def test_rejects_bad_parameters():
    with pytest.raises(ChannelError):
        build_gilbert_elliott(0.0, 0.1, 0.01, 0.1)
    with pytest.raises(ChannelError):
        build_gilbert_elliott(0.1, 0.1, 0.1, 0.01)
    with pytest.raises(ChannelError):
        DiscreteDynamics([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(ChannelError):
        ContinuousDynamics([[-1.0, 2.0], [1.0, -1.0]])
    with pytest.raises(ChannelError):
        FscSpec((0.1, 0.6), DiscreteDynamics(np.eye(2)))


@given(probs, probs, st.floats(0.0, 0.24), st.floats(0.25, 0.5))
def test_json_round_trip(a, b, e1, e2):
    spec = build_gilbert_elliott(a, b, e1, e2)
    back = FscSpec.from_json(spec.to_json())
    assert back.crossover == spec.crossover
    np.testing.assert_array_equal(back.dynamics.matrix, spec.dynamics.matrix)
    cont = FscSpec((e1, e2), ContinuousDynamics(gilbert_elliott_generator(a, b)))
    assert not FscSpec.from_json(cont.to_json()).is_discrete


@given(st.lists(st.floats(0.0, 30.0), min_size=6, max_size=6))
def test_expm_matches_scipy(off):
    Q = np.zeros((3, 3))
    Q[~np.eye(3, dtype=bool)] = off
    Q -= np.diag(Q.sum(axis=1))
    np.testing.assert_allclose(expm_taylor(Q), scipy.linalg.expm(Q), atol=1e-12)


@given(rates, rates, st.integers(1, 500))
def test_sampled_chain_closed_form(mu, xi, N):
    a, b = sampled_two_state(mu, xi, N)
    P = transition_matrix_from_generator(gilbert_elliott_generator(mu, xi), N)
    np.testing.assert_allclose(P, [[1 - a, a], [b, 1 - b]], atol=1e-13)


@given(rates, rates, st.integers(20, 500))
def test_generator_inversion_round_trip(mu, xi, N):
    a, b = sampled_two_state(mu, xi, N)
    mu2, xi2 = generator_from_discrete(a, b, N)
    assert mu2 == pytest.approx(mu, rel=1e-9)
    assert xi2 == pytest.approx(xi, rel=1e-9)


def test_block_rates_conversions():
    mu, xi = block_generator_rates(0.0533, 0.08, 50, "log")
    # The rounded rates quoted alongside this channel are (2.8615, 4.2955).
    assert mu == pytest.approx(2.8615, rel=1e-3)
    assert xi == pytest.approx(4.2955, rel=1e-3)
    assert block_generator_rates(0.0533, 0.08, 50, "linear") == pytest.approx((2.665, 4.0))
    assert block_generator_rates(0.0533, 0.08, 50, "fixed", (4, 6)) == (4.0, 6.0)
    with pytest.raises(ChannelError):
        block_generator_rates(0.0533, 0.08, 50, "fixed")


@given(probs, probs)
def test_stationary_two_state_formula(a, b):
    pi = stationary_distribution(np.array([[1 - a, a], [b, 1 - b]]))
    np.testing.assert_allclose(pi, [b / (a + b), a / (a + b)], rtol=1e-10)


def test_stationary_rejects_reducible():
    with pytest.raises(ChannelError):
        stationary_distribution(np.eye(2))


def test_state_law_continuous_matches_discrete_limit():
    spec = FscSpec((0.01, 0.1), ContinuousDynamics(gilbert_elliott_generator(4.0, 6.0)))
    np.testing.assert_allclose(state_law(spec), [0.6, 0.4])


def test_uniformize_degenerate():
    chain = uniformize(np.zeros((2, 2)))
    assert chain.degenerate and chain.sigma == 0.0
    chain = uniformize(gilbert_elliott_generator(2.0, 5.0))
    np.testing.assert_allclose(chain.A, [[0.6, 0.4], [1.0, 0.0]])


def test_capacity_closed_form():
    h = lambda p: -p * math.log2(p) - (1 - p) * math.log2(1 - p)
    pi1 = 0.08 / (0.0533 + 0.08)
    expected = 1 - pi1 * h(0.01) - (1 - pi1) * h(0.1)
    assert csi_capacity(build_gilbert_elliott(0.0533, 0.08, 0.01, 0.1)) == pytest.approx(expected, abs=1e-14)
