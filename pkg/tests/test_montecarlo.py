import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact.bounds import CodeParams
from artifact.channel import build_gilbert_elliott
from artifact.exact import DecoderRule, failure_matrix_exact
from artifact.montecarlo import (
    SimConfig,
    _lindley,
    coupled_dominance_experiment,
    enumerate_occupancy_exact,
    simulate_queue,
    simulate_random_code_failure,
)
from artifact.queueing import SuccessMatrix, TrafficSpec, completion_probability, queue_tail

P = np.array([[0.7, 0.3], [0.45, 0.55]])
FAIL = np.array([[0.02, 0.05], [0.1, 0.2]])


@given(st.lists(st.integers(-3, 3), min_size=1, max_size=60), st.integers(0, 5))
def test_lindley_closed_form_matches_loop(steps, q0):
    q, expected = q0, []
    for x in steps:
        q = max(q + x, 0)
        expected.append(q)
    np.testing.assert_array_equal(_lindley(np.array(steps), q0), expected)


def test_enumeration_sums_to_matrix_power():
    law = enumerate_occupancy_exact(0.2, 0.4, 6)
    Pm = np.array([[0.8, 0.2], [0.4, 0.6]])
    np.testing.assert_allclose(law.table.sum(axis=0), np.linalg.matrix_power(Pm, 6), atol=1e-15)
    with pytest.raises(ValueError):
        enumerate_occupancy_exact(0.2, 0.4, 20)


def test_code_simulation_is_reproducible_and_consistent():
    spec = build_gilbert_elliott(0.2, 0.3, 0.01, 0.1)
    rule = DecoderRule.md(1.0)
    cfg = SimConfig(seed=11, trials=40_000)
    f1, u1 = simulate_random_code_failure(spec, 6, 8, rule, cfg)
    f2, _ = simulate_random_code_failure(spec, 6, 8, rule, cfg)
    np.testing.assert_array_equal(f1.value, f2.value)
    exact = failure_matrix_exact(spec, CodeParams(6, 0.5), rule)
    z = (f1.value - exact) / f1.stderr
    assert np.all(np.abs(z) < 4.5), z
    assert np.all(u1.value <= f1.value)


def test_queue_simulation_matches_analytic_tail():
    success = SuccessMatrix.from_failure(P, FAIL)
    traffic = TrafficSpec(0.02, 0.3)
    rho_r = completion_probability(0.3, 0.5, 10)
    sim = simulate_queue(success, traffic, rho_r, 10, 2_000_000, SimConfig(seed=3), q_max=4)  # 20 batches
    for q in range(5):
        exact = queue_tail(success, traffic, 0.5, 10, q).tail
        assert abs(sim.tail[q] - exact) <= 4.5 * sim.stderr[q] + 1e-4, (q, sim.tail[q], exact)


def test_dominance_experiment():
    exact = SuccessMatrix.from_failure(P, FAIL)
    bound = SuccessMatrix.from_failure(P, FAIL * 1.5, "bound")
    traffic = TrafficSpec(0.02, 0.3)
    rho_r = completion_probability(0.3, 0.5, 10)
    rep = coupled_dominance_experiment(exact, bound, traffic, rho_r, 10, 200_000, SimConfig(seed=5), q_max=4)
    assert rep.violations == 0
    assert np.all(rep.bound_tail >= rep.exact_tail)
    with pytest.raises(ValueError):
        coupled_dominance_experiment(bound, exact, traffic, rho_r, 10, 1000, SimConfig())
