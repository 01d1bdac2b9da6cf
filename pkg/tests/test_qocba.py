import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qinfer import fixtures
from qinfer.errors import AssumptionError, InfeasibleError, UnvisitedPairsError
from qinfer.estimation import collect_trajectory
from qinfer.inference import delta_q_variance, q_covariance
from qinfer.mdp import TabularMdp, extended_transition, stationary_distribution
from qinfer.qocba import (
    balance_residual,
    chi_cost_coefficients,
    compute_cost_coefficients,
    minmax_inverse_allocation,
    policy_from_allocation,
    run_qocba,
    solve_chi_allocation,
    solve_qocba_allocation,
)
from qinfer.riverswim import build_riverswim


def one_state(m_a):
    return np.ones((1, m_a, 1))


def stationary_of(model, pi):
    return stationary_distribution(extended_transition(model, pi)).reshape(pi.shape)


def test_policy_from_allocation_examples():
    c = fixtures.load("fix_c")
    np.testing.assert_allclose(policy_from_allocation(np.full((2, 1), 0.5)), np.ones((2, 1)))
    np.testing.assert_allclose(policy_from_allocation(np.array([[0.6, 0.4]])), [[0.6, 0.4]])
    assert balance_residual(np.full((2, 1), 0.5), c.transition) < 1e-15
    with pytest.raises(ValueError):
        policy_from_allocation(np.array([[0.0, 0.0], [0.5, 0.5]]))


def test_lemma1_both_directions(riverswim6):
    rng = np.random.default_rng(0)
    for _ in range(100):
        pi = rng.dirichlet(np.ones(2), size=6)
        w = stationary_of(riverswim6, pi)
        assert balance_residual(w, riverswim6.transition) < 1e-8
        back = stationary_of(riverswim6, policy_from_allocation(w))
        assert np.abs(back - w).max() < 1e-8


def test_closed_form_two_coordinates():
    alloc = minmax_inverse_allocation(np.array([[4.0, 1.0]]), one_state(2))
    np.testing.assert_allclose(alloc.w.ravel(), [2 / 3, 1 / 3], atol=1e-4)
    assert alloc.objective == pytest.approx(9.0, rel=1e-4)


def test_equal_costs_split_evenly():
    alloc = minmax_inverse_allocation(np.array([[1.0, 1.0]]), one_state(2))
    np.testing.assert_allclose(alloc.w.ravel(), [0.5, 0.5], atol=1e-4)


def test_chi_allocation_single_state():
    a = fixtures.load("fix_a")
    alloc = solve_chi_allocation(a.reward_mean, [[1.0]], a.transition, a.gamma)
    np.testing.assert_allclose(alloc.w, [[1.0]])
    # action 1 optimal; action 0 never enters the chi variance, so it sits at the floor
    eta = 1e-3
    alloc = solve_chi_allocation([[0.0, 1.0]], [[0.0, 1.0]], one_state(2), 0.5, eta=eta)
    assert alloc.w[0, 0] == pytest.approx(eta, abs=1e-5)
    assert alloc.w[0, 1] == pytest.approx(1 - eta, abs=1e-5)


def test_noise_free_model_has_zero_coefficients():
    p = np.zeros((2, 2, 2))
    p[:, 0, 0] = 1.0
    p[:, 1, 1] = 1.0
    coeffs = compute_cost_coefficients(p, np.zeros((2, 2)), 0.9, [[1.0, 0.0], [0.0, 2.0]])
    assert np.all(coeffs.c == 0.0)


def test_coefficient_identity_on_fix_d(fix_d):
    coeffs = compute_cost_coefficients(fix_d.transition, fix_d.reward_var, fix_d.gamma, fix_d.reward_mean)
    rng = np.random.default_rng(8)
    for _ in range(10):
        w = rng.dirichlet(np.ones(6)).reshape(3, 2)
        sig = q_covariance(fix_d.reward_mean, fix_d.reward_var, fix_d.transition, w, fix_d.gamma).sigma
        for r, (i, j) in enumerate(coeffs.pairs):
            ref = delta_q_variance(sig, i, int(coeffs.best[i]), j, 2)
            assert abs(coeffs.variance(w)[r] - ref) <= 1e-10 * max(1.0, ref)


def test_chi_coefficients_match_value_covariance(fix_d):
    from qinfer.inference import v_covariance

    c = chi_cost_coefficients(fix_d.transition, fix_d.reward_var, fix_d.gamma, fix_d.reward_mean, fix_d.rho)
    w = np.random.default_rng(1).dirichlet(np.ones(6)).reshape(3, 2)
    _, chi_var = v_covariance(fix_d.reward_mean, fix_d.reward_var, fix_d.transition, w, fix_d.gamma, fix_d.rho)
    assert (c / w.ravel()).sum() == pytest.approx(chi_var, rel=1e-10)


def test_non_unique_argmax_rejected():
    with pytest.raises(AssumptionError):
        compute_cost_coefficients(one_state(2), [[1.0, 1.0]], 0.5, [[1.0, 1.0]])


def riverswim_rl3_coeffs():
    env = build_riverswim(m_s=6, r_l=3.0, noise_var=1.0)
    return env, compute_cost_coefficients(env.transition, env.reward_var, env.gamma, env.reward_mean)


def test_random_search_dominance():
    env, coeffs = riverswim_rl3_coeffs()
    alloc = solve_qocba_allocation(coeffs, env.transition)
    assert balance_residual(alloc.w, env.transition) < 1e-8 and alloc.w.min() >= alloc.eta
    weighted = coeffs.weighted()
    rng = np.random.default_rng(3)
    best_random = np.inf
    for _ in range(10_000):
        # policies concentrated near the corners reach the extremes of the polytope
        pi = rng.dirichlet(np.full(2, rng.choice([0.2, 1.0, 5.0])), size=6)
        pi = np.clip(pi, 1e-4, None)
        pi /= pi.sum(axis=1, keepdims=True)
        w = stationary_distribution(extended_transition(env, pi), allow_zero=True)
        if w.min() < alloc.eta:
            continue
        best_random = min(best_random, float((weighted @ (1.0 / w.ravel())).max()))
    assert alloc.objective <= best_random * (1 + 1e-4)


def grid_minimum_two_state(cost, p, eta, step=1e-3):
    """Exhaustive search over (w00, w01); w10 and w11 follow from the equalities."""
    g = np.arange(step, 1.0, step)
    w00, w01 = np.meshgrid(g, g, indexing="ij")
    m0 = w00 + w01
    m1 = 1.0 - m0
    # state-0 balance: m0 = sum_k w_k P(0|k), with w10 = m1 - w11
    num = m0 - w00 * p[0, 0, 0] - w01 * p[0, 1, 0] - m1 * p[1, 0, 0]
    w11 = num / (p[1, 1, 0] - p[1, 0, 0])
    w10 = m1 - w11
    w = np.stack([w00, w01, w10, w11], axis=-1)
    ok = np.all(w >= eta, axis=-1)
    val = np.max(np.einsum("rk,...k->...r", cost, 1.0 / np.where(ok[..., None], w, 1.0)), axis=-1)
    return float(val[ok].min())


def grid_minimum_one_state(cost, eta, step=1e-3):
    g = np.arange(step, 1.0, step)
    pts = [(x, y, 1 - x - y) for x in g for y in g if 1 - x - y >= eta]
    w = np.array(pts)
    return float(np.max((1.0 / w) @ cost.T, axis=1).min())


def test_grid_certificate_two_states():
    rng = np.random.default_rng(11)
    for _ in range(5):
        p = rng.dirichlet(np.ones(2), size=(2, 2))
        cost = rng.uniform(0.1, 2.0, size=(3, 4))
        alloc = minmax_inverse_allocation(cost, p, eta=1e-6)
        grid = grid_minimum_two_state(cost, p, 1e-6)
        assert alloc.objective <= grid * (1 + 1e-4)
        assert abs(alloc.objective - grid) <= 1e-3 * grid


def test_grid_certificate_three_actions():
    rng = np.random.default_rng(12)
    for _ in range(3):
        cost = rng.uniform(0.1, 2.0, size=(2, 3))
        alloc = minmax_inverse_allocation(cost, one_state(3), eta=1e-6)
        grid = grid_minimum_one_state(cost, 1e-6, step=2e-3)
        assert alloc.objective <= grid * (1 + 1e-4)
        assert abs(alloc.objective - grid) <= 1e-3 * grid


def test_scaling_invariance_and_monotone_history():
    env, coeffs = riverswim_rl3_coeffs()
    a1 = minmax_inverse_allocation(coeffs.weighted(), env.transition)
    a2 = minmax_inverse_allocation(7.5 * coeffs.weighted(), env.transition)
    np.testing.assert_allclose(a1.w, a2.w, atol=1e-4)
    assert a2.objective == pytest.approx(7.5 * a1.objective, rel=1e-4)
    hist = np.array(a1.history)
    assert np.all(np.diff(hist) <= 1e-12 * hist[0])


def test_infeasible_floor():
    with pytest.raises(InfeasibleError):
        minmax_inverse_allocation(np.array([[1.0, 1.0]]), one_state(2), eta=0.6)
    # the floor is below 1/N but the balance equations cap the rarest pair
    p = np.zeros((2, 2, 2))
    p[:, :, 0] = 0.95
    p[:, :, 1] = 0.05
    with pytest.raises(InfeasibleError):
        minmax_inverse_allocation(np.ones((1, 4)), p, eta=0.2)


def test_run_qocba_k1_is_pure_exploration(riverswim6):
    pi0 = np.full((6, 2), 0.5)
    run = run_qocba(riverswim6, 1, [2000], pi0, seed=4)
    ref = collect_trajectory(riverswim6, pi0, 2000, seed=4)
    assert np.array_equal(run.data.s, ref.s) and np.array_equal(run.data.a, ref.a)
    assert run.allocations == []


def test_run_qocba_two_stages_pools_data_and_is_deterministic():
    env = build_riverswim(m_s=6, r_l=2.0, noise_var=1.0)
    pi0 = np.tile([0.2, 0.8], (6, 1))
    r1 = run_qocba(env, 2, [3000, 7000], pi0, seed=9)
    r2 = run_qocba(env, 2, [3000, 7000], pi0, seed=9)
    assert r1.data.n == 10_000
    assert np.array_equal(r1.data.s, r2.data.s)
    assert len(r1.allocations) == 1
    np.testing.assert_allclose(r1.policies[1], r1.allocations[0].policy)
    assert r1.report is not None and r1.report.inputs["n"] == 10_000


def test_run_qocba_unvisited_after_warm_up(riverswim6):
    left = np.tile([1.0, 0.0], (6, 1))
    with pytest.raises(UnvisitedPairsError, match="longer first batch"):
        run_qocba(riverswim6, 2, [100, 100], left, seed=0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m_s=st.integers(1, 3), m_a=st.integers(1, 3))
def test_solution_is_admissible_and_no_worse_than_start(seed, m_s, m_a):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(m_s), size=(m_s, m_a))
    cost = rng.uniform(0.0, 1.0, size=(2, m_s * m_a))
    alloc = minmax_inverse_allocation(cost, p)
    assert balance_residual(alloc.w, p) < 1e-8
    assert alloc.w.min() >= alloc.eta * (1 - 1e-9)
    uniform = stationary_of(TabularMdp(p, np.zeros((m_s, m_a)), 0.5), np.full((m_s, m_a), 1 / m_a))
    assert alloc.objective <= float((cost @ (1 / uniform.ravel())).max()) * (1 + 1e-6)
