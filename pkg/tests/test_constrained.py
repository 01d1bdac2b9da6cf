import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qinfer import fixtures
from qinfer.constrained import (
    ConstrainedMdp,
    constrained_value,
    constrained_value_covariance,
    occupancy_lp,
    split_policy_from_occupancy,
)
from qinfer.errors import DegenerateError, InfeasibleError
from qinfer.inference import fixed_policy_covariance
from qinfer.mdp import TabularMdp, chi, extended_transition, policy_value, solve_q, stationary_distribution

from conftest import rel_frobenius


def uniform_w(cm):
    pi = np.full((cm.m_s, cm.m_a), 1.0 / cm.m_a)
    return stationary_distribution(extended_transition(cm.base, pi)).reshape(cm.m_s, cm.m_a)


def test_infinite_budget_matches_unconstrained(fix_e):
    cm = fix_e.with_budget(np.inf)
    sol = occupancy_lp(cm)
    v = solve_q(cm.base, tol=1e-12).max(axis=1)
    # unnormalized occupancies: the LP value is chi* itself
    assert sol.objective == pytest.approx(chi(v, cm.base.rho), abs=1e-9)
    assert not split_policy_from_occupancy(sol).randomized


def test_single_state_zero_budget():
    base = TabularMdp(np.ones((1, 2, 1)), [[0.0, 1.0]], 0.5)
    cm = ConstrainedMdp(base, [[1.0, 0.0]], 0.0)
    sol = occupancy_lp(cm)
    assert sol.x[0, 0] == pytest.approx(0.0) and sol.x[0, 1] == pytest.approx(2.0)
    # reward is earned only by action 1, which is the free one here
    assert sol.objective == pytest.approx(2.0)
    cm = ConstrainedMdp(TabularMdp(np.ones((1, 2, 1)), [[0.0, 1.0]], 0.5), [[0.0, 1.0]], 0.0)
    sol = occupancy_lp(cm)
    assert sol.x[0, 0] == pytest.approx(2.0) and sol.x[0, 1] == pytest.approx(0.0)
    assert sol.objective == pytest.approx(0.0)


def test_infeasible_budget(fix_e):
    with pytest.raises(InfeasibleError, match="no feasible policy"):
        occupancy_lp(fix_e.with_budget(-1.0))


def test_split_policy_examples():
    split = split_policy_from_occupancy(np.array([[1.0, 0.0], [0.0, 2.0]]))
    assert not split.randomized and split.s_r is None
    x = np.array([[1.0, 0.0], [0.0, 1.0], [0.3, 0.7]])
    split = split_policy_from_occupancy(x)
    assert split.s_r == 2 and split.alpha == pytest.approx(0.3)
    with pytest.raises(DegenerateError):
        split_policy_from_occupancy(np.array([[0.5, 0.5], [0.5, 0.5]]))


def test_binding_fixture(fix_e):
    v, split, sol = constrained_value(fix_e)
    assert sol.binding and split.randomized
    assert int((split.policy > 0).sum(axis=1).max()) == 2
    assert ((split.policy > 0).sum(axis=1) > 1).sum() == 1
    cost = policy_value(fix_e.base, split.policy, reward=fix_e.cost_mean)
    assert abs(fix_e.base.rho @ cost - fix_e.budget) < 1e-8
    assert chi(v, fix_e.base.rho) == pytest.approx(sol.objective, abs=1e-9)


def test_non_binding_reduces_to_fixed_policy(fix_e):
    slack = fixtures.load("fix_e_slack")
    v, split, sol = constrained_value(slack)
    assert not sol.binding and not split.randomized
    w = uniform_w(slack)
    b = slack.base
    ref = fixed_policy_covariance(b.reward_mean, b.reward_var, b.transition, w, b.gamma, split.policy)
    assert np.array_equal(constrained_value_covariance(slack, split, w), ref)


def test_zero_value_sensitivity_drops_correction():
    """Two actions with equal rewards and moves: only the cost differs, q_V = 0."""
    p = np.array([[[0.6, 0.4], [0.6, 0.4]], [[0.3, 0.7], [0.5, 0.5]]])
    mu = np.array([[1.0, 1.0], [0.5, 2.0]])
    base = TabularMdp(p, mu, 0.9, reward_var=np.full((2, 2), 0.5), reward_family="gaussian")
    cm = ConstrainedMdp(base, [[0.0, 2.0], [0.5, 0.5]], 1.0, np.full((2, 2), 0.2), "gaussian")
    pi = np.array([[0.4, 0.6], [0.0, 1.0]])
    from qinfer.constrained import SplitPolicy

    split = SplitPolicy(pi, 0, 0, 1, 0.4)
    w = uniform_w(cm)
    plain = fixed_policy_covariance(mu, base.reward_var, p, w, 0.9, pi)
    np.testing.assert_allclose(constrained_value_covariance(cm, split, w), plain, rtol=1e-10, atol=1e-12)


def test_case2_matches_finite_difference_delta_method(fix_e):
    """J Sigma J^T from the closed form equals the same sandwich with a numerical Jacobian."""
    v0, split, _ = constrained_value(fix_e)
    base = fix_e.base
    m_s, m_a = 2, 2
    n = m_s * m_a
    theta0 = np.concatenate([base.reward_mean.ravel(), fix_e.cost_mean.ravel(), base.transition.ravel()])

    def value(theta):
        mu = theta[:n].reshape(m_s, m_a)
        mc = theta[n:2 * n].reshape(m_s, m_a)
        p = theta[2 * n:].reshape(m_s, m_a, m_s)
        b = TabularMdp(p, mu, base.gamma, base.rho, validate=False)
        return constrained_value(ConstrainedMdp(b, mc, fix_e.budget))[0]

    h = 1e-6
    jac = np.empty((m_s, theta0.size))
    for k in range(theta0.size):
        up, dn = theta0.copy(), theta0.copy()
        up[k] += h
        dn[k] -= h
        jac[:, k] = (value(up) - value(dn)) / (2 * h)
    w = uniform_w(fix_e).ravel()
    d_p = np.zeros((n * m_s, n * m_s))
    for k in range(n):
        row = base.transition.reshape(n, m_s)[k]
        d_p[k * m_s:(k + 1) * m_s, k * m_s:(k + 1) * m_s] = (np.diag(row) - np.outer(row, row)) / w[k]
    cov = np.zeros((theta0.size, theta0.size))
    cov[:n, :n] = np.diag(base.reward_var.ravel() / w)
    cov[n:2 * n, n:2 * n] = np.diag(fix_e.cost_var.ravel() / w)
    cov[2 * n:, 2 * n:] = d_p
    ref = jac @ cov @ jac.T
    got = constrained_value_covariance(fix_e, split, w)
    assert rel_frobenius(got, ref) < 1e-4


def test_case2_matches_monte_carlo(fix_e, fix_e_mc):
    _, split, _ = constrained_value(fix_e)
    sig = constrained_value_covariance(fix_e, split, uniform_w(fix_e))
    assert rel_frobenius(np.cov(fix_e_mc["v"].T), sig / fix_e_mc["n"]) < 0.15


def test_degenerate_mixing_sensitivity(fix_e):
    from qinfer.constrained import SplitPolicy

    cm = ConstrainedMdp(fix_e.base, np.ones((2, 2)), 5.0, np.zeros((2, 2)))
    split = SplitPolicy(np.array([[0.5, 0.5], [1.0, 0.0]]), 0, 0, 1, 0.5)
    with pytest.raises(DegenerateError, match="mixing sensitivity degenerate"):
        constrained_value_covariance(cm, split, uniform_w(cm))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m_s=st.integers(1, 4), m_a=st.integers(2, 3),
       frac=st.floats(0.0, 1.0))
def test_optimal_occupancy_is_a_split_policy(seed, m_s, m_a, frac):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(m_s), size=(m_s, m_a))
    base = TabularMdp(p, rng.uniform(0, 1, size=(m_s, m_a)), 0.9)
    cost = rng.uniform(0, 1, size=(m_s, m_a))
    lo = ConstrainedMdp(base, cost, np.inf)
    # budget between the cheapest achievable cost and the unconstrained optimum's cost
    cheapest = occupancy_lp(ConstrainedMdp(TabularMdp(p, -cost, 0.9), cost, np.inf)).cost
    free = occupancy_lp(lo).cost
    budget = cheapest + frac * max(free - cheapest, 0.0) + 1e-9
    sol = occupancy_lp(lo.with_budget(budget))
    split = split_policy_from_occupancy(sol)
    assert ((split.policy > 0).sum(axis=1) > 1).sum() <= 1
    assert sol.cost <= budget + 1e-8
    v = policy_value(base, split.policy)
    assert chi(v, base.rho) == pytest.approx(sol.objective, abs=1e-8)
