import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qinfer import fixtures
from qinfer.approx import (
    approx_fixed_point,
    approx_q_covariance,
    approx_solve_q,
    interp_jacobian,
    representative_states,
)
from qinfer.baselines import random_explore_policy
from qinfer.estimation import collect_trajectory, empirical_model
from qinfer.inference import q_covariance
from qinfer.mdp import TabularMdp, bellman_apply, extended_transition, solve_q, stationary_distribution
from qinfer.riverswim import build_riverswim
from qinfer.rng import make_rng

from conftest import rel_frobenius


def stationary_w(model, pi):
    return stationary_distribution(extended_transition(model, pi)).reshape(pi.shape)


def test_interpolation_weights():
    gmap = interp_jacobian(6, 2, (0, 1, 4, 5))
    np.testing.assert_allclose(gmap.weights[2], [0, 2 / 3, 1 / 3, 0])
    np.testing.assert_allclose(gmap.weights[4], [0, 0, 1, 0])


def test_structural_scan_31_states():
    gmap = interp_jacobian(31, 2, representative_states(31, stride=3))
    assert gmap.s0 == tuple(range(0, 31, 3))
    np.testing.assert_allclose(gmap.weights.sum(axis=1), 1.0)
    assert (gmap.weights != 0).sum(axis=1).max() <= 2
    assert gmap.is_nonexpansive()
    assert gmap.jacobian.shape == (62, 22)


def test_knots_must_cover_boundaries():
    with pytest.raises(ValueError):
        representative_states(6, states=[1, 5])
    with pytest.raises(ValueError):
        representative_states(6, states=[0, 3])
    assert representative_states(7, stride=3) == (0, 3, 6)
    assert representative_states(6, stride=3) == (0, 3, 5)


def test_full_knot_set_reproduces_exact_solution(riverswim6):
    gmap = interp_jacobian(6, 2, range(6))
    q_m, _ = approx_solve_q(riverswim6, gmap, tol=1e-12)
    np.testing.assert_allclose(q_m, solve_q(riverswim6, tol=1e-12), atol=1e-9)
    a = fixtures.load("fix_a")
    q_a, _ = approx_solve_q(a, interp_jacobian(1, 1, (0,)))
    assert q_a[0, 0] == pytest.approx(2.0, abs=1e-9)


def test_riverswim31_matches_long_plain_iteration():
    env = build_riverswim(m_s=31)
    gmap = interp_jacobian(31, 2, representative_states(31, stride=3))
    tol = 1e-9
    q_m, _ = approx_solve_q(env, gmap, tol=tol)
    step = lambda q: gmap.apply(bellman_apply(q, env)[list(gmap.s0)])  # noqa: E731
    assert np.abs(step(q_m) - q_m).max() < tol
    q = np.zeros((31, 2))
    for _ in range(1_000_000):
        nxt = step(q)
        if np.array_equal(nxt, q):
            break
        q = nxt
    np.testing.assert_allclose(q_m, q, atol=1e-8)


def test_full_knot_covariance_equals_exact(riverswim6):
    env = build_riverswim(m_s=6, noise_var=1.0)
    w = stationary_w(env, random_explore_policy(0.8, 6))
    gmap = interp_jacobian(6, 2, range(6))
    sig_m, _ = approx_q_covariance(env.reward_mean, env.reward_var, env.transition, w, env.gamma, gmap)
    sig = q_covariance(env.reward_mean, env.reward_var, env.transition, w, env.gamma).sigma
    assert np.abs(sig_m - sig).max() <= 1e-10 * np.abs(sig).max()


def test_noise_free_covariance_vanishes():
    p = np.zeros((4, 2, 4))
    for s in range(4):
        p[s, 0, max(s - 1, 0)] = 1.0
        p[s, 1, min(s + 1, 3)] = 1.0
    mu = np.zeros((4, 2))
    mu[3, 1] = 1.0
    mu[0, 0] = 0.3
    gmap = interp_jacobian(4, 2, (0, 2, 3))
    sig, _ = approx_q_covariance(mu, np.zeros((4, 2)), p, np.full((4, 2), 1 / 8), 0.9, gmap)
    assert np.abs(sig).max() == 0.0


def test_knot_jacobian_matches_finite_differences():
    env = build_riverswim(m_s=13)
    gmap = interp_jacobian(13, 2, representative_states(13, stride=3))
    q0, _ = approx_fixed_point(env.reward_mean, env.transition, env.gamma, gmap, tol=1e-13)
    w = np.full((13, 2), 1 / 26)
    # the covariance is J diag(noise / w) J^T with J the knot-reward Jacobian
    p_det = env.transition
    sig, _ = approx_q_covariance(env.reward_mean, np.ones((13, 2)), p_det, w, env.gamma, gmap)
    h = 1e-6
    cols = []
    for s in gmap.s0:
        for a in range(2):
            mu = env.reward_mean.copy()
            mu[s, a] += h
            up, _ = approx_fixed_point(mu, p_det, env.gamma, gmap, tol=1e-13)
            mu[s, a] -= 2 * h
            dn, _ = approx_fixed_point(mu, p_det, env.gamma, gmap, tol=1e-13)
            cols.append((up - dn).ravel() / (2 * h))
    jac = np.array(cols).T
    v = q0.max(axis=1)
    noise = env.gamma ** 2 * (p_det @ (v * v) - (p_det @ v) ** 2)
    d = (1.0 + noise[list(gmap.s0)].ravel()) / w[list(gmap.s0)].ravel()
    ref = (jac * d) @ jac.T
    assert rel_frobenius(sig, ref) < 1e-5


def test_covariance_matches_monte_carlo():
    env = build_riverswim(m_s=13)
    pi = random_explore_policy(0.85, 13)
    gmap = interp_jacobian(13, 2, representative_states(13, stride=3))
    w = stationary_w(env, pi)
    sig, _ = approx_q_covariance(env.reward_mean, env.reward_var, env.transition, w, env.gamma, gmap)
    n, reps = 100_000, 1000
    draws = []
    for r in range(reps):
        emp = empirical_model(collect_trajectory(env, pi, n, make_rng(31, r)))
        q_hat, _ = approx_fixed_point(emp.mu_hat, emp.p_hat, env.gamma, gmap, tol=1e-10)
        draws.append(q_hat.ravel())
    assert rel_frobenius(np.cov(np.array(draws).T), sig / n) < 0.15


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m_s=st.integers(2, 12))
def test_interpolation_is_nonexpansive(seed, m_s):
    rng = np.random.default_rng(seed)
    inner = sorted(rng.choice(np.arange(1, m_s - 1), size=rng.integers(0, m_s - 1), replace=False)) \
        if m_s > 2 else []
    gmap = interp_jacobian(m_s, 2, [0, *inner, m_s - 1])
    y1, y2 = rng.normal(size=(2, len(gmap.s0), 2)) * 5
    assert np.abs(gmap.apply(y1) - gmap.apply(y2)).max() <= np.abs(y1 - y2).max() + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m_s=st.integers(2, 8))
def test_fixed_point_residual_on_random_models(seed, m_s):
    rng = np.random.default_rng(seed)
    model = TabularMdp(rng.dirichlet(np.ones(m_s), size=(m_s, 2)), rng.normal(size=(m_s, 2)), 0.9)
    gmap = interp_jacobian(m_s, 2, [0, m_s - 1])
    q_m, y = approx_solve_q(model, gmap, tol=1e-10)
    np.testing.assert_allclose(gmap.apply(y), q_m)
    assert np.abs(gmap.apply(bellman_apply(q_m, model)[list(gmap.s0)]) - q_m).max() < 1e-10
