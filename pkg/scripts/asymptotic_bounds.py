"""Large-sample predictions for the allocation experiments on RiverSwim(6).

Plugs the true parameters into the covariance formulas to predict
  * the probability of correct selection at budget n under a Gaussian
    approximation Q_hat ~ N(Q, Sigma(w) / n), for Q-OCBA and RE(p), and
  * the ratio of chi* CI lengths between the chi-variance allocation and RE(p).
"Pooled" rows mix a warm-start share of RE visits into the allocation, as the
two-stage protocol does.

    python scripts/asymptotic_bounds.py [--draws 200000] [--seed 0]
"""

import argparse

import numpy as np

from qinfer.baselines import random_explore_policy
from qinfer.inference import q_covariance, v_covariance
from qinfer.mdp import extended_transition, greedy_policy, solve_q, stationary_distribution
from qinfer.qocba import compute_cost_coefficients, solve_chi_allocation, solve_qocba_allocation
from qinfer.riverswim import build_riverswim


def stationary(env, policy):
    return stationary_distribution(extended_transition(env, policy)).reshape(env.m_s, env.m_a)


def pcs(env, w, n, draws, rng):
    q = solve_q(env, tol=1e-12)
    sig = q_covariance(env.reward_mean, env.reward_var, env.transition, w, env.gamma).sigma
    sample = rng.multivariate_normal(q.ravel(), sig / n, size=draws, method="eigh")
    best = greedy_policy(q)[0].argmax(axis=1)
    return float(np.mean(np.all(sample.reshape(draws, env.m_s, env.m_a).argmax(axis=2) == best, axis=1)))


def chi_sd(env, w):
    _, var = v_covariance(env.reward_mean, env.reward_var, env.transition, w, env.gamma, env.rho)
    return float(np.sqrt(var))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--draws", type=int, default=200_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--warm", type=float, default=0.3, help="warm-start share of the budget")
    args = parser.parse_args(argv)
    rng = np.random.default_rng(args.seed)

    env = build_riverswim(r_l=3.0)
    coeffs = compute_cost_coefficients(env.transition, env.reward_var, env.gamma, env.reward_mean)
    w_q = solve_qocba_allocation(coeffs, env.transition).w
    w_re = stationary(env, random_explore_policy(0.6, env.m_s))
    pooled = args.warm * w_re + (1 - args.warm) * w_q
    print("correct selection, r_L=3, n=1000 (Gaussian approximation)")
    for label, w in (("Q-OCBA", w_q), ("Q-OCBA pooled with RE(0.6) warm start", pooled), ("RE(0.6)", w_re)):
        print(f"  {label:<40} {pcs(env, w, 1000, args.draws, rng):.3f}")

    env = build_riverswim(r_l=2.0)
    w_chi = solve_chi_allocation(env.reward_mean, env.reward_var, env.transition, env.gamma, env.rho).w
    w_re = stationary(env, random_explore_policy(0.8, env.m_s))
    pooled = args.warm * w_re + (1 - args.warm) * w_chi
    base = chi_sd(env, w_re)
    print("chi* CI length relative to RE(0.8), r_L=2")
    print(f"  {'chi allocation':<40} {chi_sd(env, w_chi) / base:.3f}")
    print(f"  {'chi allocation pooled with warm start':<40} {chi_sd(env, pooled) / base:.3f}")


if __name__ == "__main__":
    main()
