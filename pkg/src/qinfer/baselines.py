"""Benchmark exploration agents: random exploration, epsilon-greedy and PSRL.

Every agent exposes ``explore(env, warm, n, rng)``: given the warm-start
dataset it continues the trajectory from ``warm.last_state`` for ``n`` more
steps and returns only the new records.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .estimation import TrajectoryDataset, collect_trajectory, empirical_model
from .mdp import TabularMdp, greedy_policy, solve_q
from .rng import make_rng


def random_explore_policy(p_right, m_s: int | None = None) -> np.ndarray:
    """Two-action policy playing action 1 with ``p_right`` everywhere, or a full policy table."""
    arr = np.asarray(p_right, dtype=float)
    if arr.ndim == 0:
        if m_s is None:
            raise ValueError("m_s is required for a scalar p_right")
        if not 0.0 <= arr <= 1.0:
            raise ValueError(f"p_right must lie in [0, 1], got {float(arr)}")
        return np.tile([1.0 - float(arr), float(arr)], (m_s, 1))
    if arr.ndim != 2 or np.any(arr < 0) or np.any(np.abs(arr.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("policy table rows must be probability vectors")
    return arr.copy()


def eps_greedy_policy(q, eps: float) -> np.ndarray:
    """Stationary form of epsilon-greedy: ``(1 - eps) greedy + eps uniform``."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    pi, _ = greedy_policy(q)
    return (1.0 - eps) * pi + eps / pi.shape[1]


def eps_greedy_step(q, s: int, eps: float, rng) -> int:
    """One epsilon-greedy action (greedy ties go to the lowest index)."""
    q = np.asarray(q, dtype=float)
    if rng.random() < eps:
        return int(rng.integers(q.shape[1]))
    return int(np.argmax(q[s]))


def imputed_q(data: TrajectoryDataset, gamma: float, rho=None) -> np.ndarray:
    """Plug-in Q-table with unvisited pairs imputed as zero reward and uniform moves.

    Only used internally by agents that need a Q estimate before every pair
    has been seen.
    """
    emp = empirical_model(data)
    mu = np.nan_to_num(emp.mu_hat, nan=0.0)
    p = emp.p_hat.copy()
    missing = np.isnan(p).any(axis=2)
    p[missing] = 1.0 / data.m_s
    return solve_q(TabularMdp(p, mu, gamma, rho, validate=False), tol=1e-8)


@dataclass
class RandomExplore:
    policy: np.ndarray

    def explore(self, env: TabularMdp, warm: TrajectoryDataset, n: int, rng) -> TrajectoryDataset:
        return collect_trajectory(env, self.policy, n, rng, s0=warm.last_state)


@dataclass
class EpsGreedy:
    """Epsilon-greedy on the plug-in Q, re-solved after every ``refresh`` share of the budget."""

    eps: float
    refresh: float = 0.1

    def explore(self, env: TabularMdp, warm: TrajectoryDataset, n: int, rng) -> TrajectoryDataset:
        chunk = max(1, int(round(self.refresh * n)))
        data, new, done = warm, None, 0
        while done < n:
            step = min(chunk, n - done)
            pi = eps_greedy_policy(imputed_q(data, env.gamma, env.rho), self.eps)
            part = collect_trajectory(env, pi, step, rng, s0=data.last_state)
            new = part if new is None else new.concat(part)
            data = data.concat(part)
            done += step
        return new


@dataclass
class Psrl:
    """Posterior sampling with Dirichlet transition rows and Normal reward means.

    The reward observation variance is treated as known (``noise_var``,
    floored at 1e-6); the prior on each mean is ``N(prior_mean, prior_var)``.
    Posterior parameters depend on the data only through counts and sums, so
    updates are exchangeable.
    """

    m_s: int
    m_a: int
    episodes: int = 100
    prior_count: float = 1.0
    prior_mean: float = 0.0
    prior_var: float = 100.0
    noise_var: np.ndarray | float = 1.0
    alpha: np.ndarray = field(init=False)
    r_sum: np.ndarray = field(init=False)
    visits: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.prior_count <= 0 or self.prior_var <= 0:
            raise ValueError("prior_count and prior_var must be positive")
        self.noise_var = np.maximum(np.broadcast_to(np.asarray(self.noise_var, dtype=float),
                                                    (self.m_s, self.m_a)), 1e-6)
        self.alpha = np.full((self.m_s, self.m_a, self.m_s), float(self.prior_count))
        self.r_sum = np.zeros((self.m_s, self.m_a))
        self.visits = np.zeros((self.m_s, self.m_a))

    def update(self, data: TrajectoryDataset) -> "Psrl":
        if (data.m_s, data.m_a) != (self.m_s, self.m_a):
            raise DimensionError("dataset does not match the agent's MDP shape")
        st = data._sufficient()
        self.alpha = self.alpha + st["trans"]
        self.r_sum = self.r_sum + st["r_sum"]
        self.visits = self.visits + st["visits"]
        return self

    def posterior_reward(self):
        """Posterior mean and variance of each reward mean."""
        prec = 1.0 / self.prior_var + self.visits / self.noise_var
        mean = (self.prior_mean / self.prior_var + self.r_sum / self.noise_var) / prec
        return mean, 1.0 / prec

    def sample(self, gamma: float, rng, rho=None) -> TabularMdp:
        g = rng.standard_gamma(self.alpha)
        p = g / g.sum(axis=2, keepdims=True)
        mean, var = self.posterior_reward()
        mu = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
        return TabularMdp(p, mu, gamma, rho, validate=False)

    def explore(self, env: TabularMdp, warm: TrajectoryDataset, n: int, rng) -> TrajectoryDataset:
        self.update(warm)
        k = max(1, min(self.episodes, n))
        lengths = np.full(k, n // k)
        lengths[: n % k] += 1
        new, s0 = None, warm.last_state
        for length in lengths:
            part = psrl_episode(self, env, int(length), rng, s0)
            new = part if new is None else new.concat(part)
            s0 = part.last_state
        return new


def psrl_episode(agent: Psrl, env: TabularMdp, episode_length: int, rng, s0: int | None = None):
    """Sample a model, act greedily on it for one episode, then update the posterior."""
    rng = make_rng(rng)
    sampled = agent.sample(env.gamma, rng, env.rho)
    pi, _ = greedy_policy(solve_q(sampled, tol=1e-8))
    data = collect_trajectory(env, pi, episode_length, rng, s0=s0)
    agent.update(data)
    return data
