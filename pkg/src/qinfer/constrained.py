"""Single-constraint MDPs: occupancy-measure LP, split policies and the
asymptotic covariance of the constrained optimal value.

The LP is written on unnormalized discounted occupancies ``x(s,a)``::

    max  sum mu_R x
    s.t. sum_a x(s,a) - gamma sum_{s',a} P(s|s',a) x(s',a) = rho(s)   for all s
         sum mu_C x <= budget,  x >= 0

so that ``sum mu_R x = sum_s rho(s) V^pi(s)`` and ``sum mu_C x = sum_s rho(s) L^pi(s)``
for the policy ``pi(a|s) = x(s,a) / sum_a x(s,a)``.

With a single constraint an optimal basic solution randomizes in at most one
state ``s_r`` between two actions. When the budget binds, the mixing weight
moves with the estimated parameters to keep the constraint tight, which adds
a rank-one correction to the fixed-policy covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DimensionError, InfeasibleError
from .inference import fixed_policy_covariance
from .lp import solve_lp
from .mdp import DETERMINISTIC, TabularMdp, _family_array, policy_matrix, policy_value

ZERO_TOL = 1e-10
BINDING_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class ConstrainedMdp:
    """A ``TabularMdp`` with a per-pair cost channel and a budget on ``sum rho L^pi``."""

    base: TabularMdp
    cost_mean: np.ndarray
    budget: float
    cost_var: np.ndarray | None = None
    cost_family: object = DETERMINISTIC

    def __post_init__(self):
        shape = (self.base.m_s, self.base.m_a)
        mean = np.asarray(self.cost_mean, dtype=float)
        var = np.zeros(shape) if self.cost_var is None else np.asarray(self.cost_var, dtype=float)
        if mean.shape != shape or var.shape != shape:
            raise DimensionError(f"cost mean/var must have shape {shape}")
        if np.any(var < 0):
            raise ValueError("cost variances must be non-negative")
        fam = _family_array(self.cost_family, shape)
        if np.any(var[fam == DETERMINISTIC] != 0):
            raise ValueError("deterministic costs must have zero variance")
        object.__setattr__(self, "cost_mean", mean)
        object.__setattr__(self, "cost_var", var)
        object.__setattr__(self, "cost_family", fam)
        object.__setattr__(self, "budget", float(self.budget))

    @property
    def m_s(self):
        return self.base.m_s

    @property
    def m_a(self):
        return self.base.m_a

    def with_budget(self, budget: float) -> "ConstrainedMdp":
        return ConstrainedMdp(self.base, self.cost_mean, budget, self.cost_var, self.cost_family)


@dataclass(frozen=True, eq=False)
class OccupancySolution:
    x: np.ndarray
    basis: tuple
    binding: bool
    objective: float
    cost: float


@dataclass(frozen=True, eq=False)
class SplitPolicy:
    """Deterministic everywhere except possibly ``s_r``, which plays ``a1``
    with probability ``alpha`` and ``a2`` otherwise (``a1 < a2``)."""

    policy: np.ndarray
    s_r: int | None = None
    a1: int | None = None
    a2: int | None = None
    alpha: float | None = None

    @property
    def randomized(self) -> bool:
        return self.s_r is not None


def occupancy_balance(p, gamma) -> np.ndarray:
    """``m_s x N`` matrix of the occupancy balance rows."""
    p = np.asarray(p, dtype=float)
    m_s, m_a = p.shape[:2]
    own = np.kron(np.eye(m_s), np.ones((1, m_a)))
    return own - gamma * p.reshape(m_s * m_a, m_s).T


def occupancy_lp(cm: ConstrainedMdp) -> OccupancySolution:
    """Optimal occupancy measure. An infinite budget drops the cost row."""
    base = cm.base
    a_eq = occupancy_balance(base.transition, base.gamma)
    kw = {}
    if np.isfinite(cm.budget):
        kw = {"a_ub": cm.cost_mean.ravel()[None, :], "b_ub": [cm.budget]}
    try:
        sol = solve_lp(base.reward_mean.ravel(), a_eq=a_eq, b_eq=base.rho, maximize=True, **kw)
    except InfeasibleError as exc:
        raise InfeasibleError(f"no feasible policy meets the cost budget {cm.budget}") from exc
    x = np.where(sol.x < ZERO_TOL, 0.0, sol.x)
    cost = float(cm.cost_mean.ravel() @ x)
    binding = bool(np.isfinite(cm.budget) and abs(cost - cm.budget) <= BINDING_TOL * max(1.0, abs(cm.budget)))
    return OccupancySolution(x.reshape(base.m_s, base.m_a), sol.basis, binding, sol.objective, cost)


def split_policy_from_occupancy(x) -> SplitPolicy:
    """``pi(a|s) = x(s,a) / sum_a x(s,a)`` plus the randomized state, if any.

    Raises ``DegenerateError`` when more than one state randomizes or a state
    mixes over more than two actions.
    """
    if isinstance(x, OccupancySolution):
        x = x.x
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionError("occupancy must have shape (m_s, m_a)")
    x = np.where(x < ZERO_TOL, 0.0, x)
    mass = x.sum(axis=1)
    if np.any(mass <= 0):
        raise ValueError("every state needs positive occupancy mass")
    pi = x / mass[:, None]
    support = (x > 0).sum(axis=1)
    mixed = np.flatnonzero(support > 1)
    if mixed.size == 0:
        return SplitPolicy(pi)
    if mixed.size > 1 or support[mixed[0]] > 2:
        raise DegenerateError(f"degenerate LP: randomization at states {mixed.tolist()} "
                              "(a single-constraint optimum randomizes in at most one state between two actions)")
    s_r = int(mixed[0])
    a1, a2 = (int(a) for a in np.flatnonzero(x[s_r] > 0))
    return SplitPolicy(pi, s_r, a1, a2, float(pi[s_r, a1]))


def mixing_sensitivity(mu, p, v, s_r, a1, a2, gamma, m_s) -> np.ndarray:
    """Derivative of ``r^pi + gamma P^pi V`` with respect to the mixing weight:
    supported at ``s_r`` with value ``mu(s_r,a1) - mu(s_r,a2) + gamma (P(.|s_r,a1) - P(.|s_r,a2)) V``."""
    q = np.zeros(m_s)
    q[s_r] = mu[s_r, a1] - mu[s_r, a2] + gamma * (p[s_r, a1] - p[s_r, a2]) @ v
    return q


def constrained_value_covariance(cm: ConstrainedMdp, split: SplitPolicy, w) -> np.ndarray:
    """Asymptotic covariance (``m_s x m_s``) of the constrained optimal value estimate.

    Non-binding (deterministic ``split``): the fixed-policy covariance of the
    optimal policy. Binding (randomized ``split``): ``J Sigma_{R,C,P} J^T``
    with

        J = X [G, 0, H_V] - X q_V rho^T X [0, G, H_L] / (rho^T X q_L),

    where ``X = (I - gamma P^pi)^{-1}``, ``G`` averages pair-level signals
    with ``pi``, ``H_V`` / ``H_L`` carry ``gamma pi(a|i) V^T`` / ``gamma pi(a|i) L^T``
    into the transition blocks of state ``i``, and
    ``Sigma_{R,C,P} = Diag(W^{-1} D_R, W^{-1} D_C, W^{-1} D_P)``.
    """
    base = cm.base
    m_s, m_a = base.m_s, base.m_a
    w = np.asarray(w, dtype=float).reshape(m_s, m_a)
    pi = np.asarray(split.policy, dtype=float)
    if not split.randomized:
        return fixed_policy_covariance(base.reward_mean, base.reward_var, base.transition, w, base.gamma, pi)
    support = pi > 0
    if np.any(w[support] <= 0):
        raise ValueError("visit frequencies must be positive on the policy's support")
    g, p = base.gamma, base.transition
    p_pi, _ = policy_matrix(base, pi)
    x = np.linalg.inv(np.eye(m_s) - g * p_pi)
    v = policy_value(base, pi)
    l_val = policy_value(base, pi, reward=cm.cost_mean)
    q_v = mixing_sensitivity(base.reward_mean, p, v, split.s_r, split.a1, split.a2, g, m_s)
    q_l = mixing_sensitivity(cm.cost_mean, p, l_val, split.s_r, split.a1, split.a2, g, m_s)
    den = float(base.rho @ x @ q_l)
    if abs(den) < 1e-10:
        raise DegenerateError("mixing sensitivity degenerate: the constraint does not move with the mixing weight")

    n = m_s * m_a
    # G: m_s x N, H: m_s x (N m_s) with row i holding gamma pi(a|i) V^T in block (i, a)
    g_mat = np.zeros((m_s, n))
    h_v = np.zeros((m_s, n * m_s))
    h_l = np.zeros((m_s, n * m_s))
    for i in range(m_s):
        for a in range(m_a):
            k = i * m_a + a
            g_mat[i, k] = pi[i, a]
            h_v[i, k * m_s:(k + 1) * m_s] = g * pi[i, a] * v
            h_l[i, k * m_s:(k + 1) * m_s] = g * pi[i, a] * l_val
    zero = np.zeros((m_s, n))
    corr = np.outer(x @ q_v, base.rho @ x) / den
    jac = x @ np.hstack([g_mat, zero, h_v]) - corr @ np.hstack([zero, g_mat, h_l])

    wf = np.where(support, w, 1.0).ravel()
    d_r = np.where(support.ravel(), base.reward_var.ravel() / wf, 0.0)
    d_c = np.where(support.ravel(), cm.cost_var.ravel() / wf, 0.0)
    d_p = np.zeros((n * m_s, n * m_s))
    for k in range(n):
        if support.ravel()[k]:
            row = p.reshape(n, m_s)[k]
            d_p[k * m_s:(k + 1) * m_s, k * m_s:(k + 1) * m_s] = (np.diag(row) - np.outer(row, row)) / wf[k]
    cov = np.zeros((2 * n + n * m_s, 2 * n + n * m_s))
    cov[np.arange(n), np.arange(n)] = d_r
    cov[n + np.arange(n), n + np.arange(n)] = d_c
    cov[2 * n:, 2 * n:] = d_p
    sigma = jac @ cov @ jac.T
    return 0.5 * (sigma + sigma.T)


def constrained_value(cm: ConstrainedMdp) -> tuple[np.ndarray, SplitPolicy, OccupancySolution]:
    """Solve the LP and return ``V^{pi*}``, the split policy and the LP solution."""
    sol = occupancy_lp(cm)
    split = split_policy_from_occupancy(sol)
    return policy_value(cm.base, split.policy), split, sol


def empirical_constrained_mdp(emp, gamma, rho, budget) -> ConstrainedMdp:
    """Plug-in constrained model from an ``EmpiricalModel`` carrying cost estimates."""
    emp.require_visited()
    if emp.mu_c_hat is None:
        raise ValueError("the dataset carries no cost observations")
    base = TabularMdp(emp.p_hat, emp.mu_hat, gamma, rho, emp.sigma2_hat, "gaussian", validate=False)
    return ConstrainedMdp(base, emp.mu_c_hat, budget, emp.sigma2_c_hat, "gaussian")

