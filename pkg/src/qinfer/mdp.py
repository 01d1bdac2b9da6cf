"""Finite discounted MDPs: Bellman operator, value iteration, policy evaluation,
extended transition matrices and stationary distributions.

Conventions used everywhere in the package:

* ``transition`` has shape ``(m_s, m_a, m_s)`` with ``transition[s, a, s']``.
* Q-tables, policies, reward means/variances and visit frequencies have shape
  ``(m_s, m_a)``. Flattening is C-order, so pair ``(s, a)`` lands at index
  ``k = s * m_a + a`` (0-based); ``N = m_s * m_a``.
* Actions are 0-based; action 0 is "left" in RiverSwim.
"""

from __future__ import annotations

import warnings

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import AssumptionError, ConvergenceError, DimensionError

DETERMINISTIC, GAUSSIAN, BERNOULLI = "deterministic", "gaussian", "bernoulli"
REWARD_FAMILIES = (DETERMINISTIC, GAUSSIAN, BERNOULLI)

ROW_TOL = 1e-12


def _family_array(family, shape):
    fam = np.empty(shape, dtype=object)
    fam[...] = family if isinstance(family, str) else None
    if not isinstance(family, str):
        arr = np.asarray(family, dtype=object)
        if arr.shape != shape:
            raise DimensionError(f"reward family table has shape {arr.shape}, expected {shape}")
        fam[...] = arr
    for f in fam.ravel():
        if f not in REWARD_FAMILIES:
            raise ValueError(f"unknown reward family {f!r}; expected one of {REWARD_FAMILIES}")
    return fam


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Ground-truth model ``(S, A, R, P, gamma, rho)``.

    Rewards are described by their mean and variance plus a sampling family:
    ``deterministic`` (variance must be 0), ``gaussian`` or ``bernoulli``
    (scaled to ``{0, r}`` with ``r = (mean**2 + var) / mean``).
    """

    transition: np.ndarray
    reward_mean: np.ndarray
    gamma: float
    rho: np.ndarray | None = None
    reward_var: np.ndarray | None = None
    reward_family: object = DETERMINISTIC
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        p = np.asarray(self.transition, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise DimensionError(f"transition must have shape (m_s, m_a, m_s), got {p.shape}")
        m_s, m_a = p.shape[:2]
        mu = np.asarray(self.reward_mean, dtype=float)
        if mu.shape != (m_s, m_a):
            raise DimensionError(f"reward_mean has shape {mu.shape}, expected {(m_s, m_a)}")
        var = np.zeros_like(mu) if self.reward_var is None else np.asarray(self.reward_var, dtype=float)
        if var.shape != (m_s, m_a):
            raise DimensionError(f"reward_var has shape {var.shape}, expected {(m_s, m_a)}")
        rho = np.full(m_s, 1.0 / m_s) if self.rho is None else np.asarray(self.rho, dtype=float)
        if rho.shape != (m_s,):
            raise DimensionError(f"rho has shape {rho.shape}, expected {(m_s,)}")
        fam = _family_array(self.reward_family, (m_s, m_a))
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "reward_mean", mu)
        object.__setattr__(self, "reward_var", var)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "reward_family", fam)
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.validate:
            self._check()

    def _check(self):
        p = self.transition
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=2) - 1.0) > ROW_TOL):
            raise ValueError("every transition row must be a probability vector")
        if np.any(self.rho < 0) or abs(self.rho.sum() - 1.0) > ROW_TOL:
            raise ValueError("rho must be a probability vector")
        if np.any(self.reward_var < 0):
            raise ValueError("reward variances must be non-negative")
        det = self.reward_family == DETERMINISTIC
        if np.any(self.reward_var[det] != 0):
            raise ValueError("deterministic rewards must have zero variance")
        bern = self.reward_family == BERNOULLI
        if np.any((self.reward_mean[bern] == 0) & (self.reward_var[bern] > 0)):
            raise ValueError("a bernoulli reward with positive variance needs a non-zero mean")

    @property
    def m_s(self) -> int:
        return self.transition.shape[0]

    @property
    def m_a(self) -> int:
        return self.transition.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.m_s * self.m_a


def index(s: int, a: int, m_a: int) -> int:
    """Flat index of pair (s, a); the 0-based form of ``(i-1)*m_a + j``."""
    return s * m_a + a


def _check_q(q, model):
    q = np.asarray(q, dtype=float)
    if q.shape != (model.m_s, model.m_a):
        raise DimensionError(f"Q-table has shape {q.shape}, expected {(model.m_s, model.m_a)}")
    return q


def bellman_apply(q, model: TabularMdp) -> np.ndarray:
    """One application of the optimality operator to ``q``."""
    q = _check_q(q, model)
    return model.reward_mean + model.gamma * model.transition @ q.max(axis=1)


def _policy_q(model, actions):
    """Exact Q of the deterministic policy ``actions``."""
    m_s, m_a = model.m_s, model.m_a
    pi = np.zeros((m_s, m_a))
    pi[np.arange(m_s), actions] = 1.0
    pt = extended_transition(model, pi)
    a = np.eye(m_s * m_a) - model.gamma * pt
    return np.linalg.solve(a, model.reward_mean.ravel()).reshape(m_s, m_a)


def solve_q(model: TabularMdp, tol: float = 1e-10, max_iter: int = 100_000, q0=None) -> np.ndarray:
    """Optimal Q-table within ``tol`` in max-norm.

    Value iteration runs until ``||T(Q) - Q|| <= tol (1 - gamma) / (2 gamma)``.
    The greedy policy of that iterate is then evaluated exactly; the exact
    evaluation replaces the iterate when it is itself a fixed point (the usual
    case), which removes the geometric tail error.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    g = model.gamma
    stop = tol * (1.0 - g) / (2.0 * g)
    q = np.zeros((model.m_s, model.m_a)) if q0 is None else _check_q(q0, model).copy()
    mu, p = model.reward_mean, model.transition
    res = np.inf
    for it in range(1, max_iter + 1):
        q_next = mu + g * (p @ q.max(axis=1))
        res = np.max(np.abs(q_next - q))
        q = q_next
        if res <= stop:
            break
    else:
        raise ConvergenceError(f"value iteration did not converge in {max_iter} iterations", res, max_iter)
    q_pol = _policy_q(model, q.argmax(axis=1))
    res_pol = np.max(np.abs(bellman_apply(q_pol, model) - q_pol))
    if res_pol <= min(res, stop):
        return q_pol
    return q


def greedy_policy(q, tie_tol: float = 0.0) -> tuple[np.ndarray, bool]:
    """Deterministic greedy policy and whether every row's argmax is unique.

    Exact ties go to the lowest action index. ``unique`` is False when some
    row has a second action within ``tie_tol`` of its maximum.
    """
    if tie_tol < 0:
        raise ValueError("tie_tol must be non-negative")
    q = np.asarray(q, dtype=float)
    best = q.argmax(axis=1)
    pi = np.zeros_like(q)
    pi[np.arange(q.shape[0]), best] = 1.0
    near = q >= q.max(axis=1, keepdims=True) - tie_tol
    unique = bool(np.all(near.sum(axis=1) == 1))
    return pi, unique


def extended_transition(model: TabularMdp, policy) -> np.ndarray:
    """``N x N`` kernel on pairs: ``P(s'|s,a) * pi(a'|s')``."""
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (model.m_s, model.m_a):
        raise DimensionError(f"policy has shape {policy.shape}, expected {(model.m_s, model.m_a)}")
    n = model.n_pairs
    return (model.transition[:, :, :, None] * policy[None, None, :, :]).reshape(n, n)


def stationary_distribution(p_tilde, allow_zero: bool = False) -> np.ndarray:
    """Stationary distribution by a direct linear solve.

    The balance system ``w (P - I) = 0`` has its last equation replaced by
    ``sum(w) = 1``. A singular system (several recurrent classes) or, unless
    ``allow_zero``, a zero entry (a pair that is never visited in the long run)
    raises ``AssumptionError``.
    """
    pt = np.asarray(p_tilde, dtype=float)
    if pt.ndim != 2 or pt.shape[0] != pt.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {pt.shape}")
    n = pt.shape[0]
    a = pt.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            lu = linalg.lu_factor(a, check_finite=True)
        if np.min(np.abs(np.diag(lu[0]))) < 1e-13 * max(1.0, np.abs(a).max()):
            raise linalg.LinAlgError("singular")
        w = linalg.lu_solve(lu, b)
    except (linalg.LinAlgError, ValueError) as exc:
        raise AssumptionError("recurrence fails: chain has no unique stationary distribution",
                              "recurrence") from exc
    if np.max(np.abs(w @ pt - w)) > 1e-8:
        raise AssumptionError("recurrence fails: chain has no unique stationary distribution",
                              "recurrence")
    w[np.abs(w) < 1e-15] = 0.0
    if np.any(w < 0) or (not allow_zero and np.any(w <= 0)):
        raise AssumptionError("recurrence fails: some pair has zero long-run frequency",
                              "recurrence")
    return w


def policy_matrix(model: TabularMdp, policy) -> tuple[np.ndarray, np.ndarray]:
    """State-level kernel ``P^pi`` and reward vector ``r^pi`` of a stochastic policy."""
    policy = np.asarray(policy, dtype=float)
    p_pi = np.einsum("sa,sat->st", policy, model.transition)
    r_pi = np.einsum("sa,sa->s", policy, model.reward_mean)
    return p_pi, r_pi


def policy_value(model: TabularMdp, policy, reward=None) -> np.ndarray:
    """``V^pi`` from ``(I - gamma P^pi) V = r^pi``.

    ``reward`` substitutes another per-pair signal for the reward mean, e.g.
    a cost table to get the loss function ``L^pi``.
    """
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (model.m_s, model.m_a):
        raise DimensionError(f"policy has shape {policy.shape}, expected {(model.m_s, model.m_a)}")
    p_pi, r_pi = policy_matrix(model, policy)
    if reward is not None:
        r_pi = np.einsum("sa,sa->s", policy, np.asarray(reward, dtype=float))
    return np.linalg.solve(np.eye(model.m_s) - model.gamma * p_pi, r_pi)


def chi(v, rho) -> float:
    """Initial-distribution weighted value ``sum_s rho(s) V(s)``."""
    v, rho = np.asarray(v, dtype=float), np.asarray(rho, dtype=float)
    if v.shape != rho.shape:
        raise DimensionError(f"value vector {v.shape} and rho {rho.shape} differ in length")
    return float(v @ rho)
