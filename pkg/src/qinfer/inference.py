"""Closed-form asymptotic covariances of plug-in Q / value estimates and the
confidence intervals built on them.

All covariances here are *asymptotic*: ``sqrt(n) (Q_hat - Q)`` converges to
``N(0, Sigma)``, so finite-sample standard errors are ``sqrt(diag(Sigma) / n)``.

The transition-noise term enters every sandwich as
``gamma**2 * V^T Sigma_P(s,a) V / w(s,a)`` since the Bellman map depends on
``P`` through ``gamma * P V``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import linalg, special

from .errors import AssumptionError, DimensionError, UnvisitedPairsError
from .mdp import TabularMdp, extended_transition, greedy_policy, solve_q


def _as_arrays(mu_r, sigma2_r, p, w):
    p = np.asarray(p, dtype=float)
    if p.ndim != 3:
        raise DimensionError(f"transition must have shape (m_s, m_a, m_s), got {p.shape}")
    shape = p.shape[:2]
    out = []
    for name, x in (("mu_r", mu_r), ("sigma2_r", sigma2_r), ("w", w)):
        x = np.asarray(x, dtype=float)
        if x.size != shape[0] * shape[1]:
            raise DimensionError(f"{name} has {x.size} entries, expected {shape[0] * shape[1]}")
        x = x.reshape(shape)
        if np.any(np.isnan(x)):
            raise UnvisitedPairsError(f"{name} has missing entries (unvisited pairs)",
                                      [tuple(ij) for ij in np.argwhere(np.isnan(x)).tolist()])
        out.append(x)
    if np.any(np.isnan(p)):
        raise UnvisitedPairsError("transition estimate has missing rows (unvisited pairs)",
                                  [tuple(ij) for ij in np.argwhere(np.isnan(p).any(axis=2)).tolist()])
    return out[0], out[1], p, out[2]


def transition_noise(p, v) -> np.ndarray:
    """``V^T Sigma_P(s,a) V`` for every pair, i.e. the variance of ``V(S')``."""
    ev = p @ v
    return np.maximum(p @ (v * v) - ev * ev, 0.0)


def _check_w(w, support=None):
    mask = np.ones_like(w, dtype=bool) if support is None else support
    if np.any(w[mask] <= 0):
        bad = [tuple(ij) for ij in np.argwhere((w <= 0) & mask).tolist()]
        raise AssumptionError(f"recurrence fails: zero visit frequency at {bad[:8]}", "recurrence")


class QCovariance(NamedTuple):
    sigma: np.ndarray
    q: np.ndarray
    v: np.ndarray


def _sym(m):
    return 0.5 * (m + m.T)


def optimal_sensitivity(mu_r, p, gamma, tie_tol=1e-9, force=False):
    """Solve for Q, the greedy policy and the LU factors of ``I - gamma P~``."""
    model = TabularMdp(p, mu_r, gamma, validate=False)
    q = solve_q(model, tol=1e-12)
    pi, unique = greedy_policy(q, tie_tol)
    if not unique and not force:
        raise AssumptionError("greedy action is not unique "
                              f"(tie tolerance {tie_tol})", "unique-argmax")
    pt = extended_transition(model, pi)
    lu = linalg.lu_factor(np.eye(pt.shape[0]) - gamma * pt)
    return q, pi, lu


def q_covariance(mu_r, sigma2_r, p, w, gamma, tie_tol: float = 1e-9, force: bool = False) -> QCovariance:
    """Asymptotic covariance of ``Q_hat`` (``N x N``) with the Q-table and ``V*`` it used.

    ``Sigma = A W^{-1} (D_R + gamma^2 D_Q) A^T`` with ``A = (I - gamma P~^{pi*})^{-1}``.
    """
    mu_r, sigma2_r, p, w = _as_arrays(mu_r, sigma2_r, p, w)
    _check_w(w)
    q, _, lu = optimal_sensitivity(mu_r, p, gamma, tie_tol, force)
    v = q.max(axis=1)
    d = (sigma2_r + gamma ** 2 * transition_noise(p, v)).ravel() / w.ravel()
    sens = linalg.lu_solve(lu, np.eye(d.size))
    sigma = (sens * d) @ sens.T
    return QCovariance(_sym(sigma), q, v)


def value_selection(q) -> np.ndarray:
    """``m_s x N`` matrix picking ``Q(s, a*(s))`` out of the flattened Q-vector."""
    m_s, m_a = q.shape
    sel = np.zeros((m_s, m_s * m_a))
    sel[np.arange(m_s), np.arange(m_s) * m_a + q.argmax(axis=1)] = 1.0
    return sel


def v_covariance(mu_r, sigma2_r, p, w, gamma, rho=None, tie_tol: float = 1e-9,
                 force: bool = False, sigma_q=None):
    """Asymptotic covariance of ``V*_hat`` and variance of ``chi*_hat``.

    Uses the state-level form restricted to the optimal actions and checks it
    against ``S Sigma S^T`` (``S`` = ``value_selection``) to 1e-10 relative.
    Returns ``(Sigma_V, sigma2_chi)``.
    """
    mu_r, sigma2_r, p, w = _as_arrays(mu_r, sigma2_r, p, w)
    m_s = p.shape[0]
    rho = np.full(m_s, 1.0 / m_s) if rho is None else np.asarray(rho, dtype=float)
    if sigma_q is None:
        sigma_q, q, v = q_covariance(mu_r, sigma2_r, p, w, gamma, tie_tol, force)
    else:
        model = TabularMdp(p, mu_r, gamma, validate=False)
        q = solve_q(model, tol=1e-12)
        v = q.max(axis=1)
    best = q.argmax(axis=1)
    rows = np.arange(m_s)
    p_star = p[rows, best]
    d = (sigma2_r[rows, best] + gamma ** 2 * transition_noise(p_star, v)) / w[rows, best]
    x = np.linalg.inv(np.eye(m_s) - gamma * p_star)
    sigma_v = _sym((x * d) @ x.T)
    sel = value_selection(q)
    check = sel @ sigma_q @ sel.T
    scale = max(1.0, np.abs(sigma_v).max())
    if np.abs(check - sigma_v).max() > 1e-10 * scale:
        raise ArithmeticError("state-level value covariance disagrees with the selected Q covariance")
    return sigma_v, float(rho @ sigma_v @ rho)


def fixed_policy_covariance(mu_r, sigma2_r, p, w, gamma, policy) -> np.ndarray:
    """Asymptotic covariance of ``V^pi_hat`` for a given stochastic policy.

    ``X W' X^T`` with ``X = (I - gamma P^pi)^{-1}`` and diagonal
    ``W'(i) = sum_j pi(j|i)^2 / w(i,j) * (sigma_R^2(i,j) + gamma^2 V^T Sigma_P(i,j) V)``.
    Only pairs with ``pi(j|i) > 0`` need positive ``w``.
    """
    policy = np.asarray(policy, dtype=float)
    support = policy > 0
    mu_r = np.asarray(mu_r, dtype=float).reshape(policy.shape)
    sigma2_r = np.asarray(sigma2_r, dtype=float).reshape(policy.shape)
    w = np.asarray(w, dtype=float).reshape(policy.shape)
    p = np.asarray(p, dtype=float)
    if np.any(np.isnan(mu_r[support])) or np.any(np.isnan(p[support])):
        raise UnvisitedPairsError("plug-ins missing on the policy's support")
    _check_w(w, support)
    mu_r = np.where(support, mu_r, 0.0)
    sigma2_r = np.where(support, sigma2_r, 0.0)
    p = np.where(support[:, :, None], p, 0.0)
    m_s = p.shape[0]
    p_pi = np.einsum("sa,sat->st", policy, p)
    x = np.linalg.inv(np.eye(m_s) - gamma * p_pi)
    v = x @ np.einsum("sa,sa->s", policy, mu_r)
    noise = sigma2_r + gamma ** 2 * transition_noise(p, v)
    with np.errstate(divide="ignore", invalid="ignore"):
        wprime = np.where(support, policy ** 2 / np.where(support, w, 1.0) * noise, 0.0).sum(axis=1)
    return _sym((x * wprime) @ x.T)


def delta_q_variance(sigma, s: int, a1: int, a2: int, m_a: int) -> float:
    """Asymptotic variance of ``Q_hat(s,a1) - Q_hat(s,a2)``."""
    if a1 == a2:
        raise ValueError("a1 and a2 must differ")
    sigma = np.asarray(sigma, dtype=float)
    n = sigma.shape[0]
    if not (0 <= a1 < m_a and 0 <= a2 < m_a and 0 <= s * m_a + m_a - 1 < n):
        raise IndexError("state or action index out of range")
    k1, k2 = s * m_a + a1, s * m_a + a2
    return float(max(sigma[k1, k1] + sigma[k2, k2] - 2.0 * sigma[k1, k2], 0.0))


def z_quantile(alpha: float) -> float:
    """Upper ``alpha/2`` standard-normal quantile (Cephes ``ndtri``, ~1e-15 accurate)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(special.ndtri(1.0 - alpha / 2.0))


@dataclass(frozen=True)
class ConfidenceInterval:
    center: float
    half_width: float
    alpha: float

    @property
    def lower(self):
        return self.center - self.half_width

    @property
    def upper(self):
        return self.center + self.half_width

    @property
    def length(self):
        return 2.0 * self.half_width

    def __contains__(self, x):
        return self.lower <= x <= self.upper


def confidence_interval(point: float, asym_var: float, n: int, alpha: float = 0.05) -> ConfidenceInterval:
    """``point +/- z * sqrt(asym_var / n)``."""
    if asym_var < 0:
        raise ValueError("asymptotic variance must be non-negative")
    if n < 1:
        raise ValueError("n must be at least 1")
    return ConfidenceInterval(float(point), z_quantile(alpha) * float(np.sqrt(asym_var / n)), alpha)


class NearTie(NamedTuple):
    state: int
    best: int
    runner_up: int
    gap: float


def check_unique_argmax(q, tol: float) -> list[NearTie]:
    """Rows whose two largest Q-values are closer than ``tol``."""
    q = np.asarray(q, dtype=float)
    out = []
    if q.shape[1] < 2:
        return out
    order = np.argsort(-q, axis=1, kind="stable")
    for s in range(q.shape[0]):
        b, r = order[s, 0], order[s, 1]
        gap = float(q[s, b] - q[s, r])
        if gap < tol:
            out.append(NearTie(s, int(b), int(r), gap))
    return out


@dataclass(frozen=True, eq=False)
class CovarianceReport:
    """Covariances of ``Q_hat``, ``V*_hat`` and ``chi*_hat`` plus what went into them.

    ``inputs`` records the provenance, e.g. ``{"source": "empirical", "n": 50000}``.
    """

    sigma_q: np.ndarray
    sigma_v: np.ndarray
    sigma_chi: float
    q: np.ndarray
    v: np.ndarray
    inputs: dict = field(default_factory=dict)

    def to_json(self, path) -> None:
        """Matrices are stored row-major with an explicit shape."""
        def mat(m):
            m = np.atleast_2d(np.asarray(m, dtype=float))
            return {"shape": list(m.shape), "data": m.ravel().tolist()}

        doc = {
            "format": "qinfer.covariance/1",
            "index_rule": "k = s * m_a + a (0-based)",
            "sigma_q": mat(self.sigma_q),
            "sigma_v": mat(self.sigma_v),
            "sigma_chi": float(self.sigma_chi),
            "q": mat(self.q),
            "v": mat(self.v),
            "inputs": self.inputs,
        }
        Path(path).write_text(json.dumps(doc, indent=1))

    @classmethod
    def from_json(cls, path) -> "CovarianceReport":
        doc = json.loads(Path(path).read_text())

        def mat(d):
            return np.asarray(d["data"], dtype=float).reshape(d["shape"])

        return cls(mat(doc["sigma_q"]), mat(doc["sigma_v"]), doc["sigma_chi"], mat(doc["q"]),
                   mat(doc["v"]).ravel(), doc.get("inputs", {}))


def covariance_report(mu_r, sigma2_r, p, w, gamma, rho=None, n=None, source="true",
                      tie_tol: float = 1e-9, force: bool = False) -> CovarianceReport:
    sigma_q, q, v = q_covariance(mu_r, sigma2_r, p, w, gamma, tie_tol, force)
    sigma_v, s_chi = v_covariance(mu_r, sigma2_r, p, w, gamma, rho, tie_tol, force, sigma_q=sigma_q)
    return CovarianceReport(sigma_q, sigma_v, s_chi, q, v, {"source": source, "n": n})


def empirical_report(emp, gamma, rho=None, tie_tol: float = 1e-9, force: bool = False) -> CovarianceReport:
    """Plug an ``EmpiricalModel`` into the covariance formulas (refuses unvisited pairs)."""
    emp.require_visited()
    return covariance_report(emp.mu_hat, emp.sigma2_hat, emp.p_hat, emp.w_hat, gamma, rho,
                             emp.n, "empirical", tie_tol, force)
