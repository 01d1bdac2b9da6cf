"""Approximate value iteration on a representative state subset.

Q-values are only backed up on the representative ("knot") states ``S0`` and
linearly interpolated in the state index everywhere else. The approximate
fixed point solves ``Q^M = M_g(M_I(T(Q^M)))`` where ``M_I`` keeps the knot
rows and ``M_g`` interpolates them back to all states. Linear interpolation is
a max-norm non-expansion with a constant Jacobian, so the composed operator is
a gamma-contraction and the delta method applies with a constant ``grad M_g``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import AssumptionError, ConvergenceError, DimensionError, UnvisitedPairsError
from .inference import transition_noise
from .mdp import TabularMdp


def representative_states(m_s: int, stride: int | None = None, states=None) -> tuple:
    """Knot states from an explicit list or a stride; the last state is always included."""
    if (stride is None) == (states is None):
        raise ValueError("give exactly one of stride / states")
    if states is None:
        if stride < 1:
            raise ValueError("stride must be positive")
        states = list(range(0, m_s, stride))
        if states[-1] != m_s - 1:
            states.append(m_s - 1)
    s0 = tuple(int(s) for s in states)
    if any(b <= a for a, b in zip(s0, s0[1:])):
        raise ValueError("representative states must be strictly increasing")
    if not s0 or s0[0] != 0 or s0[-1] != m_s - 1:
        raise ValueError("representative states must include both boundary states 0 and m_s - 1")
    return s0


@dataclass(frozen=True, eq=False)
class GeneralizationMap:
    """Linear interpolation in the state index.

    ``weights`` is ``m_s x m0``; ``jacobian`` lifts it to pairs as
    ``kron(weights, I_{m_a})`` (``N x N0``, pair order ``k = s * m_a + a``).
    """

    s0: tuple
    m_s: int
    m_a: int
    weights: np.ndarray

    @property
    def n0(self) -> int:
        return len(self.s0) * self.m_a

    @property
    def jacobian(self) -> np.ndarray:
        return np.kron(self.weights, np.eye(self.m_a))

    @property
    def knot_rows(self) -> np.ndarray:
        """Flat pair indices ``I_S0`` of the representative pairs."""
        return (np.asarray(self.s0)[:, None] * self.m_a + np.arange(self.m_a)).ravel()

    def apply(self, y) -> np.ndarray:
        """Interpolate knot values ``(m0, m_a)`` to a full ``(m_s, m_a)`` table."""
        return self.weights @ np.asarray(y, dtype=float).reshape(len(self.s0), self.m_a)

    def is_nonexpansive(self, tol: float = 1e-12) -> bool:
        wt = self.weights
        return bool(np.all(wt >= -tol) and np.all(np.abs(wt.sum(axis=1) - 1.0) <= tol))


def interp_jacobian(m_s: int, m_a: int, s0) -> GeneralizationMap:
    """Interpolation map for knots ``s0``; state ``s`` between knots ``p < q`` gets
    weights ``((q - s) / (q - p), (s - p) / (q - p))``."""
    s0 = representative_states(m_s, states=s0)
    wt = np.zeros((m_s, len(s0)))
    for j, (lo, hi) in enumerate(zip(s0, s0[1:])):
        for s in range(lo, hi + 1):
            wt[s, j] = (hi - s) / (hi - lo)
            wt[s, j + 1] = (s - lo) / (hi - lo)
    if len(s0) == 1:
        wt[0, 0] = 1.0
    return GeneralizationMap(s0, m_s, m_a, wt)


def _knot_inputs(mu_r, p, gmap):
    p = np.asarray(p, dtype=float)
    mu = np.asarray(mu_r, dtype=float).reshape(p.shape[:2])
    if p.shape[:2] != (gmap.m_s, gmap.m_a):
        raise DimensionError(f"model shape {p.shape[:2]} does not match the map {(gmap.m_s, gmap.m_a)}")
    s0 = list(gmap.s0)
    mu0, p0 = mu[s0], p[s0]
    if np.any(np.isnan(mu0)) or np.any(np.isnan(p0)):
        missing = [(s, a) for s in s0 for a in range(gmap.m_a) if np.isnan(mu[s, a]) or np.isnan(p[s, a]).any()]
        raise UnvisitedPairsError("representative pairs lack estimates", missing)
    return mu0, p0


def approx_solve_q(model: TabularMdp, gmap: GeneralizationMap, tol: float = 1e-10,
                   max_iter: int = 100_000):
    """Approximate fixed point ``(Q^M, Q^M_S0)`` of ``model`` on the map's knots."""
    return approx_fixed_point(model.reward_mean, model.transition, model.gamma, gmap, tol, max_iter)


def approx_fixed_point(mu_r, p, gamma: float, gmap: GeneralizationMap, tol: float = 1e-10,
                       max_iter: int = 100_000):
    """Array form of ``approx_solve_q``; only the knot rows of ``mu_r`` and ``p`` are read.

    Iterates in knot space until the residual drops below
    ``tol (1 - gamma) / (2 gamma)``, then polishes by evaluating the greedy
    policy exactly. Returns ``(Q^M, Y)`` with ``Y = M_I(T(Q^M))`` of shape ``(m0, m_a)``.
    """
    if not gmap.is_nonexpansive():
        raise AssumptionError("generalization map is not a max-norm non-expansion", "non-expansion")
    mu0, p0 = _knot_inputs(mu_r, p, gmap)
    wt = gmap.weights
    stop = tol * (1.0 - gamma) / (2.0 * gamma)
    y = np.zeros_like(mu0)
    res = np.inf
    for _ in range(max_iter):
        y_next = mu0 + gamma * p0 @ (wt @ y).max(axis=1)
        res = np.abs(y_next - y).max()
        y = y_next
        if res <= stop:
            break
    else:
        raise ConvergenceError(f"approximate value iteration did not converge in {max_iter} iterations",
                               res, max_iter)
    y_pol = _policy_knots(mu0, p0, wt, gamma, (wt @ y).argmax(axis=1))
    res_pol = np.abs(mu0 + gamma * p0 @ (wt @ y_pol).max(axis=1) - y_pol).max()
    if res_pol <= min(res, stop):
        y = y_pol
    return wt @ y, y


def _policy_knots(mu0, p0, wt, gamma, actions):
    """Knot values when the greedy action everywhere is ``actions``."""
    m0, m_a = mu0.shape
    m_s = wt.shape[0]
    # V(s) = sum_j wt[s, j] y(j, actions[s]) is linear in y
    sel = np.zeros((m_s, m0 * m_a))
    for s in range(m_s):
        sel[s, np.arange(m0) * m_a + actions[s]] = wt[s]
    a = np.eye(m0 * m_a) - gamma * p0.reshape(m0 * m_a, m_s) @ sel
    return np.linalg.solve(a, mu0.ravel()).reshape(m0, m_a)


def approx_q_covariance(mu_r, sigma2_r, p, w, gamma, gmap: GeneralizationMap, tie_tol: float = 1e-9,
                        force: bool = False):
    """Asymptotic covariance (``N x N``) of the approximate Q estimate, plus ``Q^M``.

    ``Sigma^M = B G W0^{-1} (D_R + gamma^2 D_Q) G^T B^T`` with ``G = grad M_g``,
    ``B = (I - gamma G P~_S0)^{-1}`` and ``P~_S0`` the knot rows of the extended
    transition matrix under the greedy policy of ``Q^M``. Only the knot rows
    of ``mu_r``, ``sigma2_r``, ``p`` and ``w`` are used.
    """
    p = np.asarray(p, dtype=float)
    m_s, m_a = p.shape[:2]
    q_m, _ = approx_fixed_point(mu_r, p, gamma, gmap, tol=1e-12)
    order = np.sort(q_m, axis=1)
    if m_a > 1 and np.any(order[:, -1] - order[:, -2] < tie_tol) and not force:
        raise AssumptionError(f"greedy action of Q^M is not unique (tie tolerance {tie_tol})", "unique-argmax")
    s0 = list(gmap.s0)
    w = np.asarray(w, dtype=float).reshape(m_s, m_a)
    sigma2 = np.asarray(sigma2_r, dtype=float).reshape(m_s, m_a)
    if np.any(np.isnan(w[s0])) or np.any(np.isnan(sigma2[s0])):
        raise UnvisitedPairsError("representative pairs lack estimates", [])
    if np.any(w[s0] <= 0):
        raise AssumptionError("zero visit frequency at a representative pair", "recurrence")
    v_m = q_m.max(axis=1)
    best = q_m.argmax(axis=1)
    p0 = p[s0]
    noise = (sigma2[s0] + gamma ** 2 * transition_noise(p0, v_m)) / w[s0]
    pi = np.zeros((m_s, m_a))
    pi[np.arange(m_s), best] = 1.0
    pt0 = (p0[:, :, :, None] * pi[None, None]).reshape(len(s0) * m_a, m_s * m_a)
    g = gmap.jacobian
    b = np.eye(m_s * m_a) - gamma * g @ pt0
    bg = linalg.solve(b, g)
    sigma = (bg * noise.ravel()) @ bg.T
    return 0.5 * (sigma + sigma.T), q_m
