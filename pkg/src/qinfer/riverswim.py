"""RiverSwim chains.

States ``0 .. m_s-1`` sit on a line. Action 0 ("left") moves one state left
deterministically (staying put at state 0). Action 1 ("right") at interior
states moves right with ``p_right_success``, stays with ``p_stay`` and slips
left with ``p_left_slip``; at the ends the move that would leave the chain
becomes a self-transition. Rewards are paid at the boundaries only:
``r_l`` for (0, left) and ``r_r`` for (m_s-1, right), optionally with
additive Gaussian noise of variance ``noise_var`` there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import DETERMINISTIC, GAUSSIAN, TabularMdp

LEFT, RIGHT = 0, 1


@dataclass(frozen=True)
class RiverSwimSpec:
    m_s: int = 6
    p_right_success: float = 0.3
    p_stay: float = 0.6
    p_left_slip: float = 0.1
    r_l: float = 1.0
    r_r: float = 10.0
    noise_var: float = 0.0
    gamma: float = 0.95

    def __post_init__(self):
        probs = (self.p_right_success, self.p_stay, self.p_left_slip)
        if self.m_s < 2:
            raise ValueError("RiverSwim needs at least two states")
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"right-action probabilities must be a distribution, got {probs}")
        if self.noise_var < 0:
            raise ValueError("noise_var must be non-negative")


def build_riverswim(spec: RiverSwimSpec | None = None, **overrides) -> TabularMdp:
    """Tabular RiverSwim model with uniform ``rho``."""
    if spec is None:
        spec = RiverSwimSpec(**overrides)
    elif overrides:
        spec = RiverSwimSpec(**{**spec.__dict__, **overrides})
    m = spec.m_s
    p = np.zeros((m, 2, m))
    for s in range(m):
        p[s, LEFT, max(s - 1, 0)] = 1.0
        p[s, RIGHT, s] += spec.p_stay
        p[s, RIGHT, min(s + 1, m - 1)] += spec.p_right_success
        p[s, RIGHT, max(s - 1, 0)] += spec.p_left_slip
    mu = np.zeros((m, 2))
    mu[0, LEFT] = spec.r_l
    mu[m - 1, RIGHT] = spec.r_r
    var = np.zeros((m, 2))
    fam = np.full((m, 2), DETERMINISTIC, dtype=object)
    if spec.noise_var > 0:
        for s, a in ((0, LEFT), (m - 1, RIGHT)):
            var[s, a] = spec.noise_var
            fam[s, a] = GAUSSIAN
    return TabularMdp(p, mu, spec.gamma, None, var, fam)
