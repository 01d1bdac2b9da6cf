"""Trajectory collection and the plug-in estimators built from it."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numba
import numpy as np

from .errors import DimensionError, UnvisitedPairsError
from .mdp import BERNOULLI, GAUSSIAN, TabularMdp
from .rng import make_rng

DATASET_HEADER = ("t", "s", "a", "r", "s_next")


class TransitionRecord(NamedTuple):
    t: int
    s: int
    a: int
    r: float
    s_next: int


def _cumulative(probs):
    """Row-wise CDFs whose tail is pinned to exactly 1 from the last positive entry."""
    cum = np.cumsum(probs, axis=-1)
    last = probs.shape[-1] - 1 - np.argmax((probs > 0)[..., ::-1], axis=-1)
    idx = np.arange(probs.shape[-1])
    cum[idx >= last[..., None]] = 1.0
    return cum


@numba.njit(cache=True)
def _draw(cum, u):
    k = 0
    while u >= cum[k]:
        k += 1
    return k


@numba.njit(cache=True)
def _walk(cum_pi, cum_p, s0, u_act, u_next, s_out, a_out, sn_out):
    s = s0
    for t in range(u_act.shape[0]):
        a = _draw(cum_pi[s], u_act[t])
        sn = _draw(cum_p[s, a], u_next[t])
        s_out[t] = s
        a_out[t] = a
        sn_out[t] = sn
        s = sn


def sample_signal(mean, var, family, s, a, rng) -> np.ndarray:
    """Draw one observation per step of a per-pair reward (or cost) channel.

    Draws are independent of the next-state draws given the pair.
    """
    n = s.shape[0]
    mu, sd = mean[s, a], np.sqrt(var[s, a])
    fam = family[s, a]
    z = rng.standard_normal(n)
    u = rng.random(n)
    out = mu.copy()
    g = fam == GAUSSIAN
    out[g] += sd[g] * z[g]
    b = (fam == BERNOULLI) & (var[s, a] > 0)
    if np.any(b):
        m, v = mean[s, a][b], var[s, a][b]
        top = (m * m + v) / m
        out[b] = np.where(u[b] < m / top, top, 0.0)
    return out


@dataclass(eq=False)
class TrajectoryDataset:
    """A single Markov trajectory stored column-wise.

    ``c`` holds cost observations when the trajectory came from a constrained
    MDP. ``t`` is the step index, which keeps increasing across stages that
    are concatenated.
    """

    m_s: int
    m_a: int
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    t: np.ndarray | None = None
    c: np.ndarray | None = None

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.int64)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.r = np.asarray(self.r, dtype=float)
        self.s_next = np.asarray(self.s_next, dtype=np.int64)
        n = self.s.shape[0]
        self.t = np.arange(n, dtype=np.int64) if self.t is None else np.asarray(self.t, dtype=np.int64)
        if not (self.a.shape == self.r.shape == self.s_next.shape == self.t.shape == (n,)):
            raise DimensionError("dataset columns must have equal length")
        if self.c is not None:
            self.c = np.asarray(self.c, dtype=float)
        if n and (self.s.min() < 0 or self.s.max() >= self.m_s or self.s_next.min() < 0
                  or self.s_next.max() >= self.m_s or self.a.min() < 0 or self.a.max() >= self.m_a):
            raise DimensionError("state or action index out of range")
        self._stats = None

    @property
    def n(self) -> int:
        return int(self.s.shape[0])

    @property
    def last_state(self) -> int | None:
        return int(self.s_next[-1]) if self.n else None

    def records(self) -> Iterator[TransitionRecord]:
        for row in zip(self.t.tolist(), self.s.tolist(), self.a.tolist(), self.r.tolist(), self.s_next.tolist()):
            yield TransitionRecord(*row)

    def _sufficient(self):
        if self._stats is None:
            n_pairs = self.m_s * self.m_a
            k = self.s * self.m_a + self.a
            visits = np.bincount(k, minlength=n_pairs).reshape(self.m_s, self.m_a)
            trans = np.bincount(k * self.m_s + self.s_next, minlength=n_pairs * self.m_s)
            stats = {
                "visits": visits,
                "trans": trans.reshape(self.m_s, self.m_a, self.m_s),
                "r_sum": np.bincount(k, self.r, n_pairs).reshape(self.m_s, self.m_a),
                "r_sq": np.bincount(k, self.r * self.r, n_pairs).reshape(self.m_s, self.m_a),
            }
            if self.c is not None:
                stats["c_sum"] = np.bincount(k, self.c, n_pairs).reshape(self.m_s, self.m_a)
                stats["c_sq"] = np.bincount(k, self.c * self.c, n_pairs).reshape(self.m_s, self.m_a)
            self._stats = stats
        return self._stats

    @property
    def visit_counts(self) -> np.ndarray:
        return self._sufficient()["visits"]

    @property
    def transition_counts(self) -> np.ndarray:
        return self._sufficient()["trans"]

    def concat(self, other: "TrajectoryDataset") -> "TrajectoryDataset":
        if (other.m_s, other.m_a) != (self.m_s, self.m_a):
            raise DimensionError("cannot concatenate datasets of different MDPs")
        if (self.c is None) != (other.c is None):
            raise DimensionError("cannot concatenate datasets with and without costs")
        shift = self.t[-1] + 1 if self.n else 0
        c = None if self.c is None else np.concatenate([self.c, other.c])
        return TrajectoryDataset(
            self.m_s, self.m_a,
            np.concatenate([self.s, other.s]), np.concatenate([self.a, other.a]),
            np.concatenate([self.r, other.r]), np.concatenate([self.s_next, other.s_next]),
            np.concatenate([self.t, other.t - (other.t[0] if other.n else 0) + shift]), c,
        )

    def dump(self, path) -> None:
        """Write ``t,s,a,r,s_next`` CSV (0-based indices) with a header line."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(DATASET_HEADER)
            for rec in self.records():
                w.writerow((rec.t, rec.s, rec.a, repr(rec.r), rec.s_next))

    @classmethod
    def load(cls, path, m_s: int, m_a: int) -> "TrajectoryDataset":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != DATASET_HEADER:
            raise ValueError(f"{path}: expected header {','.join(DATASET_HEADER)}")
        body = rows[1:]
        cols = list(zip(*body)) if body else [()] * 5
        return cls(m_s, m_a, [int(x) for x in cols[1]], [int(x) for x in cols[2]],
                   [float(x) for x in cols[3]], [int(x) for x in cols[4]], [int(x) for x in cols[0]])


def collect_trajectory(model: TabularMdp, policy, n: int, seed=None, s0: int | None = None,
                       cost=None) -> TrajectoryDataset:
    """Run ``policy`` on ``model`` for ``n`` steps.

    The start state is drawn from ``model.rho`` unless ``s0`` is given.
    ``cost`` (a ``ConstrainedMdp``) adds a cost observation per step.
    Fully determined by ``seed`` (int, SeedSequence or Generator).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (model.m_s, model.m_a):
        raise DimensionError(f"policy has shape {policy.shape}, expected {(model.m_s, model.m_a)}")
    if np.any(policy < 0) or np.any(np.abs(policy.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("policy rows must be probability vectors")
    rng = make_rng(seed if seed is not None else 0)
    if s0 is None:
        s0 = int(_draw(_cumulative(model.rho), rng.random()))
    u_act = rng.random(n)
    u_next = rng.random(n)
    s = np.empty(n, dtype=np.int64)
    a = np.empty(n, dtype=np.int64)
    sn = np.empty(n, dtype=np.int64)
    _walk(_cumulative(policy), _cumulative(model.transition), int(s0), u_act, u_next, s, a, sn)
    r = sample_signal(model.reward_mean, model.reward_var, model.reward_family, s, a, rng)
    c = None
    if cost is not None:
        c = sample_signal(cost.cost_mean, cost.cost_var, cost.cost_family, s, a, rng)
    return TrajectoryDataset(model.m_s, model.m_a, s, a, r, sn, c=c)


@dataclass(frozen=True, eq=False)
class EmpiricalModel:
    """Ratio estimators of reward mean/variance, transitions and visit frequencies.

    Entries of unvisited pairs are NaN and the pairs are listed in
    ``unvisited``; call ``require_visited`` before plugging into formulas.
    """

    mu_hat: np.ndarray
    sigma2_hat: np.ndarray
    p_hat: np.ndarray
    w_hat: np.ndarray
    n: int
    unvisited: tuple
    mu_c_hat: np.ndarray | None = None
    sigma2_c_hat: np.ndarray | None = None

    @property
    def m_s(self):
        return self.p_hat.shape[0]

    @property
    def m_a(self):
        return self.p_hat.shape[1]

    def require_visited(self, pairs=None):
        """Raise ``UnvisitedPairsError`` if any (or any of ``pairs``) was never visited."""
        missing = self.unvisited if pairs is None else tuple(p for p in self.unvisited if p in set(pairs))
        if missing:
            raise UnvisitedPairsError(
                f"{len(missing)} state-action pair(s) never visited: {list(missing)[:8]}", missing)
        return self

    def to_mdp(self, gamma: float, rho=None) -> TabularMdp:
        self.require_visited()
        return TabularMdp(self.p_hat, self.mu_hat, gamma, rho, self.sigma2_hat,
                          np.where(self.sigma2_hat > 0, GAUSSIAN, "deterministic"))


def _ratio(num, den):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1), np.nan)


def empirical_model(data: TrajectoryDataset) -> EmpiricalModel:
    """Sample means, population variances, empirical transitions and visit frequencies."""
    st = data._sufficient()
    visits = st["visits"]
    mu = _ratio(st["r_sum"], visits)
    var = np.maximum(_ratio(st["r_sq"], visits) - mu * mu, 0.0)
    p_hat = _ratio(st["trans"], visits[:, :, None])
    w = visits / max(data.n, 1)
    unvisited = tuple((int(i), int(j)) for i, j in np.argwhere(visits == 0))
    mu_c = var_c = None
    if "c_sum" in st:
        mu_c = _ratio(st["c_sum"], visits)
        var_c = np.maximum(_ratio(st["c_sq"], visits) - mu_c * mu_c, 0.0)
    return EmpiricalModel(mu, var, p_hat, w, data.n, unvisited, mu_c, var_c)


def multinomial_cov(p_row) -> np.ndarray:
    """Covariance of a one-hot draw from ``p_row``: ``diag(p) - p p^T``."""
    p = np.asarray(p_row, dtype=float)
    return np.diag(p) - np.outer(p, p)
