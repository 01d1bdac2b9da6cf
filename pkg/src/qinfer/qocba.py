"""Q-OCBA: allocations of the exploration budget over state-action pairs.

An allocation ``w`` is a long-run visit-frequency table. It is admissible
(realizable as the stationary distribution of some exploration policy) iff it
is positive, sums to one and satisfies the state balance equations
``sum_j w(i,j) = sum_{k,l} w(k,l) P(i|k,l)``; the policy is then
``pi_w(j|i) = w(i,j) / sum_l w(i,l)``.

Both allocation criteria reduce to ``min_w max_p sum_k C[p,k] / w_k`` over the
floored polytope ``{admissible, w >= eta}``, which is convex. It is solved in
epigraph form by a dense log-barrier Newton method.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, DimensionError, InfeasibleError, UnvisitedPairsError
from .estimation import TrajectoryDataset, collect_trajectory, empirical_model
from .inference import delta_q_variance, empirical_report, optimal_sensitivity, q_covariance, transition_noise
from .mdp import TabularMdp, extended_transition, greedy_policy, solve_q, stationary_distribution
from .rng import make_rng

log = logging.getLogger(__name__)

DEFAULT_ETA = 1e-6


@dataclass(frozen=True)
class SolverOptions:
    """Barrier-method knobs.

    The method stops once the duality-gap bound ``m / tau`` drops below
    ``rel_tol`` times the current objective; ``tau`` grows by ``mu`` between
    centering steps.
    """

    rel_tol: float = 1e-4
    mu: float = 10.0
    max_newton: int = 100
    max_outer: int = 60
    newton_tol: float = 1e-10
    armijo: float = 0.25
    backtrack: float = 0.5


@dataclass(frozen=True, eq=False)
class Allocation:
    """A point of the floored admissible polytope, shape ``(m_s, m_a)``.

    ``history`` is the objective after each centering step.
    """

    w: np.ndarray
    eta: float
    objective: float = float("nan")
    history: tuple = ()
    newton_steps: int = 0

    @property
    def policy(self) -> np.ndarray:
        return policy_from_allocation(self.w)


def balance_matrix(p) -> np.ndarray:
    """``m_s x N`` matrix whose row ``i`` is ``sum_j w(i,j) - sum_{k,l} w(k,l) P(i|k,l)``."""
    p = np.asarray(p, dtype=float)
    m_s, m_a = p.shape[:2]
    own = np.kron(np.eye(m_s), np.ones((1, m_a)))
    return own - p.reshape(m_s * m_a, m_s).T


def balance_residual(w, p) -> float:
    """Largest violation of the equality constraints (balance and normalization)."""
    w = np.asarray(w, dtype=float).ravel()
    return float(max(np.abs(balance_matrix(p) @ w).max(), abs(w.sum() - 1.0)))


def admissible_constraints(p):
    """Full-row-rank ``(A, b)`` with ``A w = b`` describing balance plus ``sum(w) = 1``."""
    bal = balance_matrix(p)
    a = np.vstack([np.ones((1, bal.shape[1])), bal])
    b = np.zeros(a.shape[0])
    b[0] = 1.0
    _, r, piv = linalg.qr(a.T, pivoting=True, mode="economic")
    rank = int(np.sum(np.abs(np.diag(r)) > 1e-10 * max(1.0, abs(r[0, 0]))))
    keep = np.sort(piv[:rank])
    return a[keep], b[keep]


def policy_from_allocation(w) -> np.ndarray:
    """Normalize each state's row of ``w`` into an action distribution."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 2:
        raise DimensionError("allocation must have shape (m_s, m_a)")
    mass = w.sum(axis=1, keepdims=True)
    if np.any(mass <= 0):
        raise ValueError("every state needs positive mass in the allocation")
    return w / mass


@dataclass(frozen=True, eq=False)
class CostCoefficients:
    """Per-comparison coefficients of the Q-difference variances.

    Row ``r`` of ``c`` belongs to comparison ``pairs[r] = (i, j)`` between the
    greedy action ``a*(i)`` and ``j``, and satisfies
    ``sigma^2_dQ(i, a*(i), j) = sum_k c[r, k] / w_k`` for every positive ``w``
    (``k`` indexes pairs in flattened order). ``gap2[r]`` is the squared
    Q-gap, so the relative discrepancy is ``h_ij = gap2 / (c @ (1 / w))``.
    """

    pairs: tuple
    c: np.ndarray
    gap2: np.ndarray
    best: np.ndarray

    def variance(self, w) -> np.ndarray:
        return self.c @ (1.0 / np.asarray(w, dtype=float).ravel())

    def discrepancy(self, w) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.gap2 / self.variance(w)

    def weighted(self) -> np.ndarray:
        """Rows scaled by ``1 / gap2``: minimizing the max row-sum maximizes min ``h_ij``."""
        return self.c / self.gap2[:, None]


def _noise_and_sensitivity(mu_r, sigma2_r, p, gamma, q=None, force=False, tie_tol=1e-9):
    mu_r = np.asarray(mu_r, dtype=float)
    q_opt, pi, lu = optimal_sensitivity(mu_r, p, gamma, tie_tol=tie_tol, force=force)
    if q is None:
        q = q_opt
    v = q.max(axis=1)
    noise = (np.asarray(sigma2_r, dtype=float) + gamma ** 2 * transition_noise(p, v)).ravel()
    return q, pi, lu, noise


def compute_cost_coefficients(p, sigma2_r, gamma, mu_r, force: bool = False,
                              tie_tol: float = 1e-9, check: bool = True, gap_floor: float = 1e-9,
                              seed=0) -> CostCoefficients:
    """Coefficients ``c_ij(k) = ((e_{i,a*} - e_{i,j})^T A)_k^2 (sigma_R^2(k) + gamma^2 V^T Sigma_P(k) V)``.

    ``A = (I - gamma P~^{pi*})^{-1}``. With ``check`` the reconstruction
    identity is verified against ``delta_q_variance`` at 10 random positive
    allocations. ``force`` proceeds through a non-unique argmax (ties broken
    to the lowest index); gaps are floored at ``gap_floor``.
    """
    p = np.asarray(p, dtype=float)
    m_s, m_a = p.shape[:2]
    q, pi, lu, noise = _noise_and_sensitivity(mu_r, sigma2_r, p, gamma, force=force, tie_tol=tie_tol)
    best = q.argmax(axis=1)
    pairs = tuple((i, j) for i in range(m_s) for j in range(m_a) if j != best[i])
    n = m_s * m_a
    d = np.zeros((len(pairs), n))
    for r, (i, j) in enumerate(pairs):
        d[r, i * m_a + best[i]] = 1.0
        d[r, i * m_a + j] = -1.0
    # rows of d @ A: solve A^T x = d^T
    da = linalg.lu_solve(lu, d.T, trans=1).T
    c = da * da * noise
    gaps = np.array([q[i, best[i]] - q[i, j] for i, j in pairs])
    coeffs = CostCoefficients(pairs, c, np.maximum(gaps, gap_floor) ** 2, best)
    if check and pairs:
        rng = make_rng(seed)
        for _ in range(10):
            w = rng.uniform(0.05, 1.0, size=(m_s, m_a))
            w /= w.sum()
            sig, _, _ = q_covariance(mu_r, sigma2_r, p, w, gamma, tie_tol=tie_tol, force=True)
            ref = np.array([delta_q_variance(sig, i, best[i], j, m_a) for i, j in pairs])
            got = coeffs.variance(w)
            if np.abs(got - ref).max() > 1e-10 * max(1.0, np.abs(ref).max()):
                raise ArithmeticError("cost coefficients fail the reconstruction identity")
    return coeffs


def chi_cost_coefficients(p, sigma2_r, gamma, mu_r, rho=None, force: bool = False,
                          tie_tol: float = 1e-9) -> np.ndarray:
    """``c_chi`` with ``sigma^2_chi = sum_k c_chi(k) / w_k``; zero off the greedy actions."""
    p = np.asarray(p, dtype=float)
    m_s, m_a = p.shape[:2]
    rho = np.full(m_s, 1.0 / m_s) if rho is None else np.asarray(rho, dtype=float)
    q, _, _, noise = _noise_and_sensitivity(mu_r, sigma2_r, p, gamma, force=force, tie_tol=tie_tol)
    best = q.argmax(axis=1)
    rows = np.arange(m_s)
    x = np.linalg.solve((np.eye(m_s) - gamma * p[rows, best]).T, rho)
    c = np.zeros((m_s, m_a))
    c[rows, best] = x * x * noise.reshape(m_s, m_a)[rows, best]
    return c.ravel()


def _feasible_start(a_eq, b_eq, p, eta):
    m_s, m_a = p.shape[:2]
    uniform = np.full((m_s, m_a), 1.0 / m_a)
    model = TabularMdp(p, np.zeros((m_s, m_a)), 0.5, validate=False)
    try:
        w0 = stationary_distribution(extended_transition(model, uniform))
        if w0.min() > 2 * eta:
            return w0
    except Exception:  # noqa: BLE001 - fall through to the LP start
        pass
    from .lp import solve_lp

    n = m_s * m_a
    # maximize z subject to A w = b, w_k >= z
    obj = np.zeros(n + 1)
    obj[-1] = 1.0
    a_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    sol = solve_lp(obj, a_ub=a_ub, b_ub=np.zeros(n), a_eq=np.hstack([a_eq, np.zeros((len(b_eq), 1))]),
                   b_eq=b_eq, bounds=[(0, None)] * n + [(None, 1.0)], maximize=True)
    if sol.objective <= eta:
        raise InfeasibleError(f"no admissible allocation with every entry >= eta={eta} "
                              f"(best achievable floor {sol.objective:.3g})")
    return sol.x[:n]


def minmax_inverse_allocation(cost, p, eta: float = DEFAULT_ETA, opts: SolverOptions | None = None) -> Allocation:
    """Minimize ``max_r sum_k cost[r, k] / w_k`` over ``{admissible, w >= eta}``.

    ``cost`` is non-negative with shape ``(n_rows, N)`` (one row for a single
    objective). Rows that are identically zero are dropped.
    """
    opts = opts or SolverOptions()
    p = np.asarray(p, dtype=float)
    m_s, m_a = p.shape[:2]
    n = m_s * m_a
    cost = np.atleast_2d(np.asarray(cost, dtype=float))
    if cost.shape[1] != n:
        raise DimensionError(f"cost rows have {cost.shape[1]} entries, expected {n}")
    if np.any(cost < 0) or not np.all(np.isfinite(cost)):
        raise ValueError("cost coefficients must be finite and non-negative")
    if eta * n >= 1.0:
        raise InfeasibleError(f"eta={eta} is infeasible for {n} pairs")
    a_eq, b_eq = admissible_constraints(p)
    w = _feasible_start(a_eq, b_eq, p, eta)
    cost = cost[cost.sum(axis=1) > 0]
    if cost.shape[0] == 0:
        return Allocation(w.reshape(m_s, m_a), eta, 0.0, (0.0,), 0)

    scale = float((cost @ (1.0 / w)).max())
    c = cost / scale
    n_ineq = c.shape[0] + n

    def objective(w):
        return float((c @ (1.0 / w)).max())

    t = objective(w) * 1.5 + 1e-3
    tau = n_ineq / max(t, 1e-12)
    kkt_a = np.hstack([a_eq, np.zeros((a_eq.shape[0], 1))])
    n_eq = a_eq.shape[0]

    def barrier(w, t):
        s = t - c @ (1.0 / w)
        slack = w - eta
        if np.any(s <= 0) or np.any(slack <= 0):
            return np.inf
        return tau * t - np.log(s).sum() - np.log(slack).sum()

    history = [objective(w)]
    steps = 0
    for outer in range(opts.max_outer):
        for _ in range(opts.max_newton):
            inv = 1.0 / w
            f = c @ inv
            s = t - f
            slack = w - eta
            gf = -c * inv * inv  # rows: grad of f_r wrt w
            g = np.empty(n + 1)
            g[:n] = (gf / s[:, None]).sum(axis=0) - 1.0 / slack
            g[n] = tau - (1.0 / s).sum()
            u = np.hstack([-gf, np.ones((c.shape[0], 1))]) / s[:, None]
            h = u.T @ u
            h[np.arange(n), np.arange(n)] += (2.0 * c * inv ** 3 / s[:, None]).sum(axis=0) + 1.0 / slack ** 2
            kkt = np.block([[h, kkt_a.T], [kkt_a, np.zeros((n_eq, n_eq))]])
            rhs = np.concatenate([-g, np.zeros(n_eq)])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            dx = sol[: n + 1]
            dec = float(-g @ dx)
            if dec / 2.0 <= opts.newton_tol:
                break
            step = 1.0
            phi0 = barrier(w, t)
            while True:
                w_new, t_new = w + step * dx[:n], t + step * dx[n]
                phi = barrier(w_new, t_new)
                if phi <= phi0 - opts.armijo * step * dec:
                    break
                step *= opts.backtrack
                if step < 1e-14:
                    break
            if step < 1e-14:
                break
            w, t = w_new, t_new
            steps += 1
        else:
            raise ConvergenceError(f"centering did not converge (tau={tau:.3g}, objective={objective(w) * scale:.6g})",
                                   residual=dec, iterations=steps)
        history.append(objective(w))
        if n_ineq / tau <= opts.rel_tol * history[-1]:
            break
        tau *= opts.mu
    else:
        raise ConvergenceError(f"barrier method stopped after {opts.max_outer} outer iterations "
                               f"(objective={history[-1] * scale:.6g}, gap bound={n_ineq / tau * scale:.3g})",
                               iterations=steps)
    # re-project onto the equality constraints to remove drift from the Newton steps
    w = w - a_eq.T @ np.linalg.solve(a_eq @ a_eq.T, a_eq @ w - b_eq)
    return Allocation(w.reshape(m_s, m_a), eta, history[-1] * scale,
                      tuple(x * scale for x in history), steps)


def solve_qocba_allocation(coeffs: CostCoefficients, p, eta: float = DEFAULT_ETA,
                           opts: SolverOptions | None = None) -> Allocation:
    """Allocation maximizing the smallest relative discrepancy ``h_ij``.

    The returned ``objective`` is ``max_ij sigma^2_dQ / gap^2 = 1 / min_ij h_ij``.
    """
    return minmax_inverse_allocation(coeffs.weighted(), p, eta, opts)


def solve_chi_allocation(mu_r, sigma2_r, p, gamma, rho=None, eta: float = DEFAULT_ETA,
                         opts: SolverOptions | None = None, force: bool = False) -> Allocation:
    """Allocation minimizing the asymptotic variance of the ``chi*`` estimate."""
    c = chi_cost_coefficients(p, sigma2_r, gamma, mu_r, rho, force=force)
    return minmax_inverse_allocation(c[None, :], p, eta, opts)


@dataclass(eq=False)
class QocbaRun:
    data: TrajectoryDataset
    empirical: object
    q: np.ndarray
    policy: np.ndarray
    report: object
    policies: list = field(default_factory=list)
    allocations: list = field(default_factory=list)


def _stage_allocation(emp, gamma, rho, eta, objective, opts):
    emp.require_visited()
    if objective == "chi":
        return solve_chi_allocation(emp.mu_hat, emp.sigma2_hat, emp.p_hat, gamma, rho, eta, opts, force=True)
    coeffs = compute_cost_coefficients(emp.p_hat, emp.sigma2_hat, gamma, emp.mu_hat, force=True, check=False)
    return solve_qocba_allocation(coeffs, emp.p_hat, eta, opts)


def run_qocba(env: TabularMdp, k: int, batches, pi0, eta: float = DEFAULT_ETA, alpha: float = 0.05,
              seed=0, objective: str = "pcs", pool: bool = True, opts: SolverOptions | None = None,
              s0: int | None = None) -> QocbaRun:
    """Sequential Q-OCBA.

    Stage 1 runs ``pi0`` for ``batches[0]`` steps. After each of the first
    ``k - 1`` stages the parameters are re-estimated, the allocation problem is
    solved with the plug-ins and the next stage follows ``pi_w``. The
    trajectory continues from the last state of the previous stage. With
    ``pool`` every estimate uses all data so far, otherwise only the latest
    stage. ``objective`` is ``"pcs"`` (worst-case relative discrepancy) or
    ``"chi"`` (variance of the ``chi*`` estimate).

    Raises ``UnvisitedPairsError`` when an intermediate stage leaves some pair
    unvisited. ``alpha`` is recorded in the final report's provenance.
    """
    if k < 1 or len(batches) < k:
        raise ValueError("need k >= 1 and at least k batch lengths")
    if objective not in ("pcs", "chi"):
        raise ValueError(f"unknown objective {objective!r}")
    rng = make_rng(seed)
    policy = np.asarray(pi0, dtype=float)
    data = None
    policies, allocations = [policy], []
    state = s0
    for stage in range(k):
        chunk = collect_trajectory(env, policy, int(batches[stage]), rng, s0=state)
        state = chunk.last_state
        data = chunk if data is None or not pool else data.concat(chunk)
        if stage == k - 1:
            break
        emp = empirical_model(data)
        if emp.unvisited:
            raise UnvisitedPairsError(
                f"stage {stage + 1} left {len(emp.unvisited)} pair(s) unvisited; "
                "use a longer first batch or a more mixing initial policy", emp.unvisited)
        alloc = _stage_allocation(emp, env.gamma, env.rho, eta, objective, opts)
        allocations.append(alloc)
        policy = alloc.policy
        policies.append(policy)
    emp = empirical_model(data)
    report = None
    q = None
    if not emp.unvisited:
        q = solve_q(emp.to_mdp(env.gamma, env.rho), tol=1e-12)
        try:
            report = empirical_report(emp, env.gamma, env.rho, force=True)
            report.inputs["alpha"] = alpha
        except Exception as exc:  # noqa: BLE001 - the run itself succeeded
            log.warning("final covariance report unavailable: %s", exc)
    final_policy = None if q is None else greedy_policy(q)[0]
    return QocbaRun(data, emp, q, final_policy, report, policies, allocations)
