"""Monte-Carlo experiments on RiverSwim (or any MDP file).

Config files are TOML::

    kind = "coverage"            # coverage | correct-selection | ci-length | qocba-run | solve
    seed = 7
    reps = 1000
    alpha = 0.05
    n = [10000, 50000]           # one block of rows per budget
    threads = 1                  # optional; QINFER_THREADS or --threads override

    [env]                        # RiverSwimSpec fields, mdp = "model.toml" or fixture = "fix_d"
    m_s = 6
    r_l = 2.0

    [policy]                     # exploration policy for coverage runs
    p_right = 0.8

    [approx]                     # optional: approximate value iteration path
    stride = 3                   # or  states = [0, 3, 6, 9, 12]

    [protocol]                   # correct-selection / ci-length
    warm_fraction = 0.3
    warm_p_right = 0.6

    [[agents]]
    kind = "qocba"               # qocba | qocba-chi | re | eps-greedy | psrl
    [[agents]]
    kind = "re"
    p_right = 0.6

    [qocba]                      # qocba-run and the Q-OCBA agents
    k = 2
    batches = [3000, 7000]
    eta = 1e-6
    rel_tol = 1e-4
    pool = true

Result CSV columns are ``quantity,estimate,half_width,valid_reps``. Floats
are written with 6 significant digits and ``NA`` marks undefined cells.
Coverage and length averages use the replications where every needed pair
was visited (``valid_reps``); correct-selection proportions count a
replication that could not produce a policy as incorrect.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .approx import approx_fixed_point, approx_q_covariance, interp_jacobian, representative_states
from .baselines import EpsGreedy, Psrl, RandomExplore, random_explore_policy
from .errors import ConfigError, QInferError
from .estimation import collect_trajectory, empirical_model
from .inference import empirical_report, z_quantile
from .mdp import TabularMdp, greedy_policy, solve_q
from .mdpfile import load_mdp, read_toml
from .qocba import DEFAULT_ETA, SolverOptions, run_qocba
from .riverswim import RiverSwimSpec, build_riverswim
from .rng import make_rng

log = logging.getLogger(__name__)

KINDS = ("coverage", "correct-selection", "ci-length", "qocba-run", "solve")
AGENT_KINDS = ("qocba", "qocba-chi", "re", "eps-greedy", "psrl")
THREADS_ENV = "QINFER_THREADS"
CSV_HEADER = ("quantity", "estimate", "half_width", "valid_reps")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int = 0
    reps: int = 100
    alpha: float = 0.05
    n: tuple = (10_000,)
    threads: int | None = None
    env: dict = field(default_factory=dict)
    policy: dict = field(default_factory=lambda: {"p_right": 0.8})
    approx: dict | None = None
    protocol: dict = field(default_factory=lambda: {"warm_fraction": 0.3, "warm_p_right": 0.6})
    agents: tuple = ()
    qocba: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        n = (self.n,) if isinstance(self.n, int) else tuple(self.n)
        if not n or any(int(x) < 1 for x in n):
            raise ConfigError("n must be a positive integer or a non-empty list of them")
        object.__setattr__(self, "n", tuple(int(x) for x in n))
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        for a in self.agents:
            if a.get("kind") not in AGENT_KINDS:
                raise ConfigError(f"unknown agent kind {a.get('kind')!r}; expected one of {AGENT_KINDS}")
        object.__setattr__(self, "agents", tuple(dict(a) for a in self.agents))

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "ExperimentConfig":
        known = {"kind", "seed", "reps", "alpha", "n", "threads", "env", "policy", "approx",
                 "protocol", "agents", "qocba"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "kind" not in doc:
            raise ConfigError("config needs a 'kind'")
        kw = dict(doc)
        if "protocol" in kw:
            kw["protocol"] = {"warm_fraction": 0.3, "warm_p_right": 0.6, **kw["protocol"]}
        try:
            return cls(**kw, base_dir=str(base_dir))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(read_toml(path), Path(path).resolve().parent)

    def build_env(self) -> TabularMdp:
        env = dict(self.env)
        if "fixture" in env:
            from . import fixtures

            if len(env) > 1:
                raise ConfigError("[env] with 'fixture' takes no other keys")
            try:
                return fixtures.load(env["fixture"])
            except FileNotFoundError as exc:
                raise ConfigError(f"unknown fixture {env['fixture']!r}") from exc
        if "mdp" in env:
            path = Path(env.pop("mdp"))
            if env:
                raise ConfigError("[env] with 'mdp' takes no other keys")
            return load_mdp(path if path.is_absolute() else Path(self.base_dir) / path)
        try:
            return build_riverswim(RiverSwimSpec(**env))
        except TypeError as exc:
            raise ConfigError(f"[env]: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"[env]: {exc}") from exc

    def solver_options(self) -> SolverOptions:
        keys = ("rel_tol", "mu", "max_newton", "max_outer", "newton_tol")
        return SolverOptions(**{k: self.qocba[k] for k in keys if k in self.qocba})

    def replace(self, **kw) -> "ExperimentConfig":
        doc = {k: getattr(self, k) for k in self.__dataclass_fields__}
        doc.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig(**doc)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return "NA"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.6g}"


def _pretty(x) -> str:
    text = _fmt(x)
    if isinstance(x, (float, np.floating)) and text.lstrip("-").isdigit():
        text += ".0"
    return text


@dataclass
class ResultTable:
    """Rows of ``(quantity, estimate, half_width, valid_reps)``."""

    title: str = ""
    rows: list = field(default_factory=list)

    def add(self, quantity: str, estimate, half_width=None, valid_reps=None):
        self.rows.append((quantity, estimate, half_width, valid_reps))

    def add_proportion(self, quantity: str, hits: int, reps: int):
        """Proportion with half-width ``1.96 sqrt(p (1 - p) / reps)``."""
        if reps == 0:
            self.add(quantity, None, None, 0)
            return
        p = hits / reps
        self.add(quantity, p, proportion_half_width(p, reps), reps)

    def add_mean(self, quantity: str, values):
        values = np.asarray(values, dtype=float)
        values = values[np.isfinite(values)]
        if values.size == 0:
            self.add(quantity, None, None, 0)
            return
        hw = 1.96 * values.std(ddof=1) / np.sqrt(values.size) if values.size > 1 else None
        self.add(quantity, float(values.mean()), hw, int(values.size))

    def get(self, quantity: str):
        for row in self.rows:
            if row[0] == quantity:
                return row
        raise KeyError(quantity)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for q, est, hw, valid in self.rows:
            w.writerow((q, _fmt(est), _fmt(hw), _fmt(valid)))
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def summary(self) -> str:
        width = max([len(r[0]) for r in self.rows] + [8])
        lines = [self.title] if self.title else []
        for q, est, hw, valid in self.rows:
            tail = f" ({_fmt(hw)})" if hw is not None else ""
            if valid is not None:
                tail += f"  [valid {_fmt(valid)}]"
            lines.append(f"{q:<{width}} = {_pretty(est)}{tail}")
        return "\n".join(lines)


def proportion_half_width(p: float, reps: int) -> float:
    return 1.96 * float(np.sqrt(p * (1.0 - p) / reps))


def resolve_threads(threads: int | None = None) -> int:
    """``threads`` argument, else ``QINFER_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else 1
    return max(1, int(threads))


def replicate(fn, cfg, reps: int, threads: int = 1, args=()) -> list:
    """``[fn(cfg, r, *args) for r in range(reps)]``, optionally over a process pool.

    Each replication derives its own random stream from ``(cfg.seed, r, ...)``
    so the ordered result list does not depend on ``threads``.
    """
    if threads <= 1 or reps == 1:
        return [fn(cfg, r, *args) for r in range(reps)]
    chunk = max(1, reps // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, [cfg] * reps, range(reps), *[[a] * reps for a in args], chunksize=chunk))


# ---------------------------------------------------------------- coverage


def _coverage_rep(cfg: ExperimentConfig, r: int, n_index: int):
    env = cfg.build_env()
    n = cfg.n[n_index]
    policy = random_explore_policy(cfg.policy.get("p_right", 0.8), env.m_s) \
        if "table" not in cfg.policy else random_explore_policy(cfg.policy["table"])
    data = collect_trajectory(env, policy, n, make_rng(cfg.seed, r, n_index))
    emp = empirical_model(data)
    z = z_quantile(cfg.alpha)
    if cfg.approx:
        return _approx_coverage(cfg, env, emp, n, z)
    if emp.unvisited:
        return None
    q_true = solve_q(env, tol=1e-12)
    v_true = q_true.max(axis=1)
    try:
        rep = empirical_report(emp, env.gamma, env.rho, force=True)
    except QInferError:
        return None
    hw_q = z * np.sqrt(np.diag(rep.sigma_q) / n)
    hw_v = z * np.sqrt(np.diag(rep.sigma_v) / n)
    hw_chi = z * np.sqrt(rep.sigma_chi / n)
    chi_hat, chi_true = float(env.rho @ rep.v), float(env.rho @ v_true)
    return {
        "q_cover": np.abs(rep.q.ravel() - q_true.ravel()) <= hw_q,
        "v_cover": np.abs(rep.v - v_true) <= hw_v,
        "chi_cover": abs(chi_hat - chi_true) <= hw_chi,
        "q_len": float(2 * hw_q.mean()),
        "chi_len": 2 * hw_chi,
    }


def _knot_map(cfg, env):
    ap = cfg.approx
    s0 = representative_states(env.m_s, stride=ap.get("stride"), states=ap.get("states"))
    return interp_jacobian(env.m_s, env.m_a, s0)


def _approx_coverage(cfg, env, emp, n, z):
    gmap = _knot_map(cfg, env)
    s0 = list(gmap.s0)
    if np.any(emp.w_hat[s0] == 0):
        return None
    q_true, _ = approx_fixed_point(env.reward_mean, env.transition, env.gamma, gmap, tol=1e-12)
    try:
        sigma, q_hat = approx_q_covariance(emp.mu_hat, emp.sigma2_hat, emp.p_hat, emp.w_hat, env.gamma,
                                           gmap, force=True)
    except QInferError:
        return None
    hw_q = z * np.sqrt(np.diag(sigma) / n)
    best = q_hat.argmax(axis=1)
    sel = np.zeros((env.m_s, env.n_pairs))
    sel[np.arange(env.m_s), np.arange(env.m_s) * env.m_a + best] = 1.0
    var_chi = float(env.rho @ sel @ sigma @ sel.T @ env.rho)
    hw_chi = z * np.sqrt(var_chi / n)
    chi_hat, chi_true = float(env.rho @ q_hat.max(axis=1)), float(env.rho @ q_true.max(axis=1))
    return {
        "q_cover": np.abs(q_hat.ravel() - q_true.ravel()) <= hw_q,
        "v_cover": None,
        "chi_cover": abs(chi_hat - chi_true) <= hw_chi,
        "q_len": float(2 * hw_q.mean()),
        "chi_len": 2 * hw_chi,
    }


def coverage_experiment(cfg: ExperimentConfig, threads: int | None = None) -> ResultTable:
    """Coverage of the plug-in CIs for Q, V* and chi* (or their approximate counterparts)."""
    env = cfg.build_env()
    threads = resolve_threads(threads if threads is not None else cfg.threads)
    table = ResultTable(f"coverage ({'approximate' if cfg.approx else 'exact'}), "
                        f"{cfg.reps} replications, alpha={cfg.alpha}")
    for i, n in enumerate(cfg.n):
        res = replicate(_coverage_rep, cfg, cfg.reps, threads, (i,))
        ok = [x for x in res if x is not None]
        table.add_proportion(f"n={n} NA", cfg.reps - len(ok), cfg.reps)
        if not ok:
            continue
        q_cov = np.array([x["q_cover"] for x in ok])
        table.add_proportion(f"n={n} Q coverage (avg over pairs)", float(q_cov.mean()) * len(ok), len(ok))
        table.add_proportion(f"n={n} chi coverage", sum(bool(x["chi_cover"]) for x in ok), len(ok))
        if ok[0]["v_cover"] is not None:
            v_cov = np.array([x["v_cover"] for x in ok])
            table.add_proportion(f"n={n} V coverage (avg over states)", float(v_cov.mean()) * len(ok), len(ok))
        table.add_mean(f"n={n} Q CI length (avg over pairs)", [x["q_len"] for x in ok])
        table.add_mean(f"n={n} chi CI length", [x["chi_len"] for x in ok])
        for k in range(env.n_pairs):
            s, a = divmod(k, env.m_a)
            table.add_proportion(f"n={n} Q({s},{a}) coverage", int(q_cov[:, k].sum()), len(ok))
    return table


# ------------------------------------------------- agents / two-stage runs


def _agent_label(spec: dict) -> str:
    kind = spec["kind"]
    if kind == "re":
        return f"RE({spec.get('p_right', 0.6)})"
    if kind == "eps-greedy":
        return f"{spec.get('eps', 0.2)}-greedy"
    if kind == "psrl":
        return f"PSRL({spec.get('episodes', 100)})"
    return {"qocba": "Q-OCBA", "qocba-chi": "Q-OCBA-chi"}[kind]


def two_stage_run(cfg: ExperimentConfig, env: TabularMdp, spec: dict, n: int, rng):
    """Warm start with RE(warm_p_right) for ``warm_fraction * n`` steps, then the agent.

    Returns the pooled dataset. Raises ``QInferError`` when the agent cannot
    proceed (e.g. Q-OCBA after a warm start that missed some pair).
    """
    warm_n = int(round(cfg.protocol["warm_fraction"] * n))
    warm_policy = random_explore_policy(spec.get("warm_p_right", cfg.protocol["warm_p_right"]), env.m_s)
    kind = spec["kind"]
    if kind in ("qocba", "qocba-chi"):
        if warm_n < 1:
            raise ConfigError("Q-OCBA needs a positive warm start")
        run = run_qocba(env, 2, [warm_n, n - warm_n], warm_policy,
                        eta=cfg.qocba.get("eta", DEFAULT_ETA), alpha=cfg.alpha, seed=rng,
                        objective="chi" if kind == "qocba-chi" else "pcs",
                        pool=cfg.qocba.get("pool", True), opts=cfg.solver_options())
        return run.data
    warm = collect_trajectory(env, warm_policy, max(warm_n, 1), rng)
    if kind == "re":
        agent = RandomExplore(random_explore_policy(spec.get("p_right", 0.6), env.m_s))
    elif kind == "eps-greedy":
        agent = EpsGreedy(spec.get("eps", 0.2), spec.get("refresh", 0.1))
    else:
        agent = Psrl(env.m_s, env.m_a, spec.get("episodes", 100), spec.get("prior_count", 1.0),
                     spec.get("prior_mean", 0.0), spec.get("prior_var", 100.0), env.reward_var)
    if n - warm_n < 1:
        return warm
    return warm.concat(agent.explore(env, warm, n - warm_n, rng))


def _selection_rep(cfg: ExperimentConfig, r: int, n_index: int, agent_index: int):
    env = cfg.build_env()
    n = cfg.n[n_index]
    rng = make_rng(cfg.seed, r, n_index, agent_index)
    best, _ = greedy_policy(solve_q(env, tol=1e-12))
    try:
        data = two_stage_run(cfg, env, cfg.agents[agent_index], n, rng)
    except QInferError:
        return None
    emp = empirical_model(data)
    if emp.unvisited:
        return None
    pi, _ = greedy_policy(solve_q(emp.to_mdp(env.gamma, env.rho), tol=1e-10))
    return bool(np.array_equal(pi, best))


def correct_selection_experiment(cfg: ExperimentConfig, threads: int | None = None) -> ResultTable:
    """Probability that the greedy policy of the final plug-in Q is optimal everywhere."""
    if not cfg.agents:
        raise ConfigError("correct-selection needs at least one [[agents]] entry")
    threads = resolve_threads(threads if threads is not None else cfg.threads)
    table = ResultTable(f"correct selection, {cfg.reps} replications")
    for i, n in enumerate(cfg.n):
        for j, spec in enumerate(cfg.agents):
            res = replicate(_selection_rep, cfg, cfg.reps, threads, (i, j))
            label = f"n={n} {_agent_label(spec)}"
            table.add_proportion(f"{label} PCS", sum(bool(x) for x in res), cfg.reps)
            table.add_proportion(f"{label} NA", sum(x is None for x in res), cfg.reps)
    return table


def _length_rep(cfg: ExperimentConfig, r: int, n_index: int, agent_index: int):
    env = cfg.build_env()
    n = cfg.n[n_index]
    rng = make_rng(cfg.seed, r, n_index, agent_index)
    try:
        data = two_stage_run(cfg, env, cfg.agents[agent_index], n, rng)
        emp = empirical_model(data)
        if emp.unvisited:
            return None
        rep = empirical_report(emp, env.gamma, env.rho, force=True)
    except QInferError:
        return None
    q_true = solve_q(env, tol=1e-12)
    z = z_quantile(cfg.alpha)
    hw_q = z * np.sqrt(np.diag(rep.sigma_q) / n)
    hw_chi = z * np.sqrt(rep.sigma_chi / n)
    chi_true = float(env.rho @ q_true.max(axis=1))
    return {
        "q_len": float(2 * hw_q.mean()),
        "chi_len": 2 * hw_chi,
        "q_cover": float(np.mean(np.abs(rep.q.ravel() - q_true.ravel()) <= hw_q)),
        "chi_cover": abs(float(env.rho @ rep.v) - chi_true) <= hw_chi,
    }


def ci_length_experiment(cfg: ExperimentConfig, threads: int | None = None) -> ResultTable:
    """Average Q and chi* CI lengths and coverages per exploration agent."""
    if not cfg.agents:
        raise ConfigError("ci-length needs at least one [[agents]] entry")
    threads = resolve_threads(threads if threads is not None else cfg.threads)
    table = ResultTable(f"CI length, {cfg.reps} replications, alpha={cfg.alpha}")
    for i, n in enumerate(cfg.n):
        for j, spec in enumerate(cfg.agents):
            res = replicate(_length_rep, cfg, cfg.reps, threads, (i, j))
            ok = [x for x in res if x is not None]
            label = f"n={n} {_agent_label(spec)}"
            table.add_proportion(f"{label} NA", cfg.reps - len(ok), cfg.reps)
            table.add_mean(f"{label} Q CI length", [x["q_len"] for x in ok])
            table.add_mean(f"{label} chi CI length", [x["chi_len"] for x in ok])
            if ok:
                table.add_proportion(f"{label} Q coverage", sum(x["q_cover"] for x in ok), len(ok))
                table.add_proportion(f"{label} chi coverage", sum(bool(x["chi_cover"]) for x in ok), len(ok))
    return table


# ---------------------------------------------------------- single runs


def qocba_run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> ResultTable:
    """One sequential Q-OCBA run; reports the final Q-hat with CI half-widths."""
    env = cfg.build_env()
    qc = cfg.qocba
    n = cfg.n[0]
    k = int(qc.get("k", 2))
    batches = qc.get("batches")
    if batches is None:
        warm = int(round(cfg.protocol["warm_fraction"] * n))
        batches = [warm] + [(n - warm) // (k - 1)] * (k - 1) if k > 1 else [n]
    pi0 = random_explore_policy(cfg.protocol["warm_p_right"], env.m_s)
    run = run_qocba(env, k, batches, pi0, eta=qc.get("eta", DEFAULT_ETA), alpha=cfg.alpha,
                    seed=make_rng(cfg.seed), objective=qc.get("objective", "pcs"),
                    pool=qc.get("pool", True), opts=cfg.solver_options())
    table = ResultTable(f"Q-OCBA run, K={k}, batches={list(batches)}")
    if run.report is None:
        table.add("final NA", 1.0, None, 0)
        return table
    z = z_quantile(cfg.alpha)
    nd = run.data.n
    sig = np.diag(run.report.sigma_q)
    for idx in range(env.n_pairs):
        s, a = divmod(idx, env.m_a)
        table.add(f"Q({s},{a})", run.report.q.ravel()[idx], z * np.sqrt(sig[idx] / nd), 1)
    table.add("chi", float(env.rho @ run.report.v), z * np.sqrt(run.report.sigma_chi / nd), 1)
    for s in range(env.m_s):
        table.add(f"policy({s})", int(run.report.q[s].argmax()), None, 1)
    for stage, alloc in enumerate(run.allocations, start=2):
        for idx, wk in enumerate(alloc.w.ravel()):
            s, a = divmod(idx, env.m_a)
            table.add(f"stage{stage} w({s},{a})", float(wk), None, 1)
    return table


def solve_experiment(cfg: ExperimentConfig, threads: int | None = None) -> ResultTable:
    """Exact Q*, V* and chi* of the configured model."""
    env = cfg.build_env()
    q = solve_q(env, tol=1e-12)
    table = ResultTable("exact solution")
    for idx, val in enumerate(q.ravel()):
        s, a = divmod(idx, env.m_a)
        table.add(f"Q({s},{a})", float(val))
    v = q.max(axis=1)
    for s in range(env.m_s):
        table.add(f"V({s})", float(v[s]))
    table.add("chi", float(env.rho @ v))
    return table


RUNNERS = {
    "coverage": coverage_experiment,
    "correct-selection": correct_selection_experiment,
    "ci-length": ci_length_experiment,
    "qocba-run": qocba_run_experiment,
    "solve": solve_experiment,
}


def run_experiment(cfg: ExperimentConfig, threads: int | None = None) -> ResultTable:
    return RUNNERS[cfg.kind](cfg, threads)
