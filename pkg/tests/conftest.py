import numpy as np
import pytest

from qinfer import fixtures
from qinfer.estimation import collect_trajectory, empirical_model
from qinfer.mdp import policy_value, solve_q
from qinfer.riverswim import build_riverswim
from qinfer.rng import make_rng

MC_REPS = 2000
MC_N = 200_000


@pytest.fixture(scope="session")
def fix_d():
    return fixtures.load("fix_d")


@pytest.fixture(scope="session")
def riverswim6():
    return build_riverswim(m_s=6)


@pytest.fixture(scope="session")
def fix_d_mc(fix_d):
    """Q-hat and uniform-policy V-hat over independent FIX-D replications.

    Data are collected under the uniform policy, so the same sample serves
    the optimal-Q oracle and the fixed-policy oracle.
    """
    uniform = np.full((fix_d.m_s, fix_d.m_a), 1.0 / fix_d.m_a)
    q_hats = np.empty((MC_REPS, fix_d.n_pairs))
    v_pi = np.empty((MC_REPS, fix_d.m_s))
    for r in range(MC_REPS):
        data = collect_trajectory(fix_d, uniform, MC_N, make_rng(99, r))
        model = empirical_model(data).to_mdp(fix_d.gamma, fix_d.rho)
        q_hats[r] = solve_q(model, tol=1e-12).ravel()
        v_pi[r] = policy_value(model, uniform)
    return {"q": q_hats, "v_pi": v_pi, "n": MC_N, "policy": uniform}


def rel_frobenius(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@pytest.fixture(scope="session")
def fix_e():
    return fixtures.load("fix_e")


@pytest.fixture(scope="session")
def fix_e_mc(fix_e):
    """Constrained optimal value re-solved from independent FIX-E samples."""
    from qinfer.constrained import constrained_value, empirical_constrained_mdp

    base = fix_e.base
    uniform = np.full((base.m_s, base.m_a), 1.0 / base.m_a)
    v_hats = np.empty((MC_REPS, base.m_s))
    for r in range(MC_REPS):
        data = collect_trajectory(base, uniform, MC_N, make_rng(77, r), cost=fix_e)
        cm = empirical_constrained_mdp(empirical_model(data), base.gamma, base.rho, fix_e.budget)
        v_hats[r] = constrained_value(cm)[0]
    return {"v": v_hats, "n": MC_N, "policy": uniform}


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
