"""MDP definition files.

TOML layout (all indices 0-based, ``transition[s][a]`` is the next-state
distribution of pair ``(s, a)``)::

    m_s = 2                      # optional, checked against the arrays
    m_a = 2                      # optional
    gamma = 0.9
    rho = [0.5, 0.5]             # optional, uniform by default
    transition = [[[1.0, 0.0], [0.0, 1.0]],
                  [[1.0, 0.0], [0.0, 1.0]]]

    [reward]
    mean = [[1.0, 0.0], [0.0, 2.0]]
    var = [[0.0, 0.0], [0.0, 0.0]]   # optional, zeros by default
    family = "deterministic"         # or "gaussian" / "bernoulli", or an m_s x m_a table

    [cost]                           # constrained MDPs only
    mean = [[0.0, 1.0], [0.0, 1.0]]
    var = [[0.0, 0.0], [0.0, 0.0]]
    family = "gaussian"
    budget = 4.0

Rows of ``transition`` and ``rho`` must sum to 1 within 1e-9; accepted rows
are renormalized to exact probability vectors.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .mdp import DETERMINISTIC, TabularMdp

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FILE_ROW_TOL = 1e-9


def read_toml(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _prob_rows(arr, what):
    arr = np.asarray(arr, dtype=float)
    sums = arr.sum(axis=-1)
    if np.any(arr < 0) or np.any(np.abs(sums - 1.0) > FILE_ROW_TOL):
        bad = np.argwhere(np.abs(np.atleast_1d(sums) - 1.0) > FILE_ROW_TOL)
        raise ConfigError(f"{what}: rows must be probability vectors (offending rows {bad.tolist()})")
    return arr / sums[..., None] if arr.ndim > 1 else arr / sums


def _channel(table, shape, what):
    if "mean" not in table:
        raise ConfigError(f"[{what}] needs a 'mean' table")
    mean = np.asarray(table["mean"], dtype=float)
    var = np.asarray(table.get("var", np.zeros(shape)), dtype=float)
    if mean.shape != shape or var.shape != shape:
        raise ConfigError(f"[{what}] mean/var must have shape {shape}")
    return mean, var, table.get("family", DETERMINISTIC)


def mdp_from_dict(doc: dict) -> TabularMdp:
    try:
        p = _prob_rows(doc["transition"], "transition")
        gamma = doc["gamma"]
    except KeyError as exc:
        raise ConfigError(f"MDP definition is missing {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise ConfigError(f"transition must be a rectangular m_s x m_a x m_s array: {exc}") from exc
    if p.ndim != 3 or p.shape[0] != p.shape[2]:
        raise ConfigError(f"transition must have shape (m_s, m_a, m_s), got {p.shape}")
    m_s, m_a = p.shape[:2]
    for key, val in (("m_s", m_s), ("m_a", m_a)):
        if key in doc and doc[key] != val:
            raise ConfigError(f"{key} = {doc[key]} disagrees with the transition array ({val})")
    rho = _prob_rows(doc["rho"], "rho") if "rho" in doc else None
    if "reward" not in doc:
        raise ConfigError("MDP definition needs a [reward] table")
    mean, var, fam = _channel(doc["reward"], (m_s, m_a), "reward")
    try:
        return TabularMdp(p, mean, gamma, rho, var, fam)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_mdp(path) -> TabularMdp:
    return mdp_from_dict(read_toml(path))


def load_constrained_mdp(path):
    from .constrained import ConstrainedMdp

    doc = read_toml(path)
    base = mdp_from_dict(doc)
    if "cost" not in doc or "budget" not in doc["cost"]:
        raise ConfigError("constrained MDP needs a [cost] table with a 'budget'")
    mean, var, fam = _channel(doc["cost"], (base.m_s, base.m_a), "cost")
    try:
        return ConstrainedMdp(base, mean, float(doc["cost"]["budget"]), var, fam)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _fmt(x):
    if isinstance(x, str):
        return f'"{x}"'
    arr = np.asarray(x)
    if arr.ndim == 0:
        return repr(float(arr)) if arr.dtype.kind == "f" else str(arr.item())
    return "[" + ", ".join(_fmt(v) for v in arr) + "]"


def dump_mdp(model: TabularMdp, path, cost=None) -> None:
    """Write ``model`` (and optionally a ``ConstrainedMdp``'s cost channel)."""
    fam = model.reward_family
    lines = [
        f"m_s = {model.m_s}",
        f"m_a = {model.m_a}",
        f"gamma = {model.gamma!r}",
        f"rho = {_fmt(model.rho)}",
        f"transition = {_fmt(model.transition)}",
        "",
        "[reward]",
        f"mean = {_fmt(model.reward_mean)}",
        f"var = {_fmt(model.reward_var)}",
        f"family = {_fmt(fam.flat[0]) if np.all(fam == fam.flat[0]) else _fmt(fam.astype(str))}",
    ]
    if cost is not None:
        cfam = cost.cost_family
        lines += [
            "",
            "[cost]",
            f"mean = {_fmt(cost.cost_mean)}",
            f"var = {_fmt(cost.cost_var)}",
            f"family = {_fmt(cfam.flat[0]) if np.all(cfam == cfam.flat[0]) else _fmt(cfam.astype(str))}",
            f"budget = {cost.budget!r}",
        ]
    Path(path).write_text("\n".join(lines) + "\n")
