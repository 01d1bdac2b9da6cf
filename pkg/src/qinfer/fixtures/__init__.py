"""Small MDPs used by the tests, the acceptance suite and the scripts.

``fix_a`` .. ``fix_d`` are plain MDPs, ``fix_e`` / ``fix_e_slack`` are
constrained ones (binding and non-binding budget).
"""

from importlib import resources

from ..mdpfile import load_constrained_mdp, load_mdp


def path(name: str):
    return resources.files(__name__).joinpath(f"{name}.toml")


def load(name: str):
    with resources.as_file(path(name)) as p:
        if name.startswith("fix_e"):
            return load_constrained_mdp(p)
        return load_mdp(p)
