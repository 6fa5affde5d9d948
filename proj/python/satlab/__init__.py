"""Exact finite-support experiments on mixture pretraining and feature transfer."""

import json

from ._core import *  # noqa: F401,F403
from ._core import SatlabError
from ._core import run as _run


def run_command(command, config, jobs=1, seed=None):
    """Run a CLI experiment in-process. `config` is a dict; returns {filename: text}."""
    return _run(command, json.dumps(config), jobs, seed)


__all__ = ["SatlabError", "run_command"]
