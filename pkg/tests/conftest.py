import math
import sys

import numpy as np
import pytest

from rswitch.data import Dataset
from rswitch.datagen import SimRecipe, panel_design, simulate_with_states
from rswitch.model_core import ModelSpec
from rswitch.point import ParamPoint
from rswitch.priors import CoefPrior, PriorSpec, default_transition_prior
from rswitch.sampler import GibbsEngine
from rswitch.switching import TransitionProbs, build_weekly_layout


def flat_prior(n_free: int, var: float = 100.0) -> PriorSpec:
    return PriorSpec(CoefPrior(np.zeros(n_free), np.full(n_free, var)),
                     default_transition_prior())


def make_engine(data, spec, layout, free, p01, p10, s, seed=0, tau=10, prior=None):
    theta = ParamPoint(np.asarray(free, float), TransitionProbs(p01, p10),
                       np.asarray(s, dtype=np.int8))
    prior = prior or flat_prior(spec.n_free)
    return GibbsEngine(data, spec, layout, prior, theta, np.random.default_rng(seed), tau)


def small_weekly(T=40, N=10, seed=0, family=("negbin", "negbin")):
    """Small two-state weekly panel with its true states."""
    spec = ModelSpec(family[0], family[1], 2)
    lay = build_weekly_layout(T, N)
    free = {"negbin": [0.0, 0.3, math.log(0.5), 0.8, -0.2, math.log(0.3)],
            "poisson": [0.0, 0.3, 0.8, -0.2]}[family[0]]
    t, n, X, names = panel_design(T, N, 2, seed=seed)
    rec = SimRecipe(spec, lay, np.array(free), TransitionProbs(0.2, 0.4), t, n, X, names, seed)
    data, s = simulate_with_states(rec)
    return data, spec, lay, np.array(free), s


@pytest.fixture
def weekly_nb():
    return small_weekly()


def toy_dataset(y, X=None, t=None, n=None):
    y = np.asarray(y)
    X = np.ones((len(y), 1)) if X is None else np.asarray(X, float)
    t = np.arange(1, len(y) + 1) if t is None else t
    n = np.ones(len(y), dtype=int) if n is None else n
    return Dataset(t, n, y, X, [f"x{k}" for k in range(X.shape[1])])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = [mod.RESULTS[k] for k in sorted(mod.RESULTS)] if mod else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
