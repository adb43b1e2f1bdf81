"""Forward simulation of switching count and outcome models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .data import Dataset
from .errors import SpecificationError
from .model_core import Family, ModelSpec, mnl_probs
from .switching import SwitchingLayout, TransitionProbs


@dataclass
class SimRecipe:
    """Everything needed to simulate a dataset.

    Attributes
    ----------
    spec : ModelSpec
    layout : SwitchingLayout or None
        ``None`` for single-state models.
    free : ndarray
        True free coefficients.
    trans : TransitionProbs or None
    t, n : ndarray of int
        Real period and unit (from 1) of every observation.
    X : ndarray, shape (n_obs, K)
    names : list of str
        Covariate names.
    seed : int
    """

    spec: ModelSpec
    layout: SwitchingLayout | None
    free: NDArray[np.float64]
    trans: TransitionProbs | None
    t: NDArray[np.int64]
    n: NDArray[np.int64]
    X: NDArray[np.float64]
    names: list[str]
    seed: int = 0

    def __post_init__(self):
        self.free = np.asarray(self.free, dtype=float)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.X.shape[1] != self.spec.covariate_count:
            raise SpecificationError("covariate dimension does not match the model")
        if self.spec.switching and (self.layout is None or self.trans is None):
            raise SpecificationError("switching recipes need a layout and transition probabilities")


def panel_design(T: int, N: int, K: int, seed: int = 0, per_unit: bool = True):
    """Balanced panel with standard-normal non-intercept covariates.

    Parameters
    ----------
    T, N : int
        Periods and units.
    K : int
        Covariates including the intercept.
    per_unit : bool
        Draw covariates once per unit (constant over time, like fixed unit
        characteristics) rather than once per observation.

    Returns
    -------
    t, n, X, names
    """
    rng = np.random.default_rng(seed)
    t = np.repeat(np.arange(1, T + 1), N)
    n = np.tile(np.arange(1, N + 1), T)
    if per_unit:
        Z = rng.standard_normal((N, K - 1))[n - 1]
    else:
        Z = rng.standard_normal((T * N, K - 1))
    X = np.column_stack([np.ones(T * N), Z])
    return t, n, X, ["intercept"] + [f"x{k}" for k in range(1, K)]


def _rngs(seed):
    ss = np.random.SeedSequence(int(seed))
    a, b = ss.spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def simulate_states(layout: SwitchingLayout, trans: TransitionProbs, seed=0) -> NDArray[np.int8]:
    """Markov state path with fair-coin starts after history-independent periods."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    T = layout.T_tilde
    u = rng.random(T)
    s = np.empty(T, dtype=np.int8)
    s[0] = u[0] < 0.5
    slot = layout.trans_slot
    p01 = np.asarray(trans.p01, dtype=float)
    p10 = np.asarray(trans.p10, dtype=float)
    for t in range(1, T):
        g = slot[t - 1]
        if g < 0:
            s[t] = u[t] < 0.5
        elif s[t - 1] == 0:
            s[t] = u[t] < p01[g]
        else:
            s[t] = u[t] >= p10[g]
    return s


def _obs_states(recipe, s):
    if not recipe.spec.switching:
        return np.zeros(len(recipe.t), dtype=np.int64)
    return s[recipe.layout.aux_period(recipe.t, recipe.n)].astype(np.int64)


def draw_counts(spec: ModelSpec, free, X, states, rng) -> NDArray[np.int64]:
    """Counts of every observation given its state."""
    full = spec.expand(free)
    y = np.zeros(len(states), dtype=np.int64)
    for j in (0, 1) if spec.switching else (0,):
        m = states == j
        fam = spec.family(j)
        if not m.any() or fam is Family.ZERO_ONLY:
            continue
        p = spec.split(full, j)
        eta = X[m] @ p.beta
        lam = np.exp(eta)
        if fam.has_alpha:
            alpha = p.alpha
            lam = rng.gamma(1.0 / alpha, alpha * lam)
        cnt = rng.poisson(lam)
        if fam.zero_inflated:
            z = p.tau * eta if fam.has_tau else X[m] @ p.gamma
            q = 1.0 / (1.0 + np.exp(-z))
            cnt[rng.random(len(cnt)) < q] = 0
        y[m] = cnt
    return y


def draw_outcomes(spec: ModelSpec, free, X, states, rng) -> NDArray[np.int64]:
    """Outcome indices (from 1) of every observation given its state."""
    full = spec.expand(free)
    y = np.zeros(len(states), dtype=np.int64)
    for j in (0, 1) if spec.switching else (0,):
        m = states == j
        if not m.any():
            continue
        P = mnl_probs(spec.split(full, j), X[m])
        cum = np.cumsum(P, axis=1)
        u = rng.random(len(P))[:, None]
        y[m] = 1 + np.minimum((u > cum).sum(axis=1), P.shape[1] - 1)
    return y


def simulate_with_states(recipe: SimRecipe):
    """Simulate a dataset and return it with the true state path."""
    r_states, r_obs = _rngs(recipe.seed)
    spec = recipe.spec
    s = (simulate_states(recipe.layout, recipe.trans, r_states) if spec.switching
         else np.zeros(0, dtype=np.int8))
    st = _obs_states(recipe, s)
    if spec.family_state0 is Family.MNL:
        y = draw_outcomes(spec, recipe.free, recipe.X, st, r_obs)
    else:
        y = draw_counts(spec, recipe.free, recipe.X, st, r_obs)
    return Dataset(recipe.t, recipe.n, y, recipe.X, list(recipe.names)), s


def simulate_counts(recipe: SimRecipe) -> Dataset:
    """Simulate counts from a count-family recipe."""
    if recipe.spec.family_state0 is Family.MNL:
        raise SpecificationError("count recipe expected")
    return simulate_with_states(recipe)[0]


def simulate_severities(recipe: SimRecipe) -> Dataset:
    """Simulate outcome indices from an MNL recipe."""
    if recipe.spec.family_state0 is not Family.MNL:
        raise SpecificationError("MNL recipe expected")
    return simulate_with_states(recipe)[0]


def truth_record(recipe: SimRecipe, states: ArrayLike) -> dict:
    """Serializable description of the true parameters and states."""
    out = {"free_names": list(recipe.spec.free_names),
           "free": [float(v) for v in recipe.free],
           "states": [int(v) for v in np.asarray(states)],
           "seed": int(recipe.seed)}
    if recipe.trans is not None:
        out["p01"] = [float(v) for v in recipe.trans.p01]
        out["p10"] = [float(v) for v in recipe.trans.p10]
    return out
