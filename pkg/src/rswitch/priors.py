"""Prior distributions and the log-joint density of data and parameters.

Free coefficients get independent normal priors, free transition
probabilities get Beta priors (with the label ordering indicator where the
layout requires it) and the state vector gets its Markov prior.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import betaln, xlog1py, xlogy

from .data import Dataset
from .errors import DimensionError, SpecificationError
from .model_core import LOG_ZERO, ModelSpec, assemble_params, loglik_terms
from .point import ParamPoint
from .switching import SwitchingLayout, log_state_prior

FALLBACK_VARIANCE = 10.0
_LN_2PI = float(np.log(2.0 * np.pi))


@dataclass
class CoefPrior:
    """Independent normal priors of the free coefficients."""

    mu: NDArray[np.float64]
    sigma2: NDArray[np.float64]

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float))
        if self.mu.shape != self.sigma2.shape:
            raise DimensionError("mu and sigma2 differ in length")
        if np.any(~(self.sigma2 > 0)):
            raise SpecificationError("prior variances must be positive")

    def logpdf(self, values: ArrayLike) -> NDArray[np.float64]:
        """Per-coefficient normal log-densities."""
        v = np.asarray(values, dtype=float)
        return -0.5 * (_LN_2PI + np.log(self.sigma2) + (v - self.mu) ** 2 / self.sigma2)


@dataclass(frozen=True)
class TransitionPrior:
    """Beta shapes: ``p01 ~ Beta(upsilon0, nu0)``, ``p10 ~ Beta(upsilon1, nu1)``."""

    upsilon0: float = 1.0
    nu0: float = 1.0
    upsilon1: float = 1.0
    nu1: float = 1.0

    def __post_init__(self):
        if min(self.upsilon0, self.nu0, self.upsilon1, self.nu1) <= 0:
            raise SpecificationError("Beta shapes must be positive")


@dataclass
class PriorSpec:
    coef: CoefPrior
    trans: TransitionPrior


def derive_hyperparams(mle_estimates: ArrayLike, mle_variances: ArrayLike) -> CoefPrior:
    """Normal prior centred on an MLE with ten times its scale.

    ``sigma2 = 10 * max(value**2, variance)``; a coefficient with value and
    variance both zero falls back to ``sigma2 = 10``.
    """
    v = np.atleast_1d(np.asarray(mle_estimates, dtype=float))
    var = np.atleast_1d(np.asarray(mle_variances, dtype=float))
    if v.shape != var.shape:
        raise DimensionError("estimates and variances differ in length")
    if np.any(var < 0):
        raise SpecificationError("variances must be nonnegative")
    s2 = 10.0 * np.maximum(v ** 2, var)
    s2[s2 == 0] = FALLBACK_VARIANCE
    return CoefPrior(v.copy(), s2)


def default_transition_prior() -> TransitionPrior:
    """Uniform priors on both transition probabilities."""
    return TransitionPrior(1.0, 1.0, 1.0, 1.0)


def baseline_name(name: str) -> str:
    """Single-state slot name matching a switching-model slot (``beta1[2]`` -> ``beta[2]``)."""
    head, sep, tail = name.partition("[")
    if head and head[-1] in "01":
        head = head[:-1]
    return head + sep + tail


def prior_from_estimates(spec: ModelSpec, estimates: Mapping[str, float],
                         variances: Mapping[str, float],
                         overrides: Mapping[str, Mapping[str, float]] | None = None,
                         trans: TransitionPrior | None = None) -> PriorSpec:
    """Prior of a (switching) model from single-state estimates.

    Each free slot takes the estimate and variance of its single-state
    counterpart; slots without a counterpart get value and variance zero
    (hence the fallback variance).

    Parameters
    ----------
    spec : ModelSpec
    estimates, variances : mapping
        Keyed by single-state slot names such as ``beta[1]`` or ``ln_alpha``.
    overrides : mapping, optional
        ``{"mu": {slot: value}, "sigma2": {slot: value}}`` keyed by the
        model's own slot names; applied after derivation.
    trans : TransitionPrior, optional
    """
    vals = np.array([estimates.get(baseline_name(n), 0.0) for n in spec.free_names])
    var = np.array([variances.get(baseline_name(n), 0.0) for n in spec.free_names])
    coef = derive_hyperparams(vals, var)
    for key, target in (("mu", coef.mu), ("sigma2", coef.sigma2)):
        for name, value in (overrides or {}).get(key, {}).items():
            if name not in spec.free_names:
                raise SpecificationError(f"prior override for non-free slot {name!r}")
            target[spec.free_names.index(name)] = float(value)
    return PriorSpec(CoefPrior(coef.mu, coef.sigma2), trans or default_transition_prior())


def _log_beta_density(p, a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        return xlogy(a - 1.0, p) + xlog1py(b - 1.0, -p) - betaln(a, b)


def log_prior(theta: ParamPoint, spec: ModelSpec, layout: SwitchingLayout | None,
              prior: PriorSpec) -> float:
    """Log prior density up to a global constant.

    Returns ``LOG_ZERO`` when the label ordering ``p01 <= p10`` is required
    by the layout but violated.
    """
    val = float(prior.coef.logpdf(theta.free).sum())
    if not spec.switching:
        return val
    p01, p10 = theta.trans.p01, theta.trans.p10
    if layout.restrict_p01_le_p10 and np.any(p01 > p10):
        return LOG_ZERO
    tp = prior.trans
    val += float(_log_beta_density(p01, tp.upsilon0, tp.nu0).sum()
                 + _log_beta_density(p10, tp.upsilon1, tp.nu1).sum())
    return val + log_state_prior(theta.s, theta.trans, layout, include_constant=False)


def obs_states(data: Dataset, theta: ParamPoint, spec: ModelSpec,
               layout: SwitchingLayout | None) -> NDArray[np.int64]:
    """State governing each observation."""
    if not spec.switching:
        return np.zeros(len(data), dtype=np.int64)
    return theta.s[layout.aux_period(data.t, data.n)].astype(np.int64)


def log_likelihood(data: Dataset, theta: ParamPoint, spec: ModelSpec,
                   layout: SwitchingLayout | None) -> float:
    """``ln f(Y | coefficients, S)``; transition probabilities do not enter."""
    params = assemble_params(spec, theta.free)
    states = obs_states(data, theta, spec, layout)
    total = 0.0
    for j in (0, 1) if spec.switching else (0,):
        m = states == j
        if m.any():
            total += float(loglik_terms(spec, j, params[j], data.X[m], data.y[m]).sum())
    return total


def log_joint(data: Dataset, theta: ParamPoint, spec: ModelSpec,
              layout: SwitchingLayout | None, prior: PriorSpec) -> float:
    """``ln f(Y, Theta)`` up to a global constant."""
    lp = log_prior(theta, spec, layout, prior)
    if lp == LOG_ZERO:
        return LOG_ZERO
    return log_likelihood(data, theta, spec, layout) + lp
