"""Post-sampling inference on stored chains.

Convergence diagnostics, label-setting resolution, posterior summaries,
harmonic-mean evidence with bootstrap intervals, Bayes factors, DIC,
Monte-Carlo chi-square goodness of fit and weighted state correlations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg
from scipy.special import logsumexp

from .data import Dataset
from .datagen import draw_counts, draw_outcomes, simulate_states
from .errors import (DegenerateChainError, DimensionError, DomainError,
                     ModelDegenerateError, SpecificationError)
from .model_core import Family, ModelSpec, mnl_probs, state_moments
from .point import ParamPoint
from .priors import log_likelihood
from .switching import SwitchingLayout, TransitionProbs, stationary_probs

log = logging.getLogger(__name__)


# ------------------------------------------------------------ diagnostics
@dataclass
class DiagnosticsReport:
    """Convergence and label report over a set of chains.

    Attributes
    ----------
    psrf : ndarray
        Potential scale reduction factor per continuous parameter.
    mpsrf : float
    retained_chains : list of int
    dropped_chains : dict
        Chain index to its mean log-joint deficit.
    accept_rates : ndarray
        Mean acceptance rate per free coefficient over retained chains.
    names : list of str
    """

    psrf: NDArray[np.float64]
    mpsrf: float
    retained_chains: list[int]
    dropped_chains: dict[int, float]
    accept_rates: NDArray[np.float64]
    names: list[str] = field(default_factory=list)


def _stack(chains) -> NDArray[np.float64]:
    arrs = [np.asarray(getattr(c, "draws", c), dtype=float) for c in chains]
    arrs = [a[:, None] if a.ndim == 1 else a for a in arrs]
    if len({a.shape for a in arrs}) != 1:
        raise DimensionError("chains must have equal numbers of draws and parameters")
    return np.stack(arrs)


def psrf_mpsrf(chains: Sequence) -> tuple[NDArray[np.float64], float]:
    """Univariate and multivariate potential scale reduction factors.

    Parameters
    ----------
    chains : sequence
        ``M >= 2`` arrays of shape ``(G, P)`` (or 1-D for a scalar), or
        ChainResult objects; continuous parameters only.

    Returns
    -------
    psrf : ndarray, shape (P,)
    mpsrf : float
    """
    x = _stack(chains)
    M, G, P = x.shape
    if M < 2 or G < 2:
        raise SpecificationError("need at least 2 chains of at least 2 draws")
    means = x.mean(axis=1)
    B = np.atleast_2d(np.cov(means, rowvar=False, ddof=1))
    dev = x - means[:, None, :]
    W = np.einsum("mgi,mgj->ij", dev, dev) / (M * (G - 1))
    shrink = (G - 1) / G
    V = shrink * W + (M + 1) / M * B
    dw = np.diag(W)
    with np.errstate(divide="ignore", invalid="ignore"):
        psrf = np.sqrt(np.diag(V) / dw)
    try:
        L = linalg.cholesky(W, lower=True)
        Li = linalg.solve_triangular(L, np.eye(P), lower=True)
        lam = float(linalg.eigvalsh(Li @ B @ Li.T)[-1])
    except linalg.LinAlgError:
        log.warning("within-chain covariance is singular; using a pseudo-inverse")
        lam = float(np.max(np.linalg.eigvals(np.linalg.pinv(W) @ B).real))
    return psrf, math.sqrt(shrink + (M + 1) / M * max(lam, 0.0))


def _mean_logjoint(c) -> float:
    lj = np.asarray(getattr(c, "logjoint", c), dtype=float)
    return float(lj.mean()) if lj.size else -math.inf


def resolve_labels(chains: Sequence, delta: float = 5.0):
    """Keep chains whose mean log-joint is within ``delta`` of the best one.

    Parameters
    ----------
    chains : sequence
        ChainResult objects or log-joint traces.
    delta : float

    Returns
    -------
    retained : list of int
    dropped : dict
        Index to deficit of every dropped chain (``inf`` for empty chains).
    """
    means = np.array([_mean_logjoint(c) for c in chains])
    if not len(means) or not np.isfinite(means).any():
        raise DegenerateChainError("no chain has stored draws")
    top = means.max()
    retained, dropped = [], {}
    for i, m in enumerate(means):
        if m >= top - delta:
            retained.append(i)
        else:
            dropped[i] = float(top - m)
    return retained, dropped


def diagnose(chains: Sequence, delta: float = 5.0) -> DiagnosticsReport:
    """Label resolution followed by PSRF/MPSRF on the retained chains.

    With fewer than two retained chains the factors are NaN.
    """
    retained, dropped = resolve_labels(chains, delta)
    kept = [chains[i] for i in retained]
    names = list(getattr(kept[0], "names", []))
    if len(kept) >= 2:
        psrf, mpsrf = psrf_mpsrf(kept)
    else:
        P = np.asarray(getattr(kept[0], "draws", kept[0])).reshape(
            len(getattr(kept[0], "draws", kept[0])), -1).shape[1]
        psrf, mpsrf = np.full(P, np.nan), math.nan
    rates = [np.asarray(c.accept_rates) for c in kept if hasattr(c, "accept_rates")]
    acc = np.mean(rates, axis=0) if rates else np.zeros(0)
    return DiagnosticsReport(psrf, mpsrf, retained, dropped, acc, names)


# --------------------------------------------------------------- summaries
@dataclass
class PosteriorSummary:
    """Pooled posterior summary of retained chains.

    ``lo`` and ``hi`` are equal-tailed credible bounds at significance
    ``level`` (linear interpolation of order statistics).
    """

    names: list[str]
    mean: NDArray[np.float64]
    sd: NDArray[np.float64]
    lo: NDArray[np.float64]
    hi: NDArray[np.float64]
    state_prob: NDArray[np.float64]
    level: float = 0.05

    @property
    def state_sd(self) -> NDArray[np.float64]:
        """Posterior standard deviation of each state indicator."""
        p = self.state_prob
        return np.sqrt(p * (1.0 - p))

    def table(self) -> list[dict]:
        return [{"name": n, "mean": float(m), "sd": float(s), "lo": float(a), "hi": float(b)}
                for n, m, s, a, b in zip(self.names, self.mean, self.sd, self.lo, self.hi)]


def pooled(chains: Sequence, attr: str) -> NDArray:
    return np.concatenate([np.asarray(getattr(c, attr)) for c in chains])


def summarize(chains: Sequence, level: float = 0.05) -> PosteriorSummary:
    """Means, standard deviations, credible intervals and state probabilities.

    Parameters
    ----------
    chains : sequence of ChainResult
        Retained chains; their draws are pooled.
    level : float
        Significance ``a``; the interval spans quantiles ``a/2`` to ``1 - a/2``.
    """
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    x = pooled(chains, "draws")
    if x.shape[0] == 0:
        raise DegenerateChainError("no pooled draws")
    S = pooled(chains, "states")
    sd = x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(x.shape[1])
    lo, hi = np.quantile(x, [level / 2, 1 - level / 2], axis=0, method="linear")
    sp = S.mean(axis=0) if S.size else np.zeros(S.shape[1] if S.ndim == 2 else 0)
    return PosteriorSummary(list(chains[0].names), x.mean(axis=0), sd, lo, hi, sp, level)


def posterior_mean_point(chains: Sequence, spec: ModelSpec,
                         layout: SwitchingLayout | None) -> ParamPoint:
    """Posterior-mean coefficients and transition probabilities, with every
    state set to its rounded posterior probability."""
    x = pooled(chains, "draws").mean(axis=0)
    nf = spec.n_free
    if spec.switching:
        r = layout.n_free_intervals
        trans = TransitionProbs(x[nf:nf + r], x[nf + r:nf + 2 * r])
        s = (pooled(chains, "states").mean(axis=0) > 0.5).astype(np.int8)
    else:
        trans, s = None, np.zeros(0, dtype=np.int8)
    return ParamPoint(x[:nf].copy(), trans, s)


# ---------------------------------------------------------------- evidence
@dataclass
class ModelEvidence:
    """Harmonic-mean log marginal likelihood with a bootstrap interval."""

    log_marginal: float
    ci_lo: float
    ci_hi: float
    dic: float | None = None

    @property
    def covers_point(self) -> bool:
        return self.ci_lo <= self.log_marginal <= self.ci_hi


def log_marginal_likelihood(loglik: ArrayLike) -> float:
    """Harmonic-mean estimate ``-ln mean(exp(-LL))`` computed in log space."""
    ll = np.asarray(loglik, dtype=float).ravel()
    if ll.size == 0:
        raise DomainError("empty log-likelihood trace")
    return float(-(logsumexp(-ll) - math.log(ll.size)))


def bootstrap_marglik_ci(loglik: ArrayLike, draws: int = 100_000,
                         subsample_fraction: float = 0.01, seed: int = 0,
                         level: float = 0.05) -> tuple[float, float]:
    """Bootstrap interval of the harmonic-mean estimate.

    Each of ``draws`` replicates resamples ``subsample_fraction`` of the trace
    with replacement and evaluates the estimate; the ``level/2`` and
    ``1 - level/2`` quantiles of the replicates are returned.
    """
    ll = np.asarray(loglik, dtype=float).ravel()
    if ll.size < 100:
        raise DomainError("bootstrap needs at least 100 draws")
    if not 0 < subsample_fraction <= 1:
        raise DomainError("subsample_fraction must lie in (0, 1]")
    m = max(1, int(round(subsample_fraction * ll.size)))
    rng = np.random.default_rng(seed)
    est = np.empty(draws)
    chunk = max(1, 2_000_000 // m)
    neg = -ll
    for a in range(0, draws, chunk):
        b = min(draws, a + chunk)
        idx = rng.integers(0, ll.size, size=(b - a, m))
        est[a:b] = math.log(m) - logsumexp(neg[idx], axis=1)
    lo, hi = np.quantile(est, [level / 2, 1 - level / 2])
    return float(lo), float(hi)


def log_bayes_factor(evidence_2, evidence_1) -> float:
    """``ln f(Y | M2) - ln f(Y | M1)``; positive values favor model 2."""
    a = getattr(evidence_2, "log_marginal", evidence_2)
    b = getattr(evidence_1, "log_marginal", evidence_1)
    return float(a) - float(b)


def dic(loglik: ArrayLike, loglik_at_mean: float) -> float:
    """Deviance information criterion ``2 E[D] - D(mean)`` with ``D = -2 LL``."""
    ll = np.asarray(loglik, dtype=float).ravel()
    if ll.size == 0:
        raise DomainError("empty log-likelihood trace")
    return float(2.0 * np.mean(-2.0 * ll) + 2.0 * loglik_at_mean)


def model_evidence(chains: Sequence, data: Dataset | None = None,
                   spec: ModelSpec | None = None, layout: SwitchingLayout | None = None,
                   draws: int = 100_000, subsample_fraction: float = 0.01,
                   seed: int = 0) -> ModelEvidence:
    """Evidence of retained chains; DIC is added when the data are given."""
    ll = pooled(chains, "loglik")
    lm = log_marginal_likelihood(ll)
    lo, hi = bootstrap_marglik_ci(ll, draws, subsample_fraction, seed)
    d = None
    if data is not None and spec is not None:
        pt = posterior_mean_point(chains, spec, layout)
        d = dic(ll, log_likelihood(data, pt, spec, layout))
    ev = ModelEvidence(lm, lo, hi, d)
    if not ev.covers_point:
        log.warning("bootstrap interval [%.3f, %.3f] excludes the full-trace estimate %.3f",
                    lo, hi, lm)
    return ev


# ------------------------------------------------------------ goodness of fit
def _obs_pbar(data: Dataset, spec: ModelSpec, layout: SwitchingLayout | None,
              trans: TransitionProbs | None):
    """Stationary state probabilities governing every observation."""
    if not spec.switching:
        return np.ones(len(data)), np.zeros(len(data))
    p0, p1 = stationary_probs(np.asarray(trans.p01), np.asarray(trans.p10))
    pos = np.full(layout.R, -1)
    pos[layout.free_intervals] = np.arange(layout.n_free_intervals)
    per = layout.aux_period(data.t, data.n)
    g = pos[layout.interval_tie[layout.period_interval[per]]]
    return np.atleast_1d(p0)[g], np.atleast_1d(p1)[g]


def count_moments(data: Dataset, spec: ModelSpec, layout: SwitchingLayout | None,
                  free: ArrayLike, trans: TransitionProbs | None = None):
    """State-unconditional mean and variance of every count."""
    if spec.family_state0 is Family.MNL:
        raise SpecificationError("count model expected")
    full = spec.expand(free)
    pb0, pb1 = _obs_pbar(data, spec, layout, trans)
    m0, v0 = state_moments(spec, 0, spec.split(full, 0), data.X)
    if not spec.switching:
        return m0, v0
    m1, v1 = state_moments(spec, 1, spec.split(full, 1), data.X)
    mean = pb0 * m0 + pb1 * m1
    var = pb0 * v0 + pb1 * v1 + pb0 * pb1 * (m1 - m0) ** 2
    return mean, var


def _chisq(y, mean, var) -> float:
    y = np.asarray(y, dtype=float)
    zero = var <= 0
    if np.any(zero & (y != mean)):
        raise ModelDegenerateError("zero variance at an observation that differs from its mean")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(zero, 0.0, (y - mean) ** 2 / np.where(zero, 1.0, var))
    return float(terms.sum())


def gof_chisq_counts(data: Dataset, spec: ModelSpec, layout: SwitchingLayout | None,
                     free: ArrayLike, trans: TransitionProbs | None = None) -> float:
    """Chi-square statistic of counts against state-unconditional moments."""
    mean, var = count_moments(data, spec, layout, free, trans)
    return _chisq(data.y, mean, var)


def outcome_probs(data: Dataset, spec: ModelSpec, layout: SwitchingLayout | None,
                  free: ArrayLike, trans: TransitionProbs | None = None):
    """State-unconditional outcome probabilities, shape ``(n_obs, I)``."""
    if spec.family_state0 is not Family.MNL:
        raise SpecificationError("MNL model expected")
    full = spec.expand(free)
    pb0, pb1 = _obs_pbar(data, spec, layout, trans)
    P = pb0[:, None] * mnl_probs(spec.split(full, 0), data.X)
    if spec.switching:
        P += pb1[:, None] * mnl_probs(spec.split(full, 1), data.X)
    return P


def _chisq_mnl(y, P) -> float:
    # sum_i (d_i - P_i)^2 / P_i collapses to 1 / P_y - 1 for one-hot d
    py = P[np.arange(len(y)), np.asarray(y) - 1]
    if np.any(py <= 0):
        raise ModelDegenerateError("observed outcome has zero probability")
    return float(np.sum(1.0 / py - 1.0))


def gof_chisq_mnl(data: Dataset, spec: ModelSpec, layout: SwitchingLayout | None,
                  free: ArrayLike, trans: TransitionProbs | None = None) -> float:
    """Pearson chi-square of observed outcomes against mixed MNL probabilities."""
    return _chisq_mnl(data.y, outcome_probs(data, spec, layout, free, trans))


def gof_statistic(data, spec, layout, free, trans=None) -> float:
    if spec.family_state0 is Family.MNL:
        return gof_chisq_mnl(data, spec, layout, free, trans)
    return gof_chisq_counts(data, spec, layout, free, trans)


def gof_pvalue(data: Dataset, spec: ModelSpec, layout: SwitchingLayout | None,
               free: ArrayLike, trans: TransitionProbs | None = None,
               replicates: int = 10_000, seed: int = 0,
               observed: float | None = None) -> float:
    """Monte-Carlo p-value of the chi-square statistic.

    Replicate datasets reuse the covariates of ``data``; states are regenerated
    from the transition probabilities and outcomes from the fitted model.

    Parameters
    ----------
    observed : float, optional
        Observed statistic; computed from ``data`` when omitted.

    Returns
    -------
    float
        Fraction of replicates whose statistic exceeds the observed one.
    """
    if replicates < 100:
        raise DomainError("at least 100 replicates are needed")
    mnl = spec.family_state0 is Family.MNL
    if mnl:
        P = outcome_probs(data, spec, layout, free, trans)
    else:
        mean, var = count_moments(data, spec, layout, free, trans)
    if observed is None:
        observed = _chisq_mnl(data.y, P) if mnl else _chisq(data.y, mean, var)
    root = np.random.SeedSequence(int(seed))
    per = layout.aux_period(data.t, data.n) if spec.switching else None
    exceed = 0
    for child in root.spawn(replicates):
        rng = np.random.default_rng(child)
        if spec.switching:
            st = simulate_states(layout, trans, rng)[per].astype(np.int64)
        else:
            st = np.zeros(len(data), dtype=np.int64)
        if mnl:
            stat = _chisq_mnl(draw_outcomes(spec, free, data.X, st, rng), P)
        else:
            stat = _chisq(draw_counts(spec, free, data.X, st, rng), mean, var)
        exceed += stat > observed
    return exceed / replicates


# ------------------------------------------------------------- correlation
def weighted_state_correlation(state_prob: ArrayLike, state_sd: ArrayLike,
                               series: ArrayLike) -> float:
    """Weighted Pearson correlation between state probabilities and a series.

    Weights are ``min(1/sd, median(1/sd))``, so periods with zero posterior
    spread get the capped weight. When more than half of the periods have
    zero spread the cap is infinite and equal weights are used.
    """
    p = np.asarray(state_prob, dtype=float)
    sd = np.asarray(state_sd, dtype=float)
    x = np.asarray(series, dtype=float)
    if not (p.shape == sd.shape == x.shape) or p.ndim != 1:
        raise DimensionError("inputs must be 1-D arrays of equal length")
    with np.errstate(divide="ignore"):
        inv = 1.0 / sd
    cap = np.median(inv)
    w = np.ones_like(p) if not np.isfinite(cap) else np.minimum(inv, cap)
    w = w / w.sum()
    mp, mx = w @ p, w @ x
    cov = w @ ((p - mp) * (x - mx))
    vp, vx = w @ (p - mp) ** 2, w @ (x - mx) ** 2
    if not (vp > 0 and vx > 0):
        raise DomainError("correlation is undefined for a constant input")
    return float(cov / math.sqrt(vp * vx))
