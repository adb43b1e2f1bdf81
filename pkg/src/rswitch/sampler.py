"""Hybrid Gibbs sampler for Markov switching models.

One sweep performs, in order,

(a) random-walk Metropolis updates of every free state-0 coefficient,
(b) the same for state 1,
(c) conjugate (truncated) Beta draws of the transition probabilities,
(d) exact block updates of the state vector over consecutive tiles,
(e) a Metropolis proposal that exchanges the two coefficient blocks and
    flips every state while keeping the transition probabilities.

Step (e) leaves the likelihood unchanged, so only the prior enters its
acceptance ratio. It lets a chain that started in the mirror-image labeling
move to the labeling favoured by the ``p01 <= p10`` ordering.

Observations are compressed into distinct (covariate row, outcome) keys with
per-period multiplicities, so that every likelihood evaluation is a weighted
sum over keys. The per-key log-likelihoods of each state are cached and the
per-period totals ``L0``/``L1`` used by the state update are rebuilt from that
cache whenever a coefficient of the state has moved.
"""

from __future__ import annotations

import enum
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import sparse
from scipy.optimize import minimize
from scipy.special import gammaln, log_expit, logsumexp

from . import _kernels
from .data import Dataset
from .errors import ChainAborted, InitializationError, SpecificationError
from .model_core import LOG_ZERO, Family, ModelSpec, StateParams, _nb_coef
from .point import ParamPoint
from .priors import PriorSpec, log_joint, log_prior
from .switching import (SwitchingLayout, TransitionProbs, free_counts,
                        log_transition_table)
from .truncbeta import TruncatedBeta

log = logging.getLogger(__name__)

THREADS_ENV = "RSWITCH_THREADS"


class ProposalShape(enum.Enum):
    NORMAL = "normal"
    CAUCHY = "cauchy"


@dataclass
class ProposalScales:
    """Random-walk scale of every free coefficient."""

    sigma: NDArray[np.float64]
    shape: ProposalShape = ProposalShape.NORMAL

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.shape = ProposalShape(self.shape)
        if np.any(~(self.sigma > 0)):
            raise SpecificationError("proposal scales must be positive")


@dataclass
class SamplerConfig:
    """Chain length, burn-in, thinning, blocking and tuning settings.

    ``G_bi`` defaults to a tenth of ``G``.
    """

    G: int = 20000
    G_bi: int | None = None
    thin: int = 3
    tau_block: int = 10
    n_chains: int = 8
    target_accept: float = 0.3
    tune_window: int = 50
    tune_factor: float = 1.25
    proposal: str = "normal"
    seed: int = 0
    label_swap: bool = True

    def __post_init__(self):
        if self.G_bi is None:
            self.G_bi = self.G // 10
        if not 0 <= self.G_bi < self.G:
            raise SpecificationError("need 0 <= G_bi < G")
        if self.thin < 1:
            raise SpecificationError("thin must be at least 1")
        if not 1 <= self.tau_block <= _kernels.MAX_BLOCK:
            raise SpecificationError(f"tau_block must lie in 1..{_kernels.MAX_BLOCK}")
        if not 0 < self.target_accept < 1:
            raise SpecificationError("target_accept must lie in (0, 1)")
        if self.n_chains < 1 or self.tune_window < 1 or self.tune_factor <= 1:
            raise SpecificationError("invalid n_chains, tune_window or tune_factor")
        ProposalShape(self.proposal)

    @property
    def n_stored(self) -> int:
        return (self.G - self.G_bi) // self.thin


@dataclass
class ChainResult:
    """Stored post-burn-in draws of one chain.

    Attributes
    ----------
    names : list of str
        Names of the continuous parameters (columns of ``draws``).
    draws : ndarray, shape (n_stored, P)
        Free coefficients, then ``p01`` and ``p10`` per free interval.
    states : ndarray of int8, shape (n_stored, T_tilde)
    loglik, logjoint : ndarray, shape (n_stored,)
    accept_rates : ndarray
        Post-burn-in acceptance rate of every free coefficient.
    tuned_scales : ProposalScales
    error : str or None
        Set when the chain aborted; the draws are then empty.
    """

    chain: int
    seed: int
    names: list[str]
    draws: NDArray[np.float64]
    states: NDArray[np.int8]
    loglik: NDArray[np.float64]
    logjoint: NDArray[np.float64]
    accept_rates: NDArray[np.float64]
    tuned_scales: ProposalScales
    G: int = 0
    G_bi: int = 0
    thin: int = 1
    n_free: int = 0
    error: str | None = None
    tune_history: list = field(default_factory=list, repr=False)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def ok(self) -> bool:
        return self.error is None


def continuous_names(spec: ModelSpec, layout: SwitchingLayout | None) -> list[str]:
    """Column names of stored continuous draws."""
    names = list(spec.free_names)
    if spec.switching:
        iv = [int(r) + 1 for r in layout.free_intervals]
        names += [f"p01[{r}]" for r in iv] + [f"p10[{r}]" for r in iv]
    return names


def chain_rng(master_seed: int, chain: int) -> np.random.Generator:
    """Counter-based generator of one chain, derived from the master seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(chain),))
    return np.random.Generator(np.random.Philox(ss))


# --------------------------------------------------------------- workspace
class Workspace:
    """Key compression of a dataset for repeated likelihood evaluation.

    Attributes
    ----------
    W : scipy.sparse.csr_matrix, shape (T_tilde, n_keys)
        Number of observations of each key in each auxiliary period.
    """

    def __init__(self, data: Dataset, spec: ModelSpec, layout: SwitchingLayout | None):
        if data.K != spec.covariate_count:
            raise SpecificationError(
                f"data has {data.K} covariates, model expects {spec.covariate_count}")
        if spec.family_state0 is Family.MNL or spec.family_state1 is Family.MNL:
            if data.y.min() < 1 or data.y.max() > spec.outcome_count:
                raise SpecificationError(f"outcomes must lie in 1..{spec.outcome_count}")
        elif len(data) and data.y.min() < 0:
            raise SpecificationError("counts must be nonnegative")
        self.spec = spec
        if spec.switching:
            period = layout.aux_period(data.t, data.n)
            T = layout.T_tilde
            if len(period) and (period.min() < 0 or period.max() >= T):
                raise SpecificationError("observation outside the layout's periods")
        else:
            period = np.zeros(len(data), dtype=np.int64)
            T = 1
        self.T = T
        Xu, uinv = np.unique(data.X, axis=0, return_inverse=True)
        uinv = uinv.ravel()
        yv, yinv = np.unique(data.y, return_inverse=True)
        code = uinv * len(yv) + yinv.ravel()
        kc, kinv = np.unique(code, return_inverse=True)
        kinv = kinv.ravel()
        self.Xu = Xu
        self.yv = yv
        self.key_u = kc // len(yv)
        self.key_yi = kc % len(yv)
        self.key_y = yv[self.key_yi]
        self.n_keys = len(kc)
        self.W = sparse.csr_matrix(
            (np.ones(len(data)), (period, kinv)), shape=(T, self.n_keys))
        self.W.sum_duplicates()
        self.w_total = np.bincount(kinv, minlength=self.n_keys).astype(float)
        self.lgam_y1 = gammaln(yv + 1.0)
        self.yv_f = yv.astype(float)
        self._ku = np.ascontiguousarray(self.key_u, dtype=np.int64)
        self._yi = np.ascontiguousarray(self.key_yi, dtype=np.int64)
        self._coef_cache = {}

    def _coef(self, ln_alpha):
        """Per-value constant of the count mass, memoized on ``ln_alpha``."""
        if ln_alpha is None:
            return -self.lgam_y1
        hit = self._coef_cache.get(ln_alpha)
        if hit is None:
            if len(self._coef_cache) > 8:
                self._coef_cache.clear()
            hit = np.empty(len(self.yv_f))
            _kernels.nb_coef(self.yv_f, ln_alpha, hit)
            self._coef_cache[ln_alpha] = hit
        return hit

    def count_logf(self, fam: Family, p: StateParams, idx=None, w=None):
        """Compiled Poisson or NB key log-likelihoods and their weighted sum."""
        nb = fam.has_alpha and p.ln_alpha > -700.0
        ln_alpha = float(p.ln_alpha) if nb else None
        ku = self._ku if idx is None else self._ku[idx]
        yi = self._yi if idx is None else self._yi[idx]
        if w is None:
            w = np.zeros(len(ku))
        out = np.empty(len(ku))
        eta_u = self.Xu @ p.beta
        tot = _kernels.count_loglik(eta_u, ku, yi, self.yv_f, self._coef(ln_alpha),
                                    ln_alpha if nb else 0.0, nb, w, out)
        return out, tot

    def logf(self, state: int, p: StateParams | None, idx=None) -> NDArray[np.float64]:
        """Log-likelihood of every key (or of keys ``idx``) under a state."""
        fam = self.spec.family(state)
        ku = self.key_u if idx is None else self.key_u[idx]
        yi = self.key_yi if idx is None else self.key_yi[idx]
        y = self.yv[yi]
        if fam is Family.ZERO_ONLY:
            return np.where(y == 0, 0.0, LOG_ZERO)
        if fam is Family.MNL:
            u = self.Xu @ p.beta.T
            lp = u - logsumexp(u, axis=1, keepdims=True)
            return lp[ku, y - 1]
        if not fam.zero_inflated:
            return self.count_logf(fam, p, idx)[0]
        eta = (self.Xu @ p.beta)[ku]
        if fam.has_alpha and p.ln_alpha > -700.0:
            alpha = math.exp(p.ln_alpha)
            r = 1.0 / alpha
            base = (_nb_coef(self.yv, r)[yi] + y * (p.ln_alpha + eta)
                    - (y + r) * np.log1p(alpha * np.exp(eta)))
        else:
            base = y * eta - np.exp(eta) - self.lgam_y1[yi]
        z = p.tau * eta if fam.has_tau else (self.Xu @ p.gamma)[ku]
        log_1mq = log_expit(-z)
        return np.where(y == 0, np.logaddexp(log_expit(z), log_1mq + base), log_1mq + base)

    def state_weights(self, s: NDArray[np.int8]) -> NDArray[np.float64]:
        """Key multiplicities over the periods in state 1."""
        W = self.W
        return _kernels.weighted_column_sums(W.indptr, W.indices, W.data, s, self.n_keys)


# -------------------------------------------------------------- MH helpers
def metropolis_step(x: float, log_density: Callable[[float], float], sigma: float,
                    rng: np.random.Generator, shape: ProposalShape = ProposalShape.NORMAL,
                    lp_x: float | None = None):
    """One random-walk Metropolis step on a scalar.

    Returns
    -------
    x_new, lp_new, accepted
    """
    if lp_x is None:
        lp_x = log_density(x)
    z = rng.standard_normal() if shape is ProposalShape.NORMAL else rng.standard_cauchy()
    y = x + sigma * z
    lp_y = log_density(y)
    lr = lp_y - lp_x
    if lr == lr and (lr >= 0.0 or math.log(rng.random()) < lr):
        return y, lp_y, True
    return x, lp_x, False


def adjust_scale(sigma: float, rate: float, target: float, factor: float) -> float:
    """Multiply ``sigma`` by ``factor`` above target, divide below, keep on a tie."""
    if rate > target:
        return sigma * factor
    if rate < target:
        return sigma / factor
    return sigma


def fit_scale(sigmas, rates, target: float, trials=None, fallback: float | None = None):
    """Scale at which a fitted decreasing exponential acceptance curve hits ``target``.

    The curve ``rate = a * exp(-b * sigma)`` is fitted to windows with rate in
    ``(0.01, 0.99)``: first by least squares on ``ln(rate)``, then refined by
    maximizing the binomial likelihood of the window acceptance counts (which
    removes the downward bias of averaging logarithms of noisy rates).
    Returns ``fallback`` when fewer than three distinct pairs are available or
    the fitted curve is not decreasing.
    """
    sig = np.asarray(sigmas, dtype=float)
    r = np.asarray(rates, dtype=float)
    n = np.ones_like(r) if trials is None else np.asarray(trials, dtype=float)
    keep = (r > 0.01) & (r < 0.99)
    sig, r, n = sig[keep], r[keep], n[keep]
    if len(set(zip(sig.tolist(), r.tolist()))) < 3 or np.ptp(sig) == 0:
        log.warning("too few distinct (scale, rate) pairs; keeping the last scale")
        return fallback
    A = np.column_stack([np.ones_like(sig), -sig])
    (c, b), *_ = np.linalg.lstsq(A, np.log(r), rcond=None)
    if trials is not None:
        k = r * n

        def nll(th):
            lp = np.minimum(th[0] - th[1] * sig, -1e-12)
            return -np.sum(k * lp + (n - k) * np.log(-np.expm1(lp)))

        res = minimize(nll, np.array([c, b]), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000})
        if res.success or res.fun <= nll(np.array([c, b])):
            c, b = res.x
    if not b > 0:
        return fallback
    out = (c - math.log(target)) / b
    return out if out > 0 else fallback


def tune_scales(history: Sequence, scales: ProposalScales, target: float = 0.3,
                window: int | None = None) -> ProposalScales:
    """Final proposal scales from burn-in acceptance history.

    Parameters
    ----------
    history : sequence
        Per coefficient, a sequence of ``(sigma, rate)`` window records.
    scales : ProposalScales
        Current scales, kept where the fit is unavailable.
    target : float
    window : int, optional
        Draws per window; enables the binomial refinement.
    """
    new = scales.sigma.copy()
    for j, rec in enumerate(history):
        if len(rec) == 0:
            continue
        rec = np.asarray(rec, dtype=float)
        trials = None if window is None else np.full(len(rec), float(window))
        v = fit_scale(rec[:, 0], rec[:, 1], target, trials, fallback=None)
        if v is not None:
            new[j] = v
    return ProposalScales(new, scales.shape)


def initial_scales(prior: PriorSpec, shape="normal") -> ProposalScales:
    mu, s2 = prior.coef.mu, prior.coef.sigma2
    return ProposalScales(np.maximum.reduce([0.1 * np.abs(mu), np.sqrt(s2) / 10.0,
                                             np.full_like(mu, 1e-3)]), shape)


# ------------------------------------------------------------------ engine
class GibbsEngine:
    """Mutable sampler state of one chain with cached likelihood terms."""

    def __init__(self, data: Dataset, spec: ModelSpec, layout: SwitchingLayout | None,
                 prior: PriorSpec, theta: ParamPoint, rng: np.random.Generator,
                 tau_block: int = 10, workspace: Workspace | None = None):
        self.data, self.spec, self.layout, self.prior = data, spec, layout, prior
        self.rng = rng
        self.tau = int(tau_block)
        self.ws = workspace or Workspace(data, spec, layout)
        self.states = (0, 1) if spec.switching else (0,)
        self.theta = theta.copy()
        self.full = spec.expand(self.theta.free)
        self.params = [spec.split(self.full, j) for j in self.states]
        self.slot = spec.free_index
        self.children = [np.array(spec.children(k), dtype=np.intp) for k in range(spec.n_free)]
        self.touch = [spec.states_touched(k) for k in range(spec.n_free)]
        self._mu = prior.coef.mu
        self._s2 = prior.coef.sigma2
        self.fams = [spec.family(j) for j in self.states]
        self.fast = [f.is_count and not f.zero_inflated and f is not Family.ZERO_ONLY
                     for f in self.fams]
        self.logf = np.zeros((2, self.ws.n_keys))
        for j in self.states:
            self.logf[j] = self.ws.logf(j, self.params[j])
        self.L = np.zeros((2, self.ws.T))
        if spec.switching:
            self._lp = np.zeros((layout.T_tilde - 1, 2, 2))
            self._slot_t = np.asarray(layout.trans_slot, dtype=np.int64)
        self.compiled = all(self.fast)
        if self.compiled:
            self._setup_kernel()
        self.stale = [True] * len(self.states)
        self.refresh()
        self._set_states(self.theta.s)
        self.swap_perm = self._label_perm()

    def _setup_kernel(self):
        spec, K = self.spec, self.spec.covariate_count
        nf = spec.n_free
        self._k_slots = np.asarray(self.slot, dtype=np.int64)
        ch = [np.asarray(c, dtype=np.int64) for c in self.children]
        self._k_chptr = np.concatenate([[0], np.cumsum([len(c) for c in ch])]).astype(np.int64)
        self._k_chidx = np.concatenate(ch + [np.zeros(0, np.int64)]).astype(np.int64)
        self._k_touch = np.array([sum(1 << j for j in t) for t in self.touch], dtype=np.int64)
        bidx = np.zeros((2, K), dtype=np.int64)
        aidx = np.full(2, -1, dtype=np.int64)
        for j in self.states:
            pos = spec.state_slots(j)
            bidx[j] = pos[:K]
            if self.fams[j].has_alpha:
                aidx[j] = pos[K]
        self._k_bidx, self._k_aidx = bidx, aidx
        self._k_acc = np.zeros(nf, dtype=np.bool_)
        self._k_stale = np.zeros(2, dtype=np.bool_)
        self._k_ll = np.zeros(2)
        self._k_mu = np.asarray(self._mu, dtype=float)
        self._k_s2 = np.asarray(self._s2, dtype=float)

    def mh_sweep(self, sigma, shape: ProposalShape = ProposalShape.NORMAL):
        """Steps (a) and (b): update every free coefficient in order.

        Returns a boolean array of acceptances.
        """
        nf = self.spec.n_free
        if not self.compiled:
            return np.array([self.mh_update_coef(k, sigma[k], shape) for k in range(nf)],
                            dtype=bool)
        rng = self.rng
        z = rng.standard_normal(nf) if shape is ProposalShape.NORMAL else rng.standard_cauchy(nf)
        with np.errstate(divide="ignore"):
            logu = np.log(rng.random(nf))
        ws = self.ws
        self._k_ll[:len(self.cur_ll)] = self.cur_ll
        self._k_stale[:] = False
        if self._suff is None:
            self._suff = _kernels.suff_stats(self._act_ptr, self._act_idx, self._act_w,
                                             ws._ku, ws._yi, ws.yv_f, len(ws.Xu), len(ws.yv))
        A, B, Wy = self._suff
        _kernels.mh_count_sweep(
            self.full, self.theta.free, self._k_slots, self._k_chptr, self._k_chidx,
            self._k_touch, self._k_bidx, self._k_aidx, ws.Xu, ws.yv_f, ws.lgam_y1,
            A, B, Wy, self._k_ll, self._k_mu, self._k_s2, np.asarray(sigma, dtype=float),
            z, logu, self._k_acc, self._k_stale)
        for j in self.states:
            self.cur_ll[j] = float(self._k_ll[j])
            if self._k_stale[j]:
                self.stale[j] = True
                self.params[j] = self.spec.split(self.full, j)
        return self._k_acc.copy()

    # cache ---------------------------------------------------------------
    def refresh(self):
        """Recompute per-key and per-period log-likelihoods of moved states."""
        for j in self.states:
            if self.stale[j]:
                self.logf[j] = self.ws.logf(j, self.params[j])
                self.L[j] = self.ws.W @ self.logf[j]
                self.stale[j] = False

    def _set_states(self, s):
        ws, W = self.ws, self.ws.W
        ptr, idx, w, ll = _kernels.active_sets(W.indptr, W.indices, W.data, s, ws.w_total,
                                               self.logf, self.spec.switching)
        self._act_ptr, self._act_idx, self._act_w = ptr, idx, w
        self._suff = None
        self.active = [(idx[ptr[j]:ptr[j + 1]], w[ptr[j]:ptr[j + 1]]) for j in self.states]
        self.cur_ll = [float(ll[j]) if ptr[j + 1] > ptr[j] else 0.0 for j in self.states]

    def loglik(self) -> float:
        return float(sum(self.cur_ll))

    def log_joint(self) -> float:
        lp = log_prior(self.theta, self.spec, self.layout, self.prior)
        return self.loglik() + lp if lp != LOG_ZERO else LOG_ZERO

    def check_cache(self) -> float:
        """Largest deviation of the cache from a from-scratch evaluation."""
        dev = 0.0
        for j in self.states:
            fresh = self.ws.logf(j, self.spec.split(self.spec.expand(self.theta.free), j))
            idx, w = self.active[j]
            ll = float(w @ fresh[idx]) if len(idx) else 0.0
            dev = max(dev, abs(ll - self.cur_ll[j]))
            if not self.stale[j]:
                L = self.ws.W @ fresh
                fin = np.isfinite(L)
                dev = max(dev, float(np.max(np.abs(L[fin] - self.L[j][fin]), initial=0.0)))
                if np.any(fin != np.isfinite(self.L[j])):
                    dev = math.inf
        return dev

    # (a), (b) ------------------------------------------------------------
    def mh_update_coef(self, k: int, sigma: float,
                       shape: ProposalShape = ProposalShape.NORMAL) -> bool:
        """Random-walk Metropolis update of free coefficient ``k``."""
        rng = self.rng
        z = rng.standard_normal() if shape is ProposalShape.NORMAL else rng.standard_cauchy()
        slot = self.slot[k]
        ch = self.children[k]
        old = self.full[slot]
        new = old + sigma * z
        self.full[slot] = new
        if len(ch):
            self.full[ch] = new
        mu, s2 = self._mu[k], self._s2[k]
        lr = -0.5 * ((new - mu) ** 2 - (old - mu) ** 2) / s2
        cand = []
        for j in self.touch[k]:
            p = self.spec.split(self.full, j)
            idx, w = self.active[j]
            if len(idx):
                if self.fast[j]:
                    v, ll = self.ws.count_logf(self.fams[j], p, idx, w)
                else:
                    v = self.ws.logf(j, p, idx)
                    ll = float(w @ v)
            else:
                v, ll = None, 0.0
            lr += ll - self.cur_ll[j]
            cand.append((j, p, v, ll))
        if lr == lr and (lr >= 0.0 or math.log(rng.random()) < lr):
            self.theta.free[k] = new
            for j, p, v, ll in cand:
                self.params[j] = p
                self.cur_ll[j] = ll
                if v is not None:
                    self.logf[j][self.active[j][0]] = v
                self.stale[j] = True
            return True
        self.full[slot] = old
        if len(ch):
            self.full[ch] = old
        return False

    # (c) -----------------------------------------------------------------
    def gibbs_update_transitions(self):
        """Conjugate draws of the transition probabilities."""
        layout, tp, rng = self.layout, self.prior.trans, self.rng
        m = free_counts(self.theta.s, layout)
        a01, b01 = m[:, 1] + tp.upsilon0, m[:, 0] + tp.nu0
        a10, b10 = m[:, 2] + tp.upsilon1, m[:, 3] + tp.nu1
        p01, p10 = self.theta.trans.p01, self.theta.trans.p10
        if not layout.restrict_p01_le_p10:
            p01[:] = rng.beta(a01, b01)
            p10[:] = rng.beta(a10, b10)
            return
        for g in range(len(p01)):
            p01[g] = _bounded_beta(a01[g], b01[g], 0.0, p10[g], rng)
            p10[g] = _bounded_beta(a10[g], b10[g], p01[g], 1.0, rng)

    # (d) -----------------------------------------------------------------
    def gibbs_update_state_block(self, t_start: int):
        """Exact draw of the block starting at auxiliary period ``t_start`` (from 1)."""
        T = self.layout.T_tilde
        if not 1 <= t_start <= T:
            raise SpecificationError(f"t_start {t_start} outside 1..{T}")
        end = min(t_start - 1 + self.tau, T)
        if end - t_start + 1 > _kernels.MAX_BLOCK:
            raise SpecificationError("block longer than 20 periods")
        self.refresh()
        lp = log_transition_table(self.theta.trans, self.layout)
        _kernels.sample_block(self.L[0], self.L[1], lp, self.theta.s, t_start - 1, end,
                              self.rng.random(), _kernels.block_buffer(end - t_start + 1))
        self._set_states(self.theta.s)

    def sweep_states(self):
        """Update all state blocks ``1..tau, tau+1..2 tau, ...``."""
        self.refresh()
        lp = self._lp
        _kernels.transition_table(self.theta.trans.p01, self.theta.trans.p10,
                                  self._slot_t, lp)
        T = self.layout.T_tilde
        u = self.rng.random(_kernels.n_blocks(T, self.tau))
        _kernels.sweep_blocks(self.L[0], self.L[1], lp, self.theta.s, self.tau, u)
        self._set_states(self.theta.s)


    # (e) -----------------------------------------------------------------
    def _label_perm(self) -> NDArray[np.intp] | None:
        """Free-coefficient permutation that exchanges the two states.

        None when the model has no such symmetry: different families,
        restrictions that differ between the states, or no ordering to
        identify the labels.
        """
        spec = self.spec
        if not (spec.switching and self.layout.restrict_p01_le_p10):
            return None
        if self.fams[0] is not self.fams[1] or self.fams[0] is Family.ZERO_ONLY:
            return None
        s0, s1 = spec.state_slots(0), spec.state_slots(1)
        if len(s0) != len(s1):
            return None
        sw = np.arange(spec.n_params)
        sw[s0], sw[s1] = s1, s0
        where = {int(f): k for k, f in enumerate(spec.free_index)}
        try:
            perm = np.array([where[int(sw[f])] for f in spec.free_index], dtype=np.intp)
        except KeyError:
            return None
        probe = np.random.default_rng(0).standard_normal(spec.n_free)
        if not np.array_equal(spec.expand(probe[perm]), spec.expand(probe)[sw]):
            return None
        return perm

    def label_swap(self) -> bool:
        """Step (e): propose exchanging the state labels.

        Returns whether the proposal was accepted. Always False for models
        without the required symmetry.
        """
        perm = self.swap_perm
        if perm is None:
            return False
        th = self.theta
        cand = ParamPoint(th.free[perm], th.trans, (1 - th.s).astype(np.int8))
        lr = (log_prior(cand, self.spec, self.layout, self.prior)
              - log_prior(th, self.spec, self.layout, self.prior))
        if not (lr >= 0.0 or math.log(self.rng.random()) < lr):
            return False
        self.refresh()
        th.free[:] = cand.free
        th.s[:] = cand.s
        self.full = self.spec.expand(th.free)
        self.params = [self.params[1], self.params[0]]
        self.logf = self.logf[::-1].copy()
        self.L = self.L[::-1].copy()
        self._set_states(th.s)
        return True


def _bounded_beta(a, b, lo, hi, rng, tries: int = 4) -> float:
    """Beta(a, b) restricted to ``[lo, hi]``.

    Plain draws are tried first (exact rejection from the untruncated law,
    cheap when the restriction is rarely binding), then the envelope sampler.
    """
    if hi <= lo:
        return float(lo)
    if lo <= 0.0 and hi >= 1.0:
        return float(rng.beta(a, b))
    for _ in range(tries):
        x = rng.beta(a, b)
        if lo <= x <= hi:
            return float(x)
    return TruncatedBeta(a, b, lo, hi).draw(rng)


# ---------------------------------------------------------------- driving
def init_theta(spec: ModelSpec, layout: SwitchingLayout | None, prior: PriorSpec,
               data: Dataset, seed=None, workspace: Workspace | None = None) -> ParamPoint:
    """Overdispersed random starting point with finite log-joint density.

    Free coefficients are drawn from normals with the prior means and twice
    the prior standard deviations, clipped at two of those standard
    deviations. Transition probabilities are uniform (sorted when the label
    ordering applies) and states are fair coin flips, except that a period is
    forced into the only state under which its data are possible.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ws = workspace or Workspace(data, spec, layout)
    sd = 2.0 * np.sqrt(prior.coef.sigma2)
    nfi = layout.n_free_intervals if spec.switching else 0
    T = layout.T_tilde if spec.switching else 0
    for _ in range(100):
        free = prior.coef.mu + sd * np.clip(rng.standard_normal(spec.n_free), -2.0, 2.0)
        u = rng.random((nfi, 2))
        if spec.switching and layout.restrict_p01_le_p10:
            u.sort(axis=1)
        s = rng.integers(0, 2, T).astype(np.int8)
        theta = ParamPoint(free, TransitionProbs(u[:, 0], u[:, 1]), s)
        if spec.switching:
            full = spec.expand(free)
            L0 = ws.W @ ws.logf(0, spec.split(full, 0))
            L1 = ws.W @ ws.logf(1, spec.split(full, 1))
            s[~np.isfinite(L0)] = 1
            s[~np.isfinite(L1)] = 0
        with np.errstate(all="ignore"):
            if np.isfinite(log_joint(data, theta, spec, layout, prior)):
                return theta
    raise InitializationError("no finite starting point after 100 attempts")


def run_chain(data: Dataset, spec: ModelSpec, layout: SwitchingLayout | None,
              prior: PriorSpec, config: SamplerConfig, chain_seed: int = 0,
              chain: int = 0, init: ParamPoint | None = None,
              progress: Callable[[int, int, float], None] | None = None) -> ChainResult:
    """Run one chain of the hybrid Gibbs sampler.

    Parameters
    ----------
    chain_seed : int
        Master seed; the chain's generator is derived from ``(chain_seed, chain)``.
    chain : int
        Chain index.
    init : ParamPoint, optional
        Starting point; drawn by :func:`init_theta` when omitted.
    progress : callable, optional
        Called as ``progress(chain, g, log_joint)`` at every stored draw.
    """
    rng = chain_rng(chain_seed, chain)
    ws = Workspace(data, spec, layout)
    theta0 = init if init is not None else init_theta(spec, layout, prior, data, rng, ws)
    eng = GibbsEngine(data, spec, layout, prior, theta0, rng, config.tau_block, ws)
    scales = initial_scales(prior, config.proposal)
    sigma = scales.sigma.copy()
    shape = scales.shape
    nfree = spec.n_free
    names = continuous_names(spec, layout)
    n_store = config.n_stored
    T = layout.T_tilde if spec.switching else 0
    draws = np.empty((n_store, len(names)))
    states = np.empty((n_store, T), dtype=np.int8)
    ll = np.empty(n_store)
    lj = np.empty(n_store)
    win_acc = np.zeros(nfree)
    post_acc = np.zeros(nfree)
    history = [[] for _ in range(nfree)]
    G, G_bi, thin, window = config.G, config.G_bi, config.thin, config.tune_window
    keep_from = G_bi - (2 * G_bi) // 3
    target, factor = config.target_accept, config.tune_factor
    stored = 0
    for g in range(1, G + 1):
        acc = eng.mh_sweep(sigma, shape)
        if g <= G_bi:
            win_acc += acc
        else:
            post_acc += acc
        if spec.switching:
            eng.gibbs_update_transitions()
            eng.sweep_states()
            if config.label_swap and eng.label_swap() and g <= G_bi:
                # scales and tuning records follow their coefficients
                perm = eng.swap_perm
                sigma, win_acc = sigma[perm], win_acc[perm]
                history = [history[k] for k in perm]
        if g <= G_bi:
            if g % window == 0:
                rates = win_acc / window
                for k in range(nfree):
                    if g - window >= keep_from:
                        history[k].append((sigma[k], rates[k]))
                    sigma[k] = adjust_scale(sigma[k], rates[k], target, factor)
                win_acc[:] = 0
            if g == G_bi and nfree:
                sigma = tune_scales(history, ProposalScales(sigma, shape), target,
                                    window).sigma
        elif (g - G_bi) % thin == 0:
            val = eng.log_joint()
            if not np.isfinite(val):
                raise ChainAborted(
                    f"chain {chain}: non-finite log-joint at draw {g}",
                    {"draw": g, "free": eng.theta.free.tolist(),
                     "p01": eng.theta.trans.p01.tolist(),
                     "p10": eng.theta.trans.p10.tolist(),
                     "loglik": eng.loglik()})
            draws[stored] = eng.theta.continuous()
            if T:
                states[stored] = eng.theta.s
            ll[stored] = eng.loglik()
            lj[stored] = val
            stored += 1
            if progress is not None:
                progress(chain, g, val)
    n_post = G - G_bi
    return ChainResult(
        chain, int(chain_seed), names, draws, states, ll, lj,
        post_acc / n_post, ProposalScales(sigma, shape), G, G_bi, thin, nfree,
        tune_history=history)


def _worker(args):
    data, spec, layout, prior, config, chain, init = args
    try:
        return run_chain(data, spec, layout, prior, config, config.seed, chain, init)
    except (ChainAborted, InitializationError, FloatingPointError) as exc:
        return _failed(spec, layout, config, chain, str(exc))


def _failed(spec, layout, config, chain, msg):
    names = continuous_names(spec, layout)
    T = layout.T_tilde if spec.switching else 0
    return ChainResult(chain, config.seed, names, np.empty((0, len(names))),
                       np.empty((0, T), dtype=np.int8), np.empty(0), np.empty(0),
                       np.full(spec.n_free, np.nan), ProposalScales(np.ones(spec.n_free)),
                       config.G, config.G_bi, config.thin, spec.n_free, msg)


def worker_count(n_tasks: int) -> int:
    """Workers allowed by ``RSWITCH_THREADS`` (default 1)."""
    try:
        n = int(os.environ.get(THREADS_ENV, "1"))
    except ValueError:
        n = 1
    return max(1, min(n, n_tasks))


def run_chains(data: Dataset, spec: ModelSpec, layout: SwitchingLayout | None,
               prior: PriorSpec, config: SamplerConfig,
               inits: Sequence[ParamPoint | None] | None = None) -> list[ChainResult]:
    """Run ``config.n_chains`` independent chains, ordered by chain index.

    Chains run in worker processes when ``RSWITCH_THREADS`` exceeds one.
    Aborted chains are returned with ``error`` set.
    """
    inits = list(inits) if inits is not None else [None] * config.n_chains
    tasks = [(data, spec, layout, prior, config, c, inits[c]) for c in range(config.n_chains)]
    workers = worker_count(len(tasks))
    if workers == 1:
        return [_worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_worker, tasks))
