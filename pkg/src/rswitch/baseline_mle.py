"""Maximum-likelihood fits of single-state count and outcome models."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import minimize
from scipy.special import digamma, logsumexp

from .data import Dataset
from .errors import SpecificationError
from .model_core import Family, ModelSpec, Restriction, RestrictionKind, loglik_terms
from .priors import baseline_name

log = logging.getLogger(__name__)

MAX_ITER = 500
GTOL = 1e-6
N_RESTARTS = 5


@dataclass
class MleFit:
    """Result of a maximum-likelihood fit.

    Attributes
    ----------
    names : list of str
        Free parameter names.
    estimates : ndarray
    covariance : ndarray
        Inverse observed information.
    loglik : float
    converged : bool
    iterations : int
    n_obs : int
    flags : list of str
        ``"boundary"`` when the NB over-dispersion collapses towards zero,
        ``"separation"`` for diverging coefficients, ``"singular"`` when the
        observed information is not positive definite.
    """

    names: list[str]
    estimates: NDArray[np.float64]
    covariance: NDArray[np.float64]
    loglik: float
    converged: bool
    iterations: int
    n_obs: int = 0
    flags: list[str] = field(default_factory=list)

    @property
    def std_errors(self) -> NDArray[np.float64]:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def as_dicts(self):
        """Estimates and variances keyed by parameter name."""
        var = np.diag(self.covariance)
        return (dict(zip(self.names, map(float, self.estimates))),
                dict(zip(self.names, map(float, var))))


def baseline_spec(spec: ModelSpec, state: int = 1) -> ModelSpec:
    """Single-state spec with the family and zero restrictions of one state."""
    if not spec.switching:
        return spec
    fam = spec.family(state)
    if fam is Family.ZERO_ONLY:
        raise SpecificationError("the zero-only state has no baseline")
    restr = {}
    for name, r in spec.restrictions.items():
        if r.kind is RestrictionKind.ZERO and spec.slot_state(spec.slot(name)) == state:
            restr[baseline_name(name)] = Restriction(RestrictionKind.ZERO)
    return ModelSpec(fam, None, spec.covariate_count, restr, spec.outcome_count)


def _check(spec: ModelSpec, data: Dataset):
    if spec.switching:
        raise SpecificationError("maximum likelihood is for single-state models")
    if len(data) == 0:
        raise SpecificationError("empty dataset")
    if data.K != spec.covariate_count:
        raise SpecificationError(
            f"data has {data.K} covariates, model expects {spec.covariate_count}")


def log_likelihood_free(spec: ModelSpec, data: Dataset, free: ArrayLike) -> float:
    """Log-likelihood of a single-state model at free parameter values."""
    p = spec.split(spec.expand(free), 0)
    return float(loglik_terms(spec, 0, p, data.X, data.y).sum())


def _full_gradient(spec: ModelSpec, data: Dataset, full: NDArray) -> NDArray | None:
    fam = spec.family_state0
    X, y = data.X, data.y
    p = spec.split(full, 0)
    if fam is Family.POISSON:
        return X.T @ (y - np.exp(X @ p.beta))
    if fam is Family.NEGBIN:
        lam = np.exp(X @ p.beta)
        alpha = np.exp(p.ln_alpha)
        r = 1.0 / alpha
        al = alpha * lam
        g_beta = X.T @ ((y - lam) / (1.0 + al))
        g_la = np.sum(-r * (digamma(y + r) - digamma(r)) + y + r * np.log1p(al)
                      - (y + r) * al / (1.0 + al))
        return np.append(g_beta, g_la)
    if fam is Family.MNL:
        u = X @ p.beta.T
        P = np.exp(u - logsumexp(u, axis=1, keepdims=True))
        D = np.zeros_like(P)
        D[np.arange(len(y)), y - 1] = 1.0
        return ((D - P)[:, :-1].T @ X).ravel()
    return None


def _numeric_gradient(f, x, h=1e-5):
    g = np.empty_like(x)
    for j in range(len(x)):
        step = h * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = step
        g[j] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def gradient(spec: ModelSpec, data: Dataset, free: ArrayLike, numeric: bool = False):
    """Gradient of the log-likelihood with respect to the free parameters.

    Analytic for Poisson, NB and MNL; central differences otherwise or when
    ``numeric`` is set.
    """
    free = np.asarray(free, dtype=float)
    gfull = None if numeric else _full_gradient(spec, data, spec.expand(free))
    if gfull is None:
        return _numeric_gradient(lambda v: log_likelihood_free(spec, data, v), free)
    g = gfull[spec.free_index].copy()
    for i, p in spec.tied:
        g[p] += gfull[i]
    return g


def hessian(spec: ModelSpec, data: Dataset, free: ArrayLike) -> NDArray[np.float64]:
    """Central-difference Hessian of the log-likelihood."""
    free = np.asarray(free, dtype=float)
    n = len(free)
    H = np.empty((n, n))
    for j in range(n):
        step = 1e-4 * max(1.0, abs(free[j]))
        e = np.zeros(n)
        e[j] = step
        H[:, j] = (gradient(spec, data, free + e) - gradient(spec, data, free - e)) / (2 * step)
    return 0.5 * (H + H.T)


def _default_init(spec: ModelSpec, data: Dataset) -> NDArray[np.float64]:
    full = np.zeros(spec.n_params)
    fam = spec.family_state0
    if fam.is_count:
        full[0] = np.log(max(data.y.mean(), 1e-3))
    return full[spec.free_index]


def _optimize(spec, data, x0):
    f = lambda v: -log_likelihood_free(spec, data, v)
    g = lambda v: -gradient(spec, data, v)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        res = minimize(f, x0, jac=g, method="BFGS",
                       options={"maxiter": MAX_ITER, "gtol": GTOL})
    x = res.x
    # Newton polishing with the finite-difference Hessian
    for _ in range(20):
        gr = gradient(spec, data, x)
        if np.max(np.abs(gr)) <= GTOL * max(1.0, len(data)) * 1e-3:
            break
        H = hessian(spec, data, x)
        try:
            step = np.linalg.solve(H, -gr)
        except np.linalg.LinAlgError:
            break
        ll0 = -f(x)
        t = 1.0
        while t > 1e-8:
            cand = x + t * step
            if np.isfinite(f(cand)) and -f(cand) >= ll0:
                break
            t /= 2
        if t <= 1e-8:
            break
        x = cand
    return x, int(res.nit)


def fit_mle(spec: ModelSpec, data: Dataset, init: ArrayLike | None = None,
            seed: int = 0) -> MleFit:
    """Maximize the log-likelihood of a single-state model.

    Zero-inflated families are restarted from ``N_RESTARTS`` jittered starts
    and the best optimum is kept.
    """
    _check(spec, data)
    if spec.n_free == 0:
        ll = log_likelihood_free(spec, data, np.zeros(0))
        return MleFit([], np.zeros(0), np.zeros((0, 0)), ll, True, 0, len(data))
    x0 = _default_init(spec, data) if init is None else np.asarray(init, dtype=float)
    starts = [x0]
    if spec.family_state0.zero_inflated:
        rng = np.random.default_rng(seed)
        starts += [x0 + rng.normal(0.0, 0.5, x0.shape) for _ in range(N_RESTARTS - 1)]
    best = None
    iters = 0
    for s in starts:
        x, it = _optimize(spec, data, s)
        iters += it
        ll = log_likelihood_free(spec, data, x)
        if np.isfinite(ll) and (best is None or ll > best[1]):
            best = (x, ll)
    x, ll = best
    ll0 = log_likelihood_free(spec, data, x0)
    if not ll >= ll0:
        x, ll = x0, ll0
    g = gradient(spec, data, x)
    converged = bool(np.max(np.abs(g)) <= 1e-5 * max(1.0, len(data)))
    flags = []
    H = hessian(spec, data, x)
    try:
        np.linalg.cholesky(-H)
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(-H)
        flags.append("singular")
    cov = 0.5 * (cov + cov.T)
    for j, name in enumerate(spec.free_names):
        if name.startswith("ln_alpha") and x[j] < -10.0:
            flags.append("boundary")
        elif abs(x[j]) > 30.0:
            flags.append("separation")
    if flags:
        log.info("MLE flags: %s", ", ".join(sorted(set(flags))))
    return MleFit(list(spec.free_names), x, cov, ll, converged, iters, len(data),
                  sorted(set(flags)))


def aic_bic(fit: MleFit, n_obs: int) -> tuple[float, float]:
    """Akaike and Bayesian information criteria."""
    K = len(fit.estimates)
    return 2 * K - 2 * fit.loglik, K * np.log(n_obs) - 2 * fit.loglik
