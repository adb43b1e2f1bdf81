"""Observation likelihoods for the supported count and outcome families.

All densities are evaluated on the log scale. ``LOG_ZERO`` (negative
infinity) encodes an impossible observation and is absorbing under addition.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import betaln, gammaln, log_expit, logsumexp

from .errors import DimensionError, DomainError, SpecificationError

LOG_ZERO = -np.inf


class Family(enum.Enum):
    """Likelihood family governing the observations of one state."""

    POISSON = "poisson"
    NEGBIN = "negbin"
    ZIP_TAU = "zip_tau"
    ZIP_GAMMA = "zip_gamma"
    ZINB_TAU = "zinb_tau"
    ZINB_GAMMA = "zinb_gamma"
    MNL = "mnl"
    ZERO_ONLY = "zero_only"

    @property
    def has_alpha(self) -> bool:
        return self in (Family.NEGBIN, Family.ZINB_TAU, Family.ZINB_GAMMA)

    @property
    def has_tau(self) -> bool:
        return self in (Family.ZIP_TAU, Family.ZINB_TAU)

    @property
    def has_gamma(self) -> bool:
        return self in (Family.ZIP_GAMMA, Family.ZINB_GAMMA)

    @property
    def zero_inflated(self) -> bool:
        return self.has_tau or self.has_gamma

    @property
    def is_count(self) -> bool:
        return self is not Family.MNL


@dataclass
class StateParams:
    """Full parameter set of one state.

    Attributes
    ----------
    beta : ndarray
        Coefficients, shape ``(K,)``. For MNL the shape is ``(I, K)`` and the
        last row is identically zero.
    ln_alpha : float or None
        Log over-dispersion (negative binomial variants).
    tau : float or None
        Rate-linked zero-inflation coefficient.
    gamma : ndarray or None
        Covariate-linked zero-inflation coefficients, shape ``(K,)``.
    """

    beta: NDArray[np.float64]
    ln_alpha: float | None = None
    tau: float | None = None
    gamma: NDArray[np.float64] | None = None

    @property
    def alpha(self) -> float:
        return float(np.exp(self.ln_alpha)) if self.ln_alpha is not None else 0.0


class RestrictionKind(enum.Enum):
    FREE = "free"
    ZERO = "zero"
    MINUS_INFINITY = "minus_infinity"
    TIED = "tied"


@dataclass(frozen=True)
class Restriction:
    """How one parameter slot is determined.

    ``parent`` is the slot name of the free parameter a tied slot copies.
    """

    kind: RestrictionKind = RestrictionKind.FREE
    parent: str | None = None

    @classmethod
    def parse(cls, text: "str | Restriction") -> "Restriction":
        """Build a restriction from ``free``, ``zero``, ``-inf`` or ``tie:<slot>``."""
        if isinstance(text, Restriction):
            return text
        t = str(text).strip()
        low = t.lower()
        if low == "free":
            return cls()
        if low in ("zero", "0"):
            return cls(RestrictionKind.ZERO)
        if low in ("-inf", "minus_infinity", "minus-infinity"):
            return cls(RestrictionKind.MINUS_INFINITY)
        if low.startswith("tie:") or low.startswith("tied:"):
            return cls(RestrictionKind.TIED, t.split(":", 1)[1].strip())
        raise SpecificationError(f"unknown restriction {text!r}")


def _state_slots(family: Family, K: int, I: int | None, tag: str) -> list[str]:
    if family is Family.ZERO_ONLY:
        return []
    if family is Family.MNL:
        return [f"beta{tag}[{i},{k}]" for i in range(1, I) for k in range(K)]
    names = [f"beta{tag}[{k}]" for k in range(K)]
    if family.has_alpha:
        names.append(f"ln_alpha{tag}")
    if family.has_tau:
        names.append(f"tau{tag}")
    if family.has_gamma:
        names += [f"gamma{tag}[{k}]" for k in range(K)]
    return names


@dataclass(init=False)
class ModelSpec:
    """Families, covariate layout and restrictions of a (switching) model.

    Parameters
    ----------
    family_state0 : Family
        Family of state 0 (the only state of a single-state model).
    family_state1 : Family or None
        Family of state 1; ``None`` for a single-state model.
    covariate_count : int
        Number of covariates K including the leading intercept.
    restrictions : mapping, optional
        Slot name to restriction (a :class:`Restriction` or its text form).
        Slots not listed are free.
    outcome_count : int, optional
        Number of outcomes I for MNL families.

    Notes
    -----
    Slots are named ``beta0[k]``, ``ln_alpha0``, ``tau0``, ``gamma0[k]`` and
    ``beta0[i,k]`` (MNL, outcome ``i`` counted from 1) for state 0 and likewise
    with suffix 1 for state 1. Single-state models drop the state suffix.
    Covariate ``k = 0`` is the intercept. A ``-inf`` restriction on
    ``beta0[0]`` turns state 0 into the zero-only family.
    """

    family_state0: Family
    family_state1: Family | None
    covariate_count: int
    outcome_count: int | None
    restrictions: dict[str, Restriction]
    names: list[str] = field(repr=False)

    def __init__(
        self,
        family_state0: Family | str,
        family_state1: Family | str | None = None,
        covariate_count: int = 1,
        restrictions: Mapping[str, "str | Restriction"] | None = None,
        outcome_count: int | None = None,
    ):
        f0 = Family(family_state0)
        f1 = None if family_state1 is None else Family(family_state1)
        if covariate_count < 1:
            raise SpecificationError("covariate_count must be positive")
        if Family.MNL in (f0, f1):
            if outcome_count is None or outcome_count < 2:
                raise SpecificationError("MNL needs outcome_count >= 2")
            if {f0, f1} - {Family.MNL, None}:
                raise SpecificationError("MNL cannot be mixed with count families")
        restr = {k: Restriction.parse(v) for k, v in (restrictions or {}).items()}
        if f1 is not None:
            minus = [k for k, r in restr.items() if r.kind is RestrictionKind.MINUS_INFINITY]
            if minus:
                if minus != ["beta0[0]"] or f0 not in (Family.POISSON, Family.NEGBIN):
                    raise SpecificationError(
                        "-inf is only allowed for the state-0 intercept of a count model")
                dropped = set(_state_slots(f0, covariate_count, outcome_count, "0"))
                f0 = Family.ZERO_ONLY
                restr = {k: r for k, r in restr.items() if k not in dropped}
        elif any(r.kind is RestrictionKind.MINUS_INFINITY for r in restr.values()):
            raise SpecificationError("-inf restriction requires a switching model")
        if f0 is Family.ZERO_ONLY and f1 is None:
            raise SpecificationError("zero-only is only valid as state 0 of a switching model")
        if f1 is Family.ZERO_ONLY:
            raise SpecificationError("zero-only is only valid as state 0")
        self.family_state0 = f0
        self.family_state1 = f1
        self.covariate_count = int(covariate_count)
        self.outcome_count = None if outcome_count is None else int(outcome_count)
        if f1 is None:
            self.names = _state_slots(f0, self.covariate_count, self.outcome_count, "")
            self._state_of = [0] * len(self.names)
        else:
            n0 = _state_slots(f0, self.covariate_count, self.outcome_count, "0")
            n1 = _state_slots(f1, self.covariate_count, self.outcome_count, "1")
            self.names = n0 + n1
            self._state_of = [0] * len(n0) + [1] * len(n1)
        index = {n: i for i, n in enumerate(self.names)}
        unknown = set(restr) - set(index)
        if unknown:
            raise SpecificationError(f"unknown parameter slots {sorted(unknown)}")
        for name, r in restr.items():
            if r.kind is RestrictionKind.TIED:
                if r.parent not in index:
                    raise SpecificationError(f"{name} tied to unknown slot {r.parent!r}")
                if restr.get(r.parent, Restriction()).kind is not RestrictionKind.FREE:
                    raise SpecificationError(f"{name} tied to non-free slot {r.parent}")
        self.restrictions = restr
        kinds = [restr.get(n, Restriction()).kind for n in self.names]
        self.free_index = np.array(
            [i for i, k in enumerate(kinds) if k is RestrictionKind.FREE], dtype=np.intp)
        self.free_names = [self.names[i] for i in self.free_index]
        free_pos = {int(i): j for j, i in enumerate(self.free_index)}
        # tied slot -> position of its parent in the free vector
        self.tied = [(i, free_pos[index[restr[n].parent]])
                     for i, n in enumerate(self.names)
                     if restr.get(n, Restriction()).kind is RestrictionKind.TIED]
        self._index = index
        self._state_idx = [np.array([i for i, st in enumerate(self._state_of) if st == j],
                                    dtype=np.intp) for j in (0, 1)]

    # ------------------------------------------------------------------ shape
    @property
    def switching(self) -> bool:
        return self.family_state1 is not None

    @property
    def n_params(self) -> int:
        return len(self.names)

    @property
    def n_free(self) -> int:
        return len(self.free_index)

    def family(self, state: int) -> Family:
        if state == 0:
            return self.family_state0
        if state == 1 and self.family_state1 is not None:
            return self.family_state1
        raise SpecificationError(f"model has no state {state}")

    def slot(self, name: str) -> int:
        return self._index[name]

    def slot_state(self, i: int) -> int:
        return self._state_of[i]

    def state_slots(self, state: int) -> NDArray[np.intp]:
        """Full-vector positions of a state's parameters, in slot order."""
        return self._state_idx[state]

    def free_state(self, j: int) -> int:
        """State whose parameters contain free coefficient ``j``."""
        return self._state_of[int(self.free_index[j])]

    def states_touched(self, j: int) -> tuple[int, ...]:
        """States whose likelihood depends on free coefficient ``j``."""
        states = {self.free_state(j)}
        states.update(self._state_of[i] for i, p in self.tied if p == j)
        return tuple(sorted(states))

    def children(self, j: int) -> list[int]:
        """Full-vector slots tied to free coefficient ``j``."""
        return [i for i, p in self.tied if p == j]

    # ------------------------------------------------------------ assembling
    def expand(self, free_values: ArrayLike) -> NDArray[np.float64]:
        """Full parameter vector from free values (zero and tied slots filled)."""
        free = np.asarray(free_values, dtype=float)
        if free.shape != (self.n_free,):
            raise DimensionError(f"expected {self.n_free} free values, got {free.shape}")
        full = np.zeros(self.n_params)
        full[self.free_index] = free
        for i, p in self.tied:
            full[i] = free[p]
        return full

    def split(self, full: NDArray[np.float64], state: int) -> StateParams | None:
        """StateParams of ``state`` read off a full parameter vector."""
        fam = self.family(state)
        if fam is Family.ZERO_ONLY:
            return None
        K = self.covariate_count
        v = full[self._state_idx[state]]
        if fam is Family.MNL:
            I = self.outcome_count
            beta = np.zeros((I, K))
            beta[:-1] = v.reshape(I - 1, K)
            return StateParams(beta)
        out = StateParams(np.array(v[:K]))
        pos = K
        if fam.has_alpha:
            out.ln_alpha = float(v[pos])
            pos += 1
        if fam.has_tau:
            out.tau = float(v[pos])
            pos += 1
        if fam.has_gamma:
            out.gamma = np.array(v[pos:pos + K])
        return out


def assemble_params(spec: ModelSpec, free_values: ArrayLike):
    """Expand free values into per-state parameter sets.

    Returns
    -------
    (StateParams or None, StateParams or None)
        Parameters of state 0 and state 1. A zero-only state and the missing
        second state of a single-state model are ``None``.
    """
    full = spec.expand(free_values)
    p0 = spec.split(full, 0)
    p1 = spec.split(full, 1) if spec.switching else None
    return p0, p1


# ---------------------------------------------------------------- densities
def rate(beta: ArrayLike, x: ArrayLike) -> float:
    """Poisson rate ``exp(beta'x)``."""
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    if beta.shape != x.shape:
        raise DimensionError(f"beta {beta.shape} and x {x.shape} differ")
    return float(np.exp(beta @ x))


def log_poisson(lam, a):
    """Log Poisson mass ``a ln(lam) - lam - ln(a!)``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(~(lam > 0)):
        raise DomainError("Poisson rate must be positive")
    a = np.asarray(a)
    out = a * np.log(lam) - lam - gammaln(a + 1.0)
    return out if out.ndim else float(out)


def _nb_coef(a, r):
    """``ln Gamma(a + r) - ln Gamma(r) - ln a!`` stable for large ``r``."""
    a = np.asarray(a, dtype=float)
    out = np.zeros(np.broadcast(a, r).shape)
    pos = np.broadcast_to(a > 0, out.shape)
    ab = np.broadcast_to(a, out.shape)[pos]
    rb = np.broadcast_to(r, out.shape)[pos]
    out[pos] = -np.log(ab) - betaln(ab, rb)
    return out


def _nb_terms(eta, ln_alpha, a, coef=None):
    """NB log mass from the linear predictor ``eta = ln(lam)``."""
    if ln_alpha < -700.0:
        return a * eta - np.exp(eta) - gammaln(a + 1.0)
    alpha = np.exp(ln_alpha)
    r = 1.0 / alpha
    if coef is None:
        coef = _nb_coef(a, r)
    return coef + a * (ln_alpha + eta) - (a + r) * np.log1p(alpha * np.exp(eta))


def log_negbin(lam, ln_alpha, a):
    """Log negative binomial mass with mean ``lam`` and ``alpha = exp(ln_alpha)``."""
    lam = np.asarray(lam, dtype=float)
    if not np.isfinite(ln_alpha) or np.any(~np.isfinite(lam)) or np.any(~(lam > 0)):
        raise DomainError("NB needs finite positive rate and finite ln_alpha")
    a = np.asarray(a)
    out = _nb_terms(np.log(lam), float(ln_alpha), a)
    return out if out.ndim else float(out)


def _zi_terms(family, params, X, a):
    eta = X @ params.beta
    base = (_nb_terms(eta, params.ln_alpha, a) if family.has_alpha
            else a * eta - np.exp(eta) - gammaln(a + 1.0))
    if family.has_tau:
        if params.tau is None:
            raise SpecificationError(f"{family.value} needs tau")
        z = params.tau * eta
    else:
        if params.gamma is None:
            raise SpecificationError(f"{family.value} needs gamma")
        z = X @ params.gamma
    log_q = log_expit(z)
    log_1mq = log_expit(-z)
    return np.where(a == 0, np.logaddexp(log_q, log_1mq + base), log_1mq + base)


def log_zero_inflated(family: Family, params: StateParams, x: ArrayLike, a):
    """Log mass of a zero-inflated Poisson or NB observation."""
    family = Family(family)
    if not family.zero_inflated:
        raise SpecificationError(f"{family.value} is not zero-inflated")
    x = np.asarray(x, dtype=float)
    out = _zi_terms(family, params, x[None, :], np.atleast_1d(a))
    return float(out[0]) if np.ndim(a) == 0 else out


def log_mnl(params: StateParams, x: ArrayLike, i: int) -> float:
    """Log multinomial-logit probability of outcome ``i`` (counted from 1)."""
    beta = np.asarray(params.beta, dtype=float)
    if not 1 <= i <= beta.shape[0]:
        raise DomainError(f"outcome {i} outside 1..{beta.shape[0]}")
    u = beta @ np.asarray(x, dtype=float)
    return float(u[i - 1] - logsumexp(u))


def loglik_terms(spec: ModelSpec, state: int, params: StateParams | None,
                 X: NDArray[np.float64], y: NDArray) -> NDArray[np.float64]:
    """Per-observation log-likelihoods of ``y`` under one state.

    Parameters
    ----------
    spec : ModelSpec
    state : {0, 1}
    params : StateParams or None
        ``None`` for the zero-only state.
    X : ndarray, shape (n, K)
    y : ndarray, shape (n,)
        Counts, or outcome indices counted from 1 for MNL.
    """
    fam = spec.family(state)
    y = np.asarray(y)
    if fam is Family.ZERO_ONLY:
        return np.where(y == 0, 0.0, LOG_ZERO)
    if fam is Family.MNL:
        u = X @ params.beta.T
        return u[np.arange(len(y)), y - 1] - logsumexp(u, axis=1)
    if fam.zero_inflated:
        return _zi_terms(fam, params, X, y)
    eta = X @ params.beta
    if fam is Family.NEGBIN:
        return _nb_terms(eta, params.ln_alpha, y)
    return y * eta - np.exp(eta) - gammaln(y + 1.0)


def log_obs_likelihood(spec: ModelSpec, state: int, params: StateParams | None,
                       x: ArrayLike, y) -> float:
    """Log-likelihood of a single observation in the given state."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.covariate_count,):
        raise DimensionError(f"expected {spec.covariate_count} covariates")
    return float(loglik_terms(spec, state, params, x[None, :], np.array([y]))[0])


def state_moments(spec: ModelSpec, state: int, params: StateParams | None,
                  X: NDArray[np.float64]):
    """Per-observation mean and variance of a count state.

    Returns
    -------
    mean, var : ndarray
    """
    fam = spec.family(state)
    n = X.shape[0]
    if fam is Family.ZERO_ONLY:
        return np.zeros(n), np.zeros(n)
    if fam is Family.MNL:
        raise SpecificationError("moments are defined for count families only")
    lam = np.exp(X @ params.beta)
    alpha = params.alpha if fam.has_alpha else 0.0
    var = lam * (1.0 + alpha * lam)
    if not fam.zero_inflated:
        return lam, var
    z = params.tau * np.log(lam) if fam.has_tau else X @ params.gamma
    q = 1.0 / (1.0 + np.exp(-z))
    mean = (1.0 - q) * lam
    return mean, (1.0 - q) * var + q * (1.0 - q) * lam ** 2


def mnl_probs(params: StateParams, X: NDArray[np.float64]) -> NDArray[np.float64]:
    """Outcome probabilities, shape ``(n, I)``."""
    u = X @ params.beta.T
    return np.exp(u - logsumexp(u, axis=1, keepdims=True))
