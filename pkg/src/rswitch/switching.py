"""Auxiliary-time layout of the two-state Markov switching process.

Observations indexed by real time ``t`` and unit ``n`` are mapped onto a
single auxiliary time axis ``t_aux = 1..T_tilde`` on which the state evolves.
Transitions out of periods in ``t_minus`` are history independent, and
transition probabilities are piecewise constant over intervals whose
boundaries are ``interval_bounds``. Public indices are counted from 1 (periods
and intervals); internal arrays are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import xlog1py, xlogy

from .errors import DegenerateChainError, SpecificationError

LN_HALF = float(np.log(0.5))


@dataclass(frozen=True)
class TransitionProbs:
    """Transition probabilities per free interval."""

    p01: NDArray[np.float64]
    p10: NDArray[np.float64]

    def __post_init__(self):
        object.__setattr__(self, "p01", np.atleast_1d(np.asarray(self.p01, dtype=float)))
        object.__setattr__(self, "p10", np.atleast_1d(np.asarray(self.p10, dtype=float)))


@dataclass(frozen=True)
class TransitionCounts:
    """Transition counts per interval (tied intervals pooled into their governor)."""

    m00: NDArray[np.int64]
    m01: NDArray[np.int64]
    m10: NDArray[np.int64]
    m11: NDArray[np.int64]

    def total(self) -> int:
        return int(self.m00.sum() + self.m01.sum() + self.m10.sum() + self.m11.sum())


@dataclass(frozen=True, eq=False)
class SwitchingLayout:
    """Auxiliary-time representation of a switching model.

    Attributes
    ----------
    T_tilde : int
        Number of auxiliary periods.
    obs_counts : ndarray of int
        Observations per auxiliary period.
    t_minus : frozenset of int
        Auxiliary periods (from 1) whose successor state is history independent.
    interval_bounds : ndarray of int
        Boundaries ``1 = b_1 < ... < b_{R+1} = T_tilde + 1``.
    interval_tie : ndarray of int
        Governing interval (0-based) of every interval (0-based).
    restrict_p01_le_p10 : bool
        Whether the label ordering ``p01 <= p10`` is imposed.
    kind : str
        ``"annual"``, ``"weekly"`` or ``"intervals"``.
    T : int
        Real periods per unit (annual) or number of periods (otherwise).
    """

    T_tilde: int
    obs_counts: NDArray[np.int64]
    t_minus: frozenset
    interval_bounds: NDArray[np.int64]
    interval_tie: NDArray[np.int64]
    restrict_p01_le_p10: bool
    kind: str = "weekly"
    T: int = 0
    period_interval: NDArray[np.int64] = field(init=False, repr=False)
    free_intervals: NDArray[np.int64] = field(init=False, repr=False)
    trans_slot: NDArray[np.int64] = field(init=False, repr=False)

    def __post_init__(self):
        b = np.asarray(self.interval_bounds, dtype=np.int64)
        if len(b) < 2 or b[0] != 1 or b[-1] != self.T_tilde + 1 or np.any(np.diff(b) <= 0):
            raise SpecificationError(
                "interval bounds must increase strictly from 1 to T_tilde + 1")
        R = len(b) - 1
        tie = np.asarray(self.interval_tie, dtype=np.int64)
        if tie.shape != (R,) or np.any(tie < 0) or np.any(tie > np.arange(R)):
            raise SpecificationError("every interval must be tied to itself or an earlier one")
        if np.any(tie[tie] != tie):
            raise SpecificationError("tie targets must be governed by themselves")
        for t in self.t_minus:
            if not 1 <= t <= self.T_tilde:
                raise SpecificationError(f"t_minus element {t} outside 1..T_tilde")
        counts = np.asarray(self.obs_counts, dtype=np.int64)
        if counts.shape != (self.T_tilde,):
            raise SpecificationError("obs_counts must have one entry per auxiliary period")
        object.__setattr__(self, "interval_bounds", b)
        object.__setattr__(self, "interval_tie", tie)
        object.__setattr__(self, "obs_counts", counts)
        object.__setattr__(self, "t_minus", frozenset(int(t) for t in self.t_minus))
        period_interval = np.repeat(np.arange(R), np.diff(b))
        free = np.unique(tie)
        pos = np.full(R, -1)
        pos[free] = np.arange(len(free))
        slot = pos[tie[period_interval[:-1]]]
        if self.t_minus:
            tm = np.array(sorted(t for t in self.t_minus if t < self.T_tilde), dtype=np.int64)
            slot[tm - 1] = -1
        object.__setattr__(self, "period_interval", period_interval)
        object.__setattr__(self, "free_intervals", free)
        object.__setattr__(self, "trans_slot", slot)

    @property
    def R(self) -> int:
        return len(self.interval_bounds) - 1

    @property
    def n_free_intervals(self) -> int:
        return len(self.free_intervals)

    @property
    def n_independent_starts(self) -> int:
        """Number of states whose prior is the constant one half."""
        return 1 + sum(1 for t in self.t_minus if t < self.T_tilde)

    # --------------------------------------------------------------- indexing
    def to_aux(self, t, n):
        """Map real ``(t, n)`` (from 1) to auxiliary ``(t_aux, n_aux)``."""
        t = np.asarray(t)
        n = np.asarray(n)
        if self.kind == "annual":
            return t + (n - 1) * self.T, np.ones_like(n)
        return t, n

    def to_real(self, t_aux, n_aux):
        """Inverse of :meth:`to_aux`."""
        t_aux = np.asarray(t_aux)
        n_aux = np.asarray(n_aux)
        if self.kind == "annual":
            n = -(-t_aux // self.T)
            return t_aux - (n - 1) * self.T, n
        return t_aux, n_aux

    def aux_period(self, t, n) -> NDArray[np.int64]:
        """0-based auxiliary period of each real observation."""
        return np.asarray(self.to_aux(t, n)[0], dtype=np.int64) - 1

    def with_obs_counts(self, counts: ArrayLike) -> "SwitchingLayout":
        """Copy of the layout with new per-period observation counts."""
        return SwitchingLayout(
            self.T_tilde, np.asarray(counts), self.t_minus, self.interval_bounds,
            self.interval_tie, self.restrict_p01_le_p10, self.kind, self.T)


def build_annual_layout(T: int, N: int) -> SwitchingLayout:
    """Layout for annual counts: each unit is its own segment of ``T`` periods."""
    if T < 1 or N < 1:
        raise SpecificationError("T and N must be positive")
    Tt = T * N
    bounds = np.append(1 + T * np.arange(N), 1 + Tt)
    return SwitchingLayout(
        Tt, np.ones(Tt, dtype=np.int64), frozenset(T * np.arange(1, N + 1)), bounds,
        np.arange(N), False, "annual", T)


def build_weekly_layout(T: int, N_per_period: int | ArrayLike = 1) -> SwitchingLayout:
    """Layout for a single time series of periods with a common state.

    Serves weekly frequency models (constant ``N``) and severity models
    (variable ``N_t``).
    """
    if T < 2:
        raise SpecificationError("weekly layouts need T >= 2")
    counts = np.broadcast_to(np.asarray(N_per_period, dtype=np.int64), (T,)).copy()
    return SwitchingLayout(T, counts, frozenset(), np.array([1, T + 1]),
                           np.zeros(1, dtype=np.int64), True, "weekly", T)


def build_interval_layout(boundaries: Sequence[int], tie: Mapping[int, int] | None = None,
                          restricted: bool = True,
                          N_per_period: int | ArrayLike = 1) -> SwitchingLayout:
    """Layout with piecewise-constant transition probabilities.

    Parameters
    ----------
    boundaries : sequence of int
        Interval boundaries, first 1 and last ``T_tilde + 1``.
    tie : mapping, optional
        Interval (from 1) to governing interval (from 1). Unlisted intervals
        govern themselves.
    restricted : bool
        Impose ``p01 <= p10`` in every free interval.
    """
    b = np.asarray(boundaries, dtype=np.int64)
    R = len(b) - 1
    if R < 1:
        raise SpecificationError("need at least two boundaries")
    tie_arr = np.arange(R)
    for r, g in (tie or {}).items():
        if not (1 <= int(r) <= R and 1 <= int(g) <= R):
            raise SpecificationError(f"tie {r}->{g} outside 1..{R}")
        tie_arr[int(r) - 1] = int(g) - 1
    for r, g in enumerate(tie_arr):
        if tie_arr[g] != g:
            raise SpecificationError(f"interval {r + 1} tied to {g + 1}, which is itself tied")
    Tt = int(b[-1] - 1)
    counts = np.broadcast_to(np.asarray(N_per_period, dtype=np.int64), (Tt,)).copy()
    return SwitchingLayout(Tt, counts, frozenset(), b, tie_arr, bool(restricted),
                           "intervals", Tt)


def count_transitions(s: ArrayLike, layout: SwitchingLayout) -> TransitionCounts:
    """Count state transitions per interval, pooling tied intervals."""
    s = np.asarray(s, dtype=np.int64)
    if s.shape != (layout.T_tilde,):
        raise SpecificationError("state vector length must equal T_tilde")
    R = layout.R
    gov = layout.interval_tie[layout.period_interval[:-1]]
    ok = layout.trans_slot >= 0
    code = gov[ok] * 4 + 2 * s[:-1][ok] + s[1:][ok]
    c = np.bincount(code, minlength=4 * R).reshape(R, 4)
    return TransitionCounts(c[:, 0], c[:, 1], c[:, 2], c[:, 3])


def free_counts(s: ArrayLike, layout: SwitchingLayout) -> NDArray[np.int64]:
    """Counts per free interval as an array of shape ``(n_free, 4)``.

    Columns are ``m00, m01, m10, m11``.
    """
    s = np.asarray(s, dtype=np.int64)
    ok = layout.trans_slot >= 0
    code = layout.trans_slot[ok] * 4 + 2 * s[:-1][ok] + s[1:][ok]
    return np.bincount(code, minlength=4 * layout.n_free_intervals).reshape(-1, 4)


def stationary_probs(p01, p10):
    """Stationary probabilities ``(p0_bar, p1_bar)`` of the two-state chain."""
    p01 = np.asarray(p01, dtype=float)
    p10 = np.asarray(p10, dtype=float)
    tot = p01 + p10
    if np.any(tot <= 0):
        raise DegenerateChainError("p01 + p10 must be positive")
    p1 = p01 / tot
    p0 = 1.0 - p1
    if p0.ndim == 0:
        return float(p0), float(p1)
    return p0, p1


def log_state_prior(s: ArrayLike, probs: TransitionProbs, layout: SwitchingLayout,
                    include_constant: bool = True) -> float:
    """Markov log-probability of a state vector.

    Every history-independent state (the first one and each successor of a
    ``t_minus`` period) contributes the constant ``ln(1/2)``; pass
    ``include_constant=False`` to drop it.
    """
    m = free_counts(s, layout)
    p01, p10 = probs.p01, probs.p10
    with np.errstate(divide="ignore"):
        val = (xlogy(m[:, 1], p01) + xlog1py(m[:, 0], -p01)
               + xlogy(m[:, 2], p10) + xlog1py(m[:, 3], -p10)).sum()
    const = LN_HALF * layout.n_independent_starts if include_constant else 0.0
    return float(val) + const


def log_transition_table(probs: TransitionProbs, layout: SwitchingLayout) -> NDArray[np.float64]:
    """Log transition matrix of every auxiliary transition, shape ``(T_tilde - 1, 2, 2)``.

    History-independent transitions get zeros (their constant is dropped).
    """
    with np.errstate(divide="ignore"):
        lp = np.empty((layout.n_free_intervals, 2, 2))
        lp[:, 0, 0] = np.log1p(-probs.p01)
        lp[:, 0, 1] = np.log(probs.p01)
        lp[:, 1, 0] = np.log(probs.p10)
        lp[:, 1, 1] = np.log1p(-probs.p10)
    out = np.zeros((layout.T_tilde - 1, 2, 2))
    ok = layout.trans_slot >= 0
    out[ok] = lp[layout.trans_slot[ok]]
    return out
