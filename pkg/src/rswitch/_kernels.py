"""Compiled kernels for the state-block update and count likelihoods."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MAX_BLOCK = 20
# weights are rescaled once their maximum drops below this
_RESCALE = 1e-150


@njit(cache=True)
def _block_linear(L0, L1, lp, s, start, end, u, wts):
    """Linear-space enumeration; returns False if the weights underflowed.

    ``m0``/``m1`` track the largest weight among configurations whose last
    period is in state 0/1, so no scan is needed to detect underflow.
    """
    T = s.shape[0]
    n = 1
    wts[0] = 1.0
    m0 = 1.0
    m1 = 1.0
    top = False
    prev_state = s[start - 1] if start > 0 else -1
    for t in range(start, end):
        a0 = L0[t] > -np.inf
        a1 = L1[t] > -np.inf
        if a0 and a1:
            if top:
                e00 = L0[t] + lp[t - 1, 0, 0]
                e01 = L1[t] + lp[t - 1, 0, 1]
                e10 = L0[t] + lp[t - 1, 1, 0]
                e11 = L1[t] + lp[t - 1, 1, 1]
                m = max(max(e00, e01), max(e10, e11))
                f00 = math.exp(e00 - m)
                f01 = math.exp(e01 - m)
                f10 = math.exp(e10 - m)
                f11 = math.exp(e11 - m)
                h = n // 2
                for c in range(h):
                    w = wts[c]
                    wts[c] = w * f00
                    wts[c + n] = w * f01
                for c in range(h, n):
                    w = wts[c]
                    wts[c] = w * f10
                    wts[c + n] = w * f11
                m0, m1 = max(m0 * f00, m1 * f10), max(m0 * f01, m1 * f11)
            else:
                e0 = L0[t]
                e1 = L1[t]
                if prev_state >= 0:
                    e0 += lp[t - 1, prev_state, 0]
                    e1 += lp[t - 1, prev_state, 1]
                m = max(e0, e1)
                f0 = math.exp(e0 - m)
                f1 = math.exp(e1 - m)
                for c in range(n):
                    w = wts[c]
                    wts[c] = w * f0
                    wts[c + n] = w * f1
                mx = max(m0, m1)
                m0, m1 = mx * f0, mx * f1
            n *= 2
            top = True
        else:
            if top:
                st = 1 if a1 else 0
                x0 = lp[t - 1, 0, st]
                x1 = lp[t - 1, 1, st]
                m = max(x0, x1)
                f0 = math.exp(x0 - m)
                f1 = math.exp(x1 - m)
                h = n // 2
                for c in range(h):
                    wts[c] *= f0
                for c in range(h, n):
                    wts[c] *= f1
                m0 = m1 = max(m0 * f0, m1 * f1)
            else:
                m0 = m1 = max(m0, m1)
            top = False
            prev_state = 1 if a1 else 0
        mx = max(m0, m1)
        if mx == 0.0:
            return False
        if mx < _RESCALE:
            inv = 1.0 / mx
            for c in range(n):
                wts[c] *= inv
            m0 *= inv
            m1 *= inv
    if end < T and top:
        nxt = s[end]
        x0 = lp[end - 1, 0, nxt]
        x1 = lp[end - 1, 1, nxt]
        m = max(x0, x1)
        f0 = math.exp(x0 - m)
        f1 = math.exp(x1 - m)
        h = n // 2
        for c in range(h):
            wts[c] *= f0
        for c in range(h, n):
            wts[c] *= f1
    total = 0.0
    for c in range(n):
        total += wts[c]
    if not total > 0.0:
        return False
    target = u * total
    acc = 0.0
    pick = -1
    for c in range(n):
        w = wts[c]
        if w > 0.0:
            acc += w
            pick = c
            if acc >= target:
                break
    j = 0
    for t in range(start, end):
        if L0[t] > -np.inf and L1[t] > -np.inf:
            s[t] = (pick >> j) & 1
            j += 1
        elif L1[t] > -np.inf:
            s[t] = 1
        else:
            s[t] = 0
    return True


@njit(cache=True)
def _block_log(L0, L1, lp, s, start, end, u, sc):
    """Log-space enumeration used when linear weights underflow."""
    T = s.shape[0]
    n = 1
    sc[0] = 0.0
    top = False
    prev_state = s[start - 1] if start > 0 else -1
    for t in range(start, end):
        a0 = L0[t] > -np.inf
        a1 = L1[t] > -np.inf
        if a0 and a1:
            if top:
                h = n // 2
                for ps in range(2):
                    c0 = L0[t] + lp[t - 1, ps, 0]
                    c1 = L1[t] + lp[t - 1, ps, 1]
                    for c in range(ps * h, ps * h + h):
                        base = sc[c]
                        sc[c] = base + c0
                        sc[c + n] = base + c1
            else:
                c0 = L0[t] + (lp[t - 1, prev_state, 0] if prev_state >= 0 else 0.0)
                c1 = L1[t] + (lp[t - 1, prev_state, 1] if prev_state >= 0 else 0.0)
                for c in range(n):
                    base = sc[c]
                    sc[c] = base + c0
                    sc[c + n] = base + c1
            top = True
            n *= 2
        else:
            st = 1 if a1 else 0
            if top:
                h = n // 2
                for ps in range(2):
                    cc = lp[t - 1, ps, st]
                    for c in range(ps * h, ps * h + h):
                        sc[c] += cc
            top = False
            prev_state = st
    if end < T and top:
        nxt = s[end]
        h = n // 2
        for ps in range(2):
            cc = lp[end - 1, ps, nxt]
            for c in range(ps * h, ps * h + h):
                sc[c] += cc
    best = -np.inf
    for c in range(n):
        if sc[c] > best:
            best = sc[c]
    total = 0.0
    for c in range(n):
        v = math.exp(sc[c] - best)
        sc[c] = v
        total += v
    target = u * total
    acc = 0.0
    pick = -1
    for c in range(n):
        if sc[c] > 0.0:
            acc += sc[c]
            pick = c
            if acc >= target:
                break
    j = 0
    for t in range(start, end):
        if L0[t] > -np.inf and L1[t] > -np.inf:
            s[t] = (pick >> j) & 1
            j += 1
        elif L1[t] > -np.inf:
            s[t] = 1
        else:
            s[t] = 0


@njit(cache=True)
def sample_block(L0, L1, lp, s, start, end, u, wts):
    """Draw ``s[start:end]`` exactly from its full conditional.

    Parameters
    ----------
    L0, L1 : float64[:]
        Per-period log-likelihood totals under state 0 and state 1.
    lp : float64[:, 2, 2]
        Log transition matrices; ``lp[t]`` governs the move from ``t`` to
        ``t + 1`` (zeros where the successor is history independent).
    s : int8[:]
        State vector, updated in place.
    start, end : int
        Block ``[start, end)`` (0-based).
    u : float
        Uniform variate selecting the configuration.
    wts : float64[:]
        Work buffer of length at least ``2 ** (end - start)``.

    Notes
    -----
    All configurations are enumerated level by level; bit ``j`` of a
    configuration index is the state of the ``j``-th free period, so the
    previous free period is always the top bit. Unnormalized weights are
    built as products of per-period factors, each factor scaled by the
    largest of its level, and the weight vector is rescaled whenever its
    maximum becomes small. Periods where only one state has finite
    likelihood are fixed to it.
    """
    if not _block_linear(L0, L1, lp, s, start, end, u, wts):
        _block_log(L0, L1, lp, s, start, end, u, wts)


def block_buffer(tau: int):
    """Work buffer for :func:`sample_block` with blocks up to ``tau``."""
    return np.empty(1 << tau)


@njit(cache=True)
def sweep_blocks(L0, L1, lp, s, tau, u):
    """Update all consecutive blocks of length ``tau`` covering ``s``."""
    T = s.shape[0]
    wts = np.empty(1 << tau)
    k = 0
    start = 0
    while start < T:
        end = min(start + tau, T)
        sample_block(L0, L1, lp, s, start, end, u[k], wts)
        k += 1
        start = end


@njit(cache=True)
def weighted_column_sums(indptr, indices, data, s, n_cols):
    """``W.T @ s`` for a CSR matrix ``W`` with rows indexed by period."""
    out = np.zeros(n_cols)
    for r in range(indptr.shape[0] - 1):
        if s[r] == 1:
            for k in range(indptr[r], indptr[r + 1]):
                out[indices[k]] += data[k]
    return out


@njit(cache=True)
def active_sets(indptr, indices, data, s, w_total, logf, two_states):
    """Keys with positive multiplicity in each state and the state log-likelihoods.

    Returns ``(ptr, idx, w, ll)`` where state ``j``'s keys are
    ``idx[ptr[j]:ptr[j + 1]]`` with multiplicities ``w`` and ``ll[j]`` is
    their weighted log-likelihood.
    """
    nk = w_total.shape[0]
    w1 = np.zeros(nk)
    if two_states:
        for r in range(indptr.shape[0] - 1):
            if s[r] == 1:
                for k in range(indptr[r], indptr[r + 1]):
                    w1[indices[k]] += data[k]
    ptr = np.zeros(3, dtype=np.int64)
    idx = np.empty(2 * nk, dtype=np.int64)
    w = np.empty(2 * nk)
    ll = np.zeros(2)
    m = 0
    for j in range(2 if two_states else 1):
        for k in range(nk):
            v = w1[k] if j == 1 else w_total[k] - w1[k]
            if v > 0.0:
                idx[m] = k
                w[m] = v
                ll[j] += v * logf[j, k]
                m += 1
        ptr[j + 1] = m
    if not two_states:
        ptr[2] = m
    return ptr, idx[:m], w[:m], ll


@njit(cache=True)
def count_loglik(eta_u, ku, yi, yv, coef, ln_alpha, nb, w, out):
    """Weighted Poisson or NB log-likelihood over keys.

    ``eta_u`` holds linear predictors of the distinct covariate rows, ``ku``
    and ``yi`` the row and outcome-value index of each key, ``coef`` the
    per-value constant (``-ln y!`` for Poisson, the Gamma-ratio term for NB).
    Per-key values are written to ``out``; the weighted sum is returned.
    """
    total = 0.0
    if nb:
        alpha = math.exp(ln_alpha)
        r = 1.0 / alpha
        for k in range(ku.shape[0]):
            e = eta_u[ku[k]]
            y = yv[yi[k]]
            v = coef[yi[k]] + y * (ln_alpha + e) - (y + r) * math.log1p(alpha * math.exp(e))
            out[k] = v
            total += w[k] * v
    else:
        for k in range(ku.shape[0]):
            e = eta_u[ku[k]]
            y = yv[yi[k]]
            v = coef[yi[k]] + y * e - math.exp(e)
            out[k] = v
            total += w[k] * v
    return total


def n_blocks(T: int, tau: int) -> int:
    return -(-T // tau)


@njit(cache=True)
def nb_coef(yv, ln_alpha, out):
    """``ln Gamma(y + r) - ln Gamma(r) - ln y!`` with ``r = exp(-ln_alpha)``.

    ``yv`` must be sorted and nonnegative. For moderate counts the Gamma ratio
    is accumulated as ``sum ln(r + i)``, which stays accurate for huge ``r``.
    """
    r = math.exp(-ln_alpha)
    ymax = yv[yv.shape[0] - 1] if yv.shape[0] else 0.0
    if ymax <= 100000.0:
        lr = -ln_alpha
        acc = 0.0
        i = 0
        for j in range(yv.shape[0]):
            y = int(yv[j])
            while i < y:
                acc += lr + math.log1p(i / r)
                i += 1
            out[j] = acc - math.lgamma(y + 1.0)
    else:
        for j in range(yv.shape[0]):
            y = yv[j]
            out[j] = math.lgamma(y + r) - math.lgamma(r) - math.lgamma(y + 1.0)


@njit(cache=True)
def _state_ll(full, bidx, aidx, Xu, yv, lgy, A, B, Wy, eta, coef):
    """Weighted log-likelihood of one count state from sufficient statistics.

    ``A[u]`` and ``B[u]`` are the weighted count total and weight total of
    covariate row ``u``; ``Wy[v]`` is the weight of outcome value ``yv[v]``.
    """
    nu, K = Xu.shape
    nb = aidx >= 0 and full[aidx] > -700.0
    total = 0.0
    if nb:
        la = full[aidx]
        nb_coef(yv, la, coef)
    for v in range(yv.shape[0]):
        if Wy[v] > 0.0:
            total += Wy[v] * (coef[v] if nb else -lgy[v])
    if nb:
        alpha = math.exp(la)
        r = 1.0 / alpha
        for u in range(nu):
            if B[u] > 0.0:
                e = 0.0
                for c in range(K):
                    e += Xu[u, c] * full[bidx[c]]
                total += (la + e) * A[u] - (A[u] + r * B[u]) * math.log1p(alpha * math.exp(e))
    else:
        for u in range(nu):
            if B[u] > 0.0:
                e = 0.0
                for c in range(K):
                    e += Xu[u, c] * full[bidx[c]]
                total += e * A[u] - B[u] * math.exp(e)
    return total


@njit(cache=True)
def suff_stats(ptr, idx, w, ku, yi, yv, n_u, n_y):
    """Per-state ``A``, ``B`` (per covariate row) and ``Wy`` (per value)."""
    A = np.zeros((2, n_u))
    B = np.zeros((2, n_u))
    Wy = np.zeros((2, n_y))
    for j in range(2):
        for m in range(ptr[j], ptr[j + 1]):
            k = idx[m]
            A[j, ku[k]] += w[m] * yv[yi[k]]
            B[j, ku[k]] += w[m]
            Wy[j, yi[k]] += w[m]
    return A, B, Wy


@njit(cache=True)
def mh_count_sweep(full, free, slots, ch_ptr, ch_idx, touch, bidx, aidx,
                   Xu, yv, lgy, A, B, Wy, cur_ll, mu, s2, sigma, z, logu,
                   accepted, stale):
    """Random-walk Metropolis update of every free coefficient in order.

    ``touch[k]`` is a bit mask of the states whose likelihood involves
    coefficient ``k``; ``bidx[j]``/``aidx[j]`` locate state ``j``'s
    coefficients in ``full``; ``A``, ``B`` and ``Wy`` are the per-state
    sufficient statistics of :func:`suff_stats`. ``cur_ll``, ``full``,
    ``free``, ``accepted`` and ``stale`` are updated in place.
    """
    eta = np.empty(Xu.shape[0])
    coef = np.empty(yv.shape[0])
    new_ll = np.zeros(2)
    for k in range(free.shape[0]):
        slot = slots[k]
        old = full[slot]
        new = old + sigma[k] * z[k]
        full[slot] = new
        for c in range(ch_ptr[k], ch_ptr[k + 1]):
            full[ch_idx[c]] = new
        lr = -0.5 * ((new - mu[k]) ** 2 - (old - mu[k]) ** 2) / s2[k]
        for j in range(2):
            if (touch[k] >> j) & 1:
                ll = _state_ll(full, bidx[j], aidx[j], Xu, yv, lgy, A[j], B[j], Wy[j],
                               eta, coef)
                new_ll[j] = ll
                lr += ll - cur_ll[j]
        if lr == lr and (lr >= 0.0 or logu[k] < lr):
            free[k] = new
            accepted[k] = True
            for j in range(2):
                if (touch[k] >> j) & 1:
                    cur_ll[j] = new_ll[j]
                    stale[j] = True
        else:
            accepted[k] = False
            full[slot] = old
            for c in range(ch_ptr[k], ch_ptr[k + 1]):
                full[ch_idx[c]] = old


@njit(cache=True)
def transition_table(p01, p10, trans_slot, out):
    """Fill ``out[t]`` with the log transition matrix from ``t`` to ``t + 1``."""
    for t in range(trans_slot.shape[0]):
        g = trans_slot[t]
        if g < 0:
            out[t, 0, 0] = 0.0
            out[t, 0, 1] = 0.0
            out[t, 1, 0] = 0.0
            out[t, 1, 1] = 0.0
        else:
            a, b = p01[g], p10[g]
            out[t, 0, 0] = math.log1p(-a) if a < 1.0 else -np.inf
            out[t, 0, 1] = math.log(a) if a > 0.0 else -np.inf
            out[t, 1, 0] = math.log(b) if b > 0.0 else -np.inf
            out[t, 1, 1] = math.log1p(-b) if b < 1.0 else -np.inf
