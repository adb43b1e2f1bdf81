"""Exact draws from a Beta distribution truncated to an interval.

Log-concave shapes (both at least 1) are sampled by rejection under a
piecewise-exponential envelope made of tangents to the log density. Other
shapes, and envelopes that keep rejecting, fall back to inverting the
regularized incomplete beta function.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import betainc, betaincinv

from numba import njit

from .errors import DomainError

MAX_REJECTIONS = 1000
_BATCH = 8
_OFFSETS = np.array([-0.5, 0.5, -1.5, 1.5, -3.0, 3.0])


@njit(cache=True)
def _logpdf(a, b, x):
    v = 0.0
    if a != 1.0:
        v += (a - 1.0) * math.log(x) if x > 0.0 else -math.inf
    if b != 1.0:
        v += (b - 1.0) * math.log1p(-x) if x < 1.0 else -math.inf
    return v


@njit(cache=True)
def _slope(a, b, x):
    d = 0.0
    if a != 1.0:
        d += (a - 1.0) / x
    if b != 1.0:
        d -= (b - 1.0) / (1.0 - x)
    return d


@njit(cache=True)
def _piece_log_mass(h, d, x, zl, zr):
    w = zr - zl
    if w <= 0.0:
        return -math.inf
    ad = abs(d)
    if ad * w < 1e-10:
        return h + d * (0.5 * (zl + zr) - x) + math.log(w)
    edge = zr if d > 0 else zl
    return h + d * (edge - x) + math.log(-math.expm1(-ad * w) / ad)


@njit(cache=True)
def _envelope(a, b, lo, hi, offsets):
    """Tangent abscissae, heights, slopes, breakpoints and piece CDF.

    Returns ``n = 0`` when no usable envelope exists.
    """
    if a == 1.0 and b == 1.0:
        mode = 0.5 * (lo + hi)
    elif a == 1.0:
        mode = 0.0
    elif b == 1.0:
        mode = 1.0
    else:
        mode = (a - 1.0) / (a + b - 2.0)
    m = min(max(mode, lo), hi)
    cand = np.empty(5)
    nc = 0
    if (0.0 < m < 1.0) or (m == 0.0 and a == 1.0) or (m == 1.0 and b == 1.0):
        cand[0] = m
        nc = 1
    curv = 0.0
    if a != 1.0 and m > 0.0:
        curv += (a - 1.0) / (m * m)
    if b != 1.0 and m < 1.0:
        curv += (b - 1.0) / ((1.0 - m) ** 2)
    if curv > 0.0:
        scale = 1.0 / math.sqrt(curv)
        # offsets are ordered by distance from the maximum
        for o in offsets:
            c = m + o * scale
            if lo < c < hi and 0.0 < c < 1.0 and nc < 5:
                dup = False
                for i in range(nc):
                    if cand[i] == c:
                        dup = True
                if not dup:
                    cand[nc] = c
                    nc += 1
    pts = np.sort(cand[:nc])
    n = nc
    h = np.empty(n)
    d = np.empty(n)
    for i in range(n):
        h[i] = _logpdf(a, b, pts[i])
        d[i] = _slope(a, b, pts[i])
    z = np.empty(n + 1)
    cum = np.empty(n)
    if n == 0:
        return pts, h, d, z, cum, 0
    z[0] = lo
    for i in range(n - 1):
        dd = d[i] - d[i + 1]
        if dd <= 1e-12 * (abs(d[i]) + abs(d[i + 1]) + 1.0):
            zi = 0.5 * (pts[i] + pts[i + 1])
        else:
            zi = (h[i + 1] - h[i] - pts[i + 1] * d[i + 1] + pts[i] * d[i]) / dd
        z[i + 1] = min(max(zi, pts[i]), pts[i + 1])
    z[n] = hi
    logm = np.empty(n)
    top = -math.inf
    for i in range(n):
        logm[i] = _piece_log_mass(h[i], d[i], pts[i], z[i], z[i + 1])
        top = max(top, logm[i])
    if not math.isfinite(top):
        return pts, h, d, z, cum, 0
    tot = 0.0
    for i in range(n):
        logm[i] = math.exp(logm[i] - top)
        tot += logm[i]
    acc = 0.0
    for i in range(n):
        acc += logm[i] / tot
        cum[i] = acc
    cum[n - 1] = 1.0
    return pts, h, d, z, cum, n


@njit(cache=True)
def _reject(a, b, pts, h, d, z, cum, u):
    """Rejection attempts using uniform triples from ``u``; NaN if all fail."""
    n = cum.shape[0]
    for k in range(u.shape[0] // 3):
        u1, u2, u3 = u[3 * k], u[3 * k + 1], u[3 * k + 2]
        i = 0
        while i < n - 1 and u1 > cum[i]:
            i += 1
        zl, zr, di = z[i], z[i + 1], d[i]
        w = zr - zl
        ad = abs(di)
        if ad * w < 1e-10:
            x = zl + u2 * w
        else:
            e = -math.log1p(u2 * math.expm1(-ad * w)) / ad
            x = zr - e if di > 0 else zl + e
        x = min(max(x, zl), zr)
        if math.log(u3) <= _logpdf(a, b, x) - (h[i] + di * (x - pts[i])):
            return x
    return math.nan


class TruncatedBeta:
    """Beta(a, b) restricted to ``[lo, hi]``.

    Parameters
    ----------
    a, b : float
        Positive shapes.
    lo, hi : float
        Truncation bounds with ``0 <= lo < hi <= 1``.

    Attributes
    ----------
    log_concave : bool
        Whether the rejection sampler is used.
    points : ndarray
        Tangent abscissae of the envelope (at most 5, including the maximum
        of the density over the region).
    """

    def __init__(self, a: float, b: float, lo: float = 0.0, hi: float = 1.0):
        a, b, lo, hi = float(a), float(b), float(lo), float(hi)
        if not (a > 0 and b > 0 and math.isfinite(a) and math.isfinite(b)):
            raise DomainError(f"Beta shapes must be positive, got ({a}, {b})")
        if not (0.0 <= lo < hi <= 1.0):
            raise DomainError(f"invalid truncation [{lo}, {hi}]")
        self.a, self.b, self.lo, self.hi = a, b, lo, hi
        self.log_concave = a >= 1.0 and b >= 1.0
        if self.log_concave:
            pts, h, d, z, cum, n = _envelope(a, b, lo, hi, _OFFSETS)
            if n == 0:
                self.log_concave = False
            else:
                self.points, self._h, self._d, self._z, self._cum = pts, h, d, z, cum

    def logpdf(self, x: float) -> float:
        """Unnormalized log density."""
        return _logpdf(self.a, self.b, float(x))

    # ------------------------------------------------------------ sampling
    def invert(self, u):
        """Quantile function of the truncated distribution."""
        a, b, lo, hi = self.a, self.b, self.lo, self.hi
        flo, fhi = betainc(a, b, lo), betainc(a, b, hi)
        if flo > 0.5:
            # upper tail: invert the reflected variable for precision
            glo, ghi = betainc(b, a, 1.0 - hi), betainc(b, a, 1.0 - lo)
            x = 1.0 - betaincinv(b, a, glo + (1.0 - np.asarray(u)) * (ghi - glo))
        else:
            x = betaincinv(a, b, flo + np.asarray(u) * (fhi - flo))
        return np.clip(x, lo, hi)

    def draw(self, rng: np.random.Generator) -> float:
        """One draw."""
        if not self.log_concave:
            return float(self.invert(rng.random()))
        for _ in range(MAX_REJECTIONS // _BATCH):
            x = _reject(self.a, self.b, self.points, self._h, self._d, self._z, self._cum,
                        rng.random(3 * _BATCH))
            if x == x:
                return x
        return float(self.invert(rng.random()))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` independent draws, vectorized over candidate batches."""
        if not self.log_concave:
            return self.invert(rng.random(size))
        out = np.empty(size)
        filled = 0
        cum = np.asarray(self._cum)
        z = np.asarray(self._z)
        d = np.asarray(self._d)
        h = np.asarray(self._h)
        p = np.asarray(self.points)
        rounds = 0
        while filled < size:
            rounds += 1
            if rounds > MAX_REJECTIONS:
                out[filled:] = self.invert(rng.random(size - filled))
                break
            n = int(1.3 * (size - filled)) + 16
            u = rng.random((3, n))
            i = np.minimum(np.searchsorted(cum, u[0]), len(cum) - 1)
            zl, zr, di = z[i], z[i + 1], d[i]
            w = zr - zl
            ad = np.abs(di)
            small = ad * w < 1e-10
            with np.errstate(divide="ignore", invalid="ignore"):
                e = -np.log1p(u[1] * np.expm1(-ad * w)) / ad
            x = np.where(small, zl + u[1] * w, np.where(di > 0, zr - e, zl + e))
            x = np.clip(x, zl, zr)
            with np.errstate(divide="ignore", invalid="ignore"):
                lx = np.where(self.a == 1.0, 0.0, (self.a - 1.0) * np.log(x)) + \
                    np.where(self.b == 1.0, 0.0, (self.b - 1.0) * np.log1p(-x))
            ok = np.log(u[2]) <= lx - (h[i] + di * (x - p[i]))
            acc = x[ok][: size - filled]
            out[filled:filled + len(acc)] = acc
            filled += len(acc)
        return out


def sample_truncated_beta(a: float, b: float, bound: tuple[str, float],
                          rng: np.random.Generator, size: int | None = None):
    """Draw from Beta(a, b) truncated by one bound.

    Parameters
    ----------
    a, b : float
        Positive shapes.
    bound : (str, float)
        ``("upper", v)`` restricts to ``[0, v]``; ``("lower", v)`` to ``[v, 1]``.
    rng : numpy.random.Generator
    size : int, optional
        Number of draws; a float is returned when omitted.
    """
    side, v = bound
    v = float(v)
    if side == "upper":
        tb = TruncatedBeta(a, b, 0.0, v)
    elif side == "lower":
        tb = TruncatedBeta(a, b, v, 1.0)
    else:
        raise DomainError(f"bound side must be 'upper' or 'lower', got {side!r}")
    if size is None:
        return tb.draw(rng)
    return tb.sample(rng, size)
