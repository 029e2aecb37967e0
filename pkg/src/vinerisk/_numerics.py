"""Small numerical building blocks shared by the copula and margin code."""

from __future__ import annotations

import numpy as np
from scipy import linalg, special

EPS = 1e-10


def clip_unit(x, eps: float = EPS) -> np.ndarray:
    """Clamp values into ``[eps, 1 - eps]``."""
    return np.clip(np.asarray(x, dtype=float), eps, 1.0 - eps)


def t_ppf(p, nu) -> np.ndarray:
    """Student t quantile through the inverse regularized incomplete beta.

    Roughly four times faster than ``scipy.special.stdtrit``, which matters
    inside likelihood loops.
    """
    p = np.asarray(p, dtype=float)
    nu = np.asarray(nu, dtype=float)
    q = np.minimum(p, 1.0 - p)
    two_q = 2.0 * q
    # near the median the complementary form avoids cancellation in 1 - z
    central = two_q > 0.5
    z = special.betaincinv(nu / 2.0, 0.5, np.where(central, 0.5, two_q))
    w = special.betaincinv(0.5, nu / 2.0, np.where(central, 1.0 - two_q, 0.5))
    mag = np.where(central, np.sqrt(nu * w / (1.0 - w)), np.sqrt(nu * (1.0 - z) / z))
    return np.where(p < 0.5, -mag, mag)


def newton_bisect(func, dfunc, target, lo, hi, x0=None, max_iter: int = 100,
                  xtol: float = 1e-15):
    """Vectorized safeguarded Newton solve of ``func(x) = target`` on ``[lo, hi]``.

    ``func`` must be nondecreasing on the bracket. A Newton step that leaves
    the current bracket is replaced by a bisection step, so convergence is
    guaranteed and typically quadratic.
    """
    target = np.asarray(target, dtype=float)
    shape = target.shape
    target = target.reshape(-1)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), shape).reshape(-1).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), shape).reshape(-1).copy()
    if x0 is None:
        x = 0.5 * (lo + hi)
    else:
        x = np.clip(np.broadcast_to(np.asarray(x0, dtype=float), shape).reshape(-1), lo, hi)
    active = np.ones(target.shape, dtype=bool)
    for _ in range(max_iter):
        idx = np.nonzero(active)
        if idx[0].size == 0:
            break
        xa = x[idx]
        f = func(xa, idx) - target[idx]
        below = f < 0
        lo[idx] = np.where(below, xa, lo[idx])
        hi[idx] = np.where(below, hi[idx], xa)
        d = dfunc(xa, idx)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xa - f / d
        bad = ~np.isfinite(xn) | (xn <= lo[idx]) | (xn >= hi[idx])
        xn = np.where(bad, 0.5 * (lo[idx] + hi[idx]), xn)
        step = np.abs(xn - xa)
        done = (f == 0) | (step <= xtol) | (hi[idx] - lo[idx] <= xtol)
        x[idx] = np.where(f == 0, xa, xn)
        active[idx] = ~done
    return x.reshape(shape)


def bisect_increasing(func, target, lo, hi, iters: int = 200, xtol: float = 0.0):
    """Vectorized plain bisection for a nondecreasing ``func`` on ``[lo, hi]``."""
    target = np.asarray(target, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), target.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), target.shape).copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.all((mid == lo) | (mid == hi) | (hi - lo <= xtol)):
            break
        below = func(mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def collinear_columns(A, names) -> list:
    """Names of the columns a pivoted QR finds linearly dependent on the others."""
    _, R, piv = linalg.qr(np.asarray(A, dtype=float), mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(np.shape(A)) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    return [names[j] for j in sorted(piv[rank:])]
