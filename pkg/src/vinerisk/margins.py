"""Univariate margins: parametric families, normal mixtures fitted by EM,
BIC selection and the probability integral transform."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import optimize, special, stats

from ._numerics import EPS, clip_unit, newton_bisect

__all__ = [
    "MarginFamily",
    "MarginalModel",
    "MarginDomainError",
    "MarginFitError",
    "PITResult",
    "fit_parametric",
    "fit_mixture_normal",
    "select_margin",
    "cdf",
    "pdf",
    "quantile",
    "pit_transform",
    "jitter_ties",
]

MIN_OBS = 20
EM_TOL = 1e-8
EM_MAX_ITER = 500
EM_MAX_RESTARTS = 5
MIXTURE_SIZES = (2, 3, 4)


class MarginDomainError(ValueError):
    """Data or parameters outside the support of a marginal family."""


class MarginFitError(RuntimeError):
    """Likelihood maximization failed; ``best`` holds the best model found."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class MarginFamily(str, enum.Enum):
    NORMAL = "normal"
    LOGNORMAL = "lognormal"
    SKEWNORMAL = "skewnormal"
    SKEWT = "skewt"
    GEV = "gev"
    GAMMA = "gamma"
    MIXTURE = "mixture"

    @classmethod
    def parse(cls, name) -> "MarginFamily":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "").replace("_", "").replace(" ", "")
        aliases = {"gaussian": "normal", "lnorm": "lognormal", "snorm": "skewnormal",
                   "skewstudentt": "skewt", "sstd": "skewt", "normalmixture": "mixture",
                   "mixtureofnormals": "mixture", "generalizedextremevalue": "gev"}
        key = aliases.get(key, key)
        for fam in cls:
            if fam.value == key:
                return fam
        raise MarginDomainError(f"unknown marginal family {name!r}")


_N_PARAMS = {MarginFamily.NORMAL: 2, MarginFamily.LOGNORMAL: 2, MarginFamily.SKEWNORMAL: 3,
             MarginFamily.SKEWT: 4, MarginFamily.GEV: 3, MarginFamily.GAMMA: 2}

# breakpoints of the cumulative skew-t table on the arctan scale
_TABLE_SEGMENTS = 400
_GL_X, _GL_W = leggauss(16)


@dataclass(frozen=True)
class MarginalModel:
    """A fitted univariate distribution.

    Parameter layouts: normal (mu, sigma); lognormal (mu, sigma) of the log;
    skewnormal (xi, omega, alpha); skewt (xi, omega, alpha, nu); gev (mu,
    sigma, shape) with positive shape giving a heavy upper tail; gamma (shape,
    rate); mixture (mu_1..mu_S, sigma_1..sigma_S, weight_1..weight_S).
    """

    family: MarginFamily
    params: tuple[float, ...]
    loglik: float = float("nan")
    n_obs: int = 0
    trace: tuple[float, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        fam = MarginFamily.parse(self.family)
        object.__setattr__(self, "family", fam)
        p = tuple(float(x) for x in self.params)
        object.__setattr__(self, "params", p)
        _validate(fam, p)

    # -- bookkeeping ------------------------------------------------------

    @property
    def n_components(self) -> int:
        return len(self.params) // 3 if self.family is MarginFamily.MIXTURE else 1

    @property
    def n_params(self) -> int:
        if self.family is MarginFamily.MIXTURE:
            return 3 * self.n_components - 1
        return _N_PARAMS[self.family]

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + self.n_params * math.log(max(self.n_obs, 1))

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params

    @property
    def label(self) -> str:
        if self.family is MarginFamily.MIXTURE:
            return f"mixture{self.n_components}"
        return self.family.value

    def _mixture(self):
        s = self.n_components
        p = np.asarray(self.params)
        return p[:s], p[s:2 * s], p[2 * s:]

    # -- distribution functions ----------------------------------------------

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        fam, p = self.family, self.params
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if fam is MarginFamily.NORMAL:
                return stats.norm.logpdf(x, p[0], p[1])
            if fam is MarginFamily.LOGNORMAL:
                pos = x > 0
                lx = np.log(np.where(pos, x, 1.0))
                out = stats.norm.logpdf(lx, p[0], p[1]) - lx
                return np.where(pos, out, -np.inf)
            if fam is MarginFamily.GAMMA:
                return stats.gamma.logpdf(x, p[0], scale=1.0 / p[1])
            if fam is MarginFamily.SKEWNORMAL:
                return _skewnormal_logpdf(x, *p)
            if fam is MarginFamily.SKEWT:
                return _skewt_logpdf(x, *p)
            if fam is MarginFamily.GEV:
                return _gev_logpdf(x, *p)
            mu, sig, w = self._mixture()
            comp = stats.norm.logpdf(x[..., None], mu, sig) + np.log(w)
            return special.logsumexp(comp, axis=-1)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        """Distribution function, clamped into ``[EPS, 1 - EPS]``."""
        return clip_unit(self.raw_cdf(x))

    def raw_cdf(self, x):
        x = np.asarray(x, dtype=float)
        fam, p = self.family, self.params
        if fam is MarginFamily.NORMAL:
            return special.ndtr((x - p[0]) / p[1])
        if fam is MarginFamily.LOGNORMAL:
            with np.errstate(divide="ignore"):
                lx = np.log(np.maximum(x, 0.0))
            return special.ndtr((lx - p[0]) / p[1])
        if fam is MarginFamily.GAMMA:
            return special.gammainc(p[0], np.maximum(x, 0.0) * p[1])
        if fam is MarginFamily.SKEWNORMAL:
            return stats.skewnorm.cdf(x, p[2], loc=p[0], scale=p[1])
        if fam is MarginFamily.SKEWT:
            return self._skewt_cdf(x)
        if fam is MarginFamily.GEV:
            return _gev_cdf(x, *p)
        mu, sig, w = self._mixture()
        return special.ndtr((x[..., None] - mu) / sig) @ w

    def sf(self, x):
        """Survival function ``1 - F(x)`` computed without cancellation in the upper tail."""
        x = np.asarray(x, dtype=float)
        fam, p = self.family, self.params
        if fam is MarginFamily.NORMAL:
            return special.ndtr((p[0] - x) / p[1])
        if fam is MarginFamily.LOGNORMAL:
            with np.errstate(divide="ignore"):
                lx = np.log(np.maximum(x, 0.0))
            return special.ndtr((p[0] - lx) / p[1])
        if fam is MarginFamily.GAMMA:
            return special.gammaincc(p[0], np.maximum(x, 0.0) * p[1])
        if fam is MarginFamily.SKEWNORMAL:
            return stats.skewnorm.sf(x, p[2], loc=p[0], scale=p[1])
        if fam is MarginFamily.SKEWT:
            # reflect: the upper tail is the lower tail of the mirrored distribution
            return self._skewt_mirror._skewt_cdf(2.0 * p[0] - x)
        if fam is MarginFamily.GEV:
            with np.errstate(over="ignore"):
                return -np.expm1(-_gev_t(x, *p))
        mu, sig, w = self._mixture()
        return special.ndtr((mu - x[..., None]) / sig) @ w

    @cached_property
    def _skewt_mirror(self) -> "MarginalModel":
        xi, om, al, nu = self.params
        return MarginalModel(MarginFamily.SKEWT, (xi, om, -al, nu))

    def quantile(self, p, return_flag: bool = False):
        """Inverse distribution function; ``p`` outside ``[EPS, 1 - EPS]`` is clamped.

        With ``return_flag`` a boolean mask of clamped entries is returned as well.
        """
        p_in = np.asarray(p, dtype=float)
        if np.any(np.isnan(p_in)):
            raise MarginDomainError("quantile level is NaN")
        flag = (p_in < EPS) | (p_in > 1 - EPS)
        q = clip_unit(p_in)
        out = self._quantile(q)
        return (out, flag) if return_flag else out

    def _quantile(self, q):
        fam, p = self.family, self.params
        if fam is MarginFamily.NORMAL:
            return p[0] + p[1] * special.ndtri(q)
        if fam is MarginFamily.LOGNORMAL:
            return np.exp(p[0] + p[1] * special.ndtri(q))
        if fam is MarginFamily.GAMMA:
            return special.gammaincinv(p[0], q) / p[1]
        if fam is MarginFamily.SKEWNORMAL:
            return self._monotone_inverse(q, *self._skewnormal_bracket())
        if fam is MarginFamily.SKEWT:
            return self._skewt_quantile(q)
        if fam is MarginFamily.GEV:
            return _gev_quantile(q, *p)
        mu, sig, _ = self._mixture()
        z = special.ndtri(q)
        lo = np.min(mu) + np.max(sig) * np.minimum(z, 0.0) - 1.0 * np.max(sig)
        hi = np.max(mu) + np.max(sig) * np.maximum(z, 0.0) + 1.0 * np.max(sig)
        return self._monotone_inverse(q, lo, hi)

    def _skewnormal_bracket(self):
        xi, om, al = self.params
        # the skew normal lies between N(xi, om) and |N|-type tails on either side
        return xi - 40.0 * om, xi + 40.0 * om

    def _monotone_inverse(self, q, lo, hi):
        q = np.asarray(q, dtype=float)
        flat = q.reshape(-1)
        lo = np.broadcast_to(lo, q.shape).reshape(-1)
        hi = np.broadcast_to(hi, q.shape).reshape(-1)
        xtol = 1e-15 * float(np.max(np.abs(np.concatenate([lo, hi]))))
        x = newton_bisect(lambda x, i: self.raw_cdf(x), lambda x, i: self.pdf(x), flat,
                          lo, hi, max_iter=200, xtol=xtol)
        return x.reshape(q.shape)

    # -- skew-t table ---------------------------------------------------------

    @cached_property
    def _skewt_table(self):
        edges = np.linspace(-np.pi / 2, np.pi / 2, _TABLE_SEGMENTS + 1)
        a, b = edges[:-1], edges[1:]
        nodes = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * _GL_X
        seg = 0.5 * (b - a) * (self._skewt_integrand(nodes) @ _GL_W)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        return edges, cum

    def _skewt_integrand(self, t):
        xi, om, al, nu = self.params
        with np.errstate(over="ignore", invalid="ignore"):
            z = np.tan(t)
            g = np.exp(_skewt_logpdf_std(z, al, nu)) / np.cos(t) ** 2
        return np.where(np.isfinite(g), g, 0.0)

    def _skewt_cdf_t(self, t):
        edges, cum = self._skewt_table
        t = np.clip(t, edges[0], edges[-1])
        k = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, _TABLE_SEGMENTS - 1)
        a = edges[k]
        half = 0.5 * (t - a)
        nodes = (a + half)[..., None] + half[..., None] * _GL_X
        part = half * (self._skewt_integrand(nodes) @ _GL_W)
        return np.clip((cum[k] + part) / cum[-1], 0.0, 1.0)

    def _skewt_cdf(self, x):
        xi, om = self.params[0], self.params[1]
        return self._skewt_cdf_t(np.arctan((np.asarray(x, dtype=float) - xi) / om))

    def _skewt_quantile(self, q):
        xi, om = self.params[0], self.params[1]
        edges, cum = self._skewt_table
        q = np.asarray(q, dtype=float)
        target = q.reshape(-1) * cum[-1]
        k = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, _TABLE_SEGMENTS - 1)
        t = newton_bisect(
            lambda t, i: self._skewt_cdf_t(t) * cum[-1],
            lambda t, i: self._skewt_integrand(t),
            target, edges[k], edges[k + 1], max_iter=200, xtol=1e-16)
        return (xi + om * np.tan(t)).reshape(q.shape)

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {"family": self.family.value, "parameters": list(self.params),
                "loglik": self.loglik, "n_obs": self.n_obs}

    @classmethod
    def from_dict(cls, d: dict) -> "MarginalModel":
        return cls(MarginFamily.parse(d["family"]), tuple(d["parameters"]),
                   float(d.get("loglik", float("nan"))), int(d.get("n_obs", 0)))

    def __str__(self):
        return f"{self.label}[" + ", ".join(f"{x:.6g}" for x in self.params) + "]"


def _validate(fam: MarginFamily, p: tuple) -> None:
    if not all(math.isfinite(x) for x in p):
        raise MarginDomainError(f"{fam.value} parameters must be finite")
    if fam is MarginFamily.MIXTURE:
        if len(p) == 0 or len(p) % 3:
            raise MarginDomainError("mixture parameters must be (mu..., sigma..., weight...)")
        s = len(p) // 3
        sig, w = p[s:2 * s], p[2 * s:]
        if min(sig) <= 0:
            raise MarginDomainError("mixture sigma must be > 0")
        if min(w) <= 0 or abs(sum(w) - 1.0) > 1e-9:
            raise MarginDomainError("mixture weights must be positive and sum to 1")
        return
    if len(p) != _N_PARAMS[fam]:
        raise MarginDomainError(f"{fam.value} takes {_N_PARAMS[fam]} parameters, got {len(p)}")
    scale_idx = {MarginFamily.NORMAL: 1, MarginFamily.LOGNORMAL: 1, MarginFamily.SKEWNORMAL: 1,
                 MarginFamily.SKEWT: 1, MarginFamily.GEV: 1}
    if fam in scale_idx and p[scale_idx[fam]] <= 0:
        raise MarginDomainError(f"{fam.value} scale must be > 0")
    if fam is MarginFamily.GAMMA and (p[0] <= 0 or p[1] <= 0):
        raise MarginDomainError("gamma shape and rate must be > 0")
    if fam is MarginFamily.SKEWT and p[3] <= 0:
        raise MarginDomainError("skew-t degrees of freedom must be > 0")


# ---------------------------------------------------------------------------
# family formulas
# ---------------------------------------------------------------------------


_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def _skewt_logpdf_std(z, alpha, nu):
    arg = alpha * z * np.sqrt((nu + 1.0) / (nu + z * z))
    log_t = (special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)
             - (nu + 1) / 2 * np.log1p(z * z / nu))
    with np.errstate(divide="ignore"):
        log_cdf = np.log(special.stdtr(nu + 1.0, arg))
    return math.log(2.0) + log_t + log_cdf


def _skewnormal_logpdf(x, xi, omega, alpha):
    z = (np.asarray(x, dtype=float) - xi) / omega
    return (math.log(2.0) - _HALF_LOG_2PI - 0.5 * z * z + special.log_ndtr(alpha * z)
            - math.log(omega))


def _skewt_logpdf(x, xi, omega, alpha, nu):
    z = (np.asarray(x, dtype=float) - xi) / omega
    return _skewt_logpdf_std(z, alpha, nu) - math.log(omega)


def _gev_t(x, mu, sigma, shape):
    """``t(x)`` with ``F = exp(-t)``; ``inf`` below and ``0`` above the support."""
    z = (np.asarray(x, dtype=float) - mu) / sigma
    if abs(shape) < 1e-8:
        return np.exp(-z)
    arg = 1.0 + shape * z
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = np.exp(-np.log1p(shape * z) / shape)
    outside = np.inf if shape > 0 else 0.0
    return np.where(arg > 0, t, outside)


def _gev_cdf(x, mu, sigma, shape):
    with np.errstate(over="ignore"):
        return np.exp(-_gev_t(x, mu, sigma, shape))


def _gev_logpdf(x, mu, sigma, shape):
    z = (np.asarray(x, dtype=float) - mu) / sigma
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if abs(shape) < 1e-8:
            return -math.log(sigma) - z - np.exp(-z)
        arg = 1.0 + shape * z
        la = np.log(np.where(arg > 0, arg, 1.0))
        out = -math.log(sigma) - (1.0 / shape + 1.0) * la - np.exp(-la / shape)
    return np.where(arg > 0, out, -np.inf)


def _gev_quantile(q, mu, sigma, shape):
    y = -np.log(q)
    if abs(shape) < 1e-8:
        return mu - sigma * np.log(y)
    return mu + sigma * np.expm1(-shape * np.log(y)) / shape


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def _check_data(x, fam: MarginFamily | None = None, min_obs: int = MIN_OBS) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size < min_obs:
        raise MarginDomainError(f"need at least {min_obs} observations, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise MarginDomainError("data contain non-finite values")
    if np.ptp(x) == 0:
        raise MarginDomainError("data have zero variance")
    if fam in (MarginFamily.LOGNORMAL, MarginFamily.GAMMA) and np.min(x) <= 0:
        raise MarginDomainError(f"{fam.value} requires strictly positive data")
    return x


def _nelder_mead(negll, start, bounds=None, maxiter=4000):
    """Nelder-Mead with one restart from the optimum; ``success`` also holds
    when the restart no longer improves the objective."""
    opts = {"maxiter": maxiter, "maxfev": 2 * maxiter, "xatol": 1e-8, "fatol": 1e-10,
            "adaptive": True}
    res = optimize.minimize(negll, np.asarray(start, dtype=float), method="Nelder-Mead",
                            bounds=bounds, options=opts)
    res2 = optimize.minimize(negll, res.x, method="Nelder-Mead", bounds=bounds, options=opts)
    best = res2 if res2.fun <= res.fun else res
    best.success = bool(res2.success or abs(res.fun - res2.fun) < 1e-7)
    return best


def _finite(f):
    def wrapped(theta):
        with np.errstate(all="ignore"):
            v = f(theta)
        return v if math.isfinite(v) else 1e300
    return wrapped


def fit_parametric(data, family) -> MarginalModel:
    """Maximum-likelihood fit of a single parametric family."""
    fam = MarginFamily.parse(family)
    if fam is MarginFamily.MIXTURE:
        return _best_mixture(_check_data(data))
    x = _check_data(data, fam)
    n = x.size
    if fam is MarginFamily.NORMAL:
        mu = float(np.mean(x))
        p = (mu, float(np.sqrt(np.mean((x - mu) ** 2))))
    elif fam is MarginFamily.LOGNORMAL:
        lx = np.log(x)
        mu = float(np.mean(lx))
        p = (mu, float(np.sqrt(np.mean((lx - mu) ** 2))))
    elif fam is MarginFamily.GAMMA:
        s = math.log(np.mean(x)) - float(np.mean(np.log(x)))
        # log(a) - digamma(a) decreases from inf to 0
        shape = optimize.brentq(lambda a: math.log(a) - special.digamma(a) - s, 1e-8, 1e10,
                                xtol=1e-14, rtol=1e-15)
        p = (shape, shape / float(np.mean(x)))
    else:
        p = _fit_numeric(fam, x)
    m = MarginalModel(fam, p, float(np.sum(MarginalModel(fam, p).logpdf(x))), n)
    if not math.isfinite(m.loglik):
        raise MarginFitError(f"{fam.value} fit produced a non-finite likelihood", best=m)
    return m


_SKEWT_BOUNDS = [(None, None), (None, None), (None, None), (0.0, math.log(500.0))]


def _fit_numeric(fam: MarginFamily, x: np.ndarray) -> tuple:
    mu, sd = float(np.mean(x)), float(np.std(x))
    skew = float(stats.skew(x))
    if fam in (MarginFamily.SKEWNORMAL, MarginFamily.SKEWT):
        # method-of-moments start for the slant
        g = min(abs(skew), 0.95)
        c = (2 * g / (4 - math.pi)) ** (2 / 3)
        delta = math.copysign(math.sqrt(math.pi / 2 * c / (1 + c)), skew)
        alpha0 = delta / math.sqrt(max(1 - delta * delta, 1e-6))
        om0 = sd / math.sqrt(1 - 2 * delta * delta / math.pi)
        xi0 = mu - om0 * delta * math.sqrt(2 / math.pi)
        if fam is MarginFamily.SKEWNORMAL:
            f = _finite(lambda th: -float(np.sum(
                _skewnormal_logpdf(x, th[0], math.exp(th[1]), th[2]))))
            res = _nelder_mead(f, (xi0, math.log(om0), alpha0))
            th = res.x
            best = (float(th[0]), math.exp(th[1]), float(th[2]))
            ok = bool(res.success)
        else:
            f = _finite(lambda th: -float(np.sum(
                _skewt_logpdf(x, th[0], math.exp(th[1]), th[2], math.exp(th[3])))))
            # quasi-Newton here: the simplex stalls when nu runs into its upper bound
            cands = [optimize.minimize(f, (xi0, math.log(om0), a0, math.log(nu0)),
                                       method="L-BFGS-B", bounds=_SKEWT_BOUNDS)
                     for a0 in (alpha0, -alpha0) for nu0 in (4.0, 15.0)]
            res = min(cands, key=lambda r: r.fun)
            th = res.x
            best = (float(th[0]), math.exp(th[1]), float(th[2]), math.exp(th[3]))
            ok = any(r.success and r.fun <= res.fun + 1e-6 for r in cands)
    else:  # GEV
        beta0 = sd * math.sqrt(6) / math.pi
        start = (mu - 0.5772 * beta0, math.log(beta0))
        f = _finite(lambda th: -float(np.sum(_gev_logpdf(x, th[0], math.exp(th[1]), th[2]))))
        cands = [_nelder_mead(f, (*start, s0)) for s0 in (-0.2, 0.1, 0.4)]
        res = min(cands, key=lambda r: r.fun)
        th = res.x
        best = (float(th[0]), math.exp(th[1]), float(th[2]))
        ok = bool(res.success)
    if not ok or res.fun >= 1e299:
        model = MarginalModel(fam, best, -float(res.fun), x.size)
        raise MarginFitError(f"{fam.value} likelihood maximization did not converge", best=model)
    return best


# -- normal mixtures ----------------------------------------------------------


def _em_init_blocks(x_sorted, s):
    blocks = np.array_split(x_sorted, s)
    mu = np.array([b.mean() for b in blocks])
    sd = np.array([b.std() for b in blocks])
    fallback = np.std(x_sorted) / s
    sd = np.where(sd > 0, sd, fallback)
    return mu, sd, np.full(s, 1.0 / s)


def _em_init_random(x, s, rng):
    mu = rng.choice(x, size=s, replace=False)
    return np.sort(mu), np.full(s, np.std(x)), np.full(s, 1.0 / s)


def _em_run(x, mu, sd, w, tol, max_iter, floor):
    # components along rows, observations along columns (contiguous reductions)
    trace = []
    ll_prev = -np.inf
    xr = x[None, :]
    for it in range(max_iter + 1):
        zc = (xr - mu[:, None]) / sd[:, None]
        logc = -0.5 * zc * zc + (np.log(w) - np.log(sd) - _HALF_LOG_2PI)[:, None]
        top = logc.max(axis=0)
        e = np.exp(logc - top)
        tot = e.sum(axis=0)
        ll = float(np.sum(top) + np.sum(np.log(tot)))
        trace.append(ll)
        if ll < ll_prev - 1e-9 * max(1.0, abs(ll_prev)):
            raise RuntimeError(f"EM log-likelihood decreased at iteration {it}: {ll_prev} -> {ll}")
        if it == max_iter or (it > 0 and abs(ll - ll_prev) < tol):
            return mu, sd, w, ll, trace, True
        ll_prev = ll
        r = e / tot
        nk = r.sum(axis=1)
        if np.any(nk <= 1e-12 * x.size):
            return mu, sd, w, ll, trace, False
        w = nk / nk.sum()
        mu = (r @ x) / nk
        dev = xr - mu[:, None]
        sd = np.sqrt(np.einsum("ij,ij->i", dev * dev, r) / nk)
        if np.any(sd < floor):
            return mu, sd, w, ll, trace, False
    return mu, sd, w, ll, trace, True


def fit_mixture_normal(data, S: int, *, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER,
                       seed: int = 0) -> MarginalModel:
    """Fit an ``S``-component normal mixture by EM.

    Initialization splits the sorted data into ``S`` equal blocks. A run in
    which a component collapses (its sd falls below ``1e-8`` times the sample
    sd) is restarted from random data points, at most five times. The
    log-likelihood after every iteration is kept in ``model.trace``.
    """
    S = int(S)
    if S < 1:
        raise ValueError("S must be a positive integer")
    x = _check_data(data, min_obs=max(10 * S, 2))
    floor = 1e-8 * float(np.std(x))
    rng = np.random.default_rng(seed)
    mu, sd, w = _em_init_blocks(np.sort(x), S)
    for attempt in range(EM_MAX_RESTARTS + 1):
        mu, sd, w, ll, trace, ok = _em_run(x, mu, sd, w, tol, max_iter, floor)
        if ok:
            order = np.argsort(mu, kind="stable")
            w = w[order] / np.sum(w)
            params = (*mu[order], *sd[order], *w)
            return MarginalModel(MarginFamily.MIXTURE, params, ll, x.size, tuple(trace))
        mu, sd, w = _em_init_random(x, S, rng)
    raise MarginFitError(f"normal mixture with S={S} degenerated after {EM_MAX_RESTARTS} restarts")


def _best_mixture(x, sizes=MIXTURE_SIZES) -> MarginalModel:
    best, errors = None, []
    for s in sizes:
        if x.size < 10 * s:
            continue
        try:
            m = fit_mixture_normal(x, s)
        except MarginFitError as exc:
            errors.append(str(exc))
            continue
        if best is None or m.bic < best.bic:
            best = m
    if best is None:
        raise MarginFitError("no normal mixture could be fitted: " + "; ".join(errors))
    return best


DEFAULT_CANDIDATES = tuple(MarginFamily)


def select_margin(data, candidates=DEFAULT_CANDIDATES) -> MarginalModel:
    """Fit every applicable candidate family and return the one with the lowest BIC.

    ``mixture`` scans ``S`` over 2, 3 and 4 components.
    """
    fams = [MarginFamily.parse(c) for c in candidates]
    if not fams:
        raise ValueError("candidate set is empty")
    x = _check_data(data)
    best, failures = None, []
    for fam in dict.fromkeys(fams):
        try:
            m = fit_parametric(x, fam)
        except (MarginDomainError, MarginFitError) as exc:
            failures.append(f"{fam.value}: {exc}")
            continue
        if best is None or m.bic < best.bic - 1e-12:
            best = m
    if best is None:
        raise MarginDomainError("no candidate family applies: " + "; ".join(failures))
    return best


# ---------------------------------------------------------------------------
# functional interface and PIT
# ---------------------------------------------------------------------------


def cdf(m: MarginalModel, x):
    return m.cdf(x)


def pdf(m: MarginalModel, x):
    return m.pdf(x)


def quantile(m: MarginalModel, p, return_flag: bool = False):
    return m.quantile(p, return_flag=return_flag)


@dataclass(frozen=True)
class PITResult:
    values: np.ndarray
    ks_statistic: tuple[float, ...]
    ks_pvalue: tuple[float, ...]


def pit_transform(dataset, margins) -> PITResult:
    """Map each column through its fitted margin and report a KS check per column."""
    X = np.asarray(dataset, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    margins = list(margins)
    if X.shape[1] != len(margins):
        raise ValueError(f"{X.shape[1]} columns but {len(margins)} margins")
    cols, ks, pv = [], [], []
    for j, m in enumerate(margins):
        col = X[:, j]
        if np.ptp(col) == 0:
            raise MarginDomainError(f"column {j} has zero variance")
        u = m.cdf(col)
        res = stats.kstest(u, "uniform")
        cols.append(u)
        ks.append(float(res.statistic))
        pv.append(float(res.pvalue))
    return PITResult(np.column_stack(cols), tuple(ks), tuple(pv))


def jitter_ties(x, width: float | None = None, seed=None) -> np.ndarray:
    """Break ties with uniform noise of half-width ``width``.

    The default width is half the smallest gap between distinct values.
    """
    x = np.asarray(x, dtype=float)
    uniq = np.unique(x)
    if width is None:
        width = 0.5 * float(np.min(np.diff(uniq))) if uniq.size > 1 else 0.5
    rng = np.random.default_rng(seed)
    if uniq.size == x.size:
        warnings.warn("no ties present; jitter still applied", RuntimeWarning, stacklevel=2)
    return x + rng.uniform(-width, width, size=x.shape)
