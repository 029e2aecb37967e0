"""Parametric bivariate copulas.

Nine families are supported, each with its distribution function, density,
h-functions and their inverses, Kendall's tau relations, rotations by 90, 180
and 270 degrees, simulation, and maximum-likelihood fitting with family
selection.

Notation: ``h1(u, v) = P(U <= u | V = v) = dC/dv`` and
``h2(u, v) = P(V <= v | U = u) = dC/du``. The direction strings ``"1|2"`` and
``"2|1"`` accepted by :func:`hfunc` and :func:`hinv` refer to these two.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special, stats

from ._numerics import EPS, clip_unit, newton_bisect, t_ppf

__all__ = [
    "Family",
    "BivariateCopula",
    "CopulaDomainError",
    "CATALOG",
    "ROTATIONS",
    "copula_cdf",
    "copula_density",
    "hfunc",
    "hinv",
    "param_to_tau",
    "tau_to_param",
    "fit_bicop",
    "simulate_bicop",
    "independence_statistic",
]

ROTATIONS = (0, 90, 180, 270)


class CopulaDomainError(ValueError):
    """Raised when copula parameters or arguments leave their admissible domain."""


class Family(str, enum.Enum):
    INDEPENDENCE = "indep"
    GAUSSIAN = "gaussian"
    STUDENT = "t"
    CLAYTON = "clayton"
    GUMBEL = "gumbel"
    FRANK = "frank"
    JOE = "joe"
    BB1 = "bb1"
    BB8 = "bb8"

    @classmethod
    def parse(cls, name) -> "Family":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower()
        aliases = {"independence": "indep", "normal": "gaussian", "student": "t",
                   "studentt": "t", "student_t": "t"}
        key = aliases.get(key, key)
        for fam in cls:
            if fam.value == key or fam.name.lower() == key:
                return fam
        raise CopulaDomainError(f"unknown copula family {name!r}")


# Families whose rotations are redundant (reflection symmetric) or, for Frank,
# whose native parameter already covers negative dependence.
_NO_ROTATION = frozenset({Family.INDEPENDENCE, Family.GAUSSIAN, Family.STUDENT, Family.FRANK})

CATALOG: tuple[tuple[Family, int], ...] = tuple(
    (fam, rot) for fam in Family for rot in ROTATIONS
    if rot == 0 or fam not in _NO_ROTATION
)


# ---------------------------------------------------------------------------
# family kernels (rotation 0); every kernel is evaluated on clamped inputs
# ``H(a, b)`` is the base h-function P(U <= a | V = b); by exchangeability of
# all nine families dC/du(u, v) = H(v, u).
# ---------------------------------------------------------------------------


class _Kernel:
    n_par = 0
    bounds: tuple[tuple[float, float], ...] = ()
    closed_hinv = False

    @staticmethod
    def cdf(u, v, p):
        raise NotImplementedError

    @classmethod
    def pdf(cls, u, v, p):
        return np.exp(cls.logpdf(u, v, p))

    @staticmethod
    def logpdf(u, v, p):
        raise NotImplementedError

    @staticmethod
    def h(a, b, p):
        raise NotImplementedError

    @classmethod
    def hbar(cls, a_bar, b, p):
        """``1 - h(1 - a_bar, b)``; kernels override it to avoid the cancellation."""
        return 1.0 - cls.h(1.0 - a_bar, b, p)

    @classmethod
    def hinv(cls, w, b, p):
        b = np.broadcast_to(b, np.shape(w)).reshape(-1)
        return newton_bisect(
            lambda x, i: cls.h(clip_unit(x), b[i], p),
            lambda x, i: cls.pdf(clip_unit(x), b[i], p),
            w, 0.0, 1.0, x0=w,
        )

    @staticmethod
    def tau(p) -> float:
        raise NotImplementedError

    @staticmethod
    def check(p) -> None:
        pass


class _Indep(_Kernel):
    closed_hinv = True

    @staticmethod
    def cdf(u, v, p):
        return u * v

    @staticmethod
    def logpdf(u, v, p):
        return np.zeros(np.broadcast(u, v).shape)

    @staticmethod
    def h(a, b, p):
        return np.broadcast_to(a, np.broadcast(a, b).shape).astype(float)

    @classmethod
    def hinv(cls, w, b, p):
        return np.broadcast_to(w, np.broadcast(w, b).shape).astype(float)

    @staticmethod
    def tau(p):
        return 0.0


def _bvn_cdf(x, y, rho):
    """Bivariate standard normal cdf via Owen's T function."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    s = math.sqrt(1.0 - rho * rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        ax = (y - rho * x) / (x * s)
        ay = (x - rho * y) / (y * s)
        ax = np.where(x == 0, np.sign(y - rho * x) * np.inf, ax)
        ay = np.where(y == 0, np.sign(x - rho * y) * np.inf, ay)
    ax = np.where((x == 0) & (y == 0), 0.0, ax)
    ay = np.where((x == 0) & (y == 0), 0.0, ay)
    beta = np.where((x * y > 0) | ((x * y == 0) & (x + y >= 0)), 0.0, 0.5)
    res = 0.5 * (special.ndtr(x) + special.ndtr(y)) - special.owens_t(x, ax) \
        - special.owens_t(y, ay) - beta
    both0 = (x == 0) & (y == 0)
    return np.where(both0, 0.25 + math.asin(rho) / (2 * math.pi), res)


class _Gaussian(_Kernel):
    n_par = 1
    bounds = ((-0.999, 0.999),)
    closed_hinv = True

    @staticmethod
    def check(p):
        if not -1.0 < p[0] < 1.0:
            raise CopulaDomainError(f"gaussian rho must lie in (-1, 1), got {p[0]}")

    @staticmethod
    def cdf(u, v, p):
        return np.clip(_bvn_cdf(special.ndtri(u), special.ndtri(v), p[0]), 0.0, 1.0)

    @staticmethod
    def logpdf(u, v, p):
        return _Gaussian.logpdf_scores(special.ndtri(u), special.ndtri(v), p[0])

    @staticmethod
    def logpdf_scores(x, y, rho):
        r2 = 1.0 - rho * rho
        return -0.5 * math.log(r2) - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2)

    @staticmethod
    def h(a, b, p):
        rho = p[0]
        return special.ndtr((special.ndtri(a) - rho * special.ndtri(b)) / math.sqrt(1.0 - rho * rho))

    @classmethod
    def hinv(cls, w, b, p):
        rho = p[0]
        return special.ndtr(special.ndtri(w) * math.sqrt(1.0 - rho * rho) + rho * special.ndtri(b))

    @staticmethod
    def tau(p):
        return 2.0 / math.pi * math.asin(p[0])


class _Student(_Kernel):
    n_par = 2
    bounds = ((-0.999, 0.999), (2.0, 30.0))
    closed_hinv = True

    @staticmethod
    def check(p):
        if not -1.0 < p[0] < 1.0:
            raise CopulaDomainError(f"t rho must lie in (-1, 1), got {p[0]}")
        if not 2.0 <= p[1] <= 30.0:
            raise CopulaDomainError(f"t degrees of freedom must lie in [2, 30], got {p[1]}")

    @staticmethod
    def logpdf(u, v, p):
        nu = p[1]
        return _Student.logpdf_scores(t_ppf(u, nu), t_ppf(v, nu), p[0], nu)

    @staticmethod
    def logpdf_scores(x, y, rho, nu):
        r2 = 1.0 - rho * rho
        const = (special.gammaln((nu + 2) / 2) + special.gammaln(nu / 2)
                 - 2 * special.gammaln((nu + 1) / 2) - 0.5 * math.log(r2))
        quad = (x * x - 2 * rho * x * y + y * y) / (nu * r2)
        return (const - (nu + 2) / 2 * np.log1p(quad)
                + (nu + 1) / 2 * (np.log1p(x * x / nu) + np.log1p(y * y / nu)))

    @staticmethod
    def h(a, b, p):
        rho, nu = p
        x, y = t_ppf(a, nu), t_ppf(b, nu)
        scale = np.sqrt((nu + y * y) * (1 - rho * rho) / (nu + 1))
        return special.stdtr(nu + 1, (x - rho * y) / scale)

    @classmethod
    def hinv(cls, w, b, p):
        rho, nu = p
        y = t_ppf(b, nu)
        scale = np.sqrt((nu + y * y) * (1 - rho * rho) / (nu + 1))
        return special.stdtr(nu, t_ppf(w, nu + 1) * scale + rho * y)

    @staticmethod
    def cdf(u, v, p):
        # bivariate t as a scale mixture of normals: with R^2 ~ Gamma(nu / 2),
        # C = E[Phi2(x R sqrt(2 / nu), y R sqrt(2 / nu); rho)], Gauss-Jacobi in R
        rho, nu = p
        x, y = t_ppf(u, nu), t_ppf(v, nu)
        nodes, weights = _chi_rule(float(nu))
        vals = _bvn_cdf(np.asarray(x)[..., None] * nodes, np.asarray(y)[..., None] * nodes, rho)
        return np.clip(vals @ weights, 0.0, 1.0)

    @staticmethod
    def tau(p):
        return 2.0 / math.pi * math.asin(p[0])


@lru_cache(maxsize=256)
def _chi_rule(nu: float, n: int = 96):
    """Nodes ``r sqrt(2 / nu)`` and weights for the density of ``r`` with ``r^2 ~ Gamma(nu / 2)``."""
    upper = math.sqrt(nu / 2.0) + 8.0
    xj, wj = special.roots_jacobi(n, 0.0, nu - 1.0)
    r = upper * (1.0 + xj) / 2.0
    logw = nu * math.log(upper / 2.0) - r * r + math.log(2.0) - special.gammaln(nu / 2.0)
    return r * math.sqrt(2.0 / nu), wj * np.exp(logw)


class _Clayton(_Kernel):
    n_par = 1
    bounds = ((1e-4, 28.0),)
    closed_hinv = True

    @staticmethod
    def check(p):
        if not p[0] > 0:
            raise CopulaDomainError(f"clayton theta must be > 0, got {p[0]}")

    @staticmethod
    def _log_a(u, v, th):
        return np.log1p(np.expm1(-th * np.log(u)) + np.expm1(-th * np.log(v)))

    @staticmethod
    def cdf(u, v, p):
        th = p[0]
        return np.exp(-_Clayton._log_a(u, v, th) / th)

    @staticmethod
    def logpdf(u, v, p):
        th = p[0]
        return (math.log1p(th) - (1 + th) * (np.log(u) + np.log(v))
                - (2 + 1 / th) * _Clayton._log_a(u, v, th))

    @staticmethod
    def h(a, b, p):
        th = p[0]
        return np.exp((-th - 1) * np.log(b) - (1 + 1 / th) * _Clayton._log_a(a, b, th))

    @staticmethod
    def hbar(a_bar, b, p):
        th = p[0]
        with np.errstate(over="ignore"):
            d = np.expm1(-th * np.log1p(-a_bar)) * np.exp(th * np.log(b))
            return -np.expm1(-(1 + 1 / th) * np.log1p(d))

    @classmethod
    def hinv(cls, w, b, p):
        th = p[0]
        inner = np.exp(-th * np.log(b)) * np.expm1(-th / (1 + th) * np.log(w))
        return np.exp(-np.log1p(inner) / th)

    @staticmethod
    def tau(p):
        return p[0] / (p[0] + 2.0)


class _Gumbel(_Kernel):
    n_par = 1
    bounds = ((1.0, 20.0),)

    @staticmethod
    def check(p):
        if not p[0] >= 1:
            raise CopulaDomainError(f"gumbel theta must be >= 1, got {p[0]}")

    @staticmethod
    def _parts(u, v, th):
        x, y = -np.log(u), -np.log(v)
        log_s = np.logaddexp(th * np.log(x), th * np.log(y))
        a = np.exp(log_s / th)
        return x, y, log_s, a

    @staticmethod
    def cdf(u, v, p):
        return np.exp(-_Gumbel._parts(u, v, p[0])[3])

    @staticmethod
    def logpdf(u, v, p):
        th = p[0]
        x, y, log_s, a = _Gumbel._parts(u, v, th)
        return (-a + x + y + (th - 1) * (np.log(x) + np.log(y))
                + (2 / th - 2) * log_s + np.log(a + th - 1) - np.log(a))

    @staticmethod
    def h(a, b, p):
        th = p[0]
        x, y, log_s, s_root = _Gumbel._parts(a, b, th)
        return np.exp(-s_root + (1 - th) * np.log(s_root) + (th - 1) * np.log(y) + y)

    @staticmethod
    def hbar(a_bar, b, p):
        th = p[0]
        x, y = -np.log1p(-a_bar), -np.log(b)
        with np.errstate(over="ignore", divide="ignore"):
            lr = np.log1p(np.exp(th * (np.log(x) - np.log(y))))
            log_h = -y * np.expm1(lr / th) - (th - 1) / th * lr
        return -np.expm1(log_h)

    @staticmethod
    def tau(p):
        return 1.0 - 1.0 / p[0]


class _Frank(_Kernel):
    n_par = 1
    bounds = ((-35.0, 35.0),)
    closed_hinv = True

    @staticmethod
    def check(p):
        if p[0] == 0 or not math.isfinite(p[0]):
            raise CopulaDomainError("frank theta must be finite and nonzero")

    @staticmethod
    def cdf(u, v, p):
        th = p[0]
        return -np.log1p(np.expm1(-th * u) * np.expm1(-th * v) / math.expm1(-th)) / th

    @staticmethod
    def logpdf(u, v, p):
        th = p[0]
        k = -math.expm1(-th)
        den = k - np.expm1(-th * u) * np.expm1(-th * v) * 1.0
        # (1 - e^{-th u})(1 - e^{-th v}) == expm1(-th u) * expm1(-th v)
        return math.log(th * k) - th * (u + v) - 2.0 * np.log(np.abs(den))

    @staticmethod
    def h(a, b, p):
        th = p[0]
        ea = np.expm1(-th * a)
        num = np.exp(-th * b) * ea
        den = math.expm1(-th) + ea * np.expm1(-th * b)
        return num / den

    @classmethod
    def hinv(cls, w, b, p):
        th = p[0]
        eb = np.exp(-th * b)
        a = w * math.expm1(-th) / (eb * (1.0 - w) + w)
        return -np.log1p(a) / th

    @staticmethod
    def tau(p):
        th = p[0]
        return _frank_tau(abs(th)) * (1.0 if th > 0 else -1.0)


@lru_cache(maxsize=4096)
def _frank_tau(th: float) -> float:
    if th < 1e-8:
        return th / 9.0
    d1, _ = integrate.quad(lambda t: -t * math.exp(-t) / math.expm1(-t) if t > 0 else 1.0, 0.0, th,
                           epsabs=1e-15, epsrel=1e-13)
    d1 /= th
    return 1.0 - 4.0 / th * (1.0 - d1)


class _Joe(_Kernel):
    n_par = 1
    bounds = ((1.0, 30.0),)

    @staticmethod
    def check(p):
        if not p[0] >= 1:
            raise CopulaDomainError(f"joe theta must be >= 1, got {p[0]}")

    @staticmethod
    def _parts(u, v, th):
        a = np.exp(th * np.log1p(-u))
        b = np.exp(th * np.log1p(-v))
        return a, b, a + b - a * b

    @staticmethod
    def cdf(u, v, p):
        th = p[0]
        return 1.0 - np.exp(np.log(_Joe._parts(u, v, th)[2]) / th)

    @staticmethod
    def logpdf(u, v, p):
        th = p[0]
        a, b, s = _Joe._parts(u, v, th)
        return ((1 / th - 2) * np.log(s) + (th - 1) * (np.log1p(-u) + np.log1p(-v))
                + np.log(th - 1 + s))

    @staticmethod
    def h(a, b, p):
        th = p[0]
        pa, pb, s = _Joe._parts(a, b, th)
        return np.exp((1 / th - 1) * np.log(s) + (th - 1) * np.log1p(-b)) * (1 - pa)

    @staticmethod
    def hbar(a_bar, b, p):
        th = p[0]
        pa = np.exp(th * np.log(a_bar))
        pb = np.exp(th * np.log1p(-b))
        with np.errstate(over="ignore"):
            log_h = np.log1p(-pa) + (1 / th - 1) * np.log1p(pa * (1 - pb) / pb)
        return -np.expm1(log_h)

    @staticmethod
    def tau(p):
        return _archimedean_tau("joe", float(p[0]), 1.0)


class _BB1(_Kernel):
    n_par = 2
    bounds = ((1e-4, 7.0), (1.0, 7.0))

    @staticmethod
    def check(p):
        if not p[0] > 0:
            raise CopulaDomainError(f"bb1 theta must be > 0, got {p[0]}")
        if not p[1] >= 1:
            raise CopulaDomainError(f"bb1 delta must be >= 1, got {p[1]}")

    @staticmethod
    def _parts(u, v, th, de):
        lt_u = np.log(np.expm1(-th * np.log(u)))
        lt_v = np.log(np.expm1(-th * np.log(v)))
        log_s = np.logaddexp(de * lt_u, de * lt_v)
        big_s = np.exp(log_s / de)
        return lt_u, lt_v, log_s, big_s

    @staticmethod
    def cdf(u, v, p):
        th, de = p
        big_s = _BB1._parts(u, v, th, de)[3]
        return np.exp(-np.log1p(big_s) / th)

    @staticmethod
    def logpdf(u, v, p):
        th, de = p
        lt_u, lt_v, log_s, big_s = _BB1._parts(u, v, th, de)
        log_g = (de - 1) * (lt_u + lt_v) + (-th - 1) * (np.log(u) + np.log(v))
        return (log_g + (-1 / th - 2) * np.log1p(big_s) + (1 / de - 2) * log_s
                + np.log(th * (de - 1) + (th * de + 1) * big_s))

    @staticmethod
    def h(a, b, p):
        th, de = p
        lt_a, lt_b, log_s, big_s = _BB1._parts(a, b, th, de)
        return np.exp((-1 / th - 1) * np.log1p(big_s) + (1 / de - 1) * log_s
                      + (de - 1) * lt_b + (-th - 1) * np.log(b))

    @staticmethod
    def tau(p):
        th, de = p
        return 1.0 - 2.0 / (de * (th + 2.0))


class _BB8(_Kernel):
    n_par = 2
    bounds = ((1.0, 8.0), (1e-4, 1.0))

    @staticmethod
    def check(p):
        if not p[0] >= 1:
            raise CopulaDomainError(f"bb8 theta must be >= 1, got {p[0]}")
        if not 0 < p[1] <= 1:
            raise CopulaDomainError(f"bb8 delta must lie in (0, 1], got {p[1]}")

    @staticmethod
    def _parts(u, v, th, de):
        eta = -math.expm1(th * math.log1p(-de)) if de < 1 else 1.0
        a = -np.expm1(th * np.log1p(-de * u))
        b = -np.expm1(th * np.log1p(-de * v))
        log_q = np.log1p(-a * b / eta)
        return eta, a, b, log_q

    @staticmethod
    def cdf(u, v, p):
        th, de = p
        log_q = _BB8._parts(u, v, th, de)[3]
        return -np.expm1(log_q / th) / de

    @staticmethod
    def logpdf(u, v, p):
        th, de = p
        eta, a, b, log_q = _BB8._parts(u, v, th, de)
        return (math.log(de / eta) + (th - 1) * (np.log1p(-de * u) + np.log1p(-de * v))
                + (1 / th - 2) * log_q + np.log(th - a * b / eta))

    @staticmethod
    def h(a, b, p):
        th, de = p
        eta, pa, pb, log_q = _BB8._parts(a, b, th, de)
        return np.exp((1 / th - 1) * log_q + (th - 1) * np.log1p(-de * b)) * pa / eta

    @staticmethod
    def tau(p):
        return _archimedean_tau("bb8", float(p[0]), float(p[1]))


@lru_cache(maxsize=4096)
def _archimedean_tau(kind: str, th: float, de: float) -> float:
    """Kendall's tau 1 + 4 * int_0^1 phi(t) / phi'(t) dt for Joe and BB8 generators."""
    if th == 1.0:
        return 0.0

    eta = 1.0 if de == 1.0 else -math.expm1(th * math.log1p(-de))
    log_eta = math.log(eta)

    def ratio(t):
        # phi / phi' with phi(t) = -log((1 - (1 - de t)^th) / eta), in a form
        # that stays finite when (1 - de t)^th underflows
        base = 1.0 - de * t
        if base <= 0.0:
            return 0.0
        q = math.exp(th * math.log(base))
        if q >= 1.0:
            return 0.0
        g = 1.0 - q
        lead = (math.log1p(-q) / q if q > 0.0 else -1.0) * base * g
        tail = 0.0
        if log_eta != 0.0:
            tail = -log_eta * g * math.exp(min((1.0 - th) * math.log(base), 700.0))
        return (lead + tail) / (th * de)

    val, _ = integrate.quad(ratio, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200)
    return 1.0 + 4.0 * val


_KERNELS: dict[Family, type[_Kernel]] = {
    Family.INDEPENDENCE: _Indep,
    Family.GAUSSIAN: _Gaussian,
    Family.STUDENT: _Student,
    Family.CLAYTON: _Clayton,
    Family.GUMBEL: _Gumbel,
    Family.FRANK: _Frank,
    Family.JOE: _Joe,
    Family.BB1: _BB1,
    Family.BB8: _BB8,
}


# ---------------------------------------------------------------------------
# public copula object
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BivariateCopula:
    """An immutable parametric pair copula.

    ``params`` holds the family parameters in their conventional order; for
    the Student t family that is ``(rho, nu)`` and ``df`` exposes ``nu``.
    Rotations reflect the arguments: the 90 degree version has density
    ``c(1 - u, v)``, 180 degrees ``c(1 - u, 1 - v)`` and 270 degrees ``c(u, 1 - v)``.
    """

    family: Family = Family.INDEPENDENCE
    rotation: int = 0
    params: tuple[float, ...] = ()

    def __post_init__(self):
        fam = Family.parse(self.family)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "params", tuple(float(x) for x in np.atleast_1d(self.params)) if len(np.atleast_1d(self.params)) else ())
        rot = int(self.rotation)
        object.__setattr__(self, "rotation", rot)
        if rot not in ROTATIONS:
            raise CopulaDomainError(f"rotation must be one of {ROTATIONS}, got {rot}")
        if rot != 0 and fam in _NO_ROTATION:
            raise CopulaDomainError(f"{fam.value} copula only supports rotation 0")
        kern = _KERNELS[fam]
        if len(self.params) != kern.n_par:
            raise CopulaDomainError(
                f"{fam.value} copula takes {kern.n_par} parameter(s), got {len(self.params)}")
        kern.check(self.params)

    @property
    def kernel(self) -> type[_Kernel]:
        return _KERNELS[self.family]

    @property
    def n_params(self) -> int:
        return self.kernel.n_par

    @property
    def df(self) -> float | None:
        return self.params[1] if self.family is Family.STUDENT else None

    # -- evaluation -------------------------------------------------------

    def cdf(self, u, v):
        u, v = clip_unit(u), clip_unit(v)
        k, p, r = self.kernel, self.params, self.rotation
        if r == 0:
            out = k.cdf(u, v, p)
        elif r == 90:
            out = v - k.cdf(1 - u, v, p)
        elif r == 180:
            out = u + v - 1 + k.cdf(1 - u, 1 - v, p)
        else:
            out = u - k.cdf(u, 1 - v, p)
        return np.clip(out, 0.0, 1.0)

    def _reflect(self, u, v):
        r = self.rotation
        if r == 0:
            return u, v
        if r == 90:
            return 1 - u, v
        if r == 180:
            return 1 - u, 1 - v
        return u, 1 - v

    def logpdf(self, u, v):
        u, v = self._reflect(clip_unit(u), clip_unit(v))
        return self.kernel.logpdf(clip_unit(u), clip_unit(v), self.params)

    def pdf(self, u, v):
        return np.exp(self.logpdf(u, v))

    def h1(self, u, v, eps: float = EPS):
        """P(U <= u | V = v).

        ``eps`` bounds how close to 0 the first argument and the result may get;
        lowering it keeps tiny lower-tail probabilities resolved.
        """
        u, v = clip_unit(u, eps), clip_unit(v)
        H, p, r = self.kernel.h, self.params, self.rotation
        if r == 0:
            out = H(u, v, p)
        elif r == 90:
            out = self.kernel.hbar(u, v, p)
        elif r == 180:
            out = self.kernel.hbar(u, 1 - v, p)
        else:
            out = H(u, 1 - v, p)
        return np.clip(out, eps, 1.0 - EPS)

    def h2(self, u, v):
        """P(V <= v | U = u)."""
        u, v = clip_unit(u), clip_unit(v)
        H, p, r = self.kernel.h, self.params, self.rotation
        if r == 0:
            out = H(v, u, p)
        elif r == 90:
            out = H(v, 1 - u, p)
        elif r == 180:
            out = self.kernel.hbar(v, 1 - u, p)
        else:
            out = self.kernel.hbar(v, u, p)
        return clip_unit(out)

    def hinv1(self, w, v):
        """Solve ``h1(u, v) = w`` for ``u``."""
        w, v = np.broadcast_arrays(clip_unit(w), clip_unit(v))
        Hi, p, r = self.kernel.hinv, self.params, self.rotation
        if r == 0:
            out = Hi(w, v, p)
        elif r == 90:
            out = 1 - Hi(1 - w, v, p)
        elif r == 180:
            out = 1 - Hi(1 - w, 1 - v, p)
        else:
            out = Hi(w, 1 - v, p)
        return clip_unit(out)

    def hinv2(self, w, u):
        """Solve ``h2(u, v) = w`` for ``v``."""
        w, u = np.broadcast_arrays(clip_unit(w), clip_unit(u))
        Hi, p, r = self.kernel.hinv, self.params, self.rotation
        if r == 0:
            out = Hi(w, u, p)
        elif r == 90:
            out = Hi(w, 1 - u, p)
        elif r == 180:
            out = 1 - Hi(1 - w, 1 - u, p)
        else:
            out = 1 - Hi(1 - w, u, p)
        return clip_unit(out)

    def loglik(self, u, v) -> float:
        return float(np.sum(self.logpdf(u, v)))

    @property
    def tau(self) -> float:
        t = self.kernel.tau(self.params)
        return -t if self.rotation in (90, 270) else t

    def flipped_first(self) -> "BivariateCopula":
        """The copula of ``(1 - U, V)``."""
        if self.family is Family.INDEPENDENCE:
            return self
        if self.family in _NO_ROTATION:
            return BivariateCopula(self.family, 0, (-self.params[0],) + tuple(self.params[1:]))
        return BivariateCopula(self.family, {0: 90, 90: 0, 180: 270, 270: 180}[self.rotation],
                               self.params)

    def rotated_180(self) -> "BivariateCopula":
        """The copula of ``(1 - U, 1 - V)``."""
        if self.family in _NO_ROTATION:
            return self  # radially symmetric families
        return BivariateCopula(self.family, {0: 180, 180: 0, 90: 270, 270: 90}[self.rotation],
                               self.params)

    def simulate(self, n: int, seed=None) -> np.ndarray:
        return simulate_bicop(self, n, seed)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        params = list(self.params)
        df = None
        if self.family is Family.STUDENT:
            params, df = params[:1], params[1]
        return {"family": self.family.value, "rotation": self.rotation,
                "parameters": params, "df": df}

    @classmethod
    def from_dict(cls, d: dict) -> "BivariateCopula":
        params = list(d.get("parameters") or [])
        fam = Family.parse(d["family"])
        if fam is Family.STUDENT:
            params = params + [d["df"]]
        return cls(fam, int(d.get("rotation", 0)), tuple(params))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "BivariateCopula":
        return cls.from_dict(json.loads(text))

    def __str__(self):
        ps = ", ".join(f"{x:.4g}" for x in self.params)
        rot = f" rot={self.rotation}" if self.rotation else ""
        return f"{self.family.value}({ps}){rot}"


INDEPENDENCE = BivariateCopula()


# ---------------------------------------------------------------------------
# functional interface
# ---------------------------------------------------------------------------


def copula_cdf(cop: BivariateCopula, u, v):
    return cop.cdf(u, v)


def copula_density(cop: BivariateCopula, u, v):
    return cop.pdf(u, v)


def _direction(direction: str) -> str:
    d = str(direction).replace(" ", "")
    if d not in ("1|2", "2|1"):
        raise ValueError(f"direction must be '1|2' or '2|1', got {direction!r}")
    return d


def hfunc(cop: BivariateCopula, direction: str, u, v):
    """Conditional distribution functions of a pair copula.

    ``"1|2"`` returns ``P(U <= u | V = v)``, ``"2|1"`` returns ``P(V <= v | U = u)``.
    """
    if _direction(direction) == "1|2":
        return cop.h1(u, v)
    return cop.h2(u, v)


def hinv(cop: BivariateCopula, direction: str, w, cond):
    """Inverse of :func:`hfunc` in the conditioned argument.

    For ``"1|2"`` returns ``u`` with ``hfunc(cop, "1|2", u, cond) == w``; for
    ``"2|1"`` returns ``v`` with ``hfunc(cop, "2|1", cond, v) == w``.
    """
    if _direction(direction) == "1|2":
        return cop.hinv1(w, cond)
    return cop.hinv2(w, cond)


def param_to_tau(cop: BivariateCopula) -> float:
    return cop.tau


def _tau_range_check(family: Family, rotation: int, tau: float) -> None:
    if not -1.0 < tau < 1.0:
        raise CopulaDomainError(f"tau must lie in (-1, 1), got {tau}")
    if family in (Family.CLAYTON, Family.GUMBEL, Family.JOE, Family.BB1, Family.BB8):
        positive = rotation in (0, 180)
        if (positive and tau < 0) or (not positive and tau > 0):
            sign = "[0, 1)" if positive else "(-1, 0]"
            raise CopulaDomainError(
                f"{family.value} rotated {rotation} attains tau in {sign}, got {tau}")
        if family is Family.CLAYTON and tau == 0:
            raise CopulaDomainError("clayton requires tau != 0")
    if family is Family.FRANK and tau == 0:
        raise CopulaDomainError("frank requires tau != 0")


def tau_to_param(family, rotation: int, tau: float) -> tuple[float, ...]:
    """Invert Kendall's tau to a parameter vector.

    Exact for the one-parameter families. For BB1, BB8 and t the second
    parameter is fixed to a conventional value and only the first is solved,
    which is what the fitting routine uses as a start value.
    """
    family = Family.parse(family)
    if family is Family.INDEPENDENCE:
        return ()
    _tau_range_check(family, rotation, tau)
    a = abs(tau)
    if family is Family.GAUSSIAN:
        return (math.sin(math.pi * tau / 2),)
    if family is Family.STUDENT:
        return (math.sin(math.pi * tau / 2), 8.0)
    if family is Family.CLAYTON:
        return (2 * a / (1 - a),)
    if family is Family.GUMBEL:
        return (1 / (1 - a),)
    if family is Family.FRANK:
        th = optimize.brentq(lambda t: _frank_tau(t) - a, 1e-10, 5e3, xtol=1e-14, rtol=1e-15)
        return (math.copysign(th, tau),)
    if family is Family.JOE:
        if a == 0:
            return (1.0,)
        th = optimize.brentq(lambda t: _archimedean_tau("joe", t, 1.0) - a, 1.0, 1e3,
                             xtol=1e-14, rtol=1e-15)
        return (th,)
    if family is Family.BB1:
        de = 1.2
        th = 2.0 / (de * (1 - a)) - 2.0
        if th <= 1e-4:
            de, th = 1.0, max(2 * a / (1 - a), 1e-4)
        return (th, de)
    # BB8: solve theta at delta 0.9 when attainable, otherwise fall back to Joe (delta 1)
    for de in (0.9, 1.0):
        hi_tau = _archimedean_tau("bb8", 60.0, de)
        if a < hi_tau:
            if a == 0:
                return (1.0, de)
            th = optimize.brentq(lambda t: _archimedean_tau("bb8", t, de) - a, 1.0, 60.0,
                                 xtol=1e-12)
            return (th, de)
    return (8.0, 1.0)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def simulate_bicop(cop: BivariateCopula, n: int, seed=None) -> np.ndarray:
    """Draw ``n`` pairs from ``cop`` by conditional inversion; returns an (n, 2) array."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=n)
    w = rng.uniform(size=n)
    v = cop.hinv2(w, u)
    return np.column_stack([clip_unit(u), v])


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def independence_statistic(tau_hat: float, n: int) -> float:
    """Asymptotic z statistic of Kendall's tau under independence."""
    return abs(tau_hat) * math.sqrt(9.0 * n * (n - 1) / (2.0 * (2 * n + 5)))


INDEPENDENCE_CRITICAL = 1.645


def _negll_factory(family: Family, u, v):
    kern = _KERNELS[family]
    if family is Family.GAUSSIAN:
        x, y = special.ndtri(u), special.ndtri(v)
        return lambda p: -float(np.sum(_Gaussian.logpdf_scores(x, y, p[0])))

    def negll(p):
        with np.errstate(all="ignore"):
            val = -float(np.sum(kern.logpdf(u, v, tuple(p))))
        return val if math.isfinite(val) else 1e300

    return negll


def _reflect_obs(rotation: int, u, v):
    if rotation == 0:
        return u, v
    if rotation == 90:
        return 1 - u, v
    if rotation == 180:
        return 1 - u, 1 - v
    return u, 1 - v


def _fit_student(u, v):
    cache: dict[float, tuple[float, float]] = {}

    def profile(log_nu: float) -> float:
        nu = math.exp(log_nu)
        x, y = t_ppf(u, nu), t_ppf(v, nu)

        def nll(r):
            return -float(np.sum(_Student.logpdf_scores(x, y, r, nu)))

        res = optimize.minimize_scalar(nll, bounds=(-0.999, 0.999), method="bounded",
                                       options={"xatol": 1e-6, "maxiter": 200})
        cache[log_nu] = (float(res.x), float(res.fun))
        return float(res.fun)

    lo, hi = math.log(2.0), math.log(30.0)
    grid = np.linspace(lo, hi, 6)
    vals = [profile(g) for g in grid]
    best = int(np.argmin(vals))
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(profile, bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-3, "maxiter": 50})
    key = min(cache, key=lambda k: cache[k][1])
    rho, fun = cache[key]
    return (rho, math.exp(key)), -fun, bool(res.success)


def _fit_family(family: Family, rotation: int, u, v, tau_hat: float):
    """Bounded derivative-free MLE for one (family, rotation); returns (params, loglik, ok)."""
    kern = _KERNELS[family]
    uu, vv = _reflect_obs(rotation, u, v)
    if family is Family.STUDENT:
        return _fit_student(uu, vv)
    try:
        start = tau_to_param(family, rotation, tau_hat)
    except CopulaDomainError:
        start = tuple(lo + 0.25 * (hi - lo) for lo, hi in kern.bounds)
    start = tuple(min(max(s, lo + 1e-6), hi - 1e-6) for s, (lo, hi) in zip(start, kern.bounds))
    negll = _negll_factory(family, uu, vv)
    if kern.n_par == 1:
        lo, hi = kern.bounds[0]
        if family is Family.FRANK:
            # keep the search on the side of zero that tau points to
            lo, hi = (1e-6, hi) if start[0] > 0 else (lo, -1e-6)
        res = optimize.minimize_scalar(lambda t: negll((t,)), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-6, "maxiter": 200})
        params, fun, ok = (float(res.x),), float(res.fun), bool(res.success)
        f0 = negll(start)
        if f0 < fun:
            params, fun = start, f0
    else:
        res = optimize.minimize(negll, np.array(start), method="Nelder-Mead", bounds=kern.bounds,
                                options={"maxiter": 200, "xatol": 1e-6, "fatol": 1e-8})
        params, fun, ok = tuple(float(x) for x in res.x), float(res.fun), bool(res.success)
    if not ok or not math.isfinite(fun) or fun >= 1e299:
        return start, -negll(start), False
    return params, -fun, True


def fit_bicop(obs, allowed=None, *, independence_test: bool = True,
              criterion: str = "aic") -> tuple[BivariateCopula, float]:
    """Select and fit a pair copula to pseudo-observations.

    Parameters
    ----------
    obs : array_like, shape (n, 2)
        Pseudo-observations in (0, 1).
    allowed : iterable of (family, rotation) or of families, optional
        Candidate set; defaults to the full catalog. A bare family expands to
        all of its admissible rotations.
    independence_test : bool
        Apply the Kendall's tau independence pre-test first.
    criterion : {"aic", "bic"}
        Score used for selection among candidates.

    Returns
    -------
    (BivariateCopula, float)
        The selected copula and its log-likelihood on ``obs``.
    """
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 2 or obs.shape[1] != 2:
        raise ValueError("obs must be an (n, 2) array")
    n = obs.shape[0]
    if n < 10:
        raise ValueError(f"fit_bicop needs at least 10 observations, got {n}")
    cands = _expand_allowed(allowed)
    if not cands:
        raise ValueError("allowed family set is empty")
    u, v = clip_unit(obs[:, 0]), clip_unit(obs[:, 1])
    tau_hat = float(stats.kendalltau(u, v).statistic)
    if not math.isfinite(tau_hat):
        tau_hat = 0.0

    has_indep = (Family.INDEPENDENCE, 0) in cands
    if has_indep and (len(cands) == 1 or (
            independence_test and independence_statistic(tau_hat, n) < INDEPENDENCE_CRITICAL)):
        return INDEPENDENCE, 0.0

    pen = 2.0 if criterion == "aic" else math.log(n)
    best = None
    for fam, rot in cands:
        if fam is Family.INDEPENDENCE:
            score, cop, ll = 0.0, INDEPENDENCE, 0.0
        else:
            if fam not in _NO_ROTATION and tau_hat != 0:
                if (rot in (0, 180)) != (tau_hat > 0):
                    continue
            params, ll, ok = _fit_family(fam, rot, u, v, tau_hat)
            try:
                cop = BivariateCopula(fam, rot, params)
            except CopulaDomainError:
                continue
            if not ok:
                warnings.warn(f"{fam.value} rot {rot}: optimizer did not converge; "
                              "falling back to the tau-inversion estimate",
                              RuntimeWarning, stacklevel=2)
            if fam is Family.STUDENT and params[1] >= 30.0 - 1e-3:
                continue  # collapses to the Gaussian candidate
            score = -2.0 * ll + pen * cop.n_params
        if best is None or score < best[0] - 1e-12:
            best = (score, cop, ll)
    if best is None:
        if has_indep:
            return INDEPENDENCE, 0.0
        raise RuntimeError("no admissible copula candidate could be fitted")
    return best[1], float(best[2])


def _expand_allowed(allowed) -> list[tuple[Family, int]]:
    if allowed is None:
        return list(CATALOG)
    out: set[tuple[Family, int]] = set()
    for item in allowed:
        if isinstance(item, tuple):
            fam, rot = Family.parse(item[0]), int(item[1])
            if (fam, rot) not in CATALOG:
                raise CopulaDomainError(f"{fam.value} does not admit rotation {rot}")
            out.add((fam, rot))
        else:
            fam = Family.parse(item)
            out.update((f, r) for f, r in CATALOG if f is fam)
    return [c for c in CATALOG if c in out]


def contour_grid(cop: BivariateCopula, z=None) -> tuple[np.ndarray, np.ndarray]:
    """Copula density mapped to standard normal margins on a square grid.

    Returns ``(z, g)`` with ``g[i, j] = c(Phi(z[i]), Phi(z[j])) phi(z[i]) phi(z[j])``,
    the surface behind normalized contour plots.
    """
    z = np.linspace(-3.0, 3.0, 61) if z is None else np.asarray(z, dtype=float)
    z1, z2 = np.meshgrid(z, z, indexing="ij")
    g = cop.pdf(special.ndtr(z1), special.ndtr(z2)) * stats.norm.pdf(z1) * stats.norm.pdf(z2)
    return z, g
