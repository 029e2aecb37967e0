"""Ground-truth D-vine builders and independent oracles used by the tests."""

import numpy as np
from scipy import integrate, stats

from vinerisk import bicop
from vinerisk.bicop import BivariateCopula, Family
from vinerisk.dvine import DVineRegressionModel
from vinerisk.margins import MarginalModel, MarginFamily

STD_NORMAL = MarginalModel(MarginFamily.NORMAL, (0.0, 1.0))

# families used for random ground truths; every one can reach |tau| = 0.6
_RANDOM_FAMILIES = [
    (Family.GAUSSIAN, 0), (Family.STUDENT, 0), (Family.CLAYTON, 0), (Family.CLAYTON, 90),
    (Family.GUMBEL, 0), (Family.GUMBEL, 180), (Family.GUMBEL, 270), (Family.FRANK, 0),
    (Family.JOE, 0), (Family.JOE, 180), (Family.BB1, 0), (Family.BB8, 0), (Family.BB8, 90),
]

_RANDOM_MARGINS = [
    MarginalModel(MarginFamily.NORMAL, (1.0, 2.0)),
    MarginalModel(MarginFamily.GAMMA, (3.0, 0.5)),
    MarginalModel(MarginFamily.LOGNORMAL, (0.2, 0.4)),
    MarginalModel(MarginFamily.GEV, (0.0, 1.0, 0.1)),
    MarginalModel(MarginFamily.SKEWNORMAL, (0.0, 1.5, 2.0)),
]


def random_copula(rng, tau_range=(0.1, 0.6)) -> BivariateCopula:
    fam, rot = _RANDOM_FAMILIES[rng.integers(len(_RANDOM_FAMILIES))]
    tau = rng.uniform(*tau_range)
    if rot in (90, 270) or (fam in (Family.GAUSSIAN, Family.STUDENT, Family.FRANK)
                            and rng.uniform() < 0.3):
        tau = -tau
    return BivariateCopula(fam, rot, bicop.tau_to_param(fam, rot, tau))


def build_model(order, edges, response_margin=STD_NORMAL, covariate_margins=None, d=None):
    d = d if d is not None else (max(order) + 1 if order else 1)
    if covariate_margins is None:
        covariate_margins = {k: STD_NORMAL for k in range(d)}
    return DVineRegressionModel(tuple(order), tuple(tuple(t) for t in edges),
                                response_margin, covariate_margins)


def random_model(rng, m) -> DVineRegressionModel:
    edges = [[random_copula(rng) for _ in range(m + 1 - t)] for t in range(1, m + 1)]
    margins = [_RANDOM_MARGINS[i] for i in rng.integers(len(_RANDOM_MARGINS), size=m + 1)]
    order = list(rng.permutation(m))
    return build_model(order, edges, margins[0], {k: margins[1 + k] for k in range(m)})


def gaussian(rho) -> BivariateCopula:
    return BivariateCopula(Family.GAUSSIAN, 0, (float(rho),))


def partial_correlation(corr, i, j, given) -> float:
    idx = [i, j] + list(given)
    prec = np.linalg.inv(corr[np.ix_(idx, idx)])
    return -prec[0, 1] / np.sqrt(prec[0, 0] * prec[1, 1])


def gaussian_dvine_from_corr(corr, mean=None, sd=None) -> DVineRegressionModel:
    """D-vine in path order 0-1-...-m matching a Gaussian correlation matrix.

    Variable 0 is the response and variable i >= 1 is covariate column i - 1.
    """
    corr = np.asarray(corr, dtype=float)
    m = corr.shape[0] - 1
    mean = np.zeros(m + 1) if mean is None else np.asarray(mean, dtype=float)
    sd = np.ones(m + 1) if sd is None else np.asarray(sd, dtype=float)
    edges = [[gaussian(partial_correlation(corr, i, i + t, range(i + 1, i + t)))
              for i in range(m + 1 - t)] for t in range(1, m + 1)]
    margins = [MarginalModel(MarginFamily.NORMAL, (mean[i], sd[i])) for i in range(m + 1)]
    return build_model(list(range(m)), edges, margins[0], {k: margins[k + 1] for k in range(m)})


def mvn_conditional_quantile(corr, alpha, x, mean, sd):
    """Closed-form quantile of variable 0 given variables 1..m of a Gaussian vector."""
    corr = np.asarray(corr, dtype=float)
    z = (np.asarray(x, dtype=float) - mean[1:]) / sd[1:]
    s01, s11 = corr[0, 1:], corr[1:, 1:]
    w = np.linalg.solve(s11, s01)
    mu = z @ w
    var = 1.0 - s01 @ w
    return mean[0] + sd[0] * (mu + np.sqrt(var) * stats.norm.ppf(alpha))


def _composite_gl(a, b, panels=60, order=20):
    """Nodes and weights of composite Gauss-Legendre on [a, b] (a, b may be arrays)."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    t = (edges[:-1, None] + (x + 1) / 2 * np.diff(edges)[:, None]).ravel()
    wt = (w / 2 * np.diff(edges)[:, None]).ravel()
    a, b = np.asarray(a, dtype=float)[..., None], np.asarray(b, dtype=float)[..., None]
    return a + (b - a) * t, (b - a) * wt


def quadrature_conditional_cdf3(model: DVineRegressionModel, v, u1, u2) -> float:
    """Conditional copula distribution of V given (U1, U2) for a 3-variable D-vine.

    Uses only copula densities: the conditional distributions entering the
    second tree are themselves computed by numerical integration.
    """
    c01, c12 = model.edge(1, 0), model.edge(1, 1)
    c02 = model.edge(2, 0)

    def integral(f, a, b):
        s, w = _composite_gl(a, b)
        return np.sum(f(s) * w, axis=-1)

    f01 = lambda s: c01.pdf(s, np.full_like(s, u1))
    f12 = lambda s: c12.pdf(np.full_like(s, u1), s)
    norm1 = integral(f01, 0.0, 1.0)
    f2 = integral(f12, 0.0, u2) / integral(f12, 0.0, 1.0)

    def joint(s):
        cond = integral(f01, np.zeros_like(s), s) / norm1
        return f01(s) * c02.pdf(cond, np.full_like(s, f2))

    num = integral(joint, 0.0, v)
    return float(num / (num + integral(joint, v, 1.0)))
