"""Critical-event probabilities, risky-record screening and factor ranking."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg, special, stats

from ._numerics import collinear_columns
from .dvine import DVineRegressionModel, conditional_survival

__all__ = [
    "DEFAULT_FLOOR",
    "DEFAULT_P_THRESHOLD",
    "RiskReport",
    "RankingResult",
    "critical_event_probability",
    "identify_risky",
    "logit",
    "expit",
    "standardize",
    "ols_rank",
    "rank_risk_factors",
    "empirical_kendall_tau",
    "kendall_matrix",
    "exceedance_interval",
    "RankDeficientError",
]

DEFAULT_FLOOR = 1e-13
DEFAULT_P_THRESHOLD = 1e-3


class RankDeficientError(ValueError):
    pass


def critical_event_probability(model: DVineRegressionModel, c, x):
    """``P(Y > c | X = x)`` evaluated analytically through the vine.

    ``x`` is one covariate row or an (n, d) matrix; ``c`` broadcasts against the
    rows. Values are exact down to far below the float resolution of ``1 - F``.
    """
    c = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(c)):
        raise ValueError("threshold must be finite")
    return conditional_survival(model, c, x)


@dataclass(frozen=True)
class RiskReport:
    threshold: float
    p_threshold: float
    floor: float
    alpha: np.ndarray
    row_ids: tuple

    @property
    def logit(self) -> np.ndarray:
        a = np.clip(self.alpha, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
        return np.log(a) - np.log1p(-a)

    @property
    def risky(self) -> np.ndarray:
        return self.alpha > self.p_threshold

    @property
    def below_floor(self) -> np.ndarray:
        """Records whose probability can only be reported as lying in ``[0, floor)``."""
        return self.alpha <= self.floor

    @property
    def n_records(self) -> int:
        return int(self.alpha.size)

    @property
    def n_risky(self) -> int:
        return int(np.sum(self.risky))

    @property
    def n_above_floor(self) -> int:
        return int(np.sum(~self.below_floor))

    @property
    def max_alpha(self) -> float:
        return float(np.max(self.alpha)) if self.alpha.size else float("nan")

    def rows(self):
        eta = self.logit
        for i, rid in enumerate(self.row_ids):
            a = float(self.alpha[i])
            yield {
                "row": rid,
                "alpha": a if a > self.floor else f"<{self.floor:.0e}",
                "logit": float(eta[i]),
                "risky": bool(self.risky[i]),
            }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "alpha", "logit", "risky"])
        for r in self.rows():
            a = r["alpha"] if isinstance(r["alpha"], str) else repr(r["alpha"])
            w.writerow([r["row"], a, repr(r["logit"]), int(r["risky"])])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "p_threshold": self.p_threshold,
            "floor": self.floor,
            "n_records": self.n_records,
            "n_risky": self.n_risky,
            "n_above_floor": self.n_above_floor,
            "max_alpha": self.max_alpha,
            "records": [{"row": rid, "alpha": float(a), "risky": bool(a > self.p_threshold)}
                        for rid, a in zip(self.row_ids, self.alpha)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RiskReport":
        recs = d["records"]
        return cls(d["threshold"], d["p_threshold"], d["floor"],
                   np.array([r["alpha"] for r in recs], dtype=float),
                   tuple(r["row"] for r in recs))


def identify_risky(model: DVineRegressionModel, X, c: float,
                   p_threshold: float = DEFAULT_P_THRESHOLD, floor: float = DEFAULT_FLOOR,
                   row_ids=None, n_threads: int = 1) -> RiskReport:
    """Evaluate the critical-event probability of every record and flag the risky ones."""
    if not 0 < p_threshold <= 1:
        raise ValueError("p_threshold must lie in (0, 1]")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    n = X.shape[0]
    if n_threads > 1 and n > 1:
        chunks = np.array_split(np.arange(n), n_threads)
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(lambda idx: critical_event_probability(model, c, X[idx]),
                                  [ch for ch in chunks if ch.size]))
        alpha = np.concatenate(parts)
    else:
        alpha = critical_event_probability(model, c, X)
    ids = tuple(range(n)) if row_ids is None else tuple(row_ids)
    return RiskReport(float(c), float(p_threshold), float(floor), np.asarray(alpha, dtype=float), ids)


def logit(p):
    """``ln(p / (1 - p))`` for ``p`` strictly inside (0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise ValueError("logit needs probabilities strictly between 0 and 1")
    return special.logit(p)


def expit(x):
    return special.expit(np.asarray(x, dtype=float))


def standardize(X, names=None) -> np.ndarray:
    """Center and scale each column with the n - 1 sample standard deviation."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise ValueError("standardization needs at least two rows")
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    const = [names[j] for j in range(X.shape[1]) if not sd[j] > 1e-12 * max(1.0, abs(mean[j]))]
    if const:
        raise ValueError(f"constant column(s) cannot be standardized: {', '.join(const)}")
    return (X - mean) / sd


@dataclass(frozen=True)
class RankingResult:
    names: tuple[str, ...]
    estimate: np.ndarray
    std_error: np.ndarray
    t_value: np.ndarray
    p_value: np.ndarray
    r_squared: float
    adj_r_squared: float
    residuals: np.ndarray
    n_obs: int

    @property
    def ranking(self) -> list[str]:
        """Factor names by decreasing absolute coefficient, intercept excluded."""
        order = np.argsort(-np.abs(self.estimate[1:]), kind="stable")
        return [self.names[1 + i] for i in order]

    def to_dict(self) -> dict:
        return {
            "coefficients": [
                {"name": n, "estimate": float(e), "std_error": float(s), "t_value": float(t),
                 "p_value": float(p)}
                for n, e, s, t, p in zip(self.names, self.estimate, self.std_error,
                                         self.t_value, self.p_value)],
            "r_squared": self.r_squared,
            "adj_r_squared": self.adj_r_squared,
            "n_obs": self.n_obs,
            "ranking": self.ranking,
        }

    def format_table(self) -> str:
        lines = [f"{'':<14}{'Estimate':>10}{'Std. Error':>12}{'t value':>10}{'Pr(>|t|)':>10}"]
        order = [0] + [1 + self.names[1:].index(n) for n in self.ranking]
        for i in order:
            lines.append(f"{self.names[i]:<14}{self.estimate[i]:>10.2f}{self.std_error[i]:>12.2f}"
                         f"{self.t_value[i]:>10.2f}{self.p_value[i]:>10.2f}")
        lines.append(f"Adjusted R-squared: {self.adj_r_squared:.2f}   Observations: {self.n_obs}")
        return "\n".join(lines)


def ols_rank(eta, Z, names=None) -> RankingResult:
    """Least squares of ``eta`` on an intercept and the columns of ``Z``.

    Returns classical standard errors, t statistics, two-sided p-values and the
    ranking of factors by absolute coefficient size.
    """
    eta = np.asarray(eta, dtype=float).ravel()
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    n, k = Z.shape
    if eta.size != n:
        raise ValueError("eta and Z have different numbers of rows")
    if n <= k + 1:
        raise ValueError(f"need more than {k + 1} rows for {k} factors, got {n}")
    names = list(names) if names is not None else [f"z{j}" for j in range(k)]
    full = ["(Intercept)"] + names
    A = np.column_stack([np.ones(n), Z])
    bad = collinear_columns(A, full)
    if bad:
        raise RankDeficientError(f"design is rank deficient; collinear column(s): {', '.join(bad)}")
    beta, *_ = linalg.lstsq(A, eta)
    resid = eta - A @ beta
    dof = n - k - 1
    rss = float(resid @ resid)
    sigma2 = rss / dof
    _, R = linalg.qr(A, mode="economic")
    Rinv = linalg.solve_triangular(R, np.eye(k + 1))
    se = np.sqrt(sigma2 * np.sum(Rinv ** 2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = beta / se
    p = 2.0 * stats.t.sf(np.abs(t), dof)
    tss = float(np.sum((eta - eta.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    adj = 1.0 - (1.0 - r2) * (n - 1) / dof
    return RankingResult(tuple(full), beta, se, t, p, r2, adj, resid, n)


def rank_risk_factors(report: RiskReport, X, names, over: str = "risky", top: int | None = None):
    """Regress the logit risk of the risky records on standardized factors.

    ``over`` chooses the rows used for the standardization statistics
    ("risky" or "all"). With ``top`` the regression is refit on the ``top``
    highest-ranked factors; both results are returned as ``(full, reduced)``.
    """
    if over not in ("risky", "all"):
        raise ValueError("over must be 'risky' or 'all'")
    X = np.asarray(X, dtype=float)
    mask = report.risky
    if mask.sum() < X.shape[1] + 2:
        raise ValueError(f"need at least {X.shape[1] + 2} risky records, got {int(mask.sum())}")
    eta = logit(report.alpha[mask])
    if over == "risky":
        Z = standardize(X[mask], names)
    else:
        Z = standardize(X, names)[mask]
    full = ols_rank(eta, Z, names)
    reduced = None
    if top is not None:
        keep = [list(names).index(nm) for nm in full.ranking[:top]]
        reduced = ols_rank(eta, Z[:, keep], [names[j] for j in keep])
    return full, reduced


def empirical_kendall_tau(x, y) -> float:
    """Tie-corrected Kendall's tau-b (O(n log n))."""
    x, y = np.asarray(x, dtype=float).ravel(), np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError("x and y must have the same length")
    if x.size < 2:
        raise ValueError("need at least two observations")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("Kendall's tau is undefined for a constant input")
    return float(stats.kendalltau(x, y, variant="b").statistic)


def kendall_matrix(X) -> np.ndarray:
    """Pairwise empirical Kendall's tau of the columns of ``X``."""
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    out = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            out[i, j] = out[j, i] = empirical_kendall_tau(X[:, i], X[:, j])
    return out


def exceedance_interval(alpha: float, floor: float = DEFAULT_FLOOR) -> tuple[float, float]:
    """Point value or ``(0, floor)`` interval for a probability near underflow."""
    if alpha > floor:
        return (alpha, alpha)
    return (0.0, floor)

