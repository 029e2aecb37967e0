"""Linear quantile regression benchmark: fitting, prediction, inversion, crossings."""

from __future__ import annotations

import csv
import io
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, stats

from ._numerics import collinear_columns

__all__ = [
    "QuantileRegressionFit",
    "QuantileGrid",
    "InversionResult",
    "CrossingReport",
    "check_loss",
    "fit_lqr",
    "predict_quantile_lqr",
    "invert_lqr_bisection",
    "detect_quantile_crossing",
    "lqr_critical_probability",
    "significance_stars",
    "coefficient_csv",
    "DegenerateDesignError",
]


class DegenerateDesignError(ValueError):
    pass


def check_loss(resid, alpha: float) -> float:
    """Sum of the asymmetric absolute loss ``r * (alpha - 1{r < 0})``."""
    r = np.asarray(resid, dtype=float)
    return float(np.sum(r * (alpha - (r < 0))))


def significance_stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


@dataclass(frozen=True)
class QuantileRegressionFit:
    alpha: float
    beta: np.ndarray
    names: tuple[str, ...]
    se: np.ndarray | None = None
    n_boot: int = 0
    loss: float = float("nan")
    n_obs: int = 0
    status: str = ""

    @property
    def intercept(self) -> float:
        return float(self.beta[0])

    @property
    def t_value(self):
        if self.se is None:
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.beta / self.se

    @property
    def p_value(self):
        t = self.t_value
        if t is None:
            return None
        return 2.0 * stats.t.sf(np.abs(t), max(self.n_obs - self.beta.size, 1))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "names": list(self.names),
            "beta": self.beta.tolist(),
            "se": None if self.se is None else self.se.tolist(),
            "n_boot": self.n_boot,
            "loss": self.loss,
            "n_obs": self.n_obs,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantileRegressionFit":
        se = None if d.get("se") is None else np.array(d["se"], dtype=float)
        return cls(float(d["alpha"]), np.array(d["beta"], dtype=float), tuple(d["names"]), se,
                   int(d.get("n_boot", 0)), float(d.get("loss", float("nan"))),
                   int(d.get("n_obs", 0)), d.get("status", ""))

    def coefficient_rows(self):
        p = self.p_value
        for j, name in enumerate(self.names):
            yield {
                "name": name,
                "estimate": float(self.beta[j]),
                "std_error": None if self.se is None else float(self.se[j]),
                "p_value": None if p is None else float(p[j]),
                "stars": "" if p is None else significance_stars(p[j]),
            }

    def format_table(self) -> str:
        lines = [f"alpha = {self.alpha:g}", f"{'':<14}{'Estimate':>12}{'Std. Error':>12}"]
        for r in self.coefficient_rows():
            se = "" if r["std_error"] is None else f"{r['std_error']:.2f}"
            lines.append(f"{r['name']:<14}{r['estimate']:>9.2f}{r['stars']:<3}{se:>12}")
        lines.append("Note: *p<0.1; **p<0.05; ***p<0.01")
        return "\n".join(lines)


def coefficient_csv(fits) -> str:
    """One row per (level, coefficient) with estimate, bootstrap SE and stars."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["alpha", "name", "estimate", "std_error", "p_value", "stars"])
    for f in fits:
        for r in f.coefficient_rows():
            w.writerow([repr(f.alpha), r["name"], repr(r["estimate"]),
                        "" if r["std_error"] is None else repr(r["std_error"]),
                        "" if r["p_value"] is None else repr(r["p_value"]), r["stars"]])
    return buf.getvalue()


def _design(X, n):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if X.size == n else X[None, :]
    return X


def _solve(y, A, alpha):
    """Check-loss minimizer of ``y ~ A`` via the dual linear program.

    The dual ``max y'a  s.t.  A'a = (1 - alpha) A'1,  0 <= a <= 1`` is several
    times cheaper for HiGHS than the primal with 2n slacks; the coefficients are
    the equality multipliers. A final exact solve through the interpolated
    basis removes solver tolerance from the coefficients.
    """
    n, p = A.shape
    res = optimize.linprog(-y, A_eq=A.T, b_eq=(1.0 - alpha) * A.sum(axis=0),
                           bounds=[(0.0, 1.0)] * n, method="highs")
    if res.status != 0:
        raise RuntimeError(f"quantile regression LP failed: {res.message}")
    beta = -np.asarray(res.eqlin.marginals, dtype=float)
    loss = check_loss(y - A @ beta, alpha)
    # basis polish: an optimal vertex interpolates p observations
    basis = np.argsort(np.abs(y - A @ beta), kind="stable")[:p]
    with warnings.catch_warnings():
        # resampled designs repeat rows, so a singular basis is expected now and then
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu, piv = linalg.lu_factor(A[basis], check_finite=False)
    if np.all(np.abs(np.diag(lu)) > 0):
        cand = linalg.lu_solve((lu, piv), y[basis], check_finite=False)
        cand_loss = check_loss(y - A @ cand, alpha)
        if np.all(np.isfinite(cand)) and cand_loss <= loss:
            beta, loss = cand, cand_loss
    return beta, loss, res.message


def fit_lqr(y, X, alpha: float, names=None, n_boot: int = 500, seed: int = 0,
            n_threads: int = 1) -> QuantileRegressionFit:
    """Linear conditional quantile at level ``alpha`` with bootstrap standard errors.

    ``n_boot`` case resamples are drawn from a generator seeded with ``seed``;
    pass ``n_boot=0`` to skip them.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    X = _design(X, n)
    if X.shape[0] != n:
        raise ValueError("y and X have different numbers of rows")
    d = X.shape[1]
    if n <= d + 1:
        raise ValueError(f"need more than {d + 1} rows for {d} covariates, got {n}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
        raise ValueError("y and X must be finite")
    names = list(names) if names is not None else [f"x{j}" for j in range(d)]
    full = ("(Intercept)",) + tuple(names)
    A = np.column_stack([np.ones(n), X])
    bad = collinear_columns(A, list(full))
    if bad:
        raise DegenerateDesignError(f"design is rank deficient; collinear column(s): {', '.join(bad)}")
    beta, loss, msg = _solve(y, A, alpha)

    se = None
    if n_boot > 0:
        idx = np.random.default_rng(seed).integers(n, size=(n_boot, n))

        def one(rows):
            try:
                return _solve(y[rows], A[rows], alpha)[0]
            except (RuntimeError, ValueError):
                return np.full(d + 1, np.nan)

        if n_threads > 1:
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                draws = np.array(list(pool.map(one, idx)))
        else:
            draws = np.array([one(r) for r in idx])
        se = np.nanstd(draws, axis=0, ddof=1)
    return QuantileRegressionFit(float(alpha), beta, full, se, int(n_boot), loss, n, msg)


def predict_quantile_lqr(fit: QuantileRegressionFit, x):
    """``beta_0 + sum_j beta_j x_j`` for one row or an (n, d) matrix."""
    x = np.asarray(x, dtype=float)
    d = fit.beta.size - 1
    if x.shape[-1:] != (d,) and not (d == 0 and x.size == 0):
        raise ValueError(f"expected {d} covariate value(s) per row, got shape {x.shape}")
    out = fit.beta[0] + x @ fit.beta[1:]
    return float(out) if np.ndim(out) == 0 else out


class QuantileGrid:
    """Sorted quantile levels with one fit each, plus on-demand fits in between.

    ``fitter`` maps a level to a :class:`QuantileRegressionFit`; grids built by
    :meth:`fit` refit the stored data. Fits at new levels are cached.
    """

    def __init__(self, fits, fitter=None):
        fits = sorted(fits, key=lambda f: f.alpha)
        if not fits:
            raise ValueError("a quantile grid needs at least one level")
        levels = np.array([f.alpha for f in fits])
        if np.any(np.diff(levels) <= 0) or levels[0] <= 0 or levels[-1] >= 1:
            raise ValueError("grid levels must be strictly increasing inside (0, 1)")
        self.levels = levels
        self.fits = tuple(fits)
        self._fitter = fitter
        self._cache = {float(f.alpha): f for f in fits}
        self._lock = threading.Lock()

    @classmethod
    def fit(cls, y, X, levels, names=None, n_boot: int = 0, seed: int = 0,
            n_threads: int = 1) -> "QuantileGrid":
        y = np.asarray(y, dtype=float).ravel()
        X = _design(X, y.size)
        levels = [float(a) for a in levels]

        def one(a):
            return fit_lqr(y, X, a, names, n_boot=n_boot, seed=seed)

        if n_threads > 1:
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                fits = list(pool.map(one, levels))
        else:
            fits = [one(a) for a in levels]
        return cls(fits, fitter=lambda a: fit_lqr(y, X, a, names, n_boot=0))

    @property
    def names(self):
        return self.fits[0].names

    def at(self, alpha: float) -> QuantileRegressionFit:
        alpha = float(alpha)
        f = self._cache.get(alpha)
        if f is not None:
            return f
        if self._fitter is None:
            raise ValueError(f"level {alpha} is not on the grid and the grid cannot refit")
        f = self._fitter(alpha)
        with self._lock:
            self._cache.setdefault(alpha, f)
        return f

    def predict(self, alpha: float, x):
        return predict_quantile_lqr(self.at(alpha), x)

    def predict_levels(self, x) -> np.ndarray:
        """Predictions at every grid level; shape (levels,) or (rows, levels)."""
        x = np.asarray(x, dtype=float)
        B = np.array([f.beta for f in self.fits])
        return (B[:, 0] + x @ B[:, 1:].T)


@dataclass(frozen=True)
class InversionResult:
    found: bool
    alpha: float
    bracket: tuple[float, float]
    bracket_values: tuple[float, float]
    iterations: int
    multiple: bool = False
    diagnostic: str = ""

    @property
    def value_tolerance(self) -> float:
        """Width of the quantile values spanned by the final bracket."""
        return abs(self.bracket_values[1] - self.bracket_values[0])


def _sign_changes(vals, c) -> int:
    s = np.sign(np.asarray(vals) - c)
    s = s[s != 0]
    return int(np.sum(s[1:] != s[:-1]))


def invert_lqr_bisection(grid: QuantileGrid, c: float, x, a: float = 0.01, b: float = 0.99,
                         tol: float = 1e-6, max_iter: int = 200) -> InversionResult:
    """Level ``alpha`` whose fitted quantile at ``x`` equals ``c``.

    Starts from ``[a, b]`` clipped to the grid span. While ``c`` is not
    bracketed, both ends move outward by half the current bracket width; once it
    is, the bracket is halved towards ``c`` until narrower than ``tol``. Levels
    off the grid are fitted on demand. Thresholds outside the predictions at
    the grid extremes give ``found=False``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    lo_lim, hi_lim = float(grid.levels[0]), float(grid.levels[-1])
    lo, hi = max(min(a, b), lo_lim), min(max(a, b), hi_lim)
    if lo > hi:
        lo, hi = lo_lim, hi_lim
    x = np.asarray(x, dtype=float)
    level_vals = grid.predict_levels(x)
    multiple = _sign_changes(level_vals, c) > 1
    diag = "multiple solutions: the quantile curve crosses c more than once across grid levels" \
        if multiple else ""
    span = (float(np.min(level_vals)), float(np.max(level_vals)))
    if not span[0] <= c <= span[1]:
        side = "above" if c > span[1] else "below"
        return InversionResult(False, float("nan"), (lo_lim, hi_lim),
                               (grid.predict(lo_lim, x), grid.predict(hi_lim, x)), 0, multiple,
                               f"c = {c:g} lies {side} every grid prediction "
                               f"[{span[0]:g}, {span[1]:g}]")

    qlo, qhi = grid.predict(lo, x), grid.predict(hi, x)
    for it in range(1, max_iter + 1):
        if qlo == c:
            return InversionResult(True, lo, (lo, hi), (qlo, qhi), it, multiple, diag)
        if qhi == c:
            return InversionResult(True, hi, (lo, hi), (qlo, qhi), it, multiple, diag)
        if min(qlo, qhi) < c < max(qlo, qhi):
            if hi - lo <= tol:
                mid = lo + (hi - lo) / 2
                return InversionResult(True, mid, (lo, hi), (qlo, qhi), it, multiple, diag)
            mid = lo + (hi - lo) / 2
            qmid = grid.predict(mid, x)
            # keep the half whose end values still straddle c
            if (qmid - c) * (qlo - c) > 0:
                lo, qlo = mid, qmid
            else:
                hi, qhi = mid, qmid
        else:
            if lo <= lo_lim and hi >= hi_lim:
                msg = ("c lies between grid predictions but is not bracketed by the extreme "
                       "levels; the quantile curve is not monotone")
                return InversionResult(False, float("nan"), (lo, hi), (qlo, qhi), it, True,
                                       f"{diag}; {msg}" if diag else msg)
            delta = (hi - lo) / 2 if hi > lo else (hi_lim - lo_lim) / 2
            lo, hi = max(lo - delta, lo_lim), min(hi + delta, hi_lim)
            qlo, qhi = grid.predict(lo, x), grid.predict(hi, x)
    return InversionResult(False, float("nan"), (lo, hi), (qlo, qhi), max_iter, multiple,
                           f"no convergence within {max_iter} iterations")


def lqr_critical_probability(grid: QuantileGrid, c: float, X, tol: float = 1e-6,
                             max_iter: int = 200, n_threads: int = 1):
    """``1 - alpha`` from bisection for every row of ``X``.

    Rows whose threshold lies above every grid prediction get 0 (no estimate
    beyond the fitted span); rows below every prediction get ``1 - levels[0]``.
    Returns the probabilities and the inversion results.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))

    def one(x):
        return invert_lqr_bisection(grid, c, x, tol=tol, max_iter=max_iter)

    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(one, X))
    else:
        results = [one(x) for x in X]
    out = np.empty(len(results))
    top = grid.predict_levels(X).max(axis=1)
    for i, r in enumerate(results):
        if r.found:
            out[i] = 1.0 - r.alpha
        elif c > top[i]:
            out[i] = 0.0
        else:
            out[i] = 1.0 - grid.levels[0]
    return out, results


@dataclass(frozen=True)
class CrossingReport:
    levels: tuple[float, ...]
    pairs: tuple[tuple[tuple[float, float], ...], ...]
    names: tuple[str, ...] = field(default=())

    @property
    def crossed(self) -> np.ndarray:
        return np.array([len(p) > 0 for p in self.pairs], dtype=bool)

    @property
    def n_rows_crossed(self) -> int:
        return int(self.crossed.sum())

    @property
    def n_pairs(self) -> int:
        return sum(len(p) for p in self.pairs)

    def to_dict(self) -> dict:
        return {
            "levels": list(self.levels),
            "n_rows": len(self.pairs),
            "n_rows_crossed": self.n_rows_crossed,
            "n_pairs": self.n_pairs,
            "rows": [{"row": i, "pairs": [list(p) for p in prs]}
                     for i, prs in enumerate(self.pairs) if prs],
        }


def detect_quantile_crossing(grid: QuantileGrid, X) -> CrossingReport:
    """Flag every level pair ``a1 < a2`` whose predictions are out of order at each row."""
    if grid.levels.size < 2:
        raise ValueError("crossing detection needs at least two levels")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    P = grid.predict_levels(X)
    lv = [float(a) for a in grid.levels]
    L = len(lv)
    pairs = []
    for row in P:
        bad = row[:, None] > row[None, :]
        iu = np.argwhere(np.triu(bad, k=1))
        pairs.append(tuple((lv[i], lv[j]) for i, j in iu if i < j < L))
    return CrossingReport(tuple(lv), tuple(pairs), grid.names)
