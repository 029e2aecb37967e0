"""D-vine copula regression.

The response ``V`` sits at the end of the path ``V - U_k1 - ... - U_km``.
Variables are numbered ``w_0 = V, w_1 = U_k1, ..., w_m = U_km``; edge ``(t, i)``
of tree ``t`` joins ``w_i`` and ``w_{i+t}`` given ``w_{i+1}, ..., w_{i+t-1}``.
Two arrays of conditional distribution values drive every computation::

    R[t][i] = F(w_i     | w_{i+1}, ..., w_{i+t})
    L[t][i] = F(w_{i+t} | w_i, ..., w_{i+t-1})

The copula on edge ``(t, i)`` takes ``(R[t-1][i], L[t-1][i+1])`` as its first
and second argument, and ``R[t][i] = h1``, ``L[t][i] = h2`` of that pair.
The conditional distribution of the response is ``R[m][0]``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import bicop
from ._numerics import EPS, clip_unit
from .bicop import BivariateCopula
from .margins import MarginalModel, MarginFamily, fit_parametric, select_margin

__all__ = [
    "CRITERIA",
    "DVineRegressionModel",
    "EdgeStats",
    "SelectionStep",
    "SelectionTrace",
    "fit_margins",
    "fit_dvine_regression",
    "conditional_cdf",
    "conditional_density",
    "conditional_survival",
    "conditional_quantile",
    "cll",
    "cll_aic",
    "cll_bic",
    "lr_test",
    "lr_pvalue",
    "simulate_dvine",
    "simulate_conditional",
    "summary_table",
    "format_summary",
]

CRITERIA = ("cll", "cll_aic", "cll_bic")
MIN_OBS = 30


@dataclass(frozen=True)
class EdgeStats:
    """Fit statistics of the response edge added at one selection step."""

    column: int
    ll: float
    ll_aic: float
    ll_bic: float
    p_value: float
    cll: float
    cll_aic: float
    cll_bic: float

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class DVineRegressionModel:
    """A fitted (or hand-built) D-vine regression model.

    ``edges[t - 1][i]`` is the copula of edge ``(t, i)``; tree ``t`` has
    ``m + 1 - t`` edges. ``covariate_margins`` maps covariate column index to
    its margin and may include columns that were not selected.
    """

    order: tuple[int, ...]
    edges: tuple[tuple[BivariateCopula, ...], ...]
    response_margin: MarginalModel
    covariate_margins: dict = field(default_factory=dict)
    fit_stats: tuple[EdgeStats, ...] = ()
    n_obs: int = 0
    criterion: str = "cll_aic"
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        order = tuple(int(k) for k in self.order)
        object.__setattr__(self, "order", order)
        edges = tuple(tuple(tree) for tree in self.edges)
        object.__setattr__(self, "edges", edges)
        m = len(order)
        if len(set(order)) != m:
            raise ValueError("covariate order contains duplicates")
        if len(edges) != m:
            raise ValueError(f"an order of length {m} needs {m} trees, got {len(edges)}")
        for t, tree in enumerate(edges, start=1):
            if len(tree) != m + 1 - t:
                raise ValueError(f"tree {t} must have {m + 1 - t} edges, got {len(tree)}")
        missing = [k for k in order if k not in self.covariate_margins]
        if missing:
            raise ValueError(f"no margin for covariate column(s) {missing}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")

    # -- structure ------------------------------------------------------------

    @property
    def dim(self) -> int:
        return len(self.order)

    @property
    def n_covariates(self) -> int:
        keys = list(self.covariate_margins)
        return max(keys) + 1 if keys else 0

    @property
    def n_params(self) -> int:
        return sum(c.n_params for tree in self.edges for c in tree)

    def edge(self, t: int, i: int) -> BivariateCopula:
        return self.edges[t - 1][i]

    def response_edges(self) -> list[BivariateCopula]:
        """The copulas ``C_{V, U_kt; U_k1..U_k(t-1)}``, t = 1..m."""
        return [tree[0] for tree in self.edges]

    def truncated(self, j: int) -> "DVineRegressionModel":
        """The nested model with the first ``j`` selected covariates."""
        if not 0 <= j <= self.dim:
            raise ValueError(f"j must lie in [0, {self.dim}]")
        edges = tuple(tree[: j + 1 - t] for t, tree in enumerate(self.edges[:j], start=1))
        return DVineRegressionModel(self.order[:j], edges, self.response_margin,
                                    self.covariate_margins, self.fit_stats[:j], self.n_obs,
                                    self.criterion, self.names)

    def column_name(self, k: int) -> str:
        if self.names is not None and k < len(self.names):
            return self.names[k]
        return f"x{k}"

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "order": list(self.order),
            "trees": [[c.to_dict() for c in tree] for tree in self.edges],
            "response_margin": self.response_margin.to_dict(),
            "covariate_margins": {str(k): m.to_dict() for k, m in sorted(self.covariate_margins.items())},
            "fit_stats": [s.to_dict() for s in self.fit_stats],
            "n_obs": self.n_obs,
            "criterion": self.criterion,
            "names": list(self.names) if self.names is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DVineRegressionModel":
        return cls(
            order=tuple(d["order"]),
            edges=tuple(tuple(BivariateCopula.from_dict(c) for c in tree) for tree in d["trees"]),
            response_margin=MarginalModel.from_dict(d["response_margin"]),
            covariate_margins={int(k): MarginalModel.from_dict(v)
                               for k, v in d["covariate_margins"].items()},
            fit_stats=tuple(EdgeStats(**s) for s in d.get("fit_stats", [])),
            n_obs=int(d.get("n_obs", 0)),
            criterion=d.get("criterion", "cll_aic"),
            names=tuple(d["names"]) if d.get("names") is not None else None,
        )


# ---------------------------------------------------------------------------
# recursions
# ---------------------------------------------------------------------------


def _covariate_pits(model: DVineRegressionModel, X) -> np.ndarray:
    """PIT values of the ordered covariates, shape (n, m)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    m = model.dim
    if m == 0:
        return np.empty((X.shape[0], 0))
    need = max(model.order) + 1
    if X.shape[1] < need:
        raise ValueError(f"x needs at least {need} columns to cover covariates {model.order}")
    cols = []
    for k in model.order:
        col = X[:, k]
        if np.any(np.isnan(col)):
            raise ValueError(f"missing value for covariate column {k}")
        cols.append(model.covariate_margins[k].cdf(col))
    return np.column_stack(cols)


def _covariate_chain(model: DVineRegressionModel, U: np.ndarray) -> list[np.ndarray]:
    """``L[t][1]`` for t = 0..m-1 given ordered covariate PITs ``U`` (n, m).

    Only edges that do not involve the response are needed.
    """
    m = model.dim
    if m == 0:
        return []
    # R[i], L[i] hold the current tree's values for positions i = 1..m (index i - 1)
    R = [U[:, i] for i in range(m)]
    L = [U[:, i] for i in range(m)]
    out = [L[0]]
    for t in range(1, m):
        newR, newL = [], []
        for i in range(1, m + 1 - t):
            cop = model.edges[t - 1][i]
            a, b = R[i - 1], L[i]
            newR.append(cop.h1(a, b))
            newL.append(cop.h2(a, b))
        R, L = newR, newL
        out.append(L[0])
    return out


def _pit_response(model, y):
    return model.response_margin.cdf(np.asarray(y, dtype=float))


def _per_row(v, U):
    """Give a scalar query one value per covariate row (matters when no covariate is used)."""
    v = np.asarray(v, dtype=float)
    return np.full(U.shape[0], v) if v.ndim == 0 else v


def conditional_cdf(model: DVineRegressionModel, y, x):
    """``P(Y <= y | X = x)``.

    ``x`` is a full covariate row (or an (n, d) matrix); ``y`` is a scalar or an
    array broadcasting against the rows. A 2-D ``y`` of shape (n, k) evaluates k
    responses per row.
    """
    U = _covariate_pits(model, x)
    v = _per_row(_pit_response(model, y), U)
    chain = _covariate_chain(model, U)
    return _single(_v_forward(model, v, chain), y, x)


def _single(out, first, x):
    """Collapse the row axis when both the query value and ``x`` are single points."""
    if np.ndim(first) == 0 and np.ndim(x) == 1:
        return out.reshape(())[()] if np.size(out) == 1 else out
    return out


def _expand(arr, like):
    arr = np.asarray(arr)
    while arr.ndim < like.ndim:
        arr = arr[..., None]
    return arr


def _v_forward(model, v, chain):
    r = clip_unit(v)
    for t, cop in enumerate(model.response_edges(), start=1):
        r = cop.h1(r, _expand(chain[t - 1], r))
    return r


TAIL_EPS = 1e-300


def conditional_survival(model: DVineRegressionModel, y, x):
    """``P(Y > y | X = x)`` computed directly in the upper tail.

    The recursion runs on ``1 - V`` (each response edge is replaced by the
    copula of its flipped first argument), so probabilities far below the
    resolution of ``1 - conditional_cdf`` stay meaningful.
    """
    U = _covariate_pits(model, x)
    chain = _covariate_chain(model, U)
    s = _per_row(np.clip(model.response_margin.sf(np.asarray(y, dtype=float)), TAIL_EPS, 1.0), U)
    with np.errstate(all="ignore"):
        for t, cop in enumerate(model.response_edges(), start=1):
            s = cop.flipped_first().h1(s, _expand(chain[t - 1], s), eps=TAIL_EPS)
    return _single(s, y, x)


def conditional_density(model: DVineRegressionModel, y, x, log: bool = False):
    """Conditional density of the response on its original scale."""
    U = _covariate_pits(model, x)
    yv = np.asarray(y, dtype=float)
    v = _per_row(_pit_response(model, yv), U)
    chain = _covariate_chain(model, U)
    lc = _log_cond_copula_density(model, v, chain)
    lf = lc + model.response_margin.logpdf(yv)
    return _single(lf if log else np.exp(lf), y, x)


def _log_cond_copula_density(model, v, chain):
    r = clip_unit(v)
    total = np.zeros(np.shape(r))
    for t, cop in enumerate(model.response_edges(), start=1):
        b = _expand(chain[t - 1], r)
        total = total + cop.logpdf(r, b)
        r = cop.h1(r, b)
    return total


def conditional_quantile(model: DVineRegressionModel, alpha, x, return_flag: bool = False):
    """Conditional quantile ``F_Y^{-1}(C^{-1}_{V|U}(alpha | u))``.

    ``alpha`` may be a scalar, an array broadcasting against the rows of ``x``,
    or a 2-D (n, k) array giving k levels per row. Levels outside
    ``[EPS, 1 - EPS]`` are clamped; ``return_flag`` adds the clamp mask.
    """
    a_in = np.asarray(alpha, dtype=float)
    flag = (a_in < EPS) | (a_in > 1 - EPS)
    U = _covariate_pits(model, x)
    chain = _covariate_chain(model, U)
    w = _per_row(clip_unit(a_in), U)
    for t in range(model.dim, 0, -1):
        cop = model.edges[t - 1][0]
        w = cop.hinv1(w, _expand(chain[t - 1], w))
    y = _single(model.response_margin.quantile(w), alpha, x)
    return (y, flag) if return_flag else y


# ---------------------------------------------------------------------------
# likelihood summaries
# ---------------------------------------------------------------------------


def _split_data(data, y=None):
    if y is not None:
        return np.asarray(y, dtype=float), np.asarray(data, dtype=float)
    if isinstance(data, tuple) and len(data) == 2:
        return np.asarray(data[0], dtype=float), np.asarray(data[1], dtype=float)
    raise ValueError("data must be a (y, X) pair")


def cll(model: DVineRegressionModel, data, y=None) -> float:
    """Conditional log-likelihood ``sum_i log c_{V|U}(v_i | u_i)`` on the copula scale."""
    yv, X = _split_data(data, y)
    if yv.size == 0:
        raise ValueError("data are empty")
    chain = _covariate_chain(model, _covariate_pits(model, X))
    return float(np.sum(_log_cond_copula_density(model, _pit_response(model, yv), chain)))


def cll_aic(model: DVineRegressionModel, data, y=None) -> float:
    return -2.0 * cll(model, data, y) + 2.0 * model.n_params


def cll_bic(model: DVineRegressionModel, data, y=None) -> float:
    yv, _ = _split_data(data, y)
    return -2.0 * cll(model, data, y) + math.log(yv.size) * model.n_params


def lr_pvalue(ll_edge: float, df: int) -> float:
    """Chi-square p-value of the statistic ``2 * ll_edge`` on ``df`` degrees of freedom."""
    stat = max(2.0 * ll_edge, 0.0)
    if df <= 0 or stat == 0.0:
        return 1.0
    return float(stats.chi2.sf(stat, df))


def lr_test(smaller: DVineRegressionModel, larger: DVineRegressionModel, data, y=None):
    """Likelihood-ratio test for adding the last covariate of ``larger``.

    Returns ``(statistic, p_value)``; the degrees of freedom are the parameter
    count of the newest response edge.
    """
    j = larger.dim
    if smaller.dim != j - 1 or tuple(larger.order[: j - 1]) != tuple(smaller.order):
        raise ValueError("models are not nested: orders must share the prefix")
    for t in range(1, j):
        if tuple(larger.edges[t - 1][: j - t]) != tuple(smaller.edges[t - 1]):
            raise ValueError("models are not nested: shared edges differ")
    stat = 2.0 * (cll(larger, data, y) - cll(smaller, data, y))
    df = larger.edges[j - 1][0].n_params
    return stat, lr_pvalue(stat / 2.0, df)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelectionStep:
    candidates: tuple[int, ...]
    cll: dict
    score: dict
    chosen: int | None


@dataclass(frozen=True)
class SelectionTrace:
    steps: tuple[SelectionStep, ...]
    stop_reason: str
    criterion: str

    def to_dict(self):
        return {
            "criterion": self.criterion,
            "stop_reason": self.stop_reason,
            "steps": [{"candidates": list(s.candidates),
                       "cll": {str(k): v for k, v in s.cll.items()},
                       "score": {str(k): v for k, v in s.score.items()},
                       "chosen": s.chosen} for s in self.steps],
        }


def _penalty(criterion: str, n: int) -> float:
    return {"cll": 0.0, "cll_aic": 1.0, "cll_bic": 0.5 * math.log(n)}[criterion]


def fit_margins(y, X, margins=None):
    """Resolve margin specifications into fitted models.

    ``margins`` is ``None`` (select from every family) or a sequence of length
    ``d + 1`` whose first entry is for the response. Each entry is a fitted
    :class:`MarginalModel`, a family name, a collection of candidate family
    names, or ``None``.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    specs = [None] * (d + 1) if margins is None else list(margins)
    if len(specs) != d + 1:
        raise ValueError(f"expected {d + 1} margin specifications, got {len(specs)}")
    cols = [y] + [X[:, j] for j in range(d)]
    out = []
    for col, spec in zip(cols, specs):
        if isinstance(spec, MarginalModel):
            out.append(spec)
        elif spec is None:
            out.append(select_margin(col))
        elif isinstance(spec, (str, MarginFamily)):
            out.append(fit_parametric(col, spec))
        else:
            out.append(select_margin(col, spec))
    return out[0], {j: m for j, m in enumerate(out[1:])}


class _State:
    """Training-data R/L arrays of the currently selected path."""

    def __init__(self, v):
        self.R = [[v]]  # R[t][i]
        self.L = [[v]]

    def append(self, u, new_R, new_L):
        j = len(self.R[0])
        self.R[0].append(u)
        self.L[0].append(u)
        for t in range(1, j + 1):
            if len(self.R) <= t:
                self.R.append([])
                self.L.append([])
            self.R[t].append(new_R[t - 1])
            self.L[t].append(new_L[t - 1])


def _evaluate_candidate(state: _State, u, allowed, independence_test):
    """Fit the new edges obtained by appending ``u``; returns edges, R, L and edge logliks."""
    j = len(state.R[0])
    edges, newR, newL, lls = [], [], [], []
    b = u
    for t in range(1, j + 1):
        i = j - t
        a = state.R[t - 1][i]
        cop, ll = bicop.fit_bicop(np.column_stack([a, b]), allowed,
                                  independence_test=independence_test)
        edges.append(cop)
        lls.append(ll)
        newR.append(cop.h1(a, b))
        nb = cop.h2(a, b)
        newL.append(nb)
        b = nb
    # the edge fitted last (t = j) is the response edge
    return edges, newR, newL, lls


def fit_dvine_regression(y, X, margins=None, allowed=None, criterion: str = "cll_aic", *,
                         independence_test: bool = True, n_threads: int = 1,
                         names=None, max_covariates: int | None = None):
    """Forward-select covariates into a D-vine regression model.

    At every step each unused covariate is appended to the path and the new
    edges (one per tree) are fitted with :func:`vinerisk.bicop.fit_bicop`;
    earlier edges stay frozen and margins are fitted once upfront. The
    candidate with the best penalized conditional log-likelihood is kept when it
    strictly improves on the current model; ties go to the lower column index.

    Returns ``(model, trace)``.
    """
    if criterion not in CRITERIA:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if y.size != n:
        raise ValueError("y and X have different numbers of rows")
    if n < MIN_OBS:
        raise ValueError(f"need at least {MIN_OBS} observations, got {n}")
    if d < 1:
        raise ValueError("need at least one covariate")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
        raise ValueError("data contain non-finite values")
    if isinstance(margins, tuple) and len(margins) == 2 and isinstance(margins[1], dict):
        resp_m, cov_m = margins
    else:
        resp_m, cov_m = fit_margins(y, X, margins)
    v = resp_m.cdf(y)
    U = {k: cov_m[k].cdf(X[:, k]) for k in range(d)}
    pen = _penalty(criterion, n)
    limit = d if max_covariates is None else min(d, int(max_covariates))

    state = _State(v)
    order: list[int] = []
    trees: list[list[BivariateCopula]] = []
    stats_rows: list[EdgeStats] = []
    cur_cll, cur_params = 0.0, 0
    cur_score = 0.0
    steps = []
    stop = "all covariates selected"
    pool = ThreadPoolExecutor(max_workers=n_threads) if n_threads > 1 else None
    try:
        while len(order) < limit:
            cands = [k for k in range(d) if k not in order]
            if pool is None:
                results = [_evaluate_candidate(state, U[k], allowed, independence_test) for k in cands]
            else:
                results = list(pool.map(
                    lambda k: _evaluate_candidate(state, U[k], allowed, independence_test), cands))
            cll_by, score_by = {}, {}
            best = None
            for k, res in zip(cands, results):
                edges, _, _, lls = res
                c = cur_cll + lls[-1]
                p = cur_params + sum(e.n_params for e in edges)
                s = c - pen * p
                cll_by[k], score_by[k] = c, s
                if best is None or s > best[1]:
                    best = (k, s)
            if best[1] <= cur_score:
                steps.append(SelectionStep(tuple(cands), cll_by, score_by, None))
                stop = "no candidate improves the criterion" if order else \
                    "no covariate improves the criterion; model predicts the marginal"
                break
            k = best[0]
            steps.append(SelectionStep(tuple(cands), cll_by, score_by, k))
            edges, newR, newL, lls = results[cands.index(k)]
            state.append(U[k], newR, newL)
            order.append(k)
            for t, cop in enumerate(edges, start=1):
                if len(trees) < t:
                    trees.append([])
                trees[t - 1].append(cop)
            cur_cll, cur_params, cur_score = cll_by[k], cur_params + sum(e.n_params for e in edges), best[1]
            vcop, vll = edges[-1], lls[-1]
            stats_rows.append(EdgeStats(
                column=k, ll=vll,
                ll_aic=-2.0 * vll + 2.0 * vcop.n_params,
                ll_bic=-2.0 * vll + math.log(n) * vcop.n_params,
                p_value=lr_pvalue(vll, vcop.n_params),
                cll=cur_cll,
                cll_aic=-2.0 * cur_cll + 2.0 * cur_params,
                cll_bic=-2.0 * cur_cll + math.log(n) * cur_params,
            ))
        else:
            if limit < d:
                stop = "covariate limit reached"
    finally:
        if pool is not None:
            pool.shutdown()

    # edge (t, j - t) is created at step j, so each tree list is already in position order
    edges_out = [tuple(tree) for tree in trees]
    model = DVineRegressionModel(tuple(order), tuple(edges_out), resp_m, dict(cov_m),
                                 tuple(stats_rows), n, criterion,
                                 tuple(names) if names is not None else None)
    return model, SelectionTrace(tuple(steps), stop, criterion)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def simulate_dvine(model: DVineRegressionModel, n: int, seed=None):
    """Draw ``(y, X)`` from the model; unselected covariates are independent of the rest."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    m = model.dim
    P = rng.uniform(size=(n, m + 1))
    R = [[clip_unit(P[:, 0])]]
    L = [[R[0][0]]]
    for j in range(1, m + 1):
        # invert F(w_j | w_0..w_{j-1}) = p down the trees
        w = clip_unit(P[:, j])
        for t in range(j, 0, -1):
            w = model.edges[t - 1][j - t].hinv2(w, R[t - 1][j - t])
        R[0].append(w)
        L[0].append(w)
        b = w
        for t in range(1, j + 1):
            cop = model.edges[t - 1][j - t]
            a = R[t - 1][j - t]
            if len(R) <= t:
                R.append([])
                L.append([])
            R[t].append(cop.h1(a, b))
            nb = cop.h2(a, b)
            L[t].append(nb)
            b = nb
    y = model.response_margin.quantile(R[0][0])
    d = model.n_covariates
    X = np.empty((n, d))
    extra = rng.uniform(size=(n, d))
    for k in range(d):
        if k in model.order:
            X[:, k] = model.covariate_margins[k].quantile(R[0][model.order.index(k) + 1])
        elif k in model.covariate_margins:
            X[:, k] = model.covariate_margins[k].quantile(clip_unit(extra[:, k]))
        else:
            X[:, k] = np.nan
    return y, X


def simulate_conditional(model: DVineRegressionModel, x, n: int, seed=None, chunk: int = 250_000):
    """Draw ``n`` responses from the conditional law at one covariate row ``x``."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    chain = _covariate_chain(model, _covariate_pits(model, x))
    out = np.empty(n)
    for start in range(0, n, chunk):
        w = rng.uniform(size=min(chunk, n - start))
        for t in range(model.dim, 0, -1):
            w = model.edges[t - 1][0].hinv1(w, chain[t - 1])
        out[start:start + w.size] = model.response_margin.quantile(w)
    return out


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


SUMMARY_COLUMNS = ("variable", "column", "conditioned_on", "family", "rotation", "parameters",
                   "tau", "ll", "ll_aic", "ll_bic", "p_value")


def summary_table(model: DVineRegressionModel) -> list[dict]:
    """One row per selected covariate describing its response edge."""
    rows = []
    for j, k in enumerate(model.order):
        cop = model.edges[j][0]
        st = model.fit_stats[j] if j < len(model.fit_stats) else None
        rows.append({
            "variable": model.column_name(k),
            "column": k,
            "conditioned_on": [model.order[i] for i in range(j)],
            "family": cop.family.value,
            "rotation": cop.rotation,
            "parameters": list(cop.params),
            "tau": cop.tau,
            "ll": st.ll if st else float("nan"),
            "ll_aic": st.ll_aic if st else float("nan"),
            "ll_bic": st.ll_bic if st else float("nan"),
            "p_value": st.p_value if st else float("nan"),
        })
    return rows


def format_summary(model: DVineRegressionModel) -> str:
    """Plain-text version of :func:`summary_table`."""
    header = f"{'variable':<12}{'k':>4}  {'given':<16}{'family':<10}{'rot':>4}  " \
             f"{'parameters':<18}{'tau':>7}{'ll':>10}{'ll_aic':>10}{'ll_bic':>10}  p_value"
    lines = [header]
    for r in summary_table(model):
        given = ", ".join(str(c) for c in r["conditioned_on"]) or "-"
        pars = ", ".join(f"{p:.2f}" for p in r["parameters"])
        pv = "< 0.00" if r["p_value"] < 0.005 else f"{r['p_value']:.2f}"
        lines.append(f"{r['variable']:<12}{r['column']:>4}  {given:<16}{r['family']:<10}"
                     f"{r['rotation']:>4}  {pars:<18}{r['tau']:>7.2f}{r['ll']:>10.2f}"
                     f"{r['ll_aic']:>10.2f}{r['ll_bic']:>10.2f}  {pv}")
    return "\n".join(lines)
