import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from vinerisk.lqr import (
    DegenerateDesignError,
    QuantileGrid,
    QuantileRegressionFit,
    check_loss,
    coefficient_csv,
    detect_quantile_crossing,
    fit_lqr,
    invert_lqr_bisection,
    lqr_critical_probability,
    predict_quantile_lqr,
    significance_stars,
)


def linear_data(n=5000, seed=11):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    return x, 1.0 + 2.0 * x + rng.normal(size=n)


@pytest.fixture(scope="module")
def gaussian_fits():
    x, y = linear_data()
    return x, y, {a: fit_lqr(y, x, a, n_boot=0) for a in (0.5, 0.9)}


def synthetic_fit(alpha, intercept, slopes=(1.0,)):
    beta = np.array((intercept,) + tuple(slopes), dtype=float)
    names = ("(Intercept)",) + tuple(f"x{j}" for j in range(len(slopes)))
    return QuantileRegressionFit(float(alpha), beta, names)


def synthetic_grid(level_fn, levels, slopes=(1.0,)):
    fitter = lambda a: synthetic_fit(a, level_fn(a), slopes)
    return QuantileGrid([fitter(a) for a in levels], fitter=fitter)


def assert_loss_optimal(y, A, fit, step=1e-3):
    base = check_loss(y - A @ fit.beta, fit.alpha)
    for j in range(fit.beta.size):
        for s in (step, -step):
            b = fit.beta.copy()
            b[j] += s
            assert check_loss(y - A @ b, fit.alpha) >= base - 1e-9 * max(1.0, abs(base))


def assert_quantile_property(y, A, fit):
    n, p = A.shape
    frac = np.mean(y - A @ fit.beta < -1e-9)
    assert abs(frac - fit.alpha) <= (p + 1) / n


def test_recovery_median(gaussian_fits):
    _, _, fits = gaussian_fits
    assert fits[0.5].beta == pytest.approx([1.0, 2.0], abs=0.1)


def test_recovery_upper_quantile(gaussian_fits):
    _, _, fits = gaussian_fits
    assert fits[0.9].beta[0] == pytest.approx(1.0 + stats.norm.ppf(0.9), abs=0.1)
    assert fits[0.9].beta[1] == pytest.approx(2.0, abs=0.1)
    assert 1.0 + stats.norm.ppf(0.9) == pytest.approx(2.2816, abs=1e-4)


def test_fits_are_loss_optimal_and_quantile(gaussian_fits):
    x, y, fits = gaussian_fits
    A = np.column_stack([np.ones_like(x), x])
    for f in fits.values():
        assert_loss_optimal(y, A, f)
        assert_quantile_property(y, A, f)
        assert f.loss == pytest.approx(check_loss(y - A @ f.beta, f.alpha))


def test_loss_matches_reference_solver():
    # primal LP with explicit slacks as an independent solver
    from scipy.optimize import linprog

    rng = np.random.default_rng(5)
    n, d = 150, 3
    X = rng.normal(size=(n, d))
    y = X @ [0.5, -1.0, 2.0] + rng.standard_t(3, size=n)
    A = np.column_stack([np.ones(n), X])
    for a in (0.1, 0.37, 0.75):
        c = np.concatenate([np.zeros(d + 1), a * np.ones(n), (1 - a) * np.ones(n)])
        res = linprog(c, A_eq=np.hstack([A, np.eye(n), -np.eye(n)]), b_eq=y,
                      bounds=[(None, None)] * (d + 1) + [(0, None)] * (2 * n), method="highs")
        ours = fit_lqr(y, X, a, n_boot=0)
        assert ours.loss <= res.fun * (1 + 1e-8) + 1e-12
        assert_loss_optimal(y, A, ours)
        assert_quantile_property(y, A, ours)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), alpha=st.floats(0.05, 0.95), d=st.integers(1, 4))
def test_optimality_properties_random(seed, alpha, d):
    rng = np.random.default_rng(seed)
    n = 80
    X = rng.normal(size=(n, d))
    y = X.sum(axis=1) + rng.standard_cauchy(size=n)
    f = fit_lqr(y, X, alpha, n_boot=0)
    A = np.column_stack([np.ones(n), X])
    assert_loss_optimal(y, A, f)
    assert_quantile_property(y, A, f)


def test_bootstrap_se_deterministic_and_sane():
    x, y = linear_data(n=400, seed=3)
    f1 = fit_lqr(y, x, 0.5, n_boot=60, seed=9)
    f2 = fit_lqr(y, x, 0.5, n_boot=60, seed=9, n_threads=3)
    assert np.array_equal(f1.se, f2.se)
    # asymptotic SE of the median slope: sqrt(pi/2) / sqrt(n) for N(0, 1) noise and design
    assert f1.se[1] == pytest.approx(np.sqrt(np.pi / 2 / 400), rel=0.35)
    assert np.all(f1.p_value[:2] < 0.01)


def test_degenerate_design_names_column():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 2))
    X = np.column_stack([X, X[:, 0] - X[:, 1]])
    with pytest.raises(DegenerateDesignError, match="hws|bd|lm"):
        fit_lqr(rng.normal(size=50), X, 0.5, names=["hws", "bd", "lm"], n_boot=0)


def test_preconditions():
    with pytest.raises(ValueError):
        fit_lqr(np.arange(5.0), np.arange(5.0), 1.0)
    with pytest.raises(ValueError):
        fit_lqr(np.arange(3.0), np.arange(6.0).reshape(3, 2), 0.5)


def test_predict_examples():
    f = synthetic_fit(0.5, 1.0, (2.0,))
    assert predict_quantile_lqr(f, [3.0]) == 7.0
    g = synthetic_fit(0.5, -0.7, (0.3, 1.1))
    assert predict_quantile_lqr(g, [0.0, 0.0]) == -0.7
    x1, x2 = np.array([1.5, -2.0]), np.array([0.25, 4.0])
    assert predict_quantile_lqr(g, x1 + x2) == pytest.approx(
        predict_quantile_lqr(g, x1) + predict_quantile_lqr(g, x2) - g.intercept)
    with pytest.raises(ValueError):
        predict_quantile_lqr(g, [1.0])


def test_significance_stars():
    assert [significance_stars(p) for p in (0.001, 0.03, 0.07, 0.2)] == ["***", "**", "*", ""]


def test_coefficient_table_format():
    f = QuantileRegressionFit(0.5, np.array([2000.0, -32.13]), ("(Intercept)", "hws"),
                              np.array([50.0, 3.91]), 500, n_obs=711)
    table = f.format_table()
    assert "-32.13***" in table and "3.91" in table
    rows = coefficient_csv([f]).splitlines()
    assert rows[0] == "alpha,name,estimate,std_error,p_value,stars"
    assert rows[2].startswith("0.5,hws,-32.13,3.91,") and rows[2].endswith("***")


def test_fit_roundtrip():
    f = QuantileRegressionFit(0.25, np.array([1.0, 2.0]), ("(Intercept)", "x0"), np.array([0.1, 0.2]),
                              10, 3.0, 100, "ok")
    g = QuantileRegressionFit.from_dict(f.to_dict())
    assert g.to_dict() == f.to_dict()


def test_grid_validation():
    with pytest.raises(ValueError):
        QuantileGrid([])
    with pytest.raises(ValueError):
        QuantileGrid([synthetic_fit(0.5, 0.0), synthetic_fit(0.5, 1.0)])


MONOTONE_LEVELS = [0.001, 0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99, 0.999]


@pytest.mark.parametrize("planted", [0.3, 0.0123, 0.5, 0.87, 0.98765])
def test_bisection_recovers_planted_level(planted):
    grid = synthetic_grid(stats.norm.ppf, MONOTONE_LEVELS)
    x = np.array([0.4])
    c = grid.predict(planted, x)
    res = invert_lqr_bisection(grid, c, x)
    assert res.found and not res.multiple
    assert res.alpha == pytest.approx(planted, abs=1e-6)
    # soundness: the quantile at the returned level reproduces c within the reported tolerance
    assert abs(grid.predict(res.alpha, x) - c) <= res.value_tolerance + 1e-12


@settings(max_examples=40, deadline=None)
@given(planted=st.floats(0.002, 0.998), x=st.floats(-5, 5))
def test_bisection_soundness_property(planted, x):
    grid = synthetic_grid(lambda a: 3.0 * stats.norm.ppf(a) + a, MONOTONE_LEVELS, slopes=(-1.5,))
    xv = np.array([x])
    c = grid.predict(planted, xv)
    res = invert_lqr_bisection(grid, c, xv)
    assert res.found
    assert abs(res.alpha - planted) <= 1e-6
    assert abs(grid.predict(res.alpha, xv) - c) <= res.value_tolerance + 1e-12


def test_bisection_not_found_beyond_span():
    grid = synthetic_grid(stats.norm.ppf, MONOTONE_LEVELS)
    x = np.array([0.0])
    top = grid.predict(0.999, x)
    for c in (top + 1e-6, top + 100.0, grid.predict(0.001, x) - 1.0):
        res = invert_lqr_bisection(grid, c, x)
        assert not res.found and "every grid prediction" in res.diagnostic


def test_bisection_multiple_solutions():
    grid = synthetic_grid(lambda a: (a - 0.5) ** 2, [0.05, 0.2, 0.4, 0.6, 0.8, 0.95], slopes=(0.0,))
    res = invert_lqr_bisection(grid, 0.04, np.array([0.0]))
    assert res.multiple and "multiple" in res.diagnostic
    if res.found:
        assert res.alpha == pytest.approx(0.3, abs=1e-6) or res.alpha == pytest.approx(0.7, abs=1e-6)


def test_bisection_iteration_cap():
    grid = synthetic_grid(stats.norm.ppf, MONOTONE_LEVELS)
    res = invert_lqr_bisection(grid, 0.1234, np.array([0.0]), max_iter=3)
    assert not res.found and "3 iterations" in res.diagnostic


def test_bisection_on_fitted_grid_uses_midpoint_fits():
    x, y = linear_data(n=600, seed=2)
    grid = QuantileGrid.fit(y, x, [0.05, 0.25, 0.5, 0.75, 0.95])
    xv = np.array([0.5])
    c = 2.6
    res = invert_lqr_bisection(grid, c, xv)
    assert res.found
    # the fitted quantile is a step function of the level: c sits inside the final jump
    assert min(res.bracket_values) <= c <= max(res.bracket_values)
    assert res.bracket[1] - res.bracket[0] <= 1e-6
    assert res.alpha == pytest.approx(stats.norm.cdf(c - 2.0), abs=0.06)


def test_lqr_probability_contrast():
    grid = synthetic_grid(stats.norm.ppf, MONOTONE_LEVELS)
    X = np.array([[0.0], [1.0], [2.0]])
    p, res = lqr_critical_probability(grid, 3.5, X)
    # beyond the top level the benchmark gives no positive estimate
    assert p[0] == 0.0 and not res[0].found
    assert p[2] == pytest.approx(stats.norm.sf(1.5), abs=1e-6)
    low, _ = lqr_critical_probability(grid, -10.0, X)
    assert np.all(low == 1 - 0.001)


def test_crossing_parallel_lines():
    grid = synthetic_grid(stats.norm.ppf, [0.1, 0.5, 0.9])
    rep = detect_quantile_crossing(grid, np.linspace(-100, 100, 41)[:, None])
    assert rep.n_rows_crossed == 0 and rep.n_pairs == 0


def test_crossing_opposite_slopes():
    f1 = synthetic_fit(0.1, 0.0, (1.0,))
    f2 = synthetic_fit(0.9, 1.0, (-1.0,))
    grid = QuantileGrid([f1, f2])
    # lines meet at x = 0.5
    xs = np.array([[-1.0], [0.0], [0.49], [0.51], [3.0]])
    rep = detect_quantile_crossing(grid, xs)
    assert rep.crossed.tolist() == [False, False, False, True, True]
    assert rep.pairs[4] == ((0.1, 0.9),)
    assert rep.to_dict()["n_rows_crossed"] == 2


def test_crossing_heteroskedastic():
    rng = np.random.default_rng(8)
    n = 3000
    x = rng.uniform(0, 2, size=n)
    y = 1.0 + x + (0.2 + x) * rng.normal(size=n)
    grid = QuantileGrid.fit(y, x, [0.01, 0.05, 0.1, 0.2])
    inside = detect_quantile_crossing(grid, np.linspace(0.2, 2, 10)[:, None])
    outside = detect_quantile_crossing(grid, np.array([[-1.0], [-2.0]]))
    assert inside.n_rows_crossed == 0
    assert outside.n_rows_crossed == 2
    assert (0.01, 0.2) in outside.pairs[0]


def test_crossing_needs_two_levels():
    with pytest.raises(ValueError):
        detect_quantile_crossing(QuantileGrid([synthetic_fit(0.5, 0.0)]), [[0.0]])
