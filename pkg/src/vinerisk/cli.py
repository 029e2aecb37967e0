"""Command-line front end.

    vinerisk fit --data flights.csv --config run.ini --out fitted/
    vinerisk assess --model fitted/model.json --data flights.csv --threshold 2500
    vinerisk rank --report risk/risk_c2500.json --data flights.csv --top 6
    vinerisk benchmark-lqr --data flights.csv --config run.ini --levels 0.05:0.95:0.05
    vinerisk simulate --n 711 --seed 1 --out flights.csv

Exit codes: 0 success, 2 input or schema problem, 3 numerical failure,
4 insufficient data. The thread count comes from ``--threads`` or the
``VINERISK_THREADS`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfg
from .bicop import Family
from .config import ConfigError, RunConfig
from .dvine import (
    MIN_OBS,
    DVineRegressionModel,
    fit_dvine_regression,
    fit_margins,
    simulate_dvine,
    summary_table,
)
from .lqr import (
    DegenerateDesignError,
    QuantileGrid,
    coefficient_csv,
    detect_quantile_crossing,
    fit_lqr,
    lqr_critical_probability,
)
from .margins import MarginFitError, fit_parametric, select_margin
from .risk import RankDeficientError, RiskReport, critical_event_probability, identify_risky, \
    rank_risk_factors

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_DATA = 0, 2, 3, 4
THREADS_ENV = "VINERISK_THREADS"
MODEL_FORMAT = "vinerisk-model/1"


class InsufficientData(Exception):
    pass


class NumericalFailure(Exception):
    pass


def _threads(args) -> int:
    if getattr(args, "threads", None):
        n = args.threads
    else:
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def _fmt_c(c: float) -> str:
    return f"{c:g}"


def _out(msg: str = ""):
    print(msg)


def _warn(msg: str):
    print(f"warning: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------


def save_model(path: Path, model: DVineRegressionModel, response: str, selection=None):
    doc = {"format": MODEL_FORMAT, "response": response,
           "covariates": list(model.names or ()), "model": model.to_dict()}
    if selection is not None:
        doc["selection"] = selection
    return _write(path, _dumps(doc))


def load_model(path) -> tuple[DVineRegressionModel, str]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read model {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file {path} is not JSON: {exc}") from None
    try:
        if "model" in doc:
            model = DVineRegressionModel.from_dict(doc["model"])
            response = doc.get("response", cfg.DEFAULT_RESPONSE)
        else:
            model = DVineRegressionModel.from_dict(doc)
            response = cfg.DEFAULT_RESPONSE
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"model file {path} is malformed: {exc}") from None
    if model.names is None:
        raise ConfigError(f"model file {path} does not record covariate names")
    return model, response


def summary_rows(model: DVineRegressionModel) -> list[dict]:
    """Summary rows labelled 1-based: the response is 1, covariate column k is k + 2."""
    rows = []
    for r in summary_table(model):
        rows.append({
            "name": r["variable"],
            "k_j": r["column"] + 2,
            "conditioning_set": " ".join(str(c + 2) for c in r["conditioned_on"]),
            "family": r["family"],
            "rotation": r["rotation"],
            "parameters": " ".join(repr(float(p)) for p in r["parameters"]),
            "tau": r["tau"],
            "ll": r["ll"],
            "ll_aic": r["ll_aic"],
            "ll_bic": r["ll_bic"],
            "p_value": r["p_value"],
        })
    return rows


def _csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()


SUMMARY_CSV_COLUMNS = ("name", "k_j", "conditioning_set", "family", "rotation", "parameters",
                       "tau", "ll", "ll_aic", "ll_bic", "p_value")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _fit_model(data: cfg.FlightDataset, conf: RunConfig, n_threads: int, allowed=None,
               margins=None):
    if data.n < MIN_OBS:
        raise InsufficientData(f"need at least {MIN_OBS} complete rows, got {data.n}")
    names = (conf.response,) + data.covariates
    if margins is None:
        specs = conf.margin_specs(names)
        if data.covariates:
            margins = fit_margins(data.y, data.X, specs)
        else:
            margins = (_response_margin(data.y, specs[0]), {})
    if not data.covariates:
        model = DVineRegressionModel((), (), margins[0], {}, n_obs=data.n, criterion=conf.criterion,
                                     names=())
        return model, {"criterion": conf.criterion,
                       "stop_reason": "no covariates configured; model predicts the marginal",
                       "steps": []}, margins
    model, trace = fit_dvine_regression(
        data.y, data.X, margins=margins, allowed=allowed, criterion=conf.criterion,
        independence_test=conf.independence_test, n_threads=n_threads,
        names=data.covariates, max_covariates=conf.max_covariates)
    return model, trace.to_dict(), margins


def _response_margin(y, spec):
    if spec is None:
        return select_margin(y)
    if isinstance(spec, str):
        return fit_parametric(y, spec)
    return select_margin(y, spec)


def cmd_fit(args) -> int:
    conf = cfg.load_config(args.config)
    data = cfg.load_dataset(args.data, conf)
    for note in data.notes:
        _warn(note)
    if not data.covariates:
        _warn("configuration excludes all covariates; fitting a marginal-only model")
    model, selection, _ = _fit_model(data, conf, _threads(args), conf.allowed_families())
    if data.covariates and model.dim == 0:
        _warn("no covariate improved the criterion; the model predicts the marginal")
    out = Path(args.out)
    save_model(out / "model.json", model, conf.response, selection)
    _write(out / "summary.csv", _csv(summary_rows(model), SUMMARY_CSV_COLUMNS))
    text = _summary_text(model, conf.response, data)
    _write(out / "summary.txt", text)
    _out(text.rstrip("\n"))
    if args.figures:
        from . import plotting

        if model.dim:
            plotting.response_contours(model, Path(args.figures) / "response_contours.png")
    return EXIT_OK


def _summary_text(model, response, data) -> str:
    lines = [f"response: {response} (label 1), margin {model.response_margin.label}",
             f"observations: {data.n}; selected {model.dim} of {len(data.covariates)} covariates"]
    dropped = [n for k, n in enumerate(data.covariates) if k not in model.order]
    if dropped:
        lines.append(f"not selected: {', '.join(dropped)}")
    if model.dim:
        rows = summary_rows(model)
        cells = [["name", "k_j", "given", "family", "rot", "parameters", "tau", "ll", "ll_aic",
                  "ll_bic", "p_value"]]
        for r in rows:
            pars = ", ".join(f"{float(p):.2f}" for p in r["parameters"].split())
            cells.append([r["name"], str(r["k_j"]), r["conditioning_set"].replace(" ", ", ") or "-",
                          r["family"], str(r["rotation"]), pars, f"{r['tau']:.2f}",
                          f"{r['ll']:.2f}", f"{r['ll_aic']:.2f}", f"{r['ll_bic']:.2f}",
                          "< 0.00" if r["p_value"] < 0.005 else f"{r['p_value']:.2f}"])
        widths = [max(len(row[j]) for row in cells) for j in range(len(cells[0]))]
        left = {0, 2, 3, 5}
        for row in cells:
            lines.append("  ".join(c.ljust(w) if j in left else c.rjust(w)
                                   for j, (c, w) in enumerate(zip(row, widths))).rstrip())
    return "\n".join(lines) + "\n"


def _parse_thresholds(values, default):
    if not values:
        return tuple(default)
    out = []
    for v in values:
        out.extend(cfg._floats(v, "threshold"))
    if any(not (c > 0 and np.isfinite(c)) for c in out):
        raise ConfigError("thresholds must be positive")
    return tuple(out)


COUNT_COLUMNS = ("threshold", "n_records", "n_risky", "risky_pct", "n_above_floor",
                 "above_floor_pct", "max_alpha")


def _count_row(report: RiskReport) -> dict:
    n = max(report.n_records, 1)
    return {"threshold": report.threshold, "n_records": report.n_records,
            "n_risky": report.n_risky, "risky_pct": 100.0 * report.n_risky / n,
            "n_above_floor": report.n_above_floor,
            "above_floor_pct": 100.0 * report.n_above_floor / n, "max_alpha": report.max_alpha}


def cmd_assess(args) -> int:
    conf = cfg.load_config(args.config)
    model, response = load_model(args.model)
    conf_p = conf.p_threshold if args.p_threshold is None else args.p_threshold
    if not 0 < conf_p < 1:
        raise ConfigError("p-threshold must lie in (0, 1)")
    floor = conf.floor if args.floor is None else args.floor
    thresholds = _parse_thresholds(args.threshold, conf.thresholds)
    # only the covariates the model uses must be present
    used = [model.names[k] for k in sorted(model.order)]
    conf_used = RunConfig(**{**conf.__dict__, "response": response,
                             "covariates": tuple(model.names)})
    data = cfg.load_dataset(args.data, conf_used, covariates=used, need_response=False)
    for note in data.notes:
        if "not in the configuration" not in note:
            _warn(note)
    X = np.full((data.n, len(model.names)), np.nan)
    for j, k in enumerate(sorted(model.order)):
        X[:, k] = data.X[:, j]
    n_threads = _threads(args)
    out = Path(args.out)
    factors = [model.names[k] for k in model.order]
    counts = []
    for c in thresholds:
        rep = identify_risky(model, X, c, conf_p, floor, n_threads=n_threads)
        stem = f"risk_c{_fmt_c(c)}"
        _write(out / f"{stem}.csv", rep.to_csv())
        doc = rep.to_dict()
        doc["factors"] = factors
        doc["response"] = response
        _write(out / f"{stem}.json", _dumps(doc))
        counts.append(_count_row(rep))
        if args.figures:
            from . import plotting

            plotting.risk_distribution(rep, Path(args.figures) / f"{stem}.png")
    _write(out / "counts.csv", _csv(counts, COUNT_COLUMNS))
    _out(f"{'threshold':>10}{'records':>9}{'risky':>8}{'(%)':>9}{'> floor':>9}{'(%)':>9}"
         f"{'max alpha':>12}")
    for r in counts:
        _out(f"{_fmt_c(r['threshold']):>10}{r['n_records']:>9}{r['n_risky']:>8}"
             f"{r['risky_pct']:>8.2f}%{r['n_above_floor']:>9}{r['above_floor_pct']:>8.2f}%"
             f"{r['max_alpha']:>12.3g}")
    return EXIT_OK


def cmd_rank(args) -> int:
    try:
        doc = json.loads(Path(args.report).read_text(encoding="utf-8"))
        report = RiskReport.from_dict(doc)
        factors = list(doc["factors"])
    except OSError as exc:
        raise ConfigError(f"cannot read report {args.report}: {exc.strerror}") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"report {args.report} is malformed: {exc}") from None
    conf = cfg.load_config(args.config)
    conf_used = RunConfig(**{**conf.__dict__, "covariates": tuple(factors)})
    data = cfg.load_dataset(args.data, conf_used, covariates=factors, need_response=False)
    ids = np.array(report.row_ids, dtype=int)
    if ids.size and (ids.min() < 0 or ids.max() >= data.n):
        raise ConfigError("report rows do not match the data file")
    X = data.X[ids]
    need = len(factors) + 2
    if report.n_risky < need:
        raise InsufficientData(f"ranking {len(factors)} factors needs at least {need} risky "
                               f"records, the report has {report.n_risky}")
    over = args.over or conf.rank_over
    top = conf.top if args.top is None else args.top
    top = None if top <= 0 or top >= len(factors) else top
    full, reduced = rank_risk_factors(report, X, factors, over=over, top=top)
    out = Path(args.out)
    result = {"threshold": report.threshold, "p_threshold": report.p_threshold,
              "n_risky": report.n_risky, "standardized_over": over, "full": full.to_dict(),
              "reduced": None if reduced is None else reduced.to_dict()}
    _write(out / "ranking.json", _dumps(result))
    rows = [{"model": "full", "rank": 0 if i == 0 else 1 + full.ranking.index(n), "name": n,
             "estimate": float(full.estimate[i]), "std_error": float(full.std_error[i]),
             "t_value": float(full.t_value[i]), "p_value": float(full.p_value[i])}
            for i, n in enumerate(full.names)]
    if reduced is not None:
        rows += [{"model": "reduced", "rank": 0 if i == 0 else 1 + reduced.ranking.index(n),
                  "name": n, "estimate": float(reduced.estimate[i]),
                  "std_error": float(reduced.std_error[i]), "t_value": float(reduced.t_value[i]),
                  "p_value": float(reduced.p_value[i])} for i, n in enumerate(reduced.names)]
    _write(out / "ranking.csv", _csv(rows, ("model", "rank", "name", "estimate", "std_error",
                                            "t_value", "p_value")))
    text = full.format_table()
    if reduced is not None:
        text += f"\n\nTop {top} factors\n" + reduced.format_table()
    _write(out / "ranking.txt", text + "\n")
    _out(text)
    return EXIT_OK


def cmd_benchmark_lqr(args) -> int:
    conf = cfg.load_config(args.config)
    data = cfg.load_dataset(args.data, conf)
    for note in data.notes:
        _warn(note)
    if not data.covariates:
        raise ConfigError("the benchmark needs at least one covariate")
    if data.n < MIN_OBS:
        raise InsufficientData(f"need at least {MIN_OBS} complete rows, got {data.n}")
    levels = tuple(cfg._floats(args.levels, "levels")) if args.levels else conf.lqr_levels
    conf = RunConfig(**{**conf.__dict__, "lqr_levels": levels})
    thresholds = _parse_thresholds(args.threshold, conf.thresholds)
    n_threads = _threads(args)

    grid = QuantileGrid.fit(data.y, data.X, levels, names=data.covariates, n_threads=n_threads)
    table = [fit_lqr(data.y, data.X, a, data.covariates, n_boot=conf.lqr_n_boot, seed=conf.seed,
                     n_threads=n_threads) for a in conf.lqr_table_levels]
    names = (conf.response,) + data.covariates
    margins = fit_margins(data.y, data.X, conf.margin_specs(names))
    gauss, _, _ = _fit_model(data, conf, n_threads, [Family.GAUSSIAN, Family.INDEPENDENCE], margins)
    par, _, _ = _fit_model(data, conf, n_threads, conf.allowed_families(), margins)

    counts, per_row = [], []
    for c in thresholds:
        p_lqr, res = lqr_critical_probability(grid, c, data.X, tol=conf.lqr_tol,
                                              n_threads=n_threads)
        p_gauss = np.asarray(critical_event_probability(gauss, c, data.X), dtype=float)
        p_par = np.asarray(critical_event_probability(par, c, data.X), dtype=float)
        for label, p in (("lqr", p_lqr), ("dvine_gauss", p_gauss), ("dvine_par", p_par)):
            k = int(np.sum(p > conf.floor))
            counts.append({"threshold": c, "model": label, "n_above_floor": k,
                           "pct": 100.0 * k / data.n})
        for i in range(data.n):
            per_row.append({"row": i, "threshold": c, "lqr": float(p_lqr[i]),
                            "lqr_found": int(res[i].found), "dvine_gauss": float(p_gauss[i]),
                            "dvine_par": float(p_par[i])})
    crossing = detect_quantile_crossing(grid, data.X)

    out = Path(args.out)
    _write(out / "benchmark_counts.csv", _csv(counts, ("threshold", "model", "n_above_floor", "pct")))
    _write(out / "benchmark_alpha.csv", _csv(per_row, ("row", "threshold", "lqr", "lqr_found",
                                                       "dvine_gauss", "dvine_par")))
    _write(out / "crossing.json", _dumps(crossing.to_dict()))
    _write(out / "lqr_coefficients.csv", coefficient_csv(table))
    _write(out / "lqr_grid.json", _dumps({"levels": list(levels),
                                          "fits": [f.to_dict() for f in grid.fits]}))

    _out(f"observations: {data.n}; observed maximum response {float(np.max(data.y)):g}")
    _out(f"records with exceedance probability > {conf.floor:g}")
    _out(f"{'threshold':>10}{'lqr':>16}{'D-vine Gauss':>18}{'D-vine Par':>18}")
    for c in thresholds:
        cells = [next(r for r in counts if r["threshold"] == c and r["model"] == m)
                 for m in ("lqr", "dvine_gauss", "dvine_par")]
        _out(f"{_fmt_c(c):>10}" + "".join(f"{r['n_above_floor']:>8} ({r['pct']:6.2f}%)"
                                           .rjust(18 if j else 16) for j, r in enumerate(cells)))
    _out(f"quantile crossings: {crossing.n_rows_crossed} of {data.n} records, "
         f"{crossing.n_pairs} level pairs")
    for f in table:
        _out("")
        _out(f.format_table())
    if args.figures:
        from . import plotting

        figs = Path(args.figures)
        plotting.benchmark_counts(counts, figs / "benchmark_counts.png")
        for j, name in enumerate(data.covariates):
            plotting.quantile_lines(data.y, data.X, grid, j, name, figs / f"lqr_{name}.png",
                                    levels=_plot_levels(levels))
    return EXIT_OK


def _plot_levels(levels):
    lv = np.asarray(levels)
    picks = sorted({float(lv[np.argmin(np.abs(lv - a))]) for a in (0.1, 0.5, 0.9)})
    return tuple(picks)


def cmd_simulate(args) -> int:
    conf = cfg.load_config(args.config)
    if args.n < 1:
        raise ConfigError("--n must be positive")
    if conf.simulate_model:
        base = Path(args.config).parent if args.config else Path(".")
        path = Path(conf.simulate_model)
        model, response = load_model(path if path.is_absolute() else base / path)
    else:
        model, response = cfg.default_truth(conf.covariates, conf.response), conf.response
    seed = conf.seed if args.seed is None else args.seed
    y, X = simulate_dvine(model, args.n, seed=seed)
    cols = [response] + list(model.names)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for i in range(args.n):
        w.writerow([repr(float(y[i]))] + [repr(float(v)) for v in X[i]])
    if args.out in (None, "-"):
        sys.stdout.write(buf.getvalue())
    else:
        _write(Path(args.out), buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vinerisk", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, figures=True):
        sp.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default ${THREADS_ENV} or 1)")
        if figures:
            sp.add_argument("--figures", default=None, metavar="DIR",
                            help="also render PNG figures into DIR")

    sp = sub.add_parser("fit", help="fit a D-vine regression model")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", default=".")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("assess", help="critical-event probabilities per record")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--threshold", action="append", default=None,
                    help="threshold c (repeatable or comma separated)")
    sp.add_argument("--p-threshold", type=float, default=None, dest="p_threshold")
    sp.add_argument("--floor", type=float, default=None)
    sp.add_argument("--out", default=".")
    common(sp)
    sp.set_defaults(func=cmd_assess)

    sp = sub.add_parser("rank", help="rank contributing factors of the risky records")
    sp.add_argument("--report", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--top", type=int, default=None, metavar="K")
    sp.add_argument("--over", choices=("risky", "all"), default=None)
    sp.add_argument("--out", default=".")
    common(sp, figures=False)
    sp.set_defaults(func=cmd_rank)

    sp = sub.add_parser("benchmark-lqr", help="compare linear quantile regression with the vines")
    sp.add_argument("--data", required=True)
    sp.add_argument("--config", default=None)
    sp.add_argument("--levels", default=None, help="levels, e.g. 0.05,0.5,0.95 or 0.01:0.99:0.01")
    sp.add_argument("--threshold", action="append", default=None)
    sp.add_argument("--out", default=".")
    common(sp)
    sp.set_defaults(func=cmd_benchmark_lqr)

    sp = sub.add_parser("simulate", help="synthetic flight table from a ground-truth model")
    sp.add_argument("--config", default=None)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", default=None, help="output CSV (default stdout)")
    sp.set_defaults(func=cmd_simulate, threads=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_INPUT
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InsufficientData as exc:
        print(f"error: insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, MarginFitError, RankDeficientError, DegenerateDesignError,
            FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
