import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from vinerisk import cli
from vinerisk import config as cfg
from vinerisk.bicop import BivariateCopula, Family, tau_to_param
from vinerisk.dvine import DVineRegressionModel, conditional_quantile, simulate_conditional
from vinerisk.margins import MarginalModel
from vinerisk.risk import critical_event_probability, ols_rank, standardize, logit

SMALL_INI = """
[data]
covariates = hws, td, ea, tsd
[margins]
default = normal, gev, lognormal
[copula]
families = gaussian, clayton, gumbel, frank, indep
[risk]
thresholds = 1800, 2000
p_threshold = 1e-3
[lqr]
levels = 0.05:0.95:0.05
n_boot = 20
[run]
seed = 4
"""


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr() if capsys is not None else None
    return code, out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_model(path, model, response="th80"):
    cli.save_model(Path(path), model, response)
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.ini").write_text(SMALL_INI)
    assert cli.main(["simulate", "--n", "240", "--seed", "3", "--out", str(d / "flights.csv")]) == 0
    assert cli.main(["fit", "--data", str(d / "flights.csv"), "--config", str(d / "small.ini"),
                     "--out", str(d / "fit")]) == 0
    return d


def test_simulate_schema_and_determinism(tmp_path):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    for path, seed in ((a, 5), (b, 5), (c, 6)):
        assert run(["simulate", "--n", 50, "--seed", seed, "--out", path])[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()
    header = a.read_text().splitlines()[0].split(",")
    assert header == ["th80", "hws", "temp", "refAP", "asd", "trd", "tsd", "lm", "tbs", "bd", "td", "ea"]
    assert len(a.read_text().splitlines()) == 51


def test_simulate_to_stdout(capsys):
    code, out = run(["simulate", "--n", 3, "--seed", 1], capsys)
    assert code == 0 and out.out.startswith("th80,hws")


def test_simulate_from_model_file_recovers(tmp_path):
    # refit recovery: a one-covariate Clayton truth is found again
    cop = BivariateCopula(Family.CLAYTON, 0, tau_to_param(Family.CLAYTON, 0, 0.5))
    truth = DVineRegressionModel((0,), ((cop,),), MarginalModel("normal", (2000.0, 100.0)),
                                 {0: MarginalModel("normal", (0.0, 1.0))}, names=("td",))
    write_model(tmp_path / "truth.json", truth)
    (tmp_path / "sim.ini").write_text("[data]\ncovariates = td\n[simulate]\nmodel = truth.json\n"
                                      "[margins]\ndefault = normal\n")
    ini = tmp_path / "sim.ini"
    assert run(["simulate", "--config", ini, "--n", 1500, "--seed", 2, "--out", tmp_path / "d.csv"])[0] == 0
    assert run(["fit", "--config", ini, "--data", tmp_path / "d.csv", "--out", tmp_path / "f"])[0] == 0
    model, _ = cli.load_model(tmp_path / "f" / "model.json")
    assert model.order == (0,)
    assert model.edge(1, 0).tau == pytest.approx(0.5, abs=0.05)


def test_fit_outputs_and_roundtrip(workspace):
    fit = workspace / "fit"
    model, response = cli.load_model(fit / "model.json")
    assert response == "th80" and model.names == ("hws", "td", "ea", "tsd")
    rows = read_csv(fit / "summary.csv")
    assert list(rows[0]) == list(cli.SUMMARY_CSV_COLUMNS)
    assert len(rows) == model.dim
    # labels are 1-based with the response as 1
    assert [int(r["k_j"]) for r in rows] == [k + 2 for k in model.order]
    assert rows[1]["conditioning_set"] == str(model.order[0] + 2)
    # load -> save -> load gives identical predictions and identical bytes
    again = workspace / "again.json"
    cli.save_model(again, model, response, json.loads((fit / "model.json").read_text())["selection"])
    assert again.read_bytes() == (fit / "model.json").read_bytes()
    X = cfg.load_dataset(workspace / "flights.csv", cfg.RunConfig(covariates=model.names)).X
    reloaded, _ = cli.load_model(again)
    assert np.array_equal(conditional_quantile(model, 0.9, X), conditional_quantile(reloaded, 0.9, X))


def test_fit_marginal_only_warns(workspace, tmp_path, capsys):
    ini = tmp_path / "none.ini"
    ini.write_text("[data]\ncovariates =\n[margins]\ndefault = normal, gev\n")
    code, out = run(["fit", "--data", workspace / "flights.csv", "--config", ini, "--out", tmp_path], capsys)
    assert code == 0
    assert "marginal-only" in out.err
    model, _ = cli.load_model(tmp_path / "model.json")
    assert model.dim == 0
    assert read_csv(tmp_path / "summary.csv") == []


@pytest.mark.slow
def test_fit_full_factor_set_drops_noise(tmp_path):
    # tsd is independent of everything in the built-in truth
    data = tmp_path / "flights.csv"
    assert run(["simulate", "--n", 711, "--seed", 1, "--out", data])[0] == 0
    ini = tmp_path / "fast.ini"
    ini.write_text("[margins]\ndefault = normal, gev, gamma, lognormal\n")
    assert run(["fit", "--data", data, "--config", ini, "--out", tmp_path / "f"])[0] == 0
    rows = read_csv(tmp_path / "f" / "summary.csv")
    assert len(rows) <= 10
    assert "tsd" not in [r["name"] for r in rows]


def test_fit_schema_mismatch_exit_2(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    lines = (workspace / "flights.csv").read_text().splitlines()
    bad.write_text("\n".join([lines[0].replace("td,", "tdx,")] + lines[1:]) + "\n")
    code, out = run(["fit", "--data", bad, "--config", workspace / "small.ini", "--out", tmp_path], capsys)
    assert code == 2
    assert "missing td" in out.err and "tdx" in out.err


def test_fit_missing_values_and_bad_config_exit_2(workspace, tmp_path, capsys):
    lines = (workspace / "flights.csv").read_text().splitlines()
    parts = lines[5].split(",")
    parts[1] = "NA"
    bad = tmp_path / "missing.csv"
    bad.write_text("\n".join(lines[:5] + [",".join(parts)] + lines[6:]) + "\n")
    code, out = run(["fit", "--data", bad, "--config", workspace / "small.ini"], capsys)
    assert code == 2 and "missing value" in out.err
    ini = tmp_path / "bad.ini"
    ini.write_text("[risk]\nthresholds = -5\n")
    assert run(["fit", "--data", workspace / "flights.csv", "--config", ini], capsys)[0] == 2
    ini.write_text("[risk]\nthreshold = 5\n")
    code, out = run(["fit", "--data", workspace / "flights.csv", "--config", ini], capsys)
    assert code == 2 and "unknown key" in out.err
    assert run(["fit", "--data", tmp_path / "nope.csv"], capsys)[0] == 2
    assert run(["fit"], capsys)[0] == 2


def test_fit_insufficient_rows_exit_4(workspace, tmp_path, capsys):
    lines = (workspace / "flights.csv").read_text().splitlines()
    short = tmp_path / "short.csv"
    short.write_text("\n".join(lines[:11]) + "\n")
    code, out = run(["fit", "--data", short, "--config", workspace / "small.ini"], capsys)
    assert code == 4 and "insufficient" in out.err


def test_discrete_columns(workspace, tmp_path, capsys):
    lines = (workspace / "flights.csv").read_text().splitlines()
    const = tmp_path / "const.csv"
    const.write_text("\n".join([lines[0] + ",flaps"] + [l + ",full" for l in lines[1:]]) + "\n")
    code, out = run(["fit", "--data", const, "--config", workspace / "small.ini",
                     "--out", tmp_path / "c"], capsys)
    assert code == 0 and "'flaps' is constant" in out.err
    varying = tmp_path / "vary.csv"
    varying.write_text("\n".join([lines[0] + ",flaps"] +
                                 [l + (",full" if i % 2 else ",half") for i, l in enumerate(lines[1:])]) + "\n")
    code, out = run(["fit", "--data", varying, "--config", workspace / "small.ini",
                     "--out", tmp_path / "v"], capsys)
    assert code == 2 and "discrete" in out.err
    ini = tmp_path / "ignore.ini"
    ini.write_text(SMALL_INI.replace("[data]", "[data]\ndiscrete_policy = ignore"))
    code, out = run(["fit", "--data", varying, "--config", ini, "--out", tmp_path / "i"], capsys)
    assert code == 0 and "ignored" in out.err


def test_config_json_matches_ini(tmp_path):
    ini = cfg.parse_config_text(SMALL_INI)
    doc = {"data": {"covariates": ["hws", "td", "ea", "tsd"]},
           "margins": {"default": ["normal", "gev", "lognormal"]},
           "copula": {"families": ["gaussian", "clayton", "gumbel", "frank", "indep"]},
           "risk": {"thresholds": [1800, 2000], "p_threshold": 1e-3},
           "lqr": {"levels": "0.05:0.95:0.05", "n_boot": 20}, "run": {"seed": 4}}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    assert cfg.load_config(path) == ini
    assert ini.lqr_levels[0] == 0.05 and ini.lqr_levels[-1] == 0.95 and len(ini.lqr_levels) == 19


def test_config_defaults():
    c = cfg.RunConfig()
    assert c.thresholds == (2200.0, 2400.0, 2500.0)
    assert c.p_threshold == 1e-3 and c.floor == 1e-13
    assert c.covariates == ("hws", "temp", "refAP", "asd", "trd", "tsd", "lm", "tbs", "bd", "td", "ea")


def test_column_remapping(workspace, tmp_path):
    lines = (workspace / "flights.csv").read_text().splitlines()
    renamed = tmp_path / "renamed.csv"
    renamed.write_text("\n".join([lines[0].replace("th80", "dist80")] + lines[1:]) + "\n")
    ini = tmp_path / "map.ini"
    ini.write_text(SMALL_INI + "\n[columns]\nth80 = dist80\n")
    data = cfg.load_dataset(renamed, cfg.load_config(ini))
    ref = cfg.load_dataset(workspace / "flights.csv", cfg.load_config(workspace / "small.ini"))
    assert np.array_equal(data.y, ref.y) and np.array_equal(data.X, ref.X)


def test_assess_reports_and_counts(workspace, tmp_path, capsys):
    code, out = run(["assess", "--model", workspace / "fit" / "model.json", "--data",
                     workspace / "flights.csv", "--threshold", "1800,1e9", "--out", tmp_path], capsys)
    assert code == 0
    assert "threshold" in out.out and "1800" in out.out
    far = read_csv(tmp_path / "risk_c1e+09.csv")
    assert all(r["risky"] == "0" for r in far)
    doc = json.loads((tmp_path / "risk_c1800.json").read_text())
    model, _ = cli.load_model(workspace / "fit" / "model.json")
    X = cfg.load_dataset(workspace / "flights.csv", cfg.RunConfig(covariates=model.names)).X
    assert np.allclose([r["alpha"] for r in doc["records"]], critical_event_probability(model, 1800, X),
                       rtol=0, atol=0)
    counts = read_csv(tmp_path / "counts.csv")
    assert [float(r["threshold"]) for r in counts] == [1800.0, 1e9]
    assert int(counts[0]["n_risky"]) == doc["n_risky"]


def test_assess_default_thresholds(workspace, tmp_path):
    assert run(["assess", "--model", workspace / "fit" / "model.json", "--data",
                workspace / "flights.csv", "--out", tmp_path])[0] == 0
    assert sorted(p.name for p in tmp_path.glob("risk_c*.csv")) == \
        ["risk_c2200.csv", "risk_c2400.csv", "risk_c2500.csv"]


def test_assess_independence_model_at_median(tmp_path):
    ind = BivariateCopula(Family.INDEPENDENCE, 0, ())
    margin = MarginalModel("normal", (1500.0, 100.0))
    model = DVineRegressionModel((0, 1), ((ind, ind), (ind,)), margin,
                                 {0: MarginalModel("normal", (0, 1)), 1: MarginalModel("normal", (0, 1))},
                                 names=("hws", "td"))
    write_model(tmp_path / "m.json", model)
    rng = np.random.default_rng(0)
    data = tmp_path / "d.csv"
    data.write_text("hws,td\n" + "\n".join(f"{float(a)!r},{float(b)!r}" for a, b in rng.normal(size=(40, 2))) + "\n")
    assert run(["assess", "--model", tmp_path / "m.json", "--data", data, "--threshold", 1500,
                "--p-threshold", 0.4, "--out", tmp_path])[0] == 0
    rows = read_csv(tmp_path / "risk_c1500.csv")
    assert all(abs(float(r["alpha"]) - 0.5) < 1e-12 for r in rows)


def test_assess_matches_monte_carlo(workspace):
    model, _ = cli.load_model(workspace / "fit" / "model.json")
    X = cfg.load_dataset(workspace / "flights.csv", cfg.RunConfig(covariates=model.names)).X
    for i in (0, 7):
        c = float(conditional_quantile(model, 0.97, X[i]))
        a = float(critical_event_probability(model, c, X[i]))
        draws = simulate_conditional(model, X[i], 200_000, seed=i)
        se = np.sqrt(a * (1 - a) / draws.size)
        assert abs(np.mean(draws > c) - a) < 3 * se


def test_assess_missing_covariate_exit_2(workspace, tmp_path, capsys):
    model, _ = cli.load_model(workspace / "fit" / "model.json")
    drop = model.names[model.order[0]]
    header, body = cfg.read_table(workspace / "flights.csv")
    j = header.index(drop)
    path = tmp_path / "drop.csv"
    path.write_text("\n".join(",".join(c for k, c in enumerate(r) if k != j) for r in [header] + body))
    code, out = run(["assess", "--model", workspace / "fit" / "model.json", "--data", path,
                     "--out", tmp_path], capsys)
    assert code == 2 and drop in out.err


def _risky_report(tmp_path, alphas, factors, p=1e-3):
    doc = {"threshold": 2500.0, "p_threshold": p, "floor": 1e-13,
           "records": [{"row": i, "alpha": a, "risky": a > p} for i, a in enumerate(alphas)],
           "factors": factors}
    path = tmp_path / "report.json"
    path.write_text(json.dumps(doc))
    return path


def test_rank_matches_ols(tmp_path, capsys):
    rng = np.random.default_rng(2)
    n = 60
    X = rng.normal(size=(n, 3))
    eta = -4 + X @ [1.5, -0.5, 0.1] + 0.3 * rng.normal(size=n)
    alpha = 1 / (1 + np.exp(-eta))
    alpha[:10] = 1e-6  # not risky
    rep = _risky_report(tmp_path, alpha.tolist(), ["bd", "hws", "tbs"])
    data = tmp_path / "d.csv"
    data.write_text("bd,hws,tbs\n" + "\n".join(",".join(repr(float(v)) for v in r) for r in X) + "\n")
    code, out = run(["rank", "--report", rep, "--data", data, "--top", 2, "--out", tmp_path], capsys)
    assert code == 0
    res = json.loads((tmp_path / "ranking.json").read_text())
    risky = alpha > 1e-3
    ref = ols_rank(logit(alpha[risky]), standardize(X[risky]), ["bd", "hws", "tbs"])
    assert res["full"]["ranking"] == ref.ranking == ["bd", "hws", "tbs"]
    assert [c["estimate"] for c in res["full"]["coefficients"]] == pytest.approx(ref.estimate.tolist(),
                                                                                  rel=1e-12)
    assert [c["name"] for c in res["reduced"]["coefficients"]] == ["(Intercept)", "bd", "hws"]
    assert "Adjusted R-squared" in out.out


def test_rank_too_few_risky_exit_4(tmp_path, capsys):
    rep = _risky_report(tmp_path, [0.5, 0.5, 0.5, 1e-9, 1e-9], ["bd", "hws", "tbs"])
    data = tmp_path / "d.csv"
    data.write_text("bd,hws,tbs\n" + "\n".join(f"{i},{i * i},{-i}" for i in range(5)) + "\n")
    code, out = run(["rank", "--report", rep, "--data", data], capsys)
    assert code == 4 and "risky" in out.err


def test_rank_collinear_exit_3(tmp_path, capsys):
    rng = np.random.default_rng(1)
    a = rng.normal(size=20)
    rep = _risky_report(tmp_path, rng.uniform(0.01, 0.5, 20).tolist(), ["bd", "hws"])
    data = tmp_path / "d.csv"
    data.write_text("bd,hws\n" + "\n".join(f"{float(v)!r},{float(2 * v)!r}" for v in a) + "\n")
    code, out = run(["rank", "--report", rep, "--data", data, "--out", tmp_path], capsys)
    assert code == 3 and "hws" in out.err


def test_benchmark_outputs(workspace, tmp_path, capsys):
    top = max(float(r["th80"]) for r in read_csv(workspace / "flights.csv"))
    code, out = run(["benchmark-lqr", "--data", workspace / "flights.csv", "--config",
                     workspace / "small.ini", "--levels", "0.1,0.5,0.9", "--threshold", 1.2 * top,
                     "--out", tmp_path], capsys)
    assert code == 0
    counts = read_csv(tmp_path / "benchmark_counts.csv")
    assert [r["model"] for r in counts] == ["lqr", "dvine_gauss", "dvine_par"]
    # far beyond the data the linear benchmark gives nothing while the vines stay positive
    assert int(counts[0]["n_above_floor"]) == 0
    assert int(counts[2]["n_above_floor"]) > 0
    alpha = read_csv(tmp_path / "benchmark_alpha.csv")
    assert all(r["lqr_found"] == "0" for r in alpha)
    crossing = json.loads((tmp_path / "crossing.json").read_text())
    assert crossing["levels"] == [0.1, 0.5, 0.9]
    coef = read_csv(tmp_path / "lqr_coefficients.csv")
    assert [r["name"] for r in coef] == ["(Intercept)", "hws", "td", "ea", "tsd"]
    assert "D-vine Gauss" in out.out


@pytest.mark.slow
def test_benchmark_heavy_tail_direction(tmp_path):
    g = BivariateCopula(Family.GUMBEL, 0, tau_to_param(Family.GUMBEL, 0, 0.6))
    g2 = BivariateCopula(Family.GUMBEL, 0, tau_to_param(Family.GUMBEL, 0, 0.4))
    ind = BivariateCopula(Family.INDEPENDENCE, 0, ())
    truth = DVineRegressionModel((0, 1), ((g, g2), (ind,)), MarginalModel("gev", (1500, 120, 0.25)),
                                 {0: MarginalModel("normal", (0, 1)), 1: MarginalModel("normal", (5, 2))},
                                 names=("td", "hws"))
    write_model(tmp_path / "truth.json", truth)
    ini = tmp_path / "ht.ini"
    ini.write_text("[data]\ncovariates = td, hws\n[margins]\nth80 = gev\ndefault = normal\n"
                   "[simulate]\nmodel = truth.json\n[lqr]\nn_boot = 10\nlevels = 0.05:0.95:0.05\n")
    data = tmp_path / "d.csv"
    assert run(["simulate", "--config", ini, "--n", 300, "--seed", 0, "--out", data])[0] == 0
    top = max(float(r["th80"]) for r in read_csv(data))
    assert run(["benchmark-lqr", "--data", data, "--config", ini, "--threshold", top,
                "--threshold", 1.2 * top, "--out", tmp_path / "b"])[0] == 0
    counts = read_csv(tmp_path / "b" / "benchmark_counts.csv")
    for c in sorted({r["threshold"] for r in counts}):
        n = {r["model"]: int(r["n_above_floor"]) for r in counts if r["threshold"] == c}
        assert n["dvine_par"] >= n["dvine_gauss"] > n["lqr"] == 0


def test_figures_option(workspace, tmp_path):
    figs = tmp_path / "figs"
    assert run(["assess", "--model", workspace / "fit" / "model.json", "--data",
                workspace / "flights.csv", "--threshold", 1800, "--out", tmp_path,
                "--figures", figs])[0] == 0
    assert (figs / "risk_c1800.png").read_bytes()[:4] == b"\x89PNG"


def test_threads_env(workspace, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.THREADS_ENV, "zero")
    code, out = run(["assess", "--model", workspace / "fit" / "model.json", "--data",
                     workspace / "flights.csv", "--out", tmp_path], capsys)
    assert code == 2 and cli.THREADS_ENV in out.err


def _run_all(workspace, out, threads):
    d = workspace
    seq = [
        ["simulate", "--n", 60, "--seed", 9, "--out", out / "sim.csv"],
        ["fit", "--data", d / "flights.csv", "--config", d / "small.ini", "--out", out / "fit"],
        ["assess", "--model", out / "fit" / "model.json", "--data", d / "flights.csv",
         "--config", d / "small.ini", "--out", out / "assess"],
        ["rank", "--report", out / "assess" / "risk_c1800.json", "--data", d / "flights.csv",
         "--top", 2, "--out", out / "rank"],
        ["benchmark-lqr", "--data", d / "flights.csv", "--config", d / "small.ini",
         "--levels", "0.1:0.9:0.2", "--out", out / "bench"],
    ]
    codes = [cli.main([str(a) for a in cmd] + (["--threads", str(threads)]
                                                  if cmd[0] != "simulate" else [])) for cmd in seq]
    return codes


def snapshot(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("threads", [1, 4])
def test_commands_byte_identical(workspace, tmp_path, threads):
    a, b = tmp_path / "a", tmp_path / "b"
    codes_a = _run_all(workspace, a, threads)
    codes_b = _run_all(workspace, b, threads)
    assert codes_a == codes_b
    assert codes_a[:3] + codes_a[4:] == [0, 0, 0, 0]
    assert snapshot(a) == snapshot(b)


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "vinerisk", "simulate", "--n", "2", "--seed", "1"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and res.stdout.startswith("th80,")
