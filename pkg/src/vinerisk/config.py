"""Run configuration and flight-table ingestion for the command line tools.

Configuration files are INI-style key/value text with typed sections, or a
JSON object with the same sections::

    [data]
    response = th80
    covariates = hws, temp, refAP, asd, trd, tsd, lm, tbs, bd, td, ea
    discrete = flaps, slats
    discrete_policy = reject          ; or ignore

    [columns]                          ; canonical name = header in the CSV
    th80 = dist80

    [margins]
    default = normal, skewnormal, skewt, gev, gamma, lognormal, mixture
    th80 = gev, skewt

    [copula]
    families = all                     ; or e.g. gaussian, indep
    criterion = cll_aic
    independence_test = true
    max_covariates =

    [risk]
    thresholds = 2200, 2400, 2500
    p_threshold = 1e-3
    floor = 1e-13
    top = 6
    rank_over = risky

    [lqr]
    levels = 0.01:0.99:0.01
    n_boot = 500
    table_levels = 0.5
    tol = 1e-6

    [run]
    seed = 0

    [simulate]
    model =                            ; model JSON; empty uses the built-in truth
"""

from __future__ import annotations

import configparser
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bicop import BivariateCopula, Family, tau_to_param
from .dvine import CRITERIA, DVineRegressionModel
from .margins import MarginalModel, MarginFamily

DEFAULT_RESPONSE = "th80"
DEFAULT_COVARIATES = ("hws", "temp", "refAP", "asd", "trd", "tsd", "lm", "tbs", "bd", "td", "ea")
DEFAULT_THRESHOLDS = (2200.0, 2400.0, 2500.0)
DEFAULT_LQR_LEVELS = tuple(round(0.01 * k, 2) for k in range(1, 100))
MISSING_TOKENS = {"", "na", "nan", "null", "none", "?"}


class ConfigError(ValueError):
    """Invalid configuration or input table (maps to exit code 2)."""


def _split(value) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value if str(v).strip()]
    return [v.strip() for v in str(value).replace(";", ",").split(",") if v.strip()]


def _floats(value, key) -> list[float]:
    if isinstance(value, (int, float)):
        return [float(value)]
    out = []
    for tok in _split(value):
        if ":" in tok:
            # start:stop:step, inclusive of stop
            try:
                a, b, s = (float(p) for p in tok.split(":"))
            except ValueError:
                raise ConfigError(f"{key}: bad range {tok!r}, expected start:stop:step") from None
            k = int(math.floor((b - a) / s + 1e-9))
            out.extend(round(a + i * s, 12) for i in range(k + 1))
            continue
        try:
            out.append(float(tok))
        except ValueError:
            raise ConfigError(f"{key}: {tok!r} is not a number") from None
    return out


def _bool(value, key) -> bool:
    if isinstance(value, bool):
        return value
    s = str(value).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


@dataclass(frozen=True)
class RunConfig:
    response: str = DEFAULT_RESPONSE
    covariates: tuple[str, ...] = DEFAULT_COVARIATES
    columns: dict = field(default_factory=dict)
    discrete: tuple[str, ...] = ()
    discrete_policy: str = "reject"
    margin_default: tuple[str, ...] | None = None
    margins: dict = field(default_factory=dict)
    families: tuple[str, ...] | None = None
    criterion: str = "cll_aic"
    independence_test: bool = True
    max_covariates: int | None = None
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    p_threshold: float = 1e-3
    floor: float = 1e-13
    top: int = 6
    rank_over: str = "risky"
    lqr_levels: tuple[float, ...] = DEFAULT_LQR_LEVELS
    lqr_n_boot: int = 500
    lqr_table_levels: tuple[float, ...] = (0.5,)
    lqr_tol: float = 1e-6
    seed: int = 0
    simulate_model: str | None = None

    def __post_init__(self):
        if not self.thresholds or any(not (c > 0 and math.isfinite(c)) for c in self.thresholds):
            raise ConfigError("thresholds must be positive")
        if not 0 < self.p_threshold < 1:
            raise ConfigError("p_threshold must lie in (0, 1)")
        if not 0 < self.floor < 1:
            raise ConfigError("floor must lie in (0, 1)")
        if self.criterion not in CRITERIA:
            raise ConfigError(f"criterion must be one of {', '.join(CRITERIA)}")
        if self.discrete_policy not in ("reject", "ignore"):
            raise ConfigError("discrete_policy must be 'reject' or 'ignore'")
        if self.rank_over not in ("risky", "all"):
            raise ConfigError("rank_over must be 'risky' or 'all'")
        lv = np.array(self.lqr_levels)
        if lv.size == 0 or np.any(np.diff(lv) <= 0) or lv[0] <= 0 or lv[-1] >= 1:
            raise ConfigError("lqr levels must be strictly increasing inside (0, 1)")
        if len(set(self.covariates)) != len(self.covariates) or self.response in self.covariates:
            raise ConfigError("response and covariate names must be distinct")
        try:
            for f in self.families or ():
                Family.parse(f)
            for f in list(self.margin_default or ()) + [x for v in self.margins.values() for x in v]:
                MarginFamily.parse(f)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        unknown = sorted(set(self.margins) - {self.response, *self.covariates})
        if unknown:
            raise ConfigError(f"margins given for unknown column(s): {', '.join(unknown)}")

    def margin_specs(self, names) -> list:
        """Candidate family lists per column, response first."""
        out = []
        for n in names:
            fams = self.margins.get(n, self.margin_default)
            out.append(None if fams is None else
                       (fams[0] if len(fams) == 1 else list(fams)))
        return out

    def allowed_families(self):
        return None if self.families is None else [Family.parse(f) for f in self.families]


_SCHEMA = {
    "data": {"response", "covariates", "discrete", "discrete_policy"},
    "columns": None,
    "margins": None,
    "copula": {"families", "criterion", "independence_test", "max_covariates"},
    "risk": {"thresholds", "p_threshold", "floor", "top", "rank_over"},
    "lqr": {"levels", "n_boot", "table_levels", "tol"},
    "run": {"seed"},
    "simulate": {"model"},
}


def _from_sections(sec: dict) -> RunConfig:
    unknown = sorted(set(sec) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    for name, keys in _SCHEMA.items():
        if keys is not None and name in sec:
            bad = sorted(set(sec[name]) - keys)
            if bad:
                raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(bad)}")
    g = lambda s, k, default=None: sec.get(s, {}).get(k, default)
    kw = {}

    def present(s, k):
        v = g(s, k)
        return v is not None and not (isinstance(v, str) and v.strip() == "")

    if present("data", "response"):
        kw["response"] = str(g("data", "response")).strip()
    if g("data", "covariates") is not None:
        kw["covariates"] = tuple(_split(g("data", "covariates")))
    if present("data", "discrete"):
        kw["discrete"] = tuple(_split(g("data", "discrete")))
    if present("data", "discrete_policy"):
        kw["discrete_policy"] = str(g("data", "discrete_policy")).strip().lower()
    kw["columns"] = {str(k): str(v).strip() for k, v in sec.get("columns", {}).items()}
    margins = {str(k): tuple(_split(v)) for k, v in sec.get("margins", {}).items()}
    if "default" in margins:
        d = margins.pop("default")
        kw["margin_default"] = None if d in ((), ("all",)) else d
    kw["margins"] = margins
    if present("copula", "families"):
        fams = tuple(_split(g("copula", "families")))
        kw["families"] = None if fams == ("all",) else fams
    if present("copula", "criterion"):
        kw["criterion"] = str(g("copula", "criterion")).strip().lower()
    if present("copula", "independence_test"):
        kw["independence_test"] = _bool(g("copula", "independence_test"), "independence_test")
    try:
        if present("copula", "max_covariates"):
            kw["max_covariates"] = int(g("copula", "max_covariates"))
        if present("risk", "thresholds"):
            kw["thresholds"] = tuple(_floats(g("risk", "thresholds"), "thresholds"))
        for key in ("p_threshold", "floor"):
            if present("risk", key):
                kw[key] = float(g("risk", key))
        if present("risk", "top"):
            kw["top"] = int(g("risk", "top"))
        if present("risk", "rank_over"):
            kw["rank_over"] = str(g("risk", "rank_over")).strip().lower()
        if present("lqr", "levels"):
            kw["lqr_levels"] = tuple(_floats(g("lqr", "levels"), "levels"))
        if present("lqr", "n_boot"):
            kw["lqr_n_boot"] = int(g("lqr", "n_boot"))
        if present("lqr", "table_levels"):
            kw["lqr_table_levels"] = tuple(_floats(g("lqr", "table_levels"), "table_levels"))
        if present("lqr", "tol"):
            kw["lqr_tol"] = float(g("lqr", "tol"))
        if present("run", "seed"):
            kw["seed"] = int(g("run", "seed"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from None
    if present("simulate", "model"):
        kw["simulate_model"] = str(g("simulate", "model")).strip()
    return RunConfig(**kw)


def parse_config_text(text: str, json_format: bool | None = None) -> RunConfig:
    if json_format is None:
        json_format = text.lstrip().startswith("{")
    if json_format:
        try:
            sec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(sec, dict) or not all(isinstance(v, dict) for v in sec.values()):
            raise ConfigError("JSON config must map section names to objects")
        return _from_sections(sec)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str  # keep column-name case
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return _from_sections({s: dict(cp.items(s)) for s in cp.sections()})


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config_text(text, json_format=True if p.suffix.lower() == ".json" else None)


# ---------------------------------------------------------------------------
# data ingestion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlightDataset:
    response: str
    covariates: tuple[str, ...]
    y: np.ndarray
    X: np.ndarray
    notes: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return int(self.y.size)


def _parse_column(name, values, required):
    out = np.empty(len(values))
    missing = []
    for i, v in enumerate(values):
        s = v.strip()
        if s.lower() in MISSING_TOKENS:
            missing.append(i)
            out[i] = np.nan
            continue
        try:
            out[i] = float(s)
        except ValueError:
            if required:
                raise ConfigError(f"column {name!r} has non-numeric value {s!r} in data row {i + 1}") \
                    from None
            return None, missing
    return out, missing


def read_table(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read data {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise ConfigError(f"data file {path} is not UTF-8") from None
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise ConfigError(f"data file {path} is empty")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise ConfigError("data header has duplicate column names")
    body = rows[1:]
    bad = [i + 2 for i, r in enumerate(body) if len(r) != len(header)]
    if bad:
        raise ConfigError(f"ragged rows at line(s) {bad[:5]}: expected {len(header)} fields")
    return header, body


def load_dataset(path, config: RunConfig, covariates=None, need_response: bool = True) -> FlightDataset:
    """Read a CSV flight table and validate it against the configuration.

    ``covariates`` overrides the configured covariate list (used when a
    stored model fixes them).
    """
    header, body = read_table(path)
    covs = tuple(config.covariates if covariates is None else covariates)
    wanted = ([config.response] if need_response else []) + list(covs)
    source = {n: config.columns.get(n, n) for n in wanted}
    missing = [f"{n} (as {source[n]!r})" if source[n] != n else n
               for n in wanted if source[n] not in header]
    if missing:
        extra = sorted(set(header) - set(source.values()))
        raise ConfigError(f"column mismatch: missing {', '.join(missing)}; "
                          f"unused in file: {', '.join(extra) or '-'}")
    cols = {h: [r[j] for r in body] for j, h in enumerate(header)}
    notes = []
    data = {}
    for n in wanted:
        vals, miss = _parse_column(n, cols[source[n]], True)
        if miss:
            raise ConfigError(f"column {n!r} has {len(miss)} missing value(s), first in data row "
                              f"{miss[0] + 1}")
        data[n] = vals
    # discrete factors: declared ones plus any non-numeric column in the file
    used = set(source.values())
    discrete = [h for h in header if h not in used and
                (h in config.discrete or _parse_column(h, cols[h], False)[0] is None)]
    for h in discrete:
        distinct = sorted({v.strip() for v in cols[h]})
        if len(distinct) <= 1:
            notes.append(f"discrete column {h!r} is constant and was excluded")
        elif config.discrete_policy == "reject":
            raise ConfigError(f"discrete column {h!r} takes {len(distinct)} values; discrete "
                              f"factors are not modelled (set discrete_policy = ignore to drop it)")
        else:
            notes.append(f"discrete column {h!r} is not constant and was ignored")
    for h in header:
        if h not in used and h not in discrete:
            notes.append(f"column {h!r} is not in the configuration and was ignored")
    y = data[config.response] if need_response else np.full(len(body), np.nan)
    X = np.column_stack([data[n] for n in covs]) if covs else np.empty((len(body), 0))
    return FlightDataset(config.response, covs, y, X, tuple(notes))


# ---------------------------------------------------------------------------
# built-in synthetic ground truth
# ---------------------------------------------------------------------------


# path of the vine through the covariates (tsd is left out as pure noise)
_TRUTH_ORDER = ("td", "ea", "bd", "lm", "hws", "asd", "tbs", "trd", "temp", "refAP")
# response edges (family, rotation, tau), one per tree
_TRUTH_RESPONSE = (("gumbel", 0, 0.45), ("clayton", 90, -0.35), ("gaussian", 0, 0.25),
                   ("gumbel", 0, 0.2), ("frank", 0, -0.15), ("joe", 0, 0.1), ("t", 0, 0.1),
                   ("gaussian", 0, 0.08), ("frank", 0, 0.08), ("gaussian", 0, -0.06))
# first-tree edges between consecutive covariates on the path
_TRUTH_TREE1 = (("gaussian", 0, -0.2), ("gumbel", 270, -0.3), ("gaussian", 0, 0.3), None,
                ("frank", 0, 0.2), None, ("clayton", 0, 0.3), None, ("gaussian", 0, -0.3))
_TRUTH_MARGINS = {
    "th80": ("gev", (1500.0, 130.0, 0.03)),
    "hws": ("normal", (3.0, 2.5)),
    "temp": ("normal", (287.0, 7.0)),
    "refAP": ("skewnormal", (1022.0, 12.0, -2.0)),
    "asd": ("normal", (1.5, 1.2)),
    "trd": ("gamma", (8.0, 4.0)),
    "tsd": ("gamma", (10.0, 10.0)),
    "lm": ("normal", (62000.0, 3500.0)),
    "tbs": ("gamma", (4.0, 2.0)),
    "bd": ("normal", (24.0, 3.5)),
    "td": ("lognormal", (math.log(480.0), 0.2)),
    "ea": ("mixture", (1.2, 1.6, 0.12, 0.18, 0.45, 0.55)),
}


def _cop(spec) -> BivariateCopula:
    if spec is None:
        return BivariateCopula(Family.INDEPENDENCE, 0, ())
    fam, rot, tau = spec
    fam = Family.parse(fam)
    return BivariateCopula(fam, rot, tau_to_param(fam, rot, tau))


def default_truth(covariates=DEFAULT_COVARIATES, response=DEFAULT_RESPONSE) -> DVineRegressionModel:
    """Ground-truth D-vine over the flight factors used by ``simulate``.

    Only works with the default column names; ``tsd`` is independent of all
    other variables.
    """
    covariates = tuple(covariates)
    if set(covariates) != set(DEFAULT_COVARIATES) or response != DEFAULT_RESPONSE:
        raise ConfigError("the built-in ground truth needs the default column names; "
                          "set [simulate] model to a model JSON instead")
    order = tuple(covariates.index(n) for n in _TRUTH_ORDER)
    m = len(order)
    trees = [[_cop(_TRUTH_RESPONSE[0])] + [_cop(s) for s in _TRUTH_TREE1]]
    for t in range(2, m + 1):
        tree = [_cop(_TRUTH_RESPONSE[t - 1])]
        # weak Gaussian links on the second tree, independence beyond
        tree += [_cop(("gaussian", 0, 0.1) if t == 2 and i % 2 else None) for i in range(1, m + 1 - t)]
        trees.append(tree)
    margins = {k: MarginalModel(*_TRUTH_MARGINS[n]) for k, n in enumerate(covariates)}
    return DVineRegressionModel(order, tuple(tuple(t) for t in trees),
                                MarginalModel(*_TRUTH_MARGINS[response]), margins,
                                names=covariates)
