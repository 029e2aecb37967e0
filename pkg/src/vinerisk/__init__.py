"""D-vine copula quantile regression and conditional exceedance probabilities."""

from .bicop import BivariateCopula, Family, fit_bicop
from .dvine import (
    DVineRegressionModel,
    conditional_cdf,
    conditional_quantile,
    conditional_survival,
    fit_dvine_regression,
    simulate_dvine,
)
from .lqr import QuantileGrid, fit_lqr, invert_lqr_bisection, predict_quantile_lqr
from .margins import MarginalModel, MarginFamily, select_margin
from .risk import RiskReport, critical_event_probability, identify_risky, rank_risk_factors

__version__ = "0.1.0"

__all__ = [
    "BivariateCopula",
    "Family",
    "fit_bicop",
    "MarginalModel",
    "MarginFamily",
    "select_margin",
    "DVineRegressionModel",
    "fit_dvine_regression",
    "conditional_cdf",
    "conditional_quantile",
    "conditional_survival",
    "simulate_dvine",
    "critical_event_probability",
    "identify_risky",
    "rank_risk_factors",
    "RiskReport",
    "fit_lqr",
    "predict_quantile_lqr",
    "QuantileGrid",
    "invert_lqr_bisection",
]
