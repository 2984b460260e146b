"""Monte Carlo DAU forecasting and DCF valuation for social-game publishers."""

from __future__ import annotations

__version__ = "0.1.0"

from .decay import GameCurve, TailParams, build_curve, evaluate_curve, fit_power_law_tail, select_t_min
from .innovation import DiagnosticsReport, diagnose, estimate_rate
from .revenue import LogisticParams, fit_logistic, project_rev_per_dau, scenario_fits, trailing_year_rev_per_dau
from .scenarios import ScenarioSet, SimConfig, quantile_band, simulate_all
from .timeseries import DauSeries, GameCatalog, QuarterlyFinancials, ingest_dau_csv, ingest_financials_csv, top_n_by_peak
from .valuation import ValuationConfig, ValuationDistribution, profit_margin_table, scenario_npv, value_company

__all__ = [
    "__version__",
    "DauSeries",
    "DiagnosticsReport",
    "GameCatalog",
    "GameCurve",
    "LogisticParams",
    "QuarterlyFinancials",
    "ScenarioSet",
    "SimConfig",
    "TailParams",
    "ValuationConfig",
    "ValuationDistribution",
    "build_curve",
    "diagnose",
    "estimate_rate",
    "evaluate_curve",
    "fit_logistic",
    "fit_power_law_tail",
    "ingest_dau_csv",
    "ingest_financials_csv",
    "profit_margin_table",
    "project_rev_per_dau",
    "quantile_band",
    "scenario_fits",
    "scenario_npv",
    "select_t_min",
    "simulate_all",
    "top_n_by_peak",
    "trailing_year_rev_per_dau",
    "value_company",
]
