"""Discounted-cash-flow valuation over scenario DAU trajectories."""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .revenue import LogisticParams, project_rev_per_dau
from .scenarios import ScenarioSet, nearest_rank
from .timeseries import QuarterlyFinancials

DAYS_PER_YEAR = 365.25
DAYS_PER_QUARTER = DAYS_PER_YEAR / 4


@dataclass(frozen=True)
class ValuationConfig:
    profit_margin: float = 0.15
    discount_rate_annual: float = 0.05
    shares_outstanding: int = 699_000_000
    horizon_years: float = 20.0

    def __post_init__(self) -> None:
        if not 0 < self.profit_margin < 1:
            raise ValueError("profit_margin must be in (0, 1)")
        if self.discount_rate_annual < 0:
            raise ValueError("discount_rate_annual must be >= 0")
        if self.shares_outstanding <= 0:
            raise ValueError("shares_outstanding must be > 0")
        if not self.horizon_years > 0:
            raise ValueError("horizon_years must be > 0")

    @property
    def horizon_days(self) -> int:
        return int(round(self.horizon_years * DAYS_PER_YEAR))

    @property
    def quarterly_rate(self) -> float:
        return (1.0 + self.discount_rate_annual) ** 0.25 - 1.0


@dataclass(frozen=True)
class ValuationDistribution:
    label: str
    npv: np.ndarray = field(repr=False)
    mean: float
    median: float
    ci95: tuple[float, float]
    shares_outstanding: int

    @property
    def per_share_mean(self) -> float:
        return self.mean / self.shares_outstanding

    @property
    def per_share_median(self) -> float:
        return self.median / self.shares_outstanding

    @property
    def per_share_ci95(self) -> tuple[float, float]:
        return (self.ci95[0] / self.shares_outstanding, self.ci95[1] / self.shares_outstanding)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "median": self.median,
            "ci95": list(self.ci95),
            "per_share_mean": self.per_share_mean,
            "per_share_median": self.per_share_median,
            "per_share_ci95": list(self.per_share_ci95),
            "n_scenarios": int(self.npv.size),
        }


def quarter_index(n_days: int) -> np.ndarray:
    """0-based calendar quarter of each forecast day (365.25 / 4 days per quarter)."""
    return np.floor(np.arange(n_days) / DAYS_PER_QUARTER + 1e-12).astype(np.int64)


def discount_quarterly(profits: Sequence[float], quarterly_rate: float) -> float:
    """Sum of ``profits[q - 1] / (1 + rate) ** q`` for ``q = 1 .. Q``."""
    p = np.asarray(profits, dtype=float)
    factors = (1.0 + quarterly_rate) ** -np.arange(1, p.size + 1, dtype=float)
    return math.fsum(p * factors)


def daily_rev_per_dau(rev_params: LogisticParams, n_days: int, start_years: float = 0.0) -> np.ndarray:
    """Revenue per DAU per day for forecast days ``0 .. n_days - 1``.

    ``start_years`` is the forecast origin measured on the fit's time axis.
    """
    t = start_years + np.arange(n_days) / DAYS_PER_YEAR
    return np.asarray(project_rev_per_dau(rev_params, t)) / DAYS_PER_YEAR


def quarterly_profits(trajectory: Sequence[float], daily_rev: np.ndarray, margin: float, horizon_days: int) -> np.ndarray:
    dau = np.asarray(trajectory, dtype=float)
    if dau.size < horizon_days:
        raise ValueError(f"trajectory covers {dau.size} days, horizon needs {horizon_days}")
    daily = dau[:horizon_days] * daily_rev[:horizon_days] * margin
    q = quarter_index(horizon_days)
    return np.bincount(q, weights=daily)


def scenario_npv(
    trajectory: Sequence[float],
    rev_params: LogisticParams,
    cfg: ValuationConfig,
    start_years: float = 0.0,
) -> float:
    """Net present value of one DAU trajectory.

    Daily profit is revenue-per-DAU / 365.25 x DAU x margin; profits are
    summed into quarters and each quarter is discounted at the equivalent
    quarterly rate as an end-of-quarter cash flow. No terminal value.
    """
    daily_rev = daily_rev_per_dau(rev_params, cfg.horizon_days, start_years)
    profits = quarterly_profits(trajectory, daily_rev, cfg.profit_margin, cfg.horizon_days)
    return discount_quarterly(profits, cfg.quarterly_rate)


def summarize(label: str, npv: Sequence[float], shares_outstanding: int) -> ValuationDistribution:
    values = np.asarray(npv, dtype=float)
    if values.size == 0:
        raise ValueError("no scenario values to summarize")
    ordered = np.sort(values)
    mean = math.fsum(values) / values.size
    lo = float(nearest_rank(ordered, 0.025))
    hi = float(nearest_rank(ordered, 0.975))
    return ValuationDistribution(label, values, mean, float(np.median(values)), (lo, hi), shares_outstanding)


def value_company(
    scenarios: ScenarioSet,
    rev_params: Mapping[str, LogisticParams],
    cfg: ValuationConfig,
    start_years: float = 0.0,
    workers: int = 1,
) -> dict[str, ValuationDistribution]:
    """Valuation distribution per scenario label over every simulated trajectory."""
    if scenarios.n_scenarios == 0:
        raise ValueError("empty scenario set")
    out = {}
    for label, params in rev_params.items():
        daily_rev = daily_rev_per_dau(params, cfg.horizon_days, start_years)
        rate = cfg.quarterly_rate

        def npv(i: int, daily_rev=daily_rev) -> float:
            profits = quarterly_profits(scenarios.trajectories[i], daily_rev, cfg.profit_margin, cfg.horizon_days)
            return discount_quarterly(profits, rate)

        idx = range(scenarios.n_scenarios)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                values = list(pool.map(npv, idx))
        else:
            values = [npv(i) for i in idx]
        out[label] = summarize(label, values, cfg.shares_outstanding)
    return out


def histogram(npv: Sequence[float], bins: int = 40) -> list[tuple[float, float, int]]:
    counts, edges = np.histogram(np.asarray(npv, dtype=float), bins=bins)
    return [(float(edges[i]), float(edges[i + 1]), int(c)) for i, c in enumerate(counts)]


@dataclass(frozen=True)
class MarginRow:
    year: int
    revenue: float
    net_income: float
    margin: float

    @property
    def margin_percent(self) -> int:
        # round half away from zero
        return int(math.copysign(math.floor(abs(self.margin) * 100 + 0.5), self.margin))


def profit_margin_table(financials: Sequence[QuarterlyFinancials]) -> list[MarginRow]:
    """Revenue, net income and margin per calendar year of the period ends."""
    revenue: dict[int, list[float]] = defaultdict(list)
    income: dict[int, list[float]] = defaultdict(list)
    for q in financials:
        revenue[q.quarter_end.year].append(q.revenue)
        income[q.quarter_end.year].append(q.net_income)
    rows = []
    for year in sorted(revenue):
        rev = math.fsum(revenue[year])
        if rev == 0:
            raise ZeroDivisionError(f"zero revenue in {year}, margin undefined")
        ni = math.fsum(income[year])
        rows.append(MarginRow(year, rev, ni, ni / rev))
    return rows
