"""Revenue per DAU: trailing-year ratios, logistic and exponential fits.

Time inside the fits is in fractional years (365.25-day) from an origin date,
normally the first trailing-year point.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .timeseries import QuarterlyFinancials

DAYS_PER_YEAR = 365.25
SCENARIO_CEILINGS = {"base": 30.0, "high": 35.0, "extreme": 43.0}
SCENARIO_LABELS = tuple(SCENARIO_CEILINGS)

G_GRID = np.geomspace(0.05, 20.0, 25)
MAX_ITER = 200
STEP_TOL = 1e-9
COST_TOL = 1e-10
N_STARTS = 5


class FitError(RuntimeError):
    def __init__(self, message: str, best_rmse: float = math.nan):
        super().__init__(f"{message} (best rmse {best_rmse:.6g})")
        self.best_rmse = best_rmse


@dataclass(frozen=True)
class RevenuePerDauPoint:
    quarter_end: dt.date
    yearly_revenue: float
    avg_dau: float
    r: float


@dataclass(frozen=True)
class LogisticParams:
    K: float
    g: float
    t0: float
    label: str | None = None
    origin: dt.date | None = None
    rmse: float = math.nan
    # set when the data sit on the ceiling and g is unidentifiable
    saturated: bool = False

    def __post_init__(self) -> None:
        if not (self.K > 0 and self.g > 0):
            raise ValueError("K and g must be positive")

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "g": self.g,
            "t0": self.t0,
            "rmse": self.rmse,
            "origin": self.origin.isoformat() if self.origin else None,
            "saturated": self.saturated,
        }

    @classmethod
    def from_dict(cls, data: Mapping, label: str | None = None) -> "LogisticParams":
        origin = data.get("origin")
        return cls(
            K=float(data["K"]),
            g=float(data["g"]),
            t0=float(data["t0"]),
            label=label,
            origin=dt.date.fromisoformat(origin) if origin else None,
            rmse=float(data.get("rmse", math.nan)),
            saturated=bool(data.get("saturated", False)),
        )


@dataclass(frozen=True)
class ComparisonRecord:
    prefix_length: int
    rmse_logistic: float
    rmse_exponential: float
    error: str | None = None


def years_between(origin: dt.date, date: dt.date) -> float:
    return (date - origin).days / DAYS_PER_YEAR


def _year_earlier(date: dt.date) -> dt.date:
    try:
        return date.replace(year=date.year - 1)
    except ValueError:  # 29 February
        return date.replace(year=date.year - 1, day=28)


def trailing_year_rev_per_dau(
    financials: Sequence[QuarterlyFinancials],
    dau_start: dt.date,
    dau_daily: Sequence[float],
    strict: bool = True,
) -> list[RevenuePerDauPoint]:
    """Trailing-year revenue over the 365-day mean DAU, at each period end.

    The yearly revenue at a period end is the sum of all periods ending within
    the preceding year, so it is the usual four-quarter running sum for
    quarterly data. A point needs four such periods. With ``strict`` a point
    whose DAU window is not fully observed raises; otherwise it is skipped.
    """
    if len(financials) < 4:
        raise ValueError("need at least 4 quarters")
    dau = np.asarray(dau_daily, dtype=float)
    ends = [q.quarter_end for q in financials]
    out: list[RevenuePerDauPoint] = []
    for q in financials:
        lo = _year_earlier(q.quarter_end)
        window = [f for f in financials if lo < f.quarter_end <= q.quarter_end]
        if len(window) < 4 or ends[0] > lo + dt.timedelta(days=93):
            continue
        first = (q.quarter_end - dau_start).days - 364
        last = first + 365
        if first < 0 or last > dau.size:
            if strict:
                raise ValueError(f"DAU series does not cover the year ending {q.quarter_end.isoformat()}")
            continue
        avg = float(dau[first:last].mean())
        if not avg > 0:
            if strict:
                raise ValueError(f"zero average DAU in the year ending {q.quarter_end.isoformat()}")
            continue
        revenue = math.fsum(f.revenue for f in window)
        out.append(RevenuePerDauPoint(q.quarter_end, revenue, avg, revenue / avg))
    return out


def logistic(t, K: float, g: float, t0: float):
    with np.errstate(over="ignore"):
        return K / (1.0 + np.exp(-g * (np.asarray(t, dtype=float) - t0)))


def project_rev_per_dau(params: LogisticParams, t):
    """Yearly revenue per DAU at ``t`` years after ``params.origin`` (or a date)."""
    if isinstance(t, dt.date):
        if params.origin is None:
            raise ValueError("params carry no origin date")
        t = years_between(params.origin, t)
    value = logistic(t, params.K, params.g, params.t0)
    return float(value) if np.ndim(value) == 0 else value


def _rmse(resid: np.ndarray) -> float:
    return float(np.sqrt(np.mean(resid**2)))


# The refinement works in (a, g, b) with a = log K and b = g t0 - log K, so
# that r = 1 / (exp(-a) + exp(b - g t)). In the early regime r ~ exp(g t - b)
# pins (g, b) while a stays weakly determined; in (K, g, t0) the same valley
# is a curved ridge that damped Gauss-Newton crawls along.


def _to_internal(K: float, g: float, t0: float) -> tuple[float, float, float]:
    a = math.log(K)
    return a, g, g * t0 - a


def _from_internal(a: float, g: float, b: float) -> tuple[float, float, float]:
    return math.exp(a), g, (b + a) / g


def _model(t: np.ndarray, a: float, g: float, b: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Model values plus the two weights of its log-sum-exp denominator."""
    u = b - g * t
    log_d = np.logaddexp(-a, u)
    return np.exp(-log_d), np.exp(-a - log_d), np.exp(u - log_d)


def _refine(t: np.ndarray, r: np.ndarray, theta: np.ndarray, k_fixed: float | None) -> tuple[np.ndarray, float, bool]:
    """Damped Gauss-Newton (Levenberg-Marquardt scaling) from ``theta``.

    ``theta`` is ``(a, g, b)`` or ``(g, b)`` when K is fixed.
    """
    free_k = k_fixed is None
    a_fixed = None if free_k else math.log(k_fixed)

    def unpack(th):
        return (th[0], th[1], th[2]) if free_k else (a_fixed, th[0], th[1])

    def sse(th):
        return float(((_model(t, *unpack(th))[0] - r) ** 2).sum())

    cost = sse(theta)
    # residuals at float round-off of the data count as an exact fit
    floor = (1e-13 * float(np.abs(r).max())) ** 2 * r.size
    mu = 1e-3
    for _ in range(MAX_ITER):
        a, g, b = unpack(theta)
        m, w_a, w_u = _model(t, a, g, b)
        if free_k and float(w_a.max()) < 1e-12:
            # ceiling far above every data point: the exponential limit, K unidentifiable
            return theta, cost, True
        resid = r - m
        cols = [m * w_u * t, -m * w_u]
        if free_k:
            cols.insert(0, m * w_a)
        J = np.column_stack(cols)
        A = J.T @ J
        grad = J.T @ resid
        diag = np.diag(np.maximum(np.diag(A), 1e-12))
        while True:
            try:
                step = np.linalg.solve(A + mu * diag, grad)
            except np.linalg.LinAlgError:
                step = np.zeros_like(theta)
            cand = theta + step
            g_new = cand[1] if free_k else cand[0]
            new_cost = sse(cand) if g_new > 0 else math.inf
            if new_cost <= cost:
                break
            mu *= 10.0
            if mu > 1e12:
                # no descent direction left: stationary point
                return theta, cost, True
        rel = float(np.linalg.norm(step) / (np.linalg.norm(theta) + 1e-300))
        drop = cost - new_cost
        theta, cost = cand, new_cost
        mu = max(mu / 10.0, 1e-12)
        if rel < STEP_TOL or drop <= COST_TOL * cost or cost <= floor:
            return theta, cost, True
    return theta, cost, False


def fit_logistic(
    t: Sequence[float],
    r: Sequence[float],
    K_fixed: float | None = None,
    label: str | None = None,
    origin: dt.date | None = None,
) -> LogisticParams:
    """Least-squares fit of ``K / (1 + exp(-g (t - t0)))``.

    A coarse grid over ``(g, t0)`` (with K profiled out in closed form when
    free) seeds several damped Gauss-Newton refinements; the best converged
    one wins.
    """
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    if t.size < 4 or t.size != r.size:
        raise ValueError("need at least 4 (t, r) points")
    if not (r > 0).all():
        raise ValueError("revenue per DAU must be positive")

    if K_fixed is not None:
        if not K_fixed > 0:
            raise ValueError("K_fixed must be positive")
        if np.allclose(r, K_fixed, rtol=1e-9, atol=0.0):
            return LogisticParams(K_fixed, float(G_GRID[0]), float(t[0]), label, origin, 0.0, saturated=True)

    span = max(float(t.max() - t.min()), 1.0)
    t0_grid = np.linspace(t.min() - 2 * span, t.max() + 2 * span, 41)
    starts = []
    for g in G_GRID:
        for t0 in t0_grid:
            s = logistic(t, 1.0, g, t0)
            if K_fixed is None:
                ss = float(s @ s)
                if ss == 0:
                    continue
                K = float(s @ r) / ss
                if not K > 0:
                    continue
                starts.append((float(((K * s - r) ** 2).sum()), (K, g, t0)))
            else:
                starts.append((float(((K_fixed * s - r) ** 2).sum()), (g, t0)))
    starts.sort(key=lambda item: item[0])

    best = None
    best_any = math.inf
    for _, theta0 in starts[:N_STARTS]:
        internal = _to_internal(*theta0) if K_fixed is None else _to_internal(K_fixed, *theta0)
        if K_fixed is not None:
            internal = internal[1:]
        theta, cost, converged = _refine(t, r, np.array(internal, dtype=float), K_fixed)
        best_any = min(best_any, cost)
        if converged and (best is None or cost < best[1]):
            best = (theta, cost)
    if best is None:
        raise FitError("logistic fit did not converge from any start", math.sqrt(best_any / t.size))
    theta, cost = best
    if K_fixed is None:
        K, g, t0 = _from_internal(*theta)
    else:
        _, g, t0 = _from_internal(math.log(K_fixed), *theta)
        K = K_fixed
    return LogisticParams(float(K), float(g), float(t0), label, origin, math.sqrt(cost / t.size))


def fit_exponential(t: Sequence[float], r: Sequence[float]) -> tuple[float, float, float]:
    """``r = a exp(b t)`` by OLS on ``log r``; returns ``(a, b, rmse)`` with rmse in linear space."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    if t.size < 2:
        raise ValueError("need at least 2 points")
    b, log_a = np.polyfit(t, np.log(r), 1)
    a = math.exp(log_a)
    return a, float(b), _rmse(a * np.exp(b * t) - r)


def rolling_model_comparison(t: Sequence[float], r: Sequence[float], min_points: int = 4) -> list[ComparisonRecord]:
    """Exponential vs free-K logistic RMSE on growing prefixes of the data."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    if t.size < min_points + 1:
        raise ValueError(f"need at least {min_points + 1} points")
    out = []
    for n in range(min_points, t.size + 1):
        tt, rr = t[:n], r[:n]
        err = None
        try:
            rmse_exp = fit_exponential(tt, rr)[2]
        except (ValueError, np.linalg.LinAlgError) as exc:
            rmse_exp, err = math.nan, f"exponential: {exc}"
        try:
            rmse_log = fit_logistic(tt, rr).rmse
        except (FitError, ValueError) as exc:
            rmse_log, err = math.nan, f"logistic: {exc}"
        out.append(ComparisonRecord(n, rmse_log, rmse_exp, err))
    return out


def scenario_fits(
    t: Sequence[float],
    r: Sequence[float],
    ceilings: Mapping[str, float] = SCENARIO_CEILINGS,
    origin: dt.date | None = None,
) -> dict[str, LogisticParams]:
    """One fixed-ceiling logistic fit per scenario label."""
    ks = list(ceilings.values())
    if any(a >= b for a, b in zip(ks, ks[1:])):
        raise ValueError("scenario ceilings must increase from base to extreme")
    return {label: fit_logistic(t, r, K_fixed=k, label=label, origin=origin) for label, k in ceilings.items()}
