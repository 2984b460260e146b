"""Poisson model of new-game releases and its three diagnostics.

The diagnostics check the properties of a homogeneous Poisson process:
constant rate (counting process), independent gaps (autocorrelation) and
exponentially distributed gaps (Q-Q against the fitted exponential).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Q-Q deviation is summarised over plotting positions up to this level; the
# extreme upper order statistics of an exponential sample scatter by about
# one mean regardless of sample size.
QQ_SUMMARY_MAX_P = 0.9


class DegenerateSampleError(ValueError):
    pass


@dataclass(frozen=True)
class PoissonFit:
    lam: float
    n_events: int
    span_days: float
    first_event: float
    merged_events: int = 0


@dataclass(frozen=True)
class AutocorrResult:
    lags: np.ndarray
    values: np.ndarray
    ci_halfwidth: float
    n: int

    @property
    def independent(self) -> bool:
        """True when every lag >= 1 lies inside the +/- 2/sqrt(N) band."""
        tail = self.values[1:]
        tail = tail[np.isfinite(tail)]
        return bool((np.abs(tail) <= self.ci_halfwidth).all())


@dataclass(frozen=True)
class QQResult:
    theoretical: np.ndarray
    empirical: np.ndarray
    lam_hat: float
    ecdf_x: np.ndarray
    ecdf_y: np.ndarray
    fitted_cdf: np.ndarray

    @property
    def mean(self) -> float:
        return 1.0 / self.lam_hat

    @property
    def max_deviation(self) -> float:
        """Largest |empirical - theoretical| quantile gap over p <= QQ_SUMMARY_MAX_P, in units of the mean."""
        n = self.empirical.size
        p = (np.arange(1, n + 1) - 0.5) / n
        core = p <= QQ_SUMMARY_MAX_P
        gap = np.abs(self.empirical[core] - self.theoretical[core])
        return float(gap.max() * self.lam_hat) if gap.size else 0.0

    @property
    def max_deviation_full(self) -> float:
        return float(np.abs(self.empirical - self.theoretical).max() * self.lam_hat)


@dataclass(frozen=True)
class DiagnosticsReport:
    fit: PoissonFit
    counting_pairs: list[tuple[float, int, float]]
    autocorr: AutocorrResult
    qq: QQResult

    @property
    def verdicts(self) -> dict[str, bool]:
        # the Q-Q check is advisory and carries no hard verdict
        return {
            "constant_rate": counting_consistent(self.counting_pairs),
            "independence": self.autocorr.independent,
        }

    def to_dict(self) -> dict:
        return {
            "lambda_per_day": self.fit.lam,
            "n_events": self.fit.n_events,
            "span_days": self.fit.span_days,
            "merged_same_day_events": self.fit.merged_events,
            "counting_pairs": [list(p) for p in self.counting_pairs],
            "autocorr": [[int(k), _num(v)] for k, v in zip(self.autocorr.lags, self.autocorr.values)],
            "ci_halfwidth": self.autocorr.ci_halfwidth,
            "qq_pairs": [[float(a), float(b)] for a, b in zip(self.qq.theoretical, self.qq.empirical)],
            "qq_max_deviation_rel": self.qq.max_deviation,
            "qq_max_deviation_rel_full": self.qq.max_deviation_full,
            "qq_summary_max_p": QQ_SUMMARY_MAX_P,
            "verdicts": {k: ("cannot reject" if v else "reject") for k, v in self.verdicts.items()},
        }


def _num(v: float) -> float | None:
    return float(v) if math.isfinite(v) else None


def _merge_same_day(events: Sequence[float]) -> tuple[np.ndarray, int]:
    arr = np.sort(np.asarray(events, dtype=float))
    uniq = np.unique(arr)
    merged = arr.size - uniq.size
    if merged:
        warnings.warn(f"merged {merged} same-day release(s) into single events", stacklevel=3)
    return uniq, merged


def estimate_rate(events: Sequence[float]) -> PoissonFit:
    """Inter-event MLE of the Poisson intensity, ``(n - 1) / (t_n - t_1)``."""
    if len(events) < 2:
        raise ValueError("need at least 2 events to estimate a rate")
    uniq, merged = _merge_same_day(events)
    if uniq.size < 2:
        raise ValueError("need at least 2 distinct event days to estimate a rate")
    span = float(uniq[-1] - uniq[0])
    return PoissonFit((uniq.size - 1) / span, int(uniq.size), span, float(uniq[0]), merged)


def inter_event_sample(events: Sequence[float]) -> np.ndarray:
    """Positive gaps between consecutive distinct event days."""
    uniq, _ = _merge_same_day(events)
    return np.diff(uniq)


def counting_process(events: Sequence[float], fit: PoissonFit) -> list[tuple[float, int, float]]:
    """``(day, cumulative events, lambda * (day - t_1))`` at each distinct event day."""
    uniq = np.unique(np.asarray(events, dtype=float))
    return [(float(t), i + 1, fit.lam * float(t - fit.first_event)) for i, t in enumerate(uniq)]


def counting_consistent(pairs: Sequence[tuple[float, int, float]], alpha: float = 0.05) -> bool:
    """Rate-constancy check on the counting process.

    Given the first and last event, the interior event times of a homogeneous
    Poisson process are i.i.d. uniform in between, so the largest gap between
    the counting staircase and the straight line is a Kolmogorov-Smirnov
    statistic. Stephens' finite-sample form of the critical value is used.
    """
    if len(pairs) < 3:
        return True
    t1, tn = pairs[0][0], pairs[-1][0]
    u = np.array([(p[0] - t1) / (tn - t1) for p in pairs[1:-1]])
    m = u.size
    i = np.arange(1, m + 1)
    d = max(float((i / m - u).max()), float((u - (i - 1) / m).max()))
    c = {0.10: 1.224, 0.05: 1.358, 0.01: 1.628}[alpha]
    return d <= c / (math.sqrt(m) + 0.12 + 0.11 / math.sqrt(m))


def autocorrelation(deltas: Sequence[float], max_lag: int) -> AutocorrResult:
    """Overlapping-pairs Pearson correlation of the gaps at lags ``0..max_lag``."""
    x = np.asarray(deltas, dtype=float)
    n = x.size
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if n < max_lag + 2:
        raise ValueError(f"need at least {max_lag + 2} gaps for max_lag={max_lag}, got {n}")
    if np.ptp(x) == 0:
        raise DegenerateSampleError("inter-event sample has zero variance")
    values = np.empty(max_lag + 1)
    values[0] = 1.0
    for lag in range(1, max_lag + 1):
        a, b = x[:-lag], x[lag:]
        da, db = a - a.mean(), b - b.mean()
        denom = math.sqrt(float((da * da).sum()) * float((db * db).sum()))
        # a constant sub-window leaves the correlation undefined at this lag
        values[lag] = float((da * db).sum()) / denom if denom > 0 else math.nan
    return AutocorrResult(np.arange(max_lag + 1), values, 2.0 / math.sqrt(n), n)


def qq_exponential(deltas: Sequence[float]) -> QQResult:
    """Order statistics of the gaps against quantiles of the MLE exponential.

    Plotting positions are Hazen's ``(i - 0.5) / N``.
    """
    x = np.sort(np.asarray(deltas, dtype=float))
    n = x.size
    if n < 4:
        raise ValueError("need at least 4 gaps for a Q-Q comparison")
    lam_hat = 1.0 / x.mean()
    p = (np.arange(1, n + 1) - 0.5) / n
    theoretical = -np.log1p(-p) / lam_hat
    ecdf_y = np.arange(1, n + 1) / n
    fitted = -np.expm1(-lam_hat * x)
    return QQResult(theoretical, x, lam_hat, x, ecdf_y, fitted)


def default_max_lag(n_gaps: int) -> int:
    """Lags up to a quarter of the sample, at most 20."""
    return max(1, min(20, n_gaps // 4))


def diagnose(events: Sequence[float], max_lag: int | None = None) -> DiagnosticsReport:
    """Rate estimate plus all three diagnostics for one release log.

    ``max_lag`` defaults to :func:`default_max_lag` and is reduced when the
    sample is too short to support it.
    """
    fit = estimate_rate(events)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        deltas = inter_event_sample(events)
    if max_lag is None:
        max_lag = default_max_lag(deltas.size)
    lag = max(1, min(max_lag, deltas.size - 2))
    return DiagnosticsReport(
        fit=fit,
        counting_pairs=counting_process(events, fit),
        autocorr=autocorrelation(deltas, lag),
        qq=qq_exponential(deltas),
    )
