"""Power-law decay tails and per-game functional forms.

A game's functional form is its observed DAU from release onwards, followed
by a power-law tail ``(t - t_min + 1) ** -gamma`` rescaled to pass through the
last observed value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .timeseries import DauSeries

MIN_SERIES_LENGTH = 8
MIN_TAIL_POINTS = 4


class TailFitError(ValueError):
    """The series cannot support a tail fit; treat the game as flat-tailed."""


@dataclass(frozen=True)
class TailParams:
    gamma: float
    scale: float
    t_min: int
    fit_rmse: float
    # gamma was clamped to 0 (still growing) or no fit was possible (short series)
    flat_reason: str | None = None

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")


def power_law_ols(t: np.ndarray, dau: np.ndarray) -> tuple[float, float, float]:
    """OLS of ``log dau`` on ``log t``; returns ``(slope, intercept, log_rmse)``.

    ``t`` must already carry the +1 offset (all entries >= 1).
    """
    x = np.log(np.asarray(t, dtype=float))
    y = np.log(np.asarray(dau, dtype=float))
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    slope = float(((x - xm) * (y - ym)).sum() / sxx) if sxx > 0 else 0.0
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    return slope, intercept, float(np.sqrt(np.mean(resid**2)))


def select_t_min(series: DauSeries) -> int:
    """Day offset (into ``series``) where the decay regime starts: the peak day,
    pulled back so that at least four points remain."""
    n = len(series)
    if n < MIN_SERIES_LENGTH:
        raise TailFitError(
            f"{series.game_id}: {n} days observed, need {MIN_SERIES_LENGTH} to fit a tail; use a flat tail"
        )
    peak = int(np.argmax(series.values))
    return min(peak, n - MIN_TAIL_POINTS)


def fit_power_law_tail(series: DauSeries, t_min: int) -> TailParams:
    window = series.values[t_min:].astype(float)
    t = np.arange(window.size, dtype=float) + 1.0
    keep = window > 0
    if keep.sum() < MIN_TAIL_POINTS:
        raise TailFitError(
            f"{series.game_id}: only {int(keep.sum())} positive points after t_min={t_min}"
        )
    t, window = t[keep], window[keep]
    slope, intercept, rmse = power_law_ols(t, window)
    if slope > 0:
        # growing at data end: optimistic flat tail at the log-mean level
        logs = np.log(window)
        level = float(logs.mean())
        rmse = float(np.sqrt(np.mean((logs - level) ** 2)))
        return TailParams(0.0, float(np.exp(level)), t_min, rmse, flat_reason="growing")
    return TailParams(-slope, float(np.exp(intercept)), t_min, rmse)


@dataclass(frozen=True)
class GameCurve:
    """Observed DAU since release joined to an extrapolated tail.

    Offsets passed to :func:`evaluate_curve` count days since release.
    """

    series: DauSeries
    tail: TailParams
    anchor_dau: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "series", self.series.since_release())
        if not 0 <= self.tail.t_min < len(self.series):
            raise ValueError("t_min must lie within the observed series")
        object.__setattr__(self, "anchor_dau", float(self.series.values[-1]))

    @property
    def game_id(self) -> str:
        return self.series.game_id

    @property
    def last_observed(self) -> int:
        return len(self.series) - 1

    def profile(self, start: int, length: int) -> np.ndarray:
        """``evaluate_curve`` at offsets ``start .. start + length - 1``."""
        return evaluate_curve(self, np.arange(start, start + length))


def build_curve(series: DauSeries, t_min: int | None = None) -> GameCurve:
    """Fit a tail to ``series`` and return its functional form.

    Series too short to fit get a flat tail at the last observed value.
    """
    trimmed = series.since_release()
    try:
        if t_min is None:
            t_min = select_t_min(trimmed)
        tail = fit_power_law_tail(trimmed, t_min)
    except TailFitError:
        last = max(float(trimmed.values[-1]), 1.0)
        tail = TailParams(0.0, last, len(trimmed) - 1, 0.0, flat_reason="short")
    return GameCurve(trimmed, tail)


def evaluate_curve(curve: GameCurve, t):
    """DAU at ``t`` days after release; exact inside the observed window.

    Accepts a scalar or an integer array of offsets.
    """
    t_arr = np.asarray(t)
    if (t_arr < 0).any():
        raise ValueError("t must be >= 0")
    observed = curve.series.values
    end = curve.last_observed
    t_min = curve.tail.t_min
    with np.errstate(divide="ignore"):
        ratio = (end - t_min + 1.0) / (np.maximum(t_arr, end) - t_min + 1.0)
    tail = curve.anchor_dau * ratio**curve.tail.gamma
    inside = t_arr <= end
    if t_arr.ndim == 0:
        if inside:
            return float(observed[int(t_arr)])
        return float(tail)
    out = tail.astype(float)
    idx = t_arr[inside].astype(np.int64)
    out[inside] = observed[idx]
    return out
