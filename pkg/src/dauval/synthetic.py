"""Synthetic game catalog and financials used for demos and end-to-end tests.

The catalog mimics a mature social-game publisher: about thirty titles that
ramp up to a peak and then decay slowly, adding up to a total DAU that hovers
in the 43-70 million range during the mature phase. Quarterly revenue follows
a saturating revenue-per-DAU curve with a 30 USD ceiling.
"""

from __future__ import annotations

import datetime as dt
from importlib import resources
from pathlib import Path

import numpy as np

from .timeseries import DauSeries, GameCatalog, QuarterlyFinancials, write_dau_csv, write_financials_csv

EPOCH = dt.date(2009, 1, 1)
END = dt.date(2011, 12, 31)
N_GAMES = 40
N_PRE_ERA = 4
DEFAULT_SEED = 0
TARGET_LEVEL = 54e6
MIN_PEAK = 1.5e6
PEAK_CAP = 1.3
DECAY_TIMESCALE = (60.0, 200.0)
DECAY_EXPONENT = (1.0, 1.6)

REV_CEILING = 30.0
REV_GROWTH = 1.5
REV_MIDPOINT = dt.date(2010, 10, 15)
# yearly net margin used to derive net income from revenue
NET_MARGINS = {2009: -0.43, 2010: 0.15, 2011: -0.38}


def _shape(days: np.ndarray, release: int, ramp: float, tau0: float, gamma: float) -> np.ndarray:
    age = days - release
    rise = np.clip(age / ramp, 0.0, 1.0) ** 1.5
    decay = (1.0 + np.clip(age - ramp, 0.0, None) / tau0) ** -gamma
    return np.where(age >= 0, rise * decay, 0.0)


def _target_level(day: np.ndarray | int) -> np.ndarray:
    """Total DAU the publisher steers towards: growth through 2009, then flat."""
    frac = np.clip((np.asarray(day, dtype=float) + 60.0) / 425.0, 0.0, 1.0)
    return 28e6 + (TARGET_LEVEL - 28e6) * frac


def generate_catalog(seed: int = DEFAULT_SEED) -> GameCatalog:
    """Titles released at random dates, each sized to close the gap between
    the running total and a target level, then decaying as a power law."""
    rng = np.random.default_rng(seed)
    n_days = (END - EPOCH).days + 1
    lead = 500
    days = np.arange(-lead, n_days)
    pre = np.sort(rng.uniform(-lead + 50, -30, N_PRE_ERA))
    fresh = np.sort(rng.uniform(0, n_days - 20, N_GAMES - N_PRE_ERA))
    releases = np.concatenate([pre, fresh]).round().astype(int)

    ramps = rng.uniform(20, 60, releases.size)
    peak_days = releases + ramps
    total = np.zeros(days.size)
    series = []
    for i, release in enumerate(releases):
        shape = _shape(days, int(release), ramps[i], rng.uniform(*DECAY_TIMESCALE), rng.uniform(*DECAY_EXPONENT))
        if i < N_PRE_ERA:
            peak = rng.uniform(10e6, 20e6)
        else:
            # size to hold the total until the next title peaks, capped near the gap at this peak
            nxt = peak_days[i + 1] if i + 1 < releases.size else peak_days[i] + 30.0
            own = min(int(peak_days[i]) + lead, days.size - 1)
            mid = min(int(0.5 * (peak_days[i] + nxt)) + lead, days.size - 1)
            gap_own = float(_target_level(days[own]) - total[own])
            gap_mid = float(_target_level(days[mid]) - total[mid]) / max(shape[mid], 0.1)
            peak = max(min(gap_mid, PEAK_CAP * gap_own), MIN_PEAK) * float(np.exp(rng.normal(0.0, 0.15)))
        curve = peak * shape
        total += curve
        noisy = curve * np.exp(rng.normal(0.0, 0.03, days.size))
        first = max(int(release), 0)
        values = np.rint(noisy[first + lead :]).astype(np.int64)
        series.append(DauSeries(f"game{i + 1:02d}", first, values))
    return GameCatalog(EPOCH, tuple(series))


def _quarter_ends(first_year: int, last_year: int) -> list[dt.date]:
    return [
        dt.date(y, m, d)
        for y in range(first_year, last_year + 1)
        for m, d in ((3, 31), (6, 30), (9, 30), (12, 31))
    ]


def generate_financials(catalog: GameCatalog) -> list[QuarterlyFinancials]:
    start, total = catalog.aggregate()
    out = []
    prev = catalog.epoch - dt.timedelta(days=1)
    for qe in _quarter_ends(EPOCH.year, END.year):
        lo, hi = (prev - catalog.epoch).days + 1 - start, (qe - catalog.epoch).days + 1 - start
        mid = prev + (qe - prev) / 2
        t = (mid - REV_MIDPOINT).days / 365.25
        r = REV_CEILING / (1.0 + np.exp(-REV_GROWTH * t))
        days_in_q = hi - lo
        revenue = round(float(total[lo:hi].mean()) * r * days_in_q / 365.25, -3)
        out.append(QuarterlyFinancials(qe, revenue, round(revenue * NET_MARGINS[qe.year], -3)))
        prev = qe
    return out


def write_dataset(directory: str | Path, seed: int = DEFAULT_SEED) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    catalog = generate_catalog(seed)
    dau_path = directory / "synthetic_dau.csv"
    fin_path = directory / "synthetic_financials.csv"
    write_dau_csv(dau_path, catalog)
    write_financials_csv(fin_path, generate_financials(catalog))
    return dau_path, fin_path


def bundled_paths() -> tuple[Path, Path]:
    """Paths of the synthetic CSVs shipped with the package."""
    root = resources.files("dauval") / "data"
    return Path(str(root / "synthetic_dau.csv")), Path(str(root / "synthetic_financials.csv"))
