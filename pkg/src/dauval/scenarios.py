"""Seeded Monte Carlo forecasts of aggregate DAU.

Each scenario continues the existing pool's curves from their current age and
adds copies of pool games released at exponential gaps. Scenario ``s`` draws
only from a Philox stream keyed by ``(master_seed, s)``, so the result is
independent of execution order and thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .decay import GameCurve

DAYS_PER_YEAR = 365.25
DEFAULT_HORIZON_DAYS = 7305  # 20 years of 365.25 days, 80 whole quarters

_GAP_STREAM, _CHOICE_STREAM = 0, 1
_BLOCK = 64


@dataclass(frozen=True)
class SimConfig:
    pool: tuple[GameCurve, ...]
    lam: float
    horizon_days: int = DEFAULT_HORIZON_DAYS
    n_scenarios: int = 1000
    master_seed: int = 0
    # age (days since release) of each pool game on forecast day 0;
    # defaults to each curve's last observed offset
    ages: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "pool", tuple(self.pool))
        if not self.pool:
            raise ValueError("pool must be non-empty")
        if self.horizon_days < 1 or self.n_scenarios < 1:
            raise ValueError("horizon_days and n_scenarios must be >= 1")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if self.ages is None:
            object.__setattr__(self, "ages", tuple(c.last_observed for c in self.pool))
        elif len(self.ages) != len(self.pool) or min(self.ages) < 0:
            raise ValueError("ages must give one non-negative age per pool game")


@dataclass(frozen=True)
class EventLog:
    days: np.ndarray  # integer injection day per arrival
    games: np.ndarray  # pool index per arrival


@dataclass(frozen=True)
class ScenarioSet:
    trajectories: np.ndarray = field(repr=False)
    master_seed: int
    events: tuple[EventLog, ...] = field(repr=False)
    game_ids: tuple[str, ...] = ()

    @property
    def n_scenarios(self) -> int:
        return self.trajectories.shape[0]

    @property
    def horizon_days(self) -> int:
        return self.trajectories.shape[1]


def scenario_rng(master_seed: int, index: int, stream: int) -> np.random.Generator:
    seq = np.random.SeedSequence([master_seed & 0xFFFFFFFFFFFFFFFF, index, stream])
    return np.random.Generator(np.random.Philox(seq))


def arrival_times(master_seed: int, index: int, lam: float, horizon: float) -> np.ndarray:
    """Cumulative exponential gaps (inverse transform) strictly before ``horizon``.

    The k-th gap always comes from the k-th uniform of the stream, so raising
    ``lam`` moves every arrival earlier without reshuffling.
    """
    rng = scenario_rng(master_seed, index, _GAP_STREAM)
    times: list[np.ndarray] = []
    t = 0.0
    while True:
        u = rng.random(_BLOCK)
        cum = t + np.cumsum(-np.log1p(-u) / lam)
        inside = cum < horizon
        times.append(cum[inside])
        if not inside.all():
            break
        t = float(cum[-1])
    return np.concatenate(times)


def game_choices(master_seed: int, index: int, n_arrivals: int, pool_size: int) -> np.ndarray:
    rng = scenario_rng(master_seed, index, _CHOICE_STREAM)
    u = rng.random(n_arrivals)
    return np.minimum((u * pool_size).astype(np.int64), pool_size - 1)


class _Profiles:
    """Pool curves tabulated over the horizon, shared read-only by all scenarios."""

    def __init__(self, cfg: SimConfig):
        h = cfg.horizon_days
        self.from_release = [c.profile(0, h) for c in cfg.pool]
        base = np.zeros(h)
        for curve, age in zip(cfg.pool, cfg.ages):
            base += curve.profile(age, h)
        self.existing = base


def _simulate(cfg: SimConfig, index: int, prof: _Profiles) -> tuple[np.ndarray, EventLog]:
    h = cfg.horizon_days
    # day d ends at time d; an arrival at time s counts from day ceil(s)
    times = arrival_times(cfg.master_seed, index, cfg.lam, h - 1 + 1e-12)
    days = np.ceil(times).astype(np.int64)
    games = game_choices(cfg.master_seed, index, days.size, len(cfg.pool))
    traj = prof.existing.copy()
    for d, g in zip(days, games):
        traj[d:] += prof.from_release[g][: h - d]
    return traj, EventLog(days, games)


def simulate_scenario(cfg: SimConfig, scenario_index: int) -> tuple[np.ndarray, EventLog]:
    if not 0 <= scenario_index < cfg.n_scenarios:
        raise IndexError("scenario_index out of range")
    return _simulate(cfg, scenario_index, _Profiles(cfg))


def simulate_all(cfg: SimConfig, workers: int = 1) -> ScenarioSet:
    prof = _Profiles(cfg)
    try:
        out = np.empty((cfg.n_scenarios, cfg.horizon_days))
    except MemoryError as exc:
        raise MemoryError(
            f"cannot allocate {cfg.n_scenarios} x {cfg.horizon_days} trajectories; no scenarios simulated"
        ) from exc
    logs: list[EventLog | None] = [None] * cfg.n_scenarios

    def run(i: int) -> None:
        out[i], logs[i] = _simulate(cfg, i, prof)

    if workers <= 1:
        for i in range(cfg.n_scenarios):
            run(i)
    else:
        done = 0
        with ThreadPoolExecutor(max_workers=workers) as pool:
            try:
                for _ in pool.map(run, range(cfg.n_scenarios)):
                    done += 1
            except MemoryError as exc:
                raise MemoryError(f"ran out of memory after {done} of {cfg.n_scenarios} scenarios") from exc
    out.flags.writeable = False
    return ScenarioSet(out, cfg.master_seed, tuple(logs), tuple(c.game_id for c in cfg.pool))


def nearest_rank(sorted_values: np.ndarray, q: float, axis: int = 0) -> np.ndarray:
    """Nearest-rank empirical quantile of data already sorted along ``axis``."""
    n = sorted_values.shape[axis]
    rank = max(1, math.ceil(q * n - 1e-12))
    return np.take(sorted_values, min(rank, n) - 1, axis=axis)


def quantile_band(scenarios: ScenarioSet | np.ndarray, q_low: float, q_high: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-day nearest-rank quantiles across scenarios."""
    if not 0 <= q_low < q_high <= 1:
        raise ValueError("need 0 <= q_low < q_high <= 1")
    traj = scenarios.trajectories if isinstance(scenarios, ScenarioSet) else np.asarray(scenarios)
    ordered = np.sort(traj, axis=0)
    return nearest_rank(ordered, q_low), nearest_rank(ordered, q_high)


def pool_ages(release_days: Sequence[int], origin_day: int) -> tuple[int, ...]:
    """Age of each curve on the forecast origin day."""
    return tuple(int(origin_day - r) for r in release_days)
