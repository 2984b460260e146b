"""End-to-end pipeline: config, stage execution with content-hash caching, report.

Every stage writes its artifacts to ``<output_dir>/<stage>/`` and reads its
inputs from upstream artifacts on disk, so a cached stage is reused simply by
leaving its directory alone. A stage's cache key hashes its own settings and
the keys of the stages it reads from; the ingest key hashes the input files.
"""

from __future__ import annotations

import configparser
import csv
import datetime as dt
import hashlib
import json
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from . import __version__
from .decay import GameCurve, TailParams, build_curve, evaluate_curve
from .innovation import diagnose
from .revenue import (
    SCENARIO_CEILINGS,
    LogisticParams,
    fit_exponential,
    project_rev_per_dau,
    rolling_model_comparison,
    scenario_fits,
    trailing_year_rev_per_dau,
    years_between,
)
from .scenarios import DEFAULT_HORIZON_DAYS, EventLog, ScenarioSet, SimConfig, quantile_band, simulate_all
from .timeseries import (
    GAP_POLICIES,
    GameCatalog,
    ingest_dau_csv,
    ingest_financials_csv,
    release_event_log,
    top_n_by_peak,
    write_dau_csv,
    write_financials_csv,
)
from .valuation import ValuationConfig, histogram, profit_margin_table, value_company

log = logging.getLogger(__name__)

STAGES = ("ingest", "top_n", "fit_tails", "diagnose_innovation", "simulate", "fit_revenue", "value")
STAGE_DEPS = {
    "ingest": (),
    "top_n": ("ingest",),
    "fit_tails": ("ingest", "top_n"),
    "diagnose_innovation": ("ingest", "top_n"),
    "simulate": ("ingest", "fit_tails", "diagnose_innovation"),
    "fit_revenue": ("ingest",),
    "value": ("simulate", "fit_revenue"),
}
STAGE_META = ".stage.json"
FAILED_MARKER = "FAILED"
MANIFEST_NAME = "run_manifest.json"
REPORT_NAME = "report.md"
CONFIG_ENV = "DAUVAL_CONFIG"


class ValidationError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    dau_csv: Path
    financials_csv: Path
    output_dir: Path = Path("dauval-out")
    top_n: int = 20
    gap_policy: str = "fill_zero"
    rate_source: str = "top_n"
    max_lag: int | None = None
    horizon_days: int = DEFAULT_HORIZON_DAYS
    n_scenarios: int = 1000
    master_seed: int = 0
    lambda_override: float | None = None
    profit_margin: float = 0.15
    discount_rate_annual: float = 0.05
    shares_outstanding: int = 699_000_000
    horizon_years: float = 20.0
    ceilings: Mapping[str, float] = field(default_factory=lambda: dict(SCENARIO_CEILINGS))
    t_min_overrides: Mapping[str, int] = field(default_factory=dict)
    full_scenario_csv: bool = False
    # execution only; never part of the cache key
    workers: int = 1

    @property
    def valuation(self) -> ValuationConfig:
        return ValuationConfig(self.profit_margin, self.discount_rate_annual, self.shares_outstanding, self.horizon_years)

    def canonical(self) -> dict:
        """Settings that determine outputs, in a JSON-stable form."""
        data = {}
        for f in fields(self):
            if f.name in ("output_dir", "workers", "dau_csv", "financials_csv"):
                continue
            value = getattr(self, f.name)
            if isinstance(value, Mapping):
                value = dict(sorted(value.items())) if f.name != "ceilings" else dict(value)
            data[f.name] = value
        return data

    def validate(self) -> None:
        for name in ("dau_csv", "financials_csv"):
            path = Path(getattr(self, name))
            if not path.is_file():
                raise ValidationError(f"{name}: file not found: {path}")
        if self.gap_policy not in GAP_POLICIES:
            raise ValidationError(f"gap_policy must be one of {GAP_POLICIES}")
        if self.rate_source not in ("top_n", "all"):
            raise ValidationError("rate_source must be 'top_n' or 'all'")
        if self.top_n < 1 or self.n_scenarios < 1 or self.horizon_days < 1:
            raise ValidationError("top_n, n_scenarios and horizon_days must be >= 1")
        if self.lambda_override is not None and not self.lambda_override > 0:
            raise ValidationError("lambda must be > 0")
        if not 0 <= self.master_seed < 2**64:
            raise ValidationError("master_seed must be an unsigned 64-bit integer")
        try:
            vc = self.valuation
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        if self.horizon_days < vc.horizon_days:
            raise ValidationError(
                f"simulation horizon {self.horizon_days} days is shorter than the valuation horizon {vc.horizon_days} days"
            )
        ks = list(self.ceilings.values())
        if list(self.ceilings) != list(SCENARIO_CEILINGS) or any(a >= b for a, b in zip(ks, ks[1:])) or ks[0] <= 0:
            raise ValidationError("ceilings must give increasing positive base < high < extreme")
        out = Path(self.output_dir)
        probe = out
        while not probe.exists():
            probe = probe.parent
        if not probe.is_dir() or not os.access(probe, os.W_OK):
            raise ValidationError(f"output_dir is not creatable: {out}")


_SECTIONS = {
    "paths": {"dau_csv": Path, "financials_csv": Path, "output_dir": Path},
    "data": {"top_n": int, "gap_policy": str},
    "innovation": {"rate_source": str, "max_lag": int},
    "simulation": {"horizon_days": int, "n_scenarios": int, "master_seed": int, "lambda": float, "workers": int,
                   "full_scenario_csv": bool},
    "valuation": {"profit_margin": float, "discount_rate_annual": float, "shares_outstanding": int,
                  "horizon_years": float},
}


def _convert(kind, text: str):
    text = text.strip()
    if kind is bool:
        return text.lower() in ("1", "true", "yes", "on")
    if kind is int:
        return int(float(text)) if "e" in text.lower() else int(text)
    return kind(text)


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """Build a config from an INI file (sections as in the bundled example) plus overrides.

    Relative input paths resolve against the config file's directory; the
    output directory resolves against the working directory. Overrides win.
    """
    values: dict[str, Any] = {}
    ceilings = dict(SCENARIO_CEILINGS)
    t_min: dict[str, int] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.optionxform = str
        parser.read(path, encoding="utf-8")
        for section in parser.sections():
            items = dict(parser.items(section))
            if section == "scenarios":
                for label, text in items.items():
                    if label not in ceilings:
                        raise ValidationError(f"unknown scenario label {label!r}")
                    try:
                        ceilings[label] = float(text)
                    except ValueError:
                        raise ValidationError(f"[scenarios] {label}: cannot parse {text!r}") from None
            elif section == "t_min":
                try:
                    t_min = {k: int(v) for k, v in items.items()}
                except ValueError as exc:
                    raise ValidationError(f"[t_min]: {exc}") from None
            elif section in _SECTIONS:
                for key, text in items.items():
                    if key not in _SECTIONS[section]:
                        raise ValidationError(f"unknown key [{section}] {key}")
                    if not text.strip():
                        continue
                    try:
                        value = _convert(_SECTIONS[section][key], text)
                    except ValueError:
                        raise ValidationError(f"[{section}] {key}: cannot parse {text!r}") from None
                    values["lambda_override" if key == "lambda" else key] = value
            else:
                raise ValidationError(f"unknown config section [{section}]")
        for key in ("dau_csv", "financials_csv"):
            if key in values and not values[key].is_absolute():
                values[key] = (path.parent / values[key]).resolve()
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    if "dau_csv" not in values or "financials_csv" not in values:
        raise ValidationError("config must name dau_csv and financials_csv")
    values["dau_csv"] = Path(values["dau_csv"])
    values["financials_csv"] = Path(values["financials_csv"])
    if "output_dir" in values:
        values["output_dir"] = Path(values["output_dir"])
    try:
        return PipelineConfig(ceilings=ceilings, t_min_overrides=t_min, **values)
    except TypeError as exc:
        raise ValidationError(str(exc)) from None


# -- serialization helpers ---------------------------------------------------------


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating,)):
        return _clean(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, dt.date):
        return obj.isoformat()
    return obj


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_clean(data), indent=2, allow_nan=False) + "\n", encoding="utf-8")


def read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ""
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(_clean(obj), sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def config_hash(cfg: PipelineConfig) -> str:
    return _digest(
        {
            "config": cfg.canonical(),
            "inputs": {"dau_csv": file_sha256(cfg.dau_csv), "financials_csv": file_sha256(cfg.financials_csv)},
        }
    )


# -- stages ------------------------------------------------------------------------


def _stage_params(cfg: PipelineConfig, stage: str) -> dict:
    c = cfg.canonical()
    keys = {
        "ingest": ("gap_policy",),
        "top_n": ("top_n",),
        "fit_tails": ("t_min_overrides",),
        "diagnose_innovation": ("rate_source", "max_lag", "lambda_override"),
        "simulate": ("horizon_days", "n_scenarios", "master_seed", "full_scenario_csv"),
        "fit_revenue": ("ceilings",),
        "value": ("profit_margin", "discount_rate_annual", "shares_outstanding", "horizon_years"),
    }[stage]
    params = {k: c[k] for k in keys}
    if stage == "ingest":
        params["inputs"] = {"dau_csv": file_sha256(cfg.dau_csv), "financials_csv": file_sha256(cfg.financials_csv)}
    params["tool_version"] = __version__
    return params


def _load_catalog(out: Path) -> GameCatalog:
    return ingest_dau_csv(out / "ingest" / "catalog.csv", gap_policy="reject")


def _load_top(out: Path, catalog: GameCatalog) -> GameCatalog:
    ids = read_json(out / "top_n" / "top_n.json")["game_ids"]
    return GameCatalog(catalog.epoch, tuple(catalog.get(g) for g in ids))


def stage_ingest(cfg: PipelineConfig, d: Path) -> None:
    catalog = ingest_dau_csv(cfg.dau_csv, cfg.gap_policy)
    financials = ingest_financials_csv(cfg.financials_csv)
    write_dau_csv(d / "catalog.csv", catalog)
    write_financials_csv(d / "financials.csv", financials)
    first, total = catalog.aggregate()
    write_csv(
        d / "aggregate_dau.csv",
        ("date", "dau"),
        ((catalog.to_date(first + i).isoformat(), int(v)) for i, v in enumerate(total)),
    )
    write_json(
        d / "catalog.json",
        {
            "epoch": catalog.epoch,
            "last_date": catalog.to_date(catalog.last_day),
            "n_games": len(catalog),
            "gap_policy": cfg.gap_policy,
            "games": [
                {
                    "game_id": s.game_id,
                    "first_date": catalog.to_date(s.start_day),
                    "last_date": catalog.to_date(s.end_day),
                    "release_date": catalog.to_date(s.release_day),
                    "peak_dau": s.peak,
                    "total_dau": int(s.values.sum()),
                }
                for s in catalog
            ],
        },
    )


def stage_top_n(cfg: PipelineConfig, d: Path, out: Path) -> None:
    catalog = _load_catalog(out)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        top = top_n_by_peak(catalog, cfg.top_n)
    last = catalog.last_day
    current_total = sum(int(s.values[-1]) for s in catalog if s.end_day == last)
    current_top = sum(int(s.values[-1]) for s in top if s.end_day == last)
    write_json(
        d / "top_n.json",
        {
            "n_requested": cfg.top_n,
            "truncated": top.truncated,
            "warnings": [str(w.message) for w in caught],
            "game_ids": top.game_ids,
            "peaks": [s.peak for s in top],
            "current_dau_share": current_top / current_total if current_total else None,
        },
    )


def _curve_record(curve: GameCurve, catalog: GameCatalog, release_day: int) -> dict:
    t = curve.tail
    return {
        "game_id": curve.game_id,
        "release_date": catalog.to_date(release_day),
        "t_min": t.t_min,
        "gamma": t.gamma,
        "scale": t.scale,
        "anchor_dau": curve.anchor_dau,
        "fit_rmse": t.fit_rmse,
        "flat_reason": t.flat_reason,
        "age_at_origin": catalog.last_day - release_day,
    }


def stage_fit_tails(cfg: PipelineConfig, d: Path, out: Path) -> None:
    catalog = _load_catalog(out)
    top = _load_top(out, catalog)
    records, rows = [], []
    for s in top:
        curve = build_curve(s, cfg.t_min_overrides.get(s.game_id))
        records.append(_curve_record(curve, catalog, s.release_day))
        tail = curve.tail
        n = len(curve.series)
        ext = np.arange(2 * n)
        shape = evaluate_curve(curve, ext)
        for t in ext:
            observed = int(curve.series.values[t]) if t < n else None
            fitted = tail.scale * (t - tail.t_min + 1.0) ** -tail.gamma if t >= tail.t_min else None
            rows.append((curve.game_id, int(t), observed, fitted, float(shape[t])))
    write_json(
        d / "tails.json",
        {
            "method": "log-log OLS on (t - t_min + 1); tail rescaled through the last observed DAU",
            "t_min_rule": "peak day, at most length - 4; overridable per game",
            "games": records,
        },
    )
    write_csv(d / "tail_curves.csv", ("game_id", "t", "observed", "fitted", "curve"), rows)


def stage_diagnose_innovation(cfg: PipelineConfig, d: Path, out: Path) -> None:
    catalog = _load_catalog(out)
    top = _load_top(out, catalog)
    reports = {}
    for name, cat in (("top_n", top), ("all", catalog)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            reports[name] = diagnose(release_event_log(cat), cfg.max_lag)
    lam = cfg.lambda_override if cfg.lambda_override is not None else reports[cfg.rate_source].fit.lam
    write_json(
        d / "innovation.json",
        {
            "rate_source": "override" if cfg.lambda_override is not None else cfg.rate_source,
            "lambda_used": lam,
            "reports": {k: r.to_dict() for k, r in reports.items()},
        },
    )
    write_csv(
        d / "counting.csv",
        ("set", "date", "cumulative", "poisson_line"),
        ((k, catalog.to_date(int(day)).isoformat(), c, e) for k, r in reports.items() for day, c, e in r.counting_pairs),
    )
    write_csv(
        d / "autocorr.csv",
        ("set", "lag", "c", "ci_low", "ci_high"),
        (
            (k, int(lag), v, -r.autocorr.ci_halfwidth, r.autocorr.ci_halfwidth)
            for k, r in reports.items()
            for lag, v in zip(r.autocorr.lags, r.autocorr.values)
        ),
    )
    write_csv(
        d / "qq.csv",
        ("set", "theoretical", "empirical", "ecdf", "fitted_cdf"),
        (
            (k, a, b, e, f)
            for k, r in reports.items()
            for a, b, e, f in zip(r.qq.theoretical, r.qq.empirical, r.qq.ecdf_y, r.qq.fitted_cdf)
        ),
    )


def load_pool(out: Path) -> tuple[GameCatalog, list[GameCurve], tuple[int, ...]]:
    catalog = _load_catalog(out)
    records = read_json(out / "fit_tails" / "tails.json")["games"]
    curves, ages = [], []
    for rec in records:
        s = catalog.get(rec["game_id"])
        tail = TailParams(rec["gamma"], rec["scale"], rec["t_min"], rec["fit_rmse"], rec["flat_reason"])
        curves.append(GameCurve(s, tail))
        ages.append(rec["age_at_origin"])
    return catalog, curves, tuple(ages)


def save_scenario_set(d: Path, ss: ScenarioSet, meta: dict, full_csv: bool = False) -> None:
    np.save(d / "trajectories.npy", np.ascontiguousarray(ss.trajectories), allow_pickle=False)
    write_json(d / "scenarios.json", meta)
    write_csv(
        d / "events.csv",
        ("scenario_index", "arrival", "day", "game_id"),
        (
            (i, k, int(day), ss.game_ids[g])
            for i, ev in enumerate(ss.events)
            for k, (day, g) in enumerate(zip(ev.days, ev.games))
        ),
    )
    traj = ss.trajectories
    write_csv(
        d / "scenario_summary.csv",
        ("scenario_index", "dau_start", "dau_end", "dau_mean", "dau_min", "dau_max", "n_injections"),
        (
            (i, traj[i, 0], traj[i, -1], math.fsum(traj[i]) / traj.shape[1], traj[i].min(), traj[i].max(), len(ss.events[i].days))
            for i in range(ss.n_scenarios)
        ),
    )
    lo, hi = quantile_band(ss, 0.025, 0.975)
    med_lo, _ = quantile_band(ss, 0.5, 1.0)
    write_csv(
        d / "quantile_band.csv",
        ("day", "q025", "q500", "q975"),
        ((t, lo[t], med_lo[t], hi[t]) for t in range(ss.horizon_days)),
    )
    if full_csv:
        write_csv(
            d / "trajectories.csv",
            ("scenario_index", "day", "dau"),
            ((i, t, traj[i, t]) for i in range(ss.n_scenarios) for t in range(ss.horizon_days)),
        )


def load_scenario_set(d: str | Path) -> tuple[ScenarioSet, dict]:
    d = Path(d)
    meta = read_json(d / "scenarios.json")
    traj = np.load(d / "trajectories.npy", allow_pickle=False)
    ids = tuple(meta["game_ids"])
    index = {g: i for i, g in enumerate(ids)}
    per: list[tuple[list[int], list[int]]] = [([], []) for _ in range(traj.shape[0])]
    with (d / "events.csv").open(encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            days, games = per[int(row["scenario_index"])]
            days.append(int(row["day"]))
            games.append(index[row["game_id"]])
    events = tuple(EventLog(np.array(a, dtype=np.int64), np.array(b, dtype=np.int64)) for a, b in per)
    return ScenarioSet(traj, int(meta["master_seed"]), events, ids), meta


def stage_simulate(cfg: PipelineConfig, d: Path, out: Path) -> None:
    catalog, curves, ages = load_pool(out)
    lam = read_json(out / "diagnose_innovation" / "innovation.json")["lambda_used"]
    sim = SimConfig(tuple(curves), lam, cfg.horizon_days, cfg.n_scenarios, cfg.master_seed, ages)
    ss = simulate_all(sim, workers=cfg.workers)
    meta = {
        "master_seed": cfg.master_seed,
        "n_scenarios": cfg.n_scenarios,
        "horizon_days": cfg.horizon_days,
        "lambda_per_day": lam,
        "origin_date": catalog.to_date(catalog.last_day),
        "game_ids": list(ss.game_ids),
        "rng": "Philox keyed by SeedSequence([master_seed, scenario_index, stream])",
    }
    save_scenario_set(d, ss, meta, cfg.full_scenario_csv)


def stage_fit_revenue(cfg: PipelineConfig, d: Path, out: Path) -> None:
    financials = ingest_financials_csv(out / "ingest" / "financials.csv")
    dates, dau = [], []
    with (out / "ingest" / "aggregate_dau.csv").open(encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            dates.append(row["date"])
            dau.append(int(row["dau"]))
    start = dt.date.fromisoformat(dates[0])
    points = trailing_year_rev_per_dau(financials, start, dau, strict=False)
    if len(points) < 4:
        raise ValueError(f"only {len(points)} trailing-year points have full DAU coverage; need 4")
    origin = points[0].quarter_end
    t = [years_between(origin, p.quarter_end) for p in points]
    r = [p.r for p in points]
    fits = scenario_fits(t, r, cfg.ceilings, origin=origin)
    comparison = rolling_model_comparison(t, r) if len(points) >= 5 else []
    a, b, rmse_exp = fit_exponential(t, r)
    margins = profit_margin_table(financials)
    write_json(
        d / "revenue_fit.json",
        {
            "origin": origin,
            "time_unit": "years of 365.25 days since origin",
            "loss": "linear-space RMSE; exponential benchmark fitted by log-space OLS",
            "scenarios": {label: p.to_dict() for label, p in fits.items()},
            "exponential": {"a": a, "b": b, "rmse": rmse_exp},
            "points": [
                {"quarter_end": p.quarter_end, "yearly_revenue": p.yearly_revenue, "avg_dau": p.avg_dau, "r": p.r}
                for p in points
            ],
            "model_comparison": [asdict(c) for c in comparison],
            "profit_margins": [
                {"year": m.year, "revenue": m.revenue, "net_income": m.net_income, "margin": m.margin,
                 "margin_percent": m.margin_percent}
                for m in margins
            ],
        },
    )
    write_csv(d / "rev_per_dau.csv", ("quarter_end", "t_years", "r"), ((p.quarter_end.isoformat(), ti, p.r) for p, ti in zip(points, t)))
    grid = np.round(np.arange(0.0, t[-1] + 5.0 + 1e-9, 0.25), 10)
    write_csv(
        d / "revenue_fits.csv",
        ("t_years", *fits),
        ((float(x), *(float(project_rev_per_dau(p, float(x))) for p in fits.values())) for x in grid),
    )
    write_csv(
        d / "model_comparison.csv",
        ("prefix_length", "rmse_logistic", "rmse_exponential", "error"),
        ((c.prefix_length, c.rmse_logistic, c.rmse_exponential, c.error) for c in comparison),
    )


def load_revenue_fit(path: str | Path) -> tuple[dict[str, LogisticParams], dict]:
    data = read_json(path)
    params = {label: LogisticParams.from_dict(p, label) for label, p in data["scenarios"].items()}
    return params, data


def value_artifacts(
    scenario_dir: str | Path,
    revenue_fit: str | Path,
    vcfg: ValuationConfig,
    d: Path,
    workers: int = 1,
) -> dict:
    ss, meta = load_scenario_set(scenario_dir)
    params, _ = load_revenue_fit(revenue_fit)
    origin = dt.date.fromisoformat(meta["origin_date"])
    rev_origin = next(iter(params.values())).origin
    start = years_between(rev_origin, origin) if rev_origin else 0.0
    dists = value_company(ss, params, vcfg, start_years=start, workers=workers)
    result = {
        "config": {
            "profit_margin": vcfg.profit_margin,
            "discount_rate_annual": vcfg.discount_rate_annual,
            "quarterly_rate": vcfg.quarterly_rate,
            "shares_outstanding": vcfg.shares_outstanding,
            "horizon_years": vcfg.horizon_years,
            "horizon_days": vcfg.horizon_days,
            "cashflow_granularity": "quarterly",
            "interval": "nearest-rank 2.5/97.5 percentiles across scenarios",
        },
        "forecast_origin": origin,
        "scenarios": {label: dist.to_dict() for label, dist in dists.items()},
    }
    d.mkdir(parents=True, exist_ok=True)
    write_json(d / "valuation.json", result)
    write_csv(
        d / "valuation_hist.csv",
        ("scenario", "bin_low", "bin_high", "count"),
        ((label, lo, hi, c) for label, dist in dists.items() for lo, hi, c in histogram(dist.npv)),
    )
    write_csv(
        d / "npv_per_scenario.csv",
        ("scenario_index", *dists),
        ((i, *(dist.npv[i] for dist in dists.values())) for i in range(ss.n_scenarios)),
    )
    return result


def stage_value(cfg: PipelineConfig, d: Path, out: Path) -> None:
    value_artifacts(out / "simulate", out / "fit_revenue" / "revenue_fit.json", cfg.valuation, d, cfg.workers)


_RUNNERS: dict[str, Callable] = {
    "ingest": lambda cfg, d, out: stage_ingest(cfg, d),
    "top_n": stage_top_n,
    "fit_tails": stage_fit_tails,
    "diagnose_innovation": stage_diagnose_innovation,
    "simulate": stage_simulate,
    "fit_revenue": stage_fit_revenue,
    "value": stage_value,
}


def _stage_files(d: Path) -> dict[str, str]:
    return {
        p.name: file_sha256(p)
        for p in sorted(d.iterdir())
        if p.is_file() and p.name not in (STAGE_META, FAILED_MARKER)
    }


def _cached(d: Path, key: str) -> bool:
    meta_path = d / STAGE_META
    if not meta_path.is_file() or (d / FAILED_MARKER).exists():
        return False
    try:
        meta = read_json(meta_path)
    except (OSError, json.JSONDecodeError):
        return False
    if meta.get("key") != key:
        return False
    return all((d / name).is_file() and file_sha256(d / name) == digest for name, digest in meta["files"].items())


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def run_pipeline(cfg: PipelineConfig, until: str = "value") -> dict:
    """Run stages up to and including ``until``; returns the run manifest."""
    cfg.validate()
    if until not in STAGES:
        raise ValueError(f"unknown stage {until!r}")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    needed: list[str] = []

    def want(stage: str) -> None:
        for dep in STAGE_DEPS[stage]:
            want(dep)
        if stage not in needed:
            needed.append(stage)

    want(until)
    needed.sort(key=STAGES.index)
    manifest = {
        "tool_version": __version__,
        "config_hash": config_hash(cfg),
        "master_seed": cfg.master_seed,
        "config": cfg.canonical(),
        "inputs": {"dau_csv": str(cfg.dau_csv), "financials_csv": str(cfg.financials_csv)},
        "started": _now(),
        "stages": {},
    }
    keys: dict[str, str] = {}
    for stage in needed:
        key = _digest({"stage": stage, "params": _stage_params(cfg, stage), "deps": [keys[x] for x in STAGE_DEPS[stage]]})
        keys[stage] = key
        d = out / stage
        hit = _cached(d, key)
        if not hit:
            log.info("running stage %s", stage)
            d.mkdir(parents=True, exist_ok=True)
            for p in d.iterdir():
                if p.is_file():
                    p.unlink()
            try:
                _RUNNERS[stage](cfg, d, out)
            except Exception as exc:
                (d / FAILED_MARKER).write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
                manifest["stages"][stage] = {"key": key, "status": "failed", "error": str(exc)}
                manifest["finished"] = _now()
                write_json(out / MANIFEST_NAME, manifest)
                raise StageError(stage, exc) from exc
            write_json(d / STAGE_META, {"stage": stage, "key": key, "files": _stage_files(d)})
        else:
            log.info("stage %s: cache hit", stage)
        files = sorted(f"{stage}/{name}" for name in _stage_files(d))
        manifest["stages"][stage] = {"key": key, "status": "ok", "cache_hit": hit, "files": files}
    manifest["finished"] = _now()
    write_json(out / MANIFEST_NAME, manifest)
    return manifest


# -- report -------------------------------------------------------------------------

LABEL_NAMES = {"base": "Base case", "high": "High growth", "extreme": "Extreme growth"}


def _usd(x: float) -> str:
    return f"{x:,.0f}"


def _share(x: float) -> str:
    return f"{x:.10f}"


def emit_report(manifest: Mapping | str | Path, path: str | Path | None = None) -> Path:
    """Write a markdown summary of a completed run next to its manifest."""
    if not isinstance(manifest, Mapping):
        manifest_path = Path(manifest)
        out = manifest_path.parent
        manifest = read_json(manifest_path)
    else:
        out = Path(manifest.get("output_dir") or ".")
    stages = manifest.get("stages", {})
    missing = [s for s in STAGES if stages.get(s, {}).get("status") != "ok"]
    if missing:
        raise ValueError(f"manifest is incomplete; missing or failed stages: {', '.join(missing)}")
    valuation = read_json(out / "value" / "valuation.json")
    innovation = read_json(out / "diagnose_innovation" / "innovation.json")
    tails = read_json(out / "fit_tails" / "tails.json")
    revenue = read_json(out / "fit_revenue" / "revenue_fit.json")
    cfg = valuation["config"]

    lines = ["# Valuation report", ""]
    rejected = [
        f"{name}: {test}"
        for name, rep in innovation["reports"].items()
        for test, verdict in rep["verdicts"].items()
        if verdict == "reject"
    ]
    if rejected:
        lines += [
            "## WARNING: Poisson innovation model rejected",
            "",
            "The release process fails at least one diagnostic, so the simulated",
            "release stream may misstate future user growth:",
            "",
            *[f"- {r}" for r in rejected],
            "",
        ]
    lines += [
        f"Forecast origin {valuation['forecast_origin']}, config hash `{manifest['config_hash'][:16]}`, "
        f"master seed {manifest['master_seed']}.",
        "",
        "## Valuation",
        "",
        "| Scenario | Valuation [USD] | 95% interval [USD] | Share [USD] | 95% interval [USD] |",
        "|---|---|---|---|---|",
    ]
    for label, v in valuation["scenarios"].items():
        lo, hi = v["ci95"]
        slo, shi = v["per_share_ci95"]
        lines.append(
            f"| {LABEL_NAMES.get(label, label)} | {_usd(v['mean'])} | [{_usd(lo)}; {_usd(hi)}] "
            f"| {_share(v['per_share_mean'])} | [{_share(slo)}; {_share(shi)}] |"
        )
    lines += [
        "",
        f"Profit margin {cfg['profit_margin']}, annual discount rate {cfg['discount_rate_annual']}, "
        f"{cfg['shares_outstanding']} shares, horizon {cfg['horizon_years']} years.",
        "",
        "## Revenue per DAU ceilings",
        "",
        "| Scenario | K [USD/DAU/yr] | g [1/yr] | t0 [yr] | RMSE |",
        "|---|---|---|---|---|",
    ]
    for label, p in revenue["scenarios"].items():
        lines.append(f"| {LABEL_NAMES.get(label, label)} | {p['K']!r} | {p['g']!r} | {p['t0']!r} | {p['rmse']!r} |")
    lines += ["", "## Innovation diagnostics", ""]
    lines.append(f"Rate used for simulation: {innovation['lambda_used']!r} games/day ({innovation['rate_source']}).")
    lines.append("")
    for name, rep in innovation["reports"].items():
        verdicts = ", ".join(f"{k}: {v}" for k, v in rep["verdicts"].items())
        lines.append(
            f"- {name}: lambda {rep['lambda_per_day']!r}/day over {rep['n_events']} events; {verdicts}; "
            f"Q-Q max deviation {rep['qq_max_deviation_rel']!r} of the mean (advisory)"
        )
    flat = [g for g in tails["games"] if g["flat_reason"]]
    if flat:
        lines += ["", "## Flat-tail games", ""]
        lines += [f"- {g['game_id']}: {g['flat_reason']}" for g in flat]
    lines.append("")
    target = Path(path) if path else out / REPORT_NAME
    target.write_text("\n".join(lines), encoding="utf-8")
    return target
