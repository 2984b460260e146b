"""Per-game DAU histories and quarterly financials: data model and CSV ingestion.

All model math runs on integer day offsets from a catalog epoch; calendar
dates only appear at the I/O boundary.
"""

from __future__ import annotations

import csv
import datetime as dt
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

GAP_POLICIES = ("reject", "fill_zero", "interpolate")

DAU_HEADER = ("game_id", "date", "dau")
FINANCIALS_HEADER = ("quarter_end", "revenue_usd", "net_income_usd")


class IngestError(ValueError):
    """Raised when an input file violates its schema."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class DauSeries:
    """One game's daily DAU counts on consecutive days starting at ``start_day``."""

    game_id: str
    start_day: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.int64)
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError(f"{self.game_id}: DAU series must be a non-empty 1-d sequence")
        if (vals < 0).any():
            raise ValueError(f"{self.game_id}: DAU values must be non-negative")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def end_day(self) -> int:
        return self.start_day + len(self) - 1

    @property
    def peak(self) -> int:
        return int(self.values.max())

    @property
    def release_day(self) -> int:
        nz = np.flatnonzero(self.values)
        if nz.size == 0:
            raise ValueError(f"{self.game_id}: series has no nonzero DAU, release day undefined")
        return self.start_day + int(nz[0])

    def since_release(self) -> "DauSeries":
        """Drop the leading zero days so that offset 0 is the release day."""
        offset = self.release_day - self.start_day
        if offset == 0:
            return self
        return DauSeries(self.game_id, self.release_day, self.values[offset:])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DauSeries):
            return NotImplemented
        return (
            self.game_id == other.game_id
            and self.start_day == other.start_day
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self) -> int:
        return hash((self.game_id, self.start_day, self.values.tobytes()))


@dataclass(frozen=True)
class GameCatalog:
    """A set of games sharing one calendar epoch.

    ``truncated`` is set when a top-n selection asked for more games than
    the catalog holds.
    """

    epoch: dt.date
    series: tuple[DauSeries, ...]
    truncated: bool = False

    def __post_init__(self) -> None:
        ids = [s.game_id for s in self.series]
        if len(set(ids)) != len(ids):
            raise ValueError("game ids in a catalog must be unique")
        object.__setattr__(self, "series", tuple(self.series))

    def __len__(self) -> int:
        return len(self.series)

    def __iter__(self):
        return iter(self.series)

    @property
    def game_ids(self) -> list[str]:
        return [s.game_id for s in self.series]

    @property
    def release_days(self) -> dict[str, int]:
        return {s.game_id: s.release_day for s in self.series}

    @property
    def last_day(self) -> int:
        return max(s.end_day for s in self.series)

    def get(self, game_id: str) -> DauSeries:
        for s in self.series:
            if s.game_id == game_id:
                return s
        raise KeyError(game_id)

    def to_date(self, day: int) -> dt.date:
        return self.epoch + dt.timedelta(days=int(day))

    def to_day(self, date: dt.date) -> int:
        return (date - self.epoch).days

    def aggregate(self) -> tuple[int, np.ndarray]:
        """Total DAU across all games as ``(first_day, values)`` over the covered span.

        Days a game is not observed contribute zero.
        """
        first = min(s.start_day for s in self.series)
        last = self.last_day
        total = np.zeros(last - first + 1, dtype=np.int64)
        for s in self.series:
            total[s.start_day - first : s.end_day - first + 1] += s.values
        return first, total


@dataclass(frozen=True)
class QuarterlyFinancials:
    quarter_end: dt.date
    revenue: float
    net_income: float


def _parse_date(text: str) -> dt.date:
    return dt.date.fromisoformat(text.strip())


def _read_rows(path: Path, header: Sequence[str]) -> Iterable[tuple[int, list[str]]]:
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            first = next(reader)
        except StopIteration:
            raise IngestError("empty file, header required", path) from None
        if [c.strip() for c in first] != list(header):
            raise IngestError(f"expected header {','.join(header)}, got {','.join(first)}", path, 1)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            yield reader.line_num, row


def ingest_dau_csv(path: str | Path, gap_policy: str = "fill_zero") -> GameCatalog:
    """Read a ``game_id,date,dau`` CSV into a catalog.

    Gaps between a game's first and last date are handled per ``gap_policy``:
    ``reject`` raises, ``fill_zero`` inserts zero-DAU days, ``interpolate``
    inserts linearly interpolated (rounded) counts.
    """
    if gap_policy not in GAP_POLICIES:
        raise ValueError(f"unknown gap policy {gap_policy!r}; expected one of {GAP_POLICIES}")
    path = Path(path)
    if not path.is_file():
        raise IngestError("file does not exist", path)

    rows: dict[str, dict[dt.date, int]] = {}
    for line, row in _read_rows(path, DAU_HEADER):
        if len(row) != 3:
            raise IngestError(f"expected 3 fields, got {len(row)}", path, line)
        game_id, date_text, dau_text = (c.strip() for c in row)
        if not game_id:
            raise IngestError("empty game_id", path, line)
        try:
            date = _parse_date(date_text)
        except ValueError:
            raise IngestError(f"bad date {date_text!r}", path, line) from None
        if not dau_text.isdigit():
            raise IngestError(f"dau must be a non-negative base-10 integer, got {dau_text!r}", path, line)
        per_game = rows.setdefault(game_id, {})
        if date in per_game:
            raise IngestError(f"duplicate row for ({game_id}, {date.isoformat()})", path, line)
        per_game[date] = int(dau_text)

    if not rows:
        raise IngestError("no data rows", path)

    epoch = min(min(d) for d in rows.values())
    series = []
    for game_id in sorted(rows):
        by_date = rows[game_id]
        dates = sorted(by_date)
        offsets = np.array([(d - epoch).days for d in dates], dtype=np.int64)
        counts = np.array([by_date[d] for d in dates], dtype=np.int64)
        start = int(offsets[0])
        length = int(offsets[-1]) - start + 1
        if length != len(dates):
            if gap_policy == "reject":
                missing = np.setdiff1d(np.arange(start, start + length), offsets)[0]
                raise IngestError(f"gap in {game_id} at {(epoch + dt.timedelta(days=int(missing))).isoformat()}", path)
            if gap_policy == "fill_zero":
                values = np.zeros(length, dtype=np.int64)
                values[offsets - start] = counts
            else:
                grid = np.arange(start, start + length)
                values = np.rint(np.interp(grid, offsets, counts)).astype(np.int64)
        else:
            values = counts
        series.append(DauSeries(game_id, start, values))
    for s in series:
        if not s.values.any():
            raise IngestError(f"game {s.game_id} never has DAU > 0", path)
    return GameCatalog(epoch, tuple(series))


def ingest_financials_csv(path: str | Path) -> list[QuarterlyFinancials]:
    path = Path(path)
    if not path.is_file():
        raise IngestError("file does not exist", path)
    out: list[QuarterlyFinancials] = []
    for line, row in _read_rows(path, FINANCIALS_HEADER):
        if len(row) != 3:
            raise IngestError(f"expected 3 fields, got {len(row)}", path, line)
        try:
            quarter_end = _parse_date(row[0])
            revenue = float(row[1])
            net_income = float(row[2])
        except ValueError as exc:
            raise IngestError(str(exc), path, line) from None
        if not (np.isfinite(revenue) and np.isfinite(net_income)):
            raise IngestError("non-finite amount", path, line)
        if revenue < 0:
            raise IngestError("revenue must be non-negative", path, line)
        if out and quarter_end <= out[-1].quarter_end:
            raise IngestError("quarters must be strictly increasing", path, line)
        out.append(QuarterlyFinancials(quarter_end, revenue, net_income))
    if not out:
        raise IngestError("no data rows", path)
    return out


def top_n_by_peak(catalog: GameCatalog, n: int) -> GameCatalog:
    """The ``n`` games with the largest all-time peak DAU.

    Ties go to the earlier release, then the lexicographically smaller id.
    Asking for more games than exist returns all of them with ``truncated`` set.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ranked = sorted(catalog.series, key=lambda s: (-s.peak, s.release_day, s.game_id))
    truncated = n > len(ranked)
    if truncated:
        warnings.warn(f"requested top {n} but catalog holds {len(ranked)} games", stacklevel=2)
    return GameCatalog(catalog.epoch, tuple(ranked[:n]), truncated=truncated)


def release_event_log(catalog: GameCatalog) -> list[int]:
    if len(catalog) == 0:
        raise ValueError("empty catalog")
    return sorted(s.release_day for s in catalog.series)


def write_dau_csv(path: str | Path, catalog: GameCatalog) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(DAU_HEADER)
        for s in catalog.series:
            for i, v in enumerate(s.values):
                writer.writerow([s.game_id, catalog.to_date(s.start_day + i).isoformat(), int(v)])


def write_financials_csv(path: str | Path, financials: Sequence[QuarterlyFinancials]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(FINANCIALS_HEADER)
        for q in financials:
            writer.writerow([q.quarter_end.isoformat(), repr(float(q.revenue)), repr(float(q.net_income))])
