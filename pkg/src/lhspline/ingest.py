"""Daily precipitation records: parsing, unit normalization and wet-day subsamples.

Amounts are stored in mm/day. A record is ``ok``, ``missing`` (no usable
amount) or ``flagged`` (a quality flag was set); only ``ok`` records enter
any analysis.
"""
from __future__ import annotations

import csv
import enum
import io
import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

UNIT_TO_MM = {"mm": 1.0, "tenths_mm": 0.1, "hundredths_inch": 0.254}


class Quality(enum.IntEnum):
    OK = 0
    MISSING = 1
    FLAGGED = 2


@dataclass(frozen=True)
class IngestConfig:
    """Column mapping and units for a daily CSV file.

    ``quality_column`` marks a record flagged when non-blank. GHCN style
    attribute strings such as ``",X,7,"`` can be split with ``quality_field``
    (zero-based position of the quality flag inside the comma list).
    """

    unit: str = "mm"
    date_column: str = "DATE"
    amount_column: str = "PRCP"
    quality_column: str | None = None
    quality_field: int | None = None
    station_id: str = ""
    station_column: str | None = None
    date_format: str = "%Y-%m-%d"
    missing_values: tuple = ("", "NA", "-9999", "-99999")

    def __post_init__(self):
        if self.unit not in UNIT_TO_MM:
            raise DataError(f"unknown unit code {self.unit!r}; expected one of "
                            f"{sorted(UNIT_TO_MM)}")

    @classmethod
    def from_text(cls, text: str) -> "IngestConfig":
        """Read ``key = value`` lines; ``#`` starts a comment."""
        kw = {}
        names = set(cls.__dataclass_fields__)
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"config line {lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in names:
                raise DataError(f"config line {lineno}: unknown key {key!r}")
            if key == "quality_field":
                kw[key] = int(value)
            elif key == "missing_values":
                kw[key] = tuple(v.strip() for v in value.split(","))
            elif key in ("quality_column", "station_column"):
                kw[key] = value or None
            else:
                kw[key] = value
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "IngestConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)


CANONICAL = IngestConfig(unit="mm", date_column="date", amount_column="prcp_mm",
                         quality_column="quality")


@dataclass(frozen=True)
class PrecipSeries:
    dates: np.ndarray  # datetime64[D], strictly increasing
    amounts: np.ndarray  # mm/day, nan where missing
    quality: np.ndarray  # Quality codes
    station_id: str = ""
    censor_bound: float = 0.0

    def __post_init__(self):
        ok = self.quality == Quality.OK
        a = self.amounts[ok]
        if np.any(~np.isfinite(a)) or np.any(a < 0):
            raise DataError("ok records must have finite, non-negative amounts")
        if self.dates.size > 1 and np.any(np.diff(self.dates) <= np.timedelta64(0, "D")):
            raise DataError("dates must be strictly increasing")

    @property
    def ok(self) -> np.ndarray:
        return self.quality == Quality.OK

    @property
    def n_ok(self) -> int:
        return int(self.ok.sum())

    @property
    def wet_fraction(self) -> float:
        ok = self.ok
        if not ok.any():
            return 0.0
        return float(np.sum(self.amounts[ok] > 0) / ok.sum())

    def to_csv(self) -> str:
        """Canonical mm/day serialization, readable with :data:`CANONICAL`."""
        buf = io.StringIO()
        buf.write("date,prcp_mm,quality\n")
        for d, a, q in zip(self.dates, self.amounts, self.quality):
            amount = "" if not np.isfinite(a) else f"{a:.17g}"
            flag = "F" if q == Quality.FLAGGED else ""
            buf.write(f"{d},{amount},{flag}\n")
        return buf.getvalue()


def _parse_rows(reader, config: IngestConfig, scale: float):
    dates, amounts, quality, stations = [], [], [], set()
    header = reader.fieldnames or []
    for col in (config.date_column, config.amount_column):
        if col not in header:
            raise DataError(f"column {col!r} not in header {header}")
    if config.quality_column and config.quality_column not in header:
        raise DataError(f"column {config.quality_column!r} not in header")
    for row in reader:
        lineno = reader.line_num
        raw_date = (row.get(config.date_column) or "").strip()
        try:
            d = datetime.strptime(raw_date, config.date_format).date()
        except ValueError as exc:
            raise DataError(f"line {lineno}: unparseable date {raw_date!r}") from exc
        raw = (row.get(config.amount_column) or "").strip()
        q = Quality.OK
        if raw in config.missing_values:
            value, q = np.nan, Quality.MISSING
        else:
            try:
                value = float(raw) * scale
            except ValueError as exc:
                raise DataError(f"line {lineno}: unparseable amount {raw!r}") from exc
            if not np.isfinite(value) or value < 0:
                value, q = np.nan, Quality.MISSING
        if config.quality_column and q == Quality.OK:
            flag = row.get(config.quality_column) or ""
            if config.quality_field is not None:
                parts = flag.split(",")
                flag = parts[config.quality_field] if config.quality_field < len(parts) else ""
            if flag.strip():
                q = Quality.FLAGGED
        if config.station_column:
            stations.add((row.get(config.station_column) or "").strip())
        dates.append(np.datetime64(d, "D"))
        amounts.append(value)
        quality.append(int(q))
    return dates, amounts, quality, stations


def parse_daily_text(text: str, config: IngestConfig) -> PrecipSeries:
    scale = UNIT_TO_MM[config.unit]
    reader = csv.DictReader(io.StringIO(text))
    dates, amounts, quality, stations = _parse_rows(reader, config, scale)
    if not dates:
        raise DataError("no records")
    dates = np.array(dates, dtype="datetime64[D]")
    order = np.argsort(dates, kind="stable")
    dates = dates[order]
    if np.any(np.diff(dates) == np.timedelta64(0, "D")):
        dup = dates[1:][np.diff(dates) == np.timedelta64(0, "D")][0]
        raise DataError(f"duplicate date {dup}")
    station = config.station_id or (sorted(stations)[0] if len(stations) == 1 else "")
    amounts = np.array(amounts, dtype=float)[order]
    # canonical rounding to tenths of a micrometre keeps re-serialization stable
    amounts = np.round(amounts, 10)
    return PrecipSeries(dates=dates, amounts=amounts,
                        quality=np.array(quality, dtype=np.int8)[order],
                        station_id=station)


def parse_daily_csv(path, config: IngestConfig | None = None) -> PrecipSeries:
    """Parse a daily precipitation CSV into a :class:`PrecipSeries` in mm/day."""
    config = config or IngestConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    series = parse_daily_text(text, config)
    n_bad = int(np.sum(series.quality != Quality.OK))
    if n_bad:
        log.info("%s: %d of %d records missing or flagged", path, n_bad,
                 series.dates.size)
    return series


@dataclass(frozen=True)
class Subsample:
    """Amounts above a bound, with what is needed to renormalize and rescale."""

    amounts: np.ndarray = field(repr=False)
    support_low: float
    exceed_fraction: float  # share of ok days with amount > support_low
    dates: np.ndarray = field(default=None, repr=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("date,prcp_mm,quality\n")
        dates = self.dates if self.dates is not None else [""] * self.amounts.size
        for d, a in zip(dates, self.amounts):
            buf.write(f"{d},{a:.17g},\n")
        return buf.getvalue()


def wet_subsample(series: PrecipSeries, censor_bound: float = 0.0) -> Subsample:
    """Ok-quality amounts strictly above ``max(0, censor_bound)``."""
    if not censor_bound >= 0:
        raise ValueError("censor_bound must be >= 0")
    ok = series.ok
    keep = ok & (np.nan_to_num(series.amounts, nan=-1.0) > censor_bound)
    if not keep.any():
        raise DataError(f"no ok amounts above {censor_bound:g} mm "
                        "(bound too high or all-dry record)")
    return Subsample(amounts=series.amounts[keep].copy(),
                     support_low=float(censor_bound),
                     exceed_fraction=float(keep.sum() / ok.sum()),
                     dates=series.dates[keep])


def annual_maxima(series: PrecipSeries, max_missing: float = 0.10) -> np.ndarray:
    """Calendar-year maxima, dropping years with more than ``max_missing`` days missing.

    Days absent from the file count as missing.
    """
    years = series.dates.astype("datetime64[Y]").astype(int) + 1970
    out = []
    for yr in np.unique(years):
        sel = (years == yr) & series.ok
        n_days = 366 if (yr % 4 == 0 and (yr % 100 != 0 or yr % 400 == 0)) else 365
        if sel.sum() < (1.0 - max_missing) * n_days:
            continue
        out.append(series.amounts[sel].max())
    return np.array(out, dtype=float)
