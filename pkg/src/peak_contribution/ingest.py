"""
Smart-meter and SCADA ingestion.

Parses the raw CSV exports, cleans erroneous and missing samples, partitions the hours into
seasons and aggregates monthly billing energy. Bulk work runs on a wide *load panel*
(hourly ``DatetimeIndex`` x one column per customer); the single-series operations wrap
the panel versions so both paths share one implementation.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .config import HOURS_PER_DAY, SEASONS, validate_calendar
from .errors import (
    DatasetEmptyError,
    DuplicateKeyError,
    InsufficientDataError,
    ParseError,
)

logger = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%S"
READING_COLUMNS = ["customer_id", "timestamp", "kwh"]
SCADA_COLUMNS = ["timestamp", "system_kw"]
CLEAN_REPORT_COLUMNS = ["customer_id", "n_replaced", "n_filled"]
BILLING_COLUMNS = ["customer_id", "year", "month", "energy_kwh"]

_LINE_RE = re.compile(r"line (\d+)")

CsvSource = Union[str, Path, IO[str]]


class RawReading(NamedTuple):
    customer_id: str
    timestamp: pd.Timestamp
    kwh: float


@dataclass
class MeterSeries:
    """One customer's hourly consumption on a complete hourly grid (NaN marks a missing hour)."""

    customer_id: str
    values: pd.Series
    n_replaced: int = 0
    n_filled: int = 0

    @property
    def coverage(self) -> float:
        if len(self.values) == 0:
            return 0.0
        return float(self.values.notna().mean())


@dataclass
class FeederSeries:
    values: pd.Series


@dataclass
class SeasonalDataset:
    season: str
    meters: pd.DataFrame
    profiles: pd.DataFrame
    excluded: List[str] = field(default_factory=list)


@dataclass
class MonthlyBilling:
    customer_id: str
    year: int
    month: int
    energy: float


@dataclass
class CleanResult:
    panel: pd.DataFrame
    report: pd.DataFrame
    dropped: List[str] = field(default_factory=list)


def _read_table(source: CsvSource, columns: List[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(source, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise DatasetEmptyError("input file is empty") from e
    except pd.errors.ParserError as e:
        match = _LINE_RE.search(str(e))
        raise ParseError(f"malformed record ({e})", line=int(match.group(1)) if match else None) from e

    header = [str(c).strip() for c in frame.columns]
    if header != columns:
        raise ParseError(f"expected header {','.join(columns)}, found {','.join(header)}", line=1)
    frame.columns = header
    if frame.empty:
        raise DatasetEmptyError("input file has a header but no records")
    return frame


def _first_bad_line(mask: pd.Series) -> int:
    # header is line 1
    return int(np.flatnonzero(mask.to_numpy())[0]) + 2


def _parse_timestamps(raw: pd.Series) -> pd.Series:
    stamps = pd.to_datetime(raw.str.strip(), format=TIMESTAMP_FORMAT, errors="coerce")
    bad = stamps.isna()
    if bad.any():
        line = _first_bad_line(bad)
        raise ParseError(f"bad timestamp {raw.iloc[line - 2]!r}", line=line)
    return stamps


def _parse_numbers(raw: pd.Series, column: str) -> pd.Series:
    numbers = pd.to_numeric(raw.str.strip(), errors="coerce")
    bad = ~np.isfinite(numbers.to_numpy(dtype=float))
    if bad.any():
        line = _first_bad_line(pd.Series(bad))
        raise ParseError(f"bad {column} value {raw.iloc[line - 2]!r}", line=line)
    return numbers.astype(float)


def parse_readings(csv_stream: CsvSource) -> pd.DataFrame:
    """
    Parse ``sm_readings.csv`` into a reading table.

    Returns a frame with the ``RawReading`` fields as columns, in file order.
    Raises ``ParseError`` (with the offending line number), ``DatasetEmptyError`` or
    ``DuplicateKeyError`` for a repeated (customer_id, timestamp) pair.
    """
    frame = _read_table(csv_stream, READING_COLUMNS)

    customer = frame["customer_id"].str.strip()
    blank = customer == ""
    if blank.any():
        raise ParseError("empty customer_id", line=_first_bad_line(blank))

    readings = pd.DataFrame({
        "customer_id": customer,
        "timestamp": _parse_timestamps(frame["timestamp"]),
        "kwh": _parse_numbers(frame["kwh"], "kwh"),
    })

    duplicated = readings.duplicated(["customer_id", "timestamp"])
    if duplicated.any():
        line = _first_bad_line(duplicated)
        row = readings.iloc[line - 2]
        raise DuplicateKeyError(
            f"line {line}: duplicate reading for customer {row.customer_id} at "
            f"{row.timestamp.strftime(TIMESTAMP_FORMAT)}"
        )
    return readings


def iter_readings(readings: pd.DataFrame):
    for row in readings.itertuples(index=False):
        yield RawReading(row.customer_id, row.timestamp, float(row.kwh))


def load_scada(csv_stream: CsvSource) -> FeederSeries:
    """Parse ``scada.csv`` into an hourly feeder series (sub-hourly kW samples are averaged)."""
    frame = _read_table(csv_stream, SCADA_COLUMNS)
    stamps = _parse_timestamps(frame["timestamp"])
    load = _parse_numbers(frame["system_kw"], "system_kw")

    duplicated = stamps.duplicated()
    if duplicated.any():
        line = _first_bad_line(duplicated)
        raise DuplicateKeyError(f"line {line}: duplicate SCADA timestamp {frame['timestamp'].iloc[line - 2]}")

    values = pd.Series(load.to_numpy(), index=pd.DatetimeIndex(stamps), name="system_kw")
    values = values.groupby(values.index.floor("h")).mean().sort_index()
    grid = pd.date_range(values.index[0], values.index[-1], freq="h")
    return FeederSeries(values.reindex(grid))


def build_panel(readings: pd.DataFrame, index: Optional[pd.DatetimeIndex] = None) -> pd.DataFrame:
    """Pivot a reading table to hours x customers; sub-hourly energy is summed into its hour."""
    if readings.empty:
        raise DatasetEmptyError("no readings to build a load panel from")
    hourly = readings.assign(timestamp=readings["timestamp"].dt.floor("h"))
    hourly = hourly.groupby(["timestamp", "customer_id"], sort=True)["kwh"].sum()
    panel = hourly.unstack("customer_id")
    if index is None:
        index = pd.date_range(panel.index.min(), panel.index.max(), freq="h")
    panel = panel.reindex(index)
    panel.index.name = "timestamp"
    panel.columns.name = None
    return panel.sort_index(axis=1).astype(float)


def meter_series(panel: pd.DataFrame, customer_id: str) -> MeterSeries:
    return MeterSeries(customer_id, panel[customer_id].rename(customer_id))


def panel_from_series(series: List[MeterSeries]) -> pd.DataFrame:
    if not series:
        raise DatasetEmptyError("no meter series given")
    panel = pd.concat({s.customer_id: s.values for s in series}, axis=1)
    return panel.sort_index().sort_index(axis=1).astype(float)


def _zscores(frame: pd.DataFrame) -> pd.DataFrame:
    std = frame.std(ddof=1).replace(0.0, np.nan)
    return (frame - frame.mean()).abs() / std


def _observed_span(values: pd.DataFrame) -> pd.DataFrame:
    """True from each column's first observed sample through its last."""
    return values.ffill().notna() & values.bfill().notna()


def _fill(frame: pd.DataFrame, span: pd.DataFrame) -> pd.DataFrame:
    inside = frame.interpolate(method="linear", limit_area="inside", axis=0)
    return inside.ffill().bfill().where(span)


def clean_panel(panel: pd.DataFrame, z_threshold: float = 5.0) -> CleanResult:
    """
    Replace erroneous samples (|z| above the threshold, or negative) and fill missing hours.

    Replaced and missing samples are linearly interpolated between the nearest surviving
    neighbours; a replaced sample at the edge of the observed span takes the nearest
    surviving value. Hours before a customer's first reading or after the last stay missing.
    Detection is repeated on the filled series until nothing exceeds the threshold, which
    makes the operation idempotent.
    """
    values = panel.astype(float)
    present = values.notna().sum()
    dropped = sorted(present.index[present < 3])
    if dropped:
        logger.warning(f"Dropping {len(dropped)} customers with fewer than 3 samples: {dropped[:5]}")
        values = values.drop(columns=dropped)
    if values.shape[1] == 0:
        raise InsufficientDataError("no customer has at least 3 samples")

    missing = values.isna()
    span = _observed_span(values)
    negative = values < 0
    work = values.mask(negative)
    replaced = negative.copy()
    flagged = _zscores(work) > z_threshold
    rounds = 0
    while True:
        replaced |= flagged
        work = work.mask(flagged)
        filled = _fill(work, span)
        rounds += 1
        flagged = (_zscores(filled) > z_threshold) & work.notna()
        if not flagged.to_numpy().any():
            break

    report = pd.DataFrame({
        "customer_id": values.columns,
        "n_replaced": replaced.sum().to_numpy(dtype=int),
        "n_filled": (missing & span).sum().to_numpy(dtype=int),
    })
    logger.info(
        f"Cleaned {values.shape[1]} series in {rounds} rounds: "
        f"{int(report.n_replaced.sum())} replaced, {int(report.n_filled.sum())} filled"
    )
    return CleanResult(filled, report, dropped)


def clean_series(series: MeterSeries, z_threshold: float = 5.0) -> MeterSeries:
    present = int(series.values.notna().sum())
    if present < 3:
        raise InsufficientDataError(
            f"series {series.customer_id} has {present} samples; at least 3 are required"
        )
    result = clean_panel(series.values.to_frame(series.customer_id), z_threshold)
    row = result.report.iloc[0]
    return MeterSeries(
        series.customer_id,
        result.panel[series.customer_id].rename(series.customer_id),
        n_replaced=int(row.n_replaced),
        n_filled=int(row.n_filled),
    )


def clean_feeder(feeder: FeederSeries, z_threshold: float = 5.0) -> FeederSeries:
    result = clean_panel(feeder.values.to_frame("system_kw"), z_threshold)
    return FeederSeries(result.panel["system_kw"])


def season_labels(index: pd.DatetimeIndex, calendar: Dict[str, List[int]]) -> np.ndarray:
    validate_calendar(calendar)
    lookup = {month: season for season, months in calendar.items() for month in months}
    return np.array([lookup[m] for m in index.month], dtype=object)


def split_seasons(
    panel: pd.DataFrame,
    feeder: FeederSeries,
    calendar: Dict[str, List[int]],
) -> Tuple[Dict[str, SeasonalDataset], Dict[str, FeederSeries]]:
    """
    Partition hours into seasons and compute each customer's 24-hour average daily profile.

    Customers without data in a season are left out of that season's dataset and listed in
    ``SeasonalDataset.excluded``.
    """
    labels = season_labels(panel.index, calendar)
    feeder_labels = season_labels(feeder.values.index, calendar)
    datasets: Dict[str, SeasonalDataset] = {}
    feeders: Dict[str, FeederSeries] = {}

    for season in SEASONS:
        rows = panel.loc[labels == season]
        feeders[season] = FeederSeries(feeder.values.loc[feeder_labels == season])

        has_data = rows.notna().any() if len(rows) else pd.Series(False, index=panel.columns)
        profiles = rows.groupby(rows.index.hour).mean().reindex(range(HOURS_PER_DAY)).T
        incomplete = profiles.isna().any(axis=1)
        keep = has_data & ~incomplete
        excluded = sorted(panel.columns[~keep])
        if excluded:
            logger.warning(f"{season}: {len(excluded)} customers excluded (no data in season)")

        members = [c for c in panel.columns if keep[c]]
        profiles = profiles.loc[members]
        profiles.columns = list(range(HOURS_PER_DAY))
        profiles.index.name = "customer_id"
        datasets[season] = SeasonalDataset(season, rows[members], profiles, excluded)
    return datasets, feeders


def billing_table(panel: pd.DataFrame) -> pd.DataFrame:
    """Monthly energy per customer; months without any data for a customer are omitted."""
    if panel.shape[1] == 0 or panel.shape[0] == 0:
        return pd.DataFrame(columns=BILLING_COLUMNS)
    monthly = panel.groupby([panel.index.year, panel.index.month]).sum(min_count=1)
    monthly.index.names = ["year", "month"]
    long = monthly.stack().dropna().rename("energy_kwh").reset_index()
    long = long.rename(columns={long.columns[2]: "customer_id"})
    long = long[BILLING_COLUMNS].sort_values(["customer_id", "year", "month"], kind="mergesort")
    long["year"] = long["year"].astype(int)
    long["month"] = long["month"].astype(int)
    return long.reset_index(drop=True)


def aggregate_monthly(series: MeterSeries) -> List[MonthlyBilling]:
    values = series.values.dropna()
    if values.empty:
        return []
    table = billing_table(values.to_frame(series.customer_id))
    return [
        MonthlyBilling(row.customer_id, int(row.year), int(row.month), float(row.energy_kwh))
        for row in table.itertuples(index=False)
    ]


def save_panel(panel: pd.DataFrame, path: Union[str, Path]) -> None:
    out = panel.copy()
    out.index = out.index.strftime(TIMESTAMP_FORMAT)
    out.index.name = "timestamp"
    out.to_csv(path, lineterminator="\n")


def load_panel(path: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(path, index_col="timestamp", float_precision="round_trip")
    frame.index = pd.to_datetime(frame.index, format=TIMESTAMP_FORMAT)
    frame.columns = [str(c) for c in frame.columns]
    return frame.astype(float)


def save_feeder(feeder: FeederSeries, path: Union[str, Path]) -> None:
    out = pd.DataFrame({
        "timestamp": feeder.values.index.strftime(TIMESTAMP_FORMAT),
        "system_kw": feeder.values.to_numpy(),
    })
    out.to_csv(path, index=False, lineterminator="\n")


def load_feeder(path: Union[str, Path]) -> FeederSeries:
    frame = pd.read_csv(path, float_precision="round_trip")
    index = pd.to_datetime(frame["timestamp"], format=TIMESTAMP_FORMAT)
    return FeederSeries(pd.Series(frame["system_kw"].to_numpy(dtype=float), index=pd.DatetimeIndex(index), name="system_kw"))
