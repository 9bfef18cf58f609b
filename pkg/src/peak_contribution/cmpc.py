"""
Coincident monthly peak contribution (CMPC) and peak-timing statistics.

CMPC of customer j in month m is the mean, over the month's days, of the customer's load at
the system's daily peak hour divided by the system peak:

    F_jm = (1/n) * sum_d p_j(t_d) / P(t_d)

Days missing either meter or feeder data are dropped from n. Every argmax in this module
breaks ties towards the earliest hour.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from .config import HOURS_PER_DAY, SEASONS
from .errors import (
    DatasetEmptyError,
    InsufficientDataError,
    InvariantViolationError,
    ShapeMismatchError,
)
from .ingest import FeederSeries, MeterSeries, season_labels

logger = logging.getLogger(__name__)

CMPC_COLUMNS = ["customer_id", "year", "month", "cmpc", "n_days"]
DAILY_PEAK_COLUMNS = ["day", "hour", "system_kw"]

# inclusive hour-of-day ranges of the coarse timing intervals
COARSE_INTERVALS = {
    "morning": (7, 9),
    "afternoon": (12, 14),
    "evening": (18, 21),
}
COARSE_LABELS = list(COARSE_INTERVALS) + ["off_interval"]

MonthKey = Tuple[int, int]


@dataclass(frozen=True)
class DailyPeak:
    day: pd.Timestamp
    hour: int
    value: float

    @property
    def instant(self) -> pd.Timestamp:
        return self.day + pd.Timedelta(hours=self.hour)


@dataclass(frozen=True)
class CmpcRecord:
    customer_id: str
    year: int
    month: int
    value: float
    n_days: int


@dataclass
class PeakTimingDistribution:
    customer_id: str
    X: np.ndarray
    n_days: int = 0


@dataclass
class DailyPeakResult:
    peaks: List[DailyPeak]
    skipped: List[pd.Timestamp] = field(default_factory=list)


def day_cube(panel: pd.DataFrame) -> Tuple[pd.DatetimeIndex, np.ndarray]:
    """Reshape an hourly panel into a (days, 24, columns) array; absent hours are NaN."""
    index = pd.DatetimeIndex(panel.index)
    days = index.normalize()
    day_index = pd.DatetimeIndex(days.unique()).sort_values()
    cube = np.full((len(day_index), HOURS_PER_DAY, panel.shape[1]), np.nan)
    cube[day_index.get_indexer(days), index.hour, :] = panel.to_numpy(dtype=float)
    return day_index, cube


def _earliest_argmax(cube: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum along the hour axis
    return np.argmax(np.where(np.isnan(cube), -np.inf, cube), axis=1)


def _select_month(series: pd.Series, month: Optional[MonthKey]) -> pd.Series:
    if month is None:
        return series
    year, mon = month
    return series[(series.index.year == year) & (series.index.month == mon)]


def daily_peaks_frame(feeder: FeederSeries, month: Optional[MonthKey] = None) -> pd.DataFrame:
    """Daily system peak hour and value as a frame (``daily_peaks.csv`` layout)."""
    values = _select_month(feeder.values, month)
    if values.empty:
        return pd.DataFrame(columns=DAILY_PEAK_COLUMNS)
    day_index, cube = day_cube(values.to_frame("system_kw"))
    hours = cube[:, :, 0]
    has_data = ~np.isnan(hours).all(axis=1)
    skipped = day_index[~has_data]
    if len(skipped):
        logger.warning(f"Skipping {len(skipped)} days without feeder data")
    peak_hour = _earliest_argmax(cube)[:, 0]
    peak_value = np.take_along_axis(hours, peak_hour[:, None], axis=1)[:, 0]
    frame = pd.DataFrame({
        "day": day_index[has_data],
        "hour": peak_hour[has_data].astype(int),
        "system_kw": peak_value[has_data],
    })
    frame.attrs["skipped"] = list(skipped)
    return frame


def daily_peaks(feeder: FeederSeries, month: Optional[MonthKey] = None) -> DailyPeakResult:
    """One ``DailyPeak`` per day of ``month`` (all days when ``None``); empty days are skipped."""
    frame = daily_peaks_frame(feeder, month)
    peaks = [
        DailyPeak(pd.Timestamp(row.day), int(row.hour), float(row.system_kw))
        for row in frame.itertuples(index=False)
    ]
    return DailyPeakResult(peaks, list(frame.attrs.get("skipped", [])))


def _check_denominators(values: np.ndarray) -> None:
    if np.any(values <= 0):
        raise InvariantViolationError("system peak must be strictly positive on every day used")


def compute_cmpc(meter: MeterSeries, peaks: List[DailyPeak]) -> CmpcRecord:
    if not peaks:
        raise InsufficientDataError("no daily peaks given")
    months = {(p.day.year, p.day.month) for p in peaks}
    if len(months) != 1:
        raise ShapeMismatchError(f"daily peaks span {len(months)} months; expected one")
    (year, month), = months

    system = np.array([p.value for p in peaks], dtype=float)
    _check_denominators(system)
    instants = pd.DatetimeIndex([p.instant for p in peaks])
    load = meter.values.reindex(instants).to_numpy(dtype=float)
    usable = ~np.isnan(load)
    if not usable.any():
        raise InsufficientDataError(
            f"customer {meter.customer_id} has no data at the system peak hours of {year}-{month:02d}"
        )
    ratios = load[usable] / system[usable]
    return CmpcRecord(meter.customer_id, year, month, float(np.mean(ratios)), int(usable.sum()))


def cmpc_table(panel: pd.DataFrame, feeder: FeederSeries) -> pd.DataFrame:
    """CMPC for every customer-month of the panel (``cmpc.csv`` layout)."""
    peaks = daily_peaks_frame(feeder)
    if peaks.empty:
        raise DatasetEmptyError("feeder series has no data")
    _check_denominators(peaks["system_kw"].to_numpy())

    instants = pd.DatetimeIndex(pd.to_datetime(peaks["day"]) + pd.to_timedelta(peaks["hour"], unit="h"))
    ratios = panel.reindex(instants).div(peaks["system_kw"].to_numpy(), axis=0)
    keys = [instants.year.rename("year"), instants.month.rename("month")]
    grouped = ratios.groupby(keys)
    value = grouped.mean().stack().rename("cmpc")
    n_days = grouped.count().stack().rename("n_days")

    table = pd.concat([value, n_days], axis=1).dropna(subset=["cmpc"]).reset_index()
    table = table.rename(columns={table.columns[2]: "customer_id"})
    table = table[CMPC_COLUMNS].sort_values(["customer_id", "year", "month"], kind="mergesort")
    table["n_days"] = table["n_days"].astype(int)
    return table.reset_index(drop=True)


def _timing_counts(cube: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    complete = ~np.isnan(cube).any(axis=1)
    argmax = _earliest_argmax(cube)
    counts = np.stack(
        [((argmax == h) & complete).sum(axis=0) for h in range(HOURS_PER_DAY)], axis=1
    )
    return counts.astype(float), complete.sum(axis=0)


def _restrict_days(panel: pd.DataFrame, days: Optional[Iterable]) -> pd.DataFrame:
    if days is None:
        return panel
    wanted = pd.DatetimeIndex(list(days)).normalize()
    return panel[pd.DatetimeIndex(panel.index).normalize().isin(wanted)]


def peak_timing_distribution(meter: MeterSeries, days: Optional[Iterable] = None) -> PeakTimingDistribution:
    """
    Empirical distribution of the customer's daily peak hour over complete days in ``days``
    (the whole series when ``None``).
    """
    values = _restrict_days(meter.values.to_frame(meter.customer_id), days)
    if values.empty:
        raise InsufficientDataError(f"customer {meter.customer_id} has no data in the window")
    _, cube = day_cube(values)
    counts, n_days = _timing_counts(cube)
    if n_days[0] == 0:
        raise InsufficientDataError(f"customer {meter.customer_id} has no complete day in the window")
    return PeakTimingDistribution(meter.customer_id, counts[0] / n_days[0], int(n_days[0]))


def peak_timing_matrix(panel: pd.DataFrame, days: Optional[Iterable] = None) -> pd.DataFrame:
    """Peak-timing distribution of every customer; customers without a complete day are left out."""
    values = _restrict_days(panel, days)
    if values.empty:
        return pd.DataFrame(columns=list(range(HOURS_PER_DAY)), dtype=float)
    _, cube = day_cube(values)
    counts, n_days = _timing_counts(cube)
    keep = n_days > 0
    if not keep.all():
        logger.warning(f"{int((~keep).sum())} customers have no complete day in the window")
    matrix = pd.DataFrame(
        counts[keep] / n_days[keep, None],
        index=pd.Index(values.columns[keep], name="customer_id"),
        columns=list(range(HOURS_PER_DAY)),
    )
    return matrix


def coarsen_timing(X: np.ndarray) -> np.ndarray:
    """Collapse 24-bin timing vectors (last axis) into morning/afternoon/evening/off-interval shares."""
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != HOURS_PER_DAY:
        raise ShapeMismatchError(f"expected {HOURS_PER_DAY} timing bins, got {X.shape[-1]}")
    parts = [X[..., lo:hi + 1].sum(axis=-1) for lo, hi in COARSE_INTERVALS.values()]
    inside = np.sum(parts, axis=0)
    return np.stack(parts + [X.sum(axis=-1) - inside], axis=-1)


def coincidence_rate(panel: pd.DataFrame, feeder: FeederSeries, month: MonthKey) -> float:
    """Fraction of customers whose monthly peak instant equals the feeder's monthly peak instant."""
    if panel.shape[1] == 0:
        raise DatasetEmptyError("no customers given")
    system = _select_month(feeder.values, month).dropna()
    meters = panel[(panel.index.year == month[0]) & (panel.index.month == month[1])]
    meters = meters.loc[:, meters.notna().any()]
    if system.empty or meters.shape[1] == 0:
        raise InsufficientDataError(f"no data for {month[0]}-{month[1]:02d}")
    peak_instant = system.idxmax()
    return float((meters.idxmax() == peak_instant).mean())


def coincidence_by_month(panel: pd.DataFrame, feeder: FeederSeries) -> pd.Series:
    index = pd.DatetimeIndex(panel.index)
    months = sorted(set(zip(index.year, index.month)))
    rates = {f"{y}-{m:02d}": coincidence_rate(panel, feeder, (y, m)) for y, m in months}
    return pd.Series(rates, name="coincidence_rate", dtype=float)


def seasonal_peak_time_distribution(feeder: FeederSeries, calendar: Dict[str, List[int]]) -> pd.DataFrame:
    """Per season, the share of days on which the system peak falls in each hour of the day."""
    peaks = daily_peaks_frame(feeder)
    seasons = season_labels(pd.DatetimeIndex(peaks["day"]), calendar)
    rows = {}
    for season in SEASONS:
        hours = peaks.loc[seasons == season, "hour"].to_numpy(dtype=int)
        counts = np.bincount(hours, minlength=HOURS_PER_DAY).astype(float)
        rows[season] = counts / counts.sum() if counts.sum() else counts
    frame = pd.DataFrame.from_dict(rows, orient="index", columns=list(range(HOURS_PER_DAY)))
    frame.index.name = "season"
    return frame
