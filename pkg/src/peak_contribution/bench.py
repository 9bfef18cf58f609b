"""
Benchmarks against conventional segmentation metrics and the direct-load-control
demand-response (DR) simulation.

The DR model sheds ``elasticity`` of each selected customer's load at the system's daily
peak hour (or a window centred on it) and records how far the daily system peak drops.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import entropy as shannon_entropy
from scipy.stats import pearsonr

from .cmpc import DailyPeak, MonthKey, day_cube, daily_peaks_frame, peak_timing_distribution
from .config import HOURS_PER_DAY, BenchConfig, DrSimConfig
from .errors import InsufficientDataError, UndefinedMetricError, ValidationError
from .ingest import FeederSeries, MeterSeries
from .wcr import ClusterRegression, fit_cluster_ols, mape

logger = logging.getLogger(__name__)

DR_REPORT_COLUMNS = ["strategy", "day", "peak_before_kw", "peak_after_kw", "reduction_kwh"]


class Strategy(str, Enum):
    RANDOM = "random"
    MONTHLY_DEMAND = "monthly_demand_rank"
    CUSTOMER_PEAK = "customer_peak_rank"
    ENTROPY = "entropy_rank"
    CMPC_ACTUAL = "cmpc_rank_actual"
    CMPC_ESTIMATED = "cmpc_rank_estimated"
    BASELINE_OLS = "baseline_ols"


@dataclass
class DrStrategyResult:
    strategy: str
    daily: pd.DataFrame
    selected: List[str] = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(self.daily["reduction_kwh"].sum())


@dataclass
class DrSimResult:
    results: Dict[str, DrStrategyResult]

    def report(self) -> pd.DataFrame:
        frames = [r.daily.assign(strategy=name) for name, r in self.results.items()]
        return pd.concat(frames, ignore_index=True)[DR_REPORT_COLUMNS]

    def improvements(self) -> Dict[str, Dict[str, float]]:
        """Percentage by which each strategy's total reduction exceeds every other strategy's."""
        totals = {name: r.total for name, r in self.results.items()}
        return {
            a: {
                b: (totals[a] - totals[b]) / totals[b] * 100.0 if totals[b] > 0 else float("nan")
                for b in totals if b != a
            }
            for a in totals
        }

    def summary(self) -> Dict[str, object]:
        return {
            "strategies": {
                name: {
                    "total_reduction_kwh": r.total,
                    "mean_daily_reduction_kwh": float(r.daily["reduction_kwh"].mean()),
                    "n_days": int(len(r.daily)),
                    "n_selected": len(r.selected),
                }
                for name, r in self.results.items()
            },
            "pairwise_improvement_pct": self.improvements(),
        }


def customer_peak(meter: MeterSeries, month: Optional[MonthKey] = None) -> float:
    values = meter.values
    if month is not None:
        values = values[(values.index.year == month[0]) & (values.index.month == month[1])]
    if values.dropna().empty:
        raise InsufficientDataError(f"customer {meter.customer_id} has no data in the month")
    return float(values.max())


def profile_entropy(
    meter: MeterSeries,
    days: Optional[Iterable] = None,
    config: Optional[BenchConfig] = None,
) -> float:
    """
    Shannon entropy (natural log) of the customer's daily peak-hour distribution, or of the
    binned hourly consumption with ``entropy_method="consumption"``.
    """
    config = config or BenchConfig()
    timing = peak_timing_distribution(meter, days)
    if timing.n_days < config.min_entropy_days:
        raise InsufficientDataError(
            f"customer {meter.customer_id} has {timing.n_days} complete days; "
            f"{config.min_entropy_days} are required"
        )
    if config.entropy_method == "consumption":
        values = meter.values
        if days is not None:
            wanted = pd.DatetimeIndex(list(days)).normalize()
            values = values[values.index.normalize().isin(wanted)]
        counts, _ = np.histogram(values.dropna().to_numpy(), bins=config.entropy_bins)
        return float(shannon_entropy(counts))
    return float(shannon_entropy(timing.X))


def baseline_ols_peak(E: Sequence[float], F: Sequence[float]) -> ClusterRegression:
    """Single global least-squares line from monthly energy to CMPC (no clusters, no classifier)."""
    return fit_cluster_ols(E, F, cluster=-1)


def peak_to_contribution_ratio(meter: MeterSeries, peaks: List[DailyPeak]) -> float:
    """Customer's monthly peak over its mean load at the system peak hours."""
    instants = pd.DatetimeIndex([p.instant for p in peaks])
    at_peak = meter.values.reindex(instants).dropna()
    if at_peak.empty:
        raise InsufficientDataError(f"customer {meter.customer_id} has no data at the system peaks")
    days = pd.DatetimeIndex([p.day for p in peaks])
    in_month = meter.values[meter.values.index.normalize().isin(days)]
    contribution = at_peak.mean()
    return float(in_month.max() / contribution) if contribution > 0 else float("inf")


def peak_ratio_table(panel: pd.DataFrame, feeder: FeederSeries) -> pd.DataFrame:
    """``peak_to_contribution_ratio`` for every customer-month."""
    peaks = daily_peaks_frame(feeder)
    instants = pd.DatetimeIndex(pd.to_datetime(peaks["day"]) + pd.to_timedelta(peaks["hour"], unit="h"))
    at_peak = panel.reindex(instants)
    contribution = at_peak.groupby([instants.year, instants.month]).mean()
    monthly_peak = panel.groupby([panel.index.year, panel.index.month]).max()
    ratio = (monthly_peak / contribution.reindex(monthly_peak.index)).replace(np.inf, np.nan)
    ratio.index.names = ["year", "month"]
    table = ratio.stack().dropna().rename("peak_ratio").reset_index()
    table = table.rename(columns={table.columns[2]: "customer_id"})
    return table[["customer_id", "year", "month", "peak_ratio"]].sort_values(
        ["customer_id", "year", "month"], kind="mergesort"
    ).reset_index(drop=True)


def metric_correlation(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float]:
    """Pearson r and its two-sided p-value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 3 or a.size != b.size:
        raise InsufficientDataError("correlation needs at least 3 aligned pairs")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise UndefinedMetricError("correlation is undefined for a constant metric")
    result = pearsonr(a, b)
    return float(result[0]), float(result[1])


def compare_estimators(records: pd.DataFrame) -> Tuple[pd.DataFrame, Dict[str, float]]:
    """
    Per season and month MAPE of the WCR estimates and the baseline.

    ``records`` needs ``season, year, month, cmpc_actual, cmpc_estimated, baseline_estimated``.
    Improvement is baseline MAPE minus WCR MAPE, in percentage points.
    """
    rows = []
    for (season, year, month), group in records.groupby(["season", "year", "month"], sort=True):
        try:
            wcr_mape = mape(group.cmpc_actual, group.cmpc_estimated)
            base_mape = mape(group.cmpc_actual, group.baseline_estimated)
        except (InsufficientDataError, UndefinedMetricError):
            continue
        rows.append({
            "season": season,
            "year": int(year),
            "month": int(month),
            "mape_wcr": wcr_mape,
            "mape_baseline": base_mape,
            "improvement": base_mape - wcr_mape,
        })
    table = pd.DataFrame(rows, columns=["season", "year", "month", "mape_wcr", "mape_baseline", "improvement"])
    if table.empty:
        raise UndefinedMetricError("no month has enough records to compare estimators")
    summary = {
        "mape_wcr": mape(records.cmpc_actual, records.cmpc_estimated),
        "mape_baseline": mape(records.cmpc_actual, records.baseline_estimated),
        "mean_improvement": float(table.improvement.mean()),
        "max_improvement": float(table.improvement.max()),
    }
    summary["overall_improvement"] = summary["mape_baseline"] - summary["mape_wcr"]
    return table, summary


def rank_customers(strategy: str, scores: pd.Series, seed: int) -> List[str]:
    """
    Deterministic priority order. ``random`` is a seeded permutation of the sorted ids;
    ``entropy_rank`` prefers low scores; every other strategy prefers high scores. Ties go
    to the smaller id and missing scores rank last.
    """
    ids = sorted(str(i) for i in scores.index)
    if Strategy(strategy) is Strategy.RANDOM:
        perm = np.random.default_rng(seed).permutation(len(ids))
        return [ids[i] for i in perm]
    ascending = Strategy(strategy) is Strategy.ENTROPY
    frame = pd.DataFrame({"customer_id": scores.index.astype(str), "score": scores.to_numpy(dtype=float)})
    frame = frame.sort_values(
        ["score", "customer_id"], ascending=[ascending, True], na_position="last", kind="mergesort"
    )
    return frame["customer_id"].tolist()


def select_population(panel: pd.DataFrame, n_houses: int, days: pd.DatetimeIndex) -> pd.DataFrame:
    """The first ``n_houses`` customers (by id) with data at every hour of ``days``."""
    window = panel[pd.DatetimeIndex(panel.index).normalize().isin(days)]
    if len(window) != len(days) * HOURS_PER_DAY:
        raise InsufficientDataError("the panel does not cover the whole DR horizon")
    complete = sorted(c for c in window.columns if window[c].notna().all())
    if len(complete) < n_houses:
        raise InsufficientDataError(
            f"{len(complete)} customers have full horizon data; {n_houses} are required"
        )
    return window[complete[:n_houses]]


def dr_horizon(feeder: FeederSeries, config: DrSimConfig) -> pd.DatetimeIndex:
    """First ``horizon_days`` days of the configured month, or of the month with the largest feeder peak."""
    values = feeder.values.dropna()
    if config.month:
        start = pd.Timestamp(f"{config.month}-01")
    else:
        peak = values.idxmax()
        start = pd.Timestamp(year=peak.year, month=peak.month, day=1)
    days = pd.date_range(start, periods=config.horizon_days, freq="D")
    if days[-1].month != start.month:
        raise InsufficientDataError(f"{start:%Y-%m} has fewer than {config.horizon_days} days")
    return days


def _window_bounds(peak_hour: np.ndarray, width: int) -> np.ndarray:
    first = np.clip(peak_hour - (width - 1) // 2, 0, HOURS_PER_DAY - width)
    return first


def simulate_dr(
    config: DrSimConfig,
    population: pd.DataFrame,
    ranking: List[str],
    strategy: str = "",
) -> DrStrategyResult:
    """Shed load of the top-ranked customers at each day's system peak and measure the peak drop."""
    n_selected = int(round(config.fraction * population.shape[1]))
    if n_selected == 0:
        raise ValidationError(
            f"selection fraction {config.fraction} of {population.shape[1]} customers selects nobody"
        )
    selected = [c for c in ranking if c in population.columns][:n_selected]
    system = population.sum(axis=1)
    shed = population[selected].sum(axis=1) * config.elasticity
    days, cube = day_cube(pd.DataFrame({"system": system, "shed": shed}))
    if np.isnan(cube).any():
        raise InsufficientDataError("DR population must have data at every hour of the horizon")
    load, shed_cube = cube[:, :, 0], cube[:, :, 1]

    peak_hour = np.argmax(load, axis=1)
    before = load[np.arange(len(days)), peak_hour]
    first = _window_bounds(peak_hour, config.window_hours)
    in_window = (np.arange(HOURS_PER_DAY)[None, :] >= first[:, None]) & (
        np.arange(HOURS_PER_DAY)[None, :] < first[:, None] + config.window_hours
    )
    after = np.where(in_window, load - shed_cube, load).max(axis=1)
    daily = pd.DataFrame({
        "day": days.strftime("%Y-%m-%d"),
        "peak_before_kw": before,
        "peak_after_kw": after,
        # peak power delta held for one hour
        "reduction_kwh": (before - after) * 1.0,
    })
    return DrStrategyResult(strategy, daily, selected)


def run_strategies(
    config: DrSimConfig,
    population: pd.DataFrame,
    scores: Dict[str, pd.Series],
    seed: int,
) -> DrSimResult:
    """Simulate every strategy in ``scores`` (in parallel) and merge them in the given order."""
    def one(name: str) -> DrStrategyResult:
        ranking = rank_customers(name, scores[name].reindex(population.columns), seed)
        return simulate_dr(config, population, ranking, name)

    names = list(scores)
    with ThreadPoolExecutor() as pool:
        results = list(pool.map(one, names))
    for name, result in zip(names, results):
        logger.info(f"DR {name}: {result.total:.2f} kWh peak reduction over {len(result.daily)} days")
    return DrSimResult(dict(zip(names, results)))
